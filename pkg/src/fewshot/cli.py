"""Command-line driver for the full pipeline.

Subcommands:
    gen-synth   write a synthetic Gaussian-cluster dataset
    train       train one model -> checkpoint + training report
    eval        score a checkpoint -> metrics report + prediction matrix
    ensemble    aggregate prediction matrices -> hard/soft voting reports
    ablate      paired margin-loss on/off runs -> comparison report

Flags override values from a JSON ``--config`` file; the fully resolved
configuration is echoed into every report so runs can be reproduced from
their outputs alone.  ``FSL_LOG`` sets the logging level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dataio, ensemble, training
from .encoders import EncoderSpec
from .episodes import EpisodeSpec, stratified_split
from .synthetic import SyntheticSpec, gen_synthetic

log = logging.getLogger("fewshot")


def _setup_logging():
    level = os.environ.get("FSL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _resolve(flag_value, config: dict, key: str, default):
    """Flag beats config file beats default."""
    if flag_value is not None:
        return flag_value
    if key in config:
        return config[key]
    return default


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.split(",") if tok.strip())


def _add_common_episode_flags(p: argparse.ArgumentParser):
    p.add_argument("--n-way", type=int, default=None)
    p.add_argument("--k-shot", type=int, default=None)
    p.add_argument("--q-query", type=int, default=None)


def _episode_spec(args, config, defaults=(4, 10, 15)) -> EpisodeSpec:
    return EpisodeSpec(
        n_way=int(_resolve(args.n_way, config, "n_way", defaults[0])),
        k_shot=int(_resolve(args.k_shot, config, "k_shot", defaults[1])),
        q_query=int(_resolve(args.q_query, config, "q_query", defaults[2])),
    )


def _load_data(args, config):
    """Return (dataset, store_or_None) from --data [--labels]."""
    data = _resolve(getattr(args, "data", None), config, "data", None)
    if data is None:
        raise SystemExit("--data is required")
    if not os.path.exists(data):
        raise SystemExit(f"data file not found: {data}")
    labels = _resolve(getattr(args, "labels", None), config, "labels", None)
    if labels:
        dataset, store = dataio.load_frozen_dataset(data, labels)
        return dataset, store
    return dataio.load_dataset(data), None


def cmd_gen_synth(args) -> int:
    config = _load_config(args.config)
    counts_val = _resolve(args.counts, config, "counts", "3200,2240,896,64")
    counts = _int_list(counts_val) if isinstance(counts_val, str) \
        else tuple(int(c) for c in counts_val)
    spec = SyntheticSpec(
        n_classes=int(_resolve(args.classes, config, "classes", len(counts))),
        dim=int(_resolve(args.dim, config, "dim", 16)),
        counts=counts,
        separation=float(_resolve(args.separation, config, "separation", 6.0)),
        sigma=float(_resolve(args.sigma, config, "sigma", 1.0)),
        seed=int(_resolve(args.seed, config, "seed", 0)),
    )
    dataset = gen_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataio.save_dataset(dataset, out / "manifest.json", out / "payload.bin")
    log.info("wrote %d samples to %s", len(dataset.sample_ids), out)
    print(f"dataset: {out / 'manifest.json'} ({len(dataset.sample_ids)} samples, "
          f"{spec.n_classes} classes)")
    return 0


def _encoder_spec_from(args, config, dataset, store) -> EncoderSpec:
    kind = _resolve(args.encoder, config, "encoder", "mlp")
    emb = int(_resolve(getattr(args, "embedding_dim", None), config, "embedding_dim", 128))
    hidden = _resolve(getattr(args, "hidden", None), config, "hidden", (64, 64))
    if isinstance(hidden, str):
        hidden = _int_list(hidden)
    channels = _resolve(None, config, "channels", (64, 64, 64, 64))
    enc_seed = int(_resolve(getattr(args, "encoder_seed", None), config, "encoder_seed",
                            _resolve(args.seed, config, "seed", 0)))
    if kind == "frozen-projection":
        if store is None:
            raise SystemExit("frozen-projection encoder needs --data <store.fseb> --labels <labels.json>")
        input_shape = (store.source_dim,)
    else:
        input_shape = dataset.sample_shape
    return EncoderSpec(kind=kind, input_shape=tuple(input_shape), embedding_dim=emb,
                       hidden=tuple(hidden), channels=tuple(channels), seed=enc_seed)


def cmd_train(args) -> int:
    config = _load_config(args.config)
    seed = _resolve(args.seed, config, "seed", None)
    if seed is None:
        raise SystemExit("--seed is required for train (no silent entropy)")
    seed = int(seed)
    dataset, store = _load_data(args, config)
    episode_spec = _episode_spec(args, config)
    train_cfg = training.TrainConfig(
        episode_spec=episode_spec,
        seed=seed,
        epochs=int(_resolve(args.epochs, config, "epochs", 100)),
        episodes_per_epoch=int(_resolve(args.episodes_per_epoch, config,
                                        "episodes_per_epoch", 32)),
        learning_rate=float(_resolve(args.lr, config, "learning_rate", 1e-4)),
        margin=float(_resolve(args.margin, config, "margin", 0.5)),
        use_cal=False if args.no_cal else bool(_resolve(None, config, "use_cal", True)),
        precision=str(_resolve(args.precision, config, "precision", "float32")),
    )
    train_fraction = float(_resolve(args.train_fraction, config, "train_fraction", 0.8))
    split_seed = int(_resolve(args.split_seed, config, "split_seed", seed))
    enc_spec = _encoder_spec_from(args, config, dataset, store)
    model_id = _resolve(args.model_id, config, "model_id", f"{enc_spec.kind}-seed{seed}")

    train_index, _ = stratified_split(dataset.index(), train_fraction, split_seed)
    model = training.ProtoModel.create(model_id, enc_spec,
                                       learning_rate=train_cfg.learning_rate,
                                       precision=train_cfg.precision, store=store)
    log.info("training %s for %d epochs", model_id, train_cfg.epochs)
    report = training.train_model(model, dataset, train_index, train_cfg)

    run_config = {
        "command": "train",
        "model_id": model_id,
        "seed": seed,
        "data": _resolve(args.data, config, "data", None),
        "labels": _resolve(args.labels, config, "labels", None),
        "train_fraction": train_fraction,
        "split_seed": split_seed,
        "encoder_spec": enc_spec.to_dict(),
        "train": train_cfg.to_dict(),
        "margin": train_cfg.margin,
        "use_cal": train_cfg.use_cal,
    }
    out = _resolve(args.out, config, "out", "model.fscp")
    dataio.save_checkpoint(out, model.encoder, model.adam,
                           extra={"model_id": model_id, "run_config": run_config})
    doc = {
        "config": run_config,
        "models": [{
            "model_id": model_id,
            "curves": report.curves(),
            "wall_time": report.wall_time,
            "checksum": report.checksum,
        }],
    }
    report_path = _resolve(args.report, config, "report", None)
    if report_path:
        dataio.write_report(report_path, doc)
    final = report.records[-1] if report.records else None
    print(f"trained {model_id}: checkpoint {out}"
          + (f", final epoch accuracy {final.accuracy:.3f}" if final else ""))
    return 0


def cmd_eval(args) -> int:
    config = _load_config(args.config)
    ckpt_path = _resolve(args.checkpoint, config, "checkpoint", None)
    if ckpt_path is None:
        raise SystemExit("--checkpoint is required")
    if not os.path.exists(ckpt_path):
        raise SystemExit(f"checkpoint not found: {ckpt_path}")
    dataset, store = _load_data(args, config)
    encoder, adam, extra = dataio.load_checkpoint(ckpt_path, store=store)
    trained_cfg = extra.get("run_config", {})
    model = training.ProtoModel(model_id=extra.get("model_id", "model"),
                                encoder=encoder, adam=adam or None)
    defaults = trained_cfg.get("train", {})
    episode_spec = EpisodeSpec(
        n_way=int(_resolve(args.n_way, config, "n_way", defaults.get("n_way", 4))),
        k_shot=int(_resolve(args.k_shot, config, "k_shot", defaults.get("k_shot", 10))),
        q_query=int(_resolve(args.q_query, config, "q_query", defaults.get("q_query", 15))),
    )
    train_fraction = float(_resolve(args.train_fraction, config, "train_fraction",
                                    trained_cfg.get("train_fraction", 0.8)))
    split_seed = int(_resolve(args.split_seed, config, "split_seed",
                              trained_cfg.get("split_seed", 0)))
    n_episodes = int(_resolve(args.episodes, config, "episodes", 100))
    seed = int(_resolve(args.seed, config, "seed", 0))

    _, test_index = stratified_split(dataset.index(), train_fraction, split_seed)
    result = training.evaluate_model(model, dataset, test_index, episode_spec,
                                     n_episodes, seed)
    run_config = {
        "command": "eval",
        "checkpoint": str(ckpt_path),
        "model_id": model.model_id,
        "data": _resolve(args.data, config, "data", None),
        "labels": _resolve(args.labels, config, "labels", None),
        "train_fraction": train_fraction,
        "split_seed": split_seed,
        "episodes": n_episodes,
        "seed": seed,
        "n_way": episode_spec.n_way,
        "k_shot": episode_spec.k_shot,
        "q_query": episode_spec.q_query,
        "margin": trained_cfg.get("margin", None),
        "use_cal": trained_cfg.get("use_cal", None),
    }
    doc = {
        "config": run_config,
        "models": [{
            "model_id": model.model_id,
            "metrics": result.metrics.to_dict(),
            "compactness_ratio": result.compactness_ratio,
        }],
    }
    report_path = _resolve(args.out_report, config, "out_report", None)
    if report_path:
        dataio.write_report(report_path, doc)
    pred_path = _resolve(args.out_predictions, config, "out_predictions", None)
    if pred_path:
        dataio.write_predictions(pred_path, result.predictions)
    print(f"eval {model.model_id}: accuracy {result.metrics.accuracy:.4f}, "
          f"macro F1 {result.metrics.macro_f1:.4f}")
    return 0


def cmd_ensemble(args) -> int:
    config = _load_config(args.config)
    pred_paths = args.predictions or config.get("predictions", [])
    if not pred_paths:
        raise SystemExit("--predictions requires at least one prediction file")
    for p in pred_paths:
        if not os.path.exists(p):
            raise SystemExit(f"prediction file not found: {p}")
    matrices = [dataio.read_predictions(p) for p in pred_paths]
    merged = ensemble.PredictionMatrix.merge(matrices)
    outcome = ensemble.ensemble_evaluate(merged)
    per_model = []
    for m in matrices:
        single = ensemble.ensemble_evaluate(m)
        per_model.append({"model_id": m.model_ids[0],
                          "metrics": single["soft_voting"].to_dict()})
    run_config = {
        "command": "ensemble",
        "predictions": [str(p) for p in pred_paths],
        "model_ids": merged.model_ids,
    }
    doc = {
        "config": run_config,
        "models": per_model,
        "ensemble": {
            "hard_voting": outcome["hard_voting"].to_dict(),
            "soft_voting": outcome["soft_voting"].to_dict(),
            "n_ties": outcome["n_ties"],
        },
    }
    out = _resolve(args.out, config, "out", None)
    if out:
        dataio.write_report(out, doc)
    print(f"ensemble of {merged.n_models}: "
          f"HV accuracy {outcome['hard_voting'].accuracy:.4f}, "
          f"SV accuracy {outcome['soft_voting'].accuracy:.4f}")
    return 0


def cmd_ablate(args) -> int:
    config = _load_config(args.config)
    dataset, store = _load_data(args, config)
    episode_spec = _episode_spec(args, config, defaults=(4, 5, 5))
    n_seeds = int(_resolve(args.seeds, config, "seeds", 10))
    epochs = int(_resolve(args.epochs, config, "epochs", 20))
    episodes_per_epoch = int(_resolve(args.episodes_per_epoch, config,
                                      "episodes_per_epoch", 16))
    margin = float(_resolve(args.margin, config, "margin", 0.5))
    lr = float(_resolve(args.lr, config, "learning_rate", 1e-3))
    train_fraction = float(_resolve(args.train_fraction, config, "train_fraction", 0.7))
    eval_episodes = int(_resolve(args.episodes, config, "episodes", 30))
    emb = int(_resolve(args.embedding_dim, config, "embedding_dim", 32))
    hidden = _resolve(args.hidden, config, "hidden", (32,))
    if isinstance(hidden, str):
        hidden = _int_list(hidden)

    arms = []
    for seed in range(n_seeds):
        row = {"seed": seed}
        for use_cal in (True, False):
            train_index, test_index = stratified_split(dataset.index(), train_fraction, seed)
            spec = EncoderSpec(kind="mlp", input_shape=dataset.sample_shape,
                               embedding_dim=emb, hidden=tuple(hidden), seed=seed)
            cfg = training.TrainConfig(
                episode_spec=episode_spec, seed=seed, epochs=epochs,
                episodes_per_epoch=episodes_per_epoch, learning_rate=lr,
                margin=margin, use_cal=use_cal)
            model = training.ProtoModel.create(f"ablate-seed{seed}-{'cal' if use_cal else 'nocal'}",
                                               spec, learning_rate=lr, store=store)
            training.train_model(model, dataset, train_index, cfg)
            result = training.evaluate_model(model, dataset, test_index, episode_spec,
                                             eval_episodes, seed=seed + 10_000)
            row["cal_on" if use_cal else "cal_off"] = {
                "accuracy": result.metrics.accuracy,
                "compactness_ratio": result.compactness_ratio,
            }
        arms.append(row)
        log.info("ablation seed %d: ratio on=%.4f off=%.4f", seed,
                 row["cal_on"]["compactness_ratio"], row["cal_off"]["compactness_ratio"])
    mean_on = float(np.mean([r["cal_on"]["compactness_ratio"] for r in arms]))
    mean_off = float(np.mean([r["cal_off"]["compactness_ratio"] for r in arms]))
    acc_on = float(np.mean([r["cal_on"]["accuracy"] for r in arms]))
    acc_off = float(np.mean([r["cal_off"]["accuracy"] for r in arms]))
    run_config = {
        "command": "ablate",
        "data": _resolve(args.data, config, "data", None),
        "seeds": n_seeds,
        "epochs": epochs,
        "episodes_per_epoch": episodes_per_epoch,
        "margin": margin,
        "use_cal": "paired on/off",
        "learning_rate": lr,
        "train_fraction": train_fraction,
        "eval_episodes": eval_episodes,
        "n_way": episode_spec.n_way,
        "k_shot": episode_spec.k_shot,
        "q_query": episode_spec.q_query,
    }
    doc = {
        "config": run_config,
        "arms": arms,
        "summary": {
            "mean_compactness_ratio_cal_on": mean_on,
            "mean_compactness_ratio_cal_off": mean_off,
            "ratio_improved": mean_on < mean_off,
            "mean_accuracy_cal_on": acc_on,
            "mean_accuracy_cal_off": acc_off,
        },
    }
    out = _resolve(args.out, config, "out", None)
    if out:
        dataio.write_report(out, doc)
    print(f"ablation over {n_seeds} paired seeds: compactness ratio "
          f"on={mean_on:.4f} off={mean_off:.4f} "
          f"({'lower with margin loss' if mean_on < mean_off else 'NOT improved'}); "
          f"accuracy on={acc_on:.4f} off={acc_off:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fewshot",
                                     description="Few-shot metric-learning engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="write a synthetic dataset")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--counts", default=None, help="comma-separated per-class counts")
    p.add_argument("--separation", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_gen_synth)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--config")
    p.add_argument("--data", default=None)
    p.add_argument("--labels", default=None, help="label manifest for an FSEB store")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--model-id", default=None)
    p.add_argument("--encoder", default=None, choices=["mlp", "conv-toy", "frozen-projection"])
    p.add_argument("--encoder-seed", type=int, default=None)
    p.add_argument("--embedding-dim", type=int, default=None)
    p.add_argument("--hidden", default=None, help="comma-separated hidden sizes")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--episodes-per-epoch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--margin", type=float, default=None)
    p.add_argument("--no-cal", action="store_true")
    p.add_argument("--precision", default=None, choices=["float32", "float64"])
    p.add_argument("--train-fraction", type=float, default=None)
    p.add_argument("--split-seed", type=int, default=None)
    _add_common_episode_flags(p)
    p.add_argument("--out", default=None, help="checkpoint path")
    p.add_argument("--report", default=None, help="training report path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--config")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--labels", default=None)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--train-fraction", type=float, default=None)
    p.add_argument("--split-seed", type=int, default=None)
    _add_common_episode_flags(p)
    p.add_argument("--out-report", default=None)
    p.add_argument("--out-predictions", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ensemble", help="aggregate prediction matrices")
    p.add_argument("--config")
    p.add_argument("--predictions", nargs="*", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_ensemble)

    p = sub.add_parser("ablate", help="paired margin-loss on/off comparison")
    p.add_argument("--config")
    p.add_argument("--data", default=None)
    p.add_argument("--labels", default=None)
    p.add_argument("--seeds", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--episodes-per-epoch", type=int, default=None)
    p.add_argument("--episodes", type=int, default=None, help="evaluation episodes")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--margin", type=float, default=None)
    p.add_argument("--embedding-dim", type=int, default=None)
    p.add_argument("--hidden", default=None)
    p.add_argument("--train-fraction", type=float, default=None)
    _add_common_episode_flags(p)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_ablate)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(f"error: {exc.code}", file=sys.stderr)
            return 1
        return exc.code or 0
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
