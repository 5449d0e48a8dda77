"""Acceptance suite: one test per release criterion, at pinned tolerances.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one pass/fail
line per criterion.
"""

import contextlib
import struct
import time
from collections import Counter

import numpy as np
import pytest

from fewshot import dataio
from fewshot.cal import cal_loss, cal_terms, CalTerms
from fewshot.encoders import EncoderSpec, FrozenEmbeddingStore, init_encoder
from fewshot.ensemble import PredictionMatrix, decide, ensemble_evaluate
from fewshot.episodes import DatasetIndex, EpisodeSpec, sample_episode
from fewshot.gradcheck import grad_check
from fewshot.optim import AdamState, adam_step
from fewshot.protonet import PrototypeSet, classify, compute_prototypes
from fewshot.synthetic import SyntheticSpec, gen_synthetic
from fewshot.training import (ProtoModel, TrainConfig, episode_loss,
                              evaluate_model, train_model)
from fewshot.episodes import stratified_split


@contextlib.contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"\n[ACCEPTANCE] {name}: FAIL")
        raise
    print(f"\n[ACCEPTANCE] {name}: PASS")


# ---------------------------------------------------------------------------
def test_gradient_oracle():
    """Analytic gradients of the combined loss match central differences.

    Both encoder families, 5 seeds, float64, rtol 1e-3 / atol 1e-5,
    relu-kink coordinates excluded, total runtime under 60 s.
    """
    with criterion("gradient oracle (combined loss, mlp + conv-toy, 5 seeds)"):
        start = time.perf_counter()
        for seed in range(5):
            rng = np.random.default_rng(seed)
            cases = [
                (EncoderSpec(kind="mlp", input_shape=(6,), embedding_dim=5,
                             hidden=(7,), seed=seed),
                 rng.standard_normal((6, 6)), rng.standard_normal((4, 6))),
                (EncoderSpec(kind="conv-toy", input_shape=(1, 16, 16),
                             embedding_dim=4, channels=(3, 3, 3, 3), seed=seed),
                 rng.standard_normal((6, 1, 16, 16)),
                 rng.standard_normal((4, 1, 16, 16))),
            ]
            sc = np.repeat(np.arange(2), 3)
            qc = np.repeat(np.arange(2), 2)
            for spec, sx, qx in cases:
                encoder = init_encoder(spec, dtype=np.float64)

                def build():
                    loss, _, _ = episode_loss(encoder, sx, sc, qx, qc,
                                              margin=0.5, use_cal=True)
                    return loss

                result = grad_check(build, encoder.parameters(),
                                    h=1e-5, rtol=1e-3, atol=1e-5)
                assert result.ok, (spec.kind, seed, result.failures[:3])
                assert result.checked > 0
        elapsed = time.perf_counter() - start
        assert elapsed < 60.0, f"gradient oracle took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
def brute_force_mode(labels, vectors):
    """Independent mode + documented tie-break: restricted soft vote, then
    lowest class index."""
    counts = Counter(int(l) for l in labels)
    top = max(counts.values())
    tied = sorted(c for c, n in counts.items() if n == top)
    if len(tied) == 1:
        return tied[0]
    means = [sum(float(v[c]) for v in vectors) / len(vectors) for c in tied]
    best_mean = max(means)
    return min(c for c, m in zip(tied, means) if m == best_mean)


def test_voting_oracle():
    """1,000 randomized prediction matrices, exact agreement with brute force."""
    with criterion("voting oracle (1,000 randomized matrices, exact)"):
        rng = np.random.default_rng(2024)
        for case in range(1000):
            k = int(rng.choice([1, 3, 5]))
            n_way = int(rng.choice([2, 4]))
            q = int(rng.integers(1, 8))
            raw = rng.uniform(0.01, 1.0, size=(k, q, n_way))
            probs = raw / raw.sum(axis=2, keepdims=True)
            for qi in range(q):
                block = probs[:, qi, :]
                d = decide(block)
                assert d.hv_label == brute_force_mode(block.argmax(axis=1), block)
                assert d.sv_label == int(np.argmax(block.sum(axis=0)))


# ---------------------------------------------------------------------------
def test_protonet_invariant_suite():
    """Permutation invariance, normalization, argmax/argmin agreement,
    scaling invariance; 1,000 fuzz cases at float64."""
    with criterion("prototype-head invariants (1,000 fuzz cases)"):
        rng = np.random.default_rng(7)
        for case in range(1000):
            n_way = int(rng.integers(2, 6))
            dim = int(rng.integers(2, 10))
            k = int(rng.integers(1, 6))
            support = {c: rng.standard_normal((k, dim)) for c in range(n_way)}
            queries = rng.standard_normal((int(rng.integers(1, 5)), dim))

            protos = compute_prototypes(support)
            # permutation invariance, exact at float64
            perm = rng.permutation(k)
            permuted = compute_prototypes({c: emb[perm] for c, emb in support.items()})
            assert np.array_equal(protos.matrix, permuted.matrix)

            predictions = classify(queries, protos)
            for pred in predictions:
                assert abs(float(pred.probabilities.sum()) - 1.0) <= 1e-12
                assert int(pred.probabilities.argmax()) == int(pred.distances.argmin())

            base_labels = [p.predicted for p in predictions]
            for lam in (0.5, 2.0, 10.0):
                scaled = PrototypeSet(protos.class_order, lam * protos.matrix)
                labels = [p.predicted for p in classify(lam * queries, scaled)]
                assert labels == base_labels


# ---------------------------------------------------------------------------
def test_cal_properties():
    """Margin loss non-negative on 10,000 fuzz cases; exact zeros on
    constructed cases; the worked example reproduces exactly."""
    with criterion("class-aware loss properties (10,000 fuzz cases + exact cases)"):
        rng = np.random.default_rng(99)
        for case in range(10000):
            dim = int(rng.integers(2, 6))
            proto = rng.standard_normal(dim)
            pos = rng.standard_normal((int(rng.integers(1, 5)), dim))
            neg = rng.standard_normal((int(rng.integers(1, 5)), dim))
            margin = float(rng.uniform(0, 2))
            assert cal_loss([cal_terms(proto, pos, neg)], margin) >= 0.0

        # constructed zero: positives equidistant, margin satisfied
        def axis_points(distances, dim=4):
            out = np.zeros((len(distances), dim))
            for i, d in enumerate(distances):
                out[i, i % dim] = d
            return out

        for r, margin, slack in ((1.0, 0.5, 0.0), (2.0, 1.0, 3.0), (0.5, 0.0, 0.25)):
            terms = cal_terms(np.zeros(4), axis_points([r, r, r]),
                              axis_points([r + margin + slack, r + margin + slack + 1]))
            assert cal_loss([terms], margin) == 0.0

        # worked example: c=1.5, Dmax=2, Dmin=4, margin=0.5 -> 0.5 exactly
        terms = cal_terms(np.zeros(4), axis_points([1.0, 2.0]), axis_points([4.0, 5.0]))
        assert (terms.central, terms.d_max_pos, terms.d_min_neg) == (1.5, 2.0, 4.0)
        assert cal_loss([terms], margin=0.5) == 0.5


# ---------------------------------------------------------------------------
def _check_episode_invariants(ep, spec, index):
    assert len(ep.classes) == spec.n_way
    assert len(set(ep.classes)) == spec.n_way
    support = ep.support_ids()
    query = ep.query_ids()
    assert len(support) == spec.n_way * spec.k_shot
    assert len(query) == spec.n_way * spec.q_query
    assert not set(support) & set(query)
    assert len(set(support + query)) == len(support) + len(query)
    id_to_class = dict(index.samples)
    for cls, group in zip(ep.classes, ep.support):
        assert all(id_to_class[sid] == cls for sid in group)
    for cls, group in zip(ep.classes, ep.query):
        assert all(id_to_class[sid] == cls for sid in group)


def test_sampler_suite():
    """10,000 episodes at 4-way 10-shot 15-query: zero invariant violations,
    class frequency within 5 percentage points of uniform."""
    with criterion("episode sampler (10,000 episodes, uniformity within 5pp)"):
        spec = EpisodeSpec(n_way=4, k_shot=10, q_query=15)
        index = DatasetIndex(
            [(f"c{c}-{i}", c) for c in range(8) for i in range(40)],
            {c: f"class{c}" for c in range(8)})
        rng = np.random.default_rng(31337)
        hits = Counter()
        n = 10_000
        for _ in range(n):
            ep = sample_episode(index, spec, rng)
            _check_episode_invariants(ep, spec, index)
            hits.update(ep.classes)
        expected = spec.n_way / 8
        for c in range(8):
            freq = hits[c] / n
            assert abs(freq - expected) <= 0.05, (c, freq)

        # boundary: the imbalance profile with a 26-sample minority class,
        # one class holding exactly k+q eligible test samples plus one
        imbalance = DatasetIndex(
            [(f"c{c}-{i}", c) for c, count in enumerate((3200, 2240, 896, 64))
             for i in range(count)],
            {c: f"class{c}" for c in range(4)})
        rng2 = np.random.default_rng(5)
        for _ in range(500):
            ep = sample_episode(imbalance, spec, rng2)
            _check_episode_invariants(ep, spec, imbalance)
            assert set(ep.classes) == {0, 1, 2, 3}


# ---------------------------------------------------------------------------
@pytest.fixture(scope="module")
def e2e_outcome():
    """Train 5 heterogeneous models on the imbalanced 6-sigma benchmark."""
    start = time.perf_counter()
    ds = gen_synthetic(SyntheticSpec(n_classes=4, dim=16,
                                     counts=(3200, 2240, 896, 64),
                                     separation=6.0, sigma=1.0, seed=0))
    # 0.6 split keeps the 64-sample minority class episode-eligible (>= 25)
    # on both sides; 0.8 would leave only ~13 test samples
    train_index, test_index = stratified_split(ds.index(), 0.6, seed=0)
    spec = EpisodeSpec(n_way=4, k_shot=10, q_query=15)
    hidden = [(64,), (32, 32), (48,), (64, 32), (96,)]
    singles = []
    matrices = []
    for i, h in enumerate(hidden):
        enc_spec = EncoderSpec(kind="mlp", input_shape=(16,), embedding_dim=128,
                               hidden=h, seed=101 * (i + 1))
        model = ProtoModel.create(f"member-{i}", enc_spec, learning_rate=1e-3)
        cfg = TrainConfig(episode_spec=spec, seed=1000 + i, epochs=15,
                          episodes_per_epoch=20, learning_rate=1e-3,
                          margin=0.5, use_cal=True)
        train_model(model, ds, train_index, cfg)
        result = evaluate_model(model, ds, test_index, spec, 100, seed=777)
        singles.append(result.metrics.accuracy)
        matrices.append(result.predictions)
    voted = ensemble_evaluate(PredictionMatrix.merge(matrices))
    return {
        "singles": singles,
        "soft": voted["soft_voting"].accuracy,
        "hard": voted["hard_voting"].accuracy,
        "elapsed": time.perf_counter() - start,
    }


def test_synthetic_end_to_end(e2e_outcome):
    """Five-model pipeline on imbalanced 6-sigma data: every member >= 95%,
    soft voting >= the single-model mean and >= 97%, within 5 minutes."""
    with criterion("synthetic end-to-end ensemble (5 models, 100 episodes)"):
        singles = e2e_outcome["singles"]
        print(f"\n  members: {[f'{a:.4f}' for a in singles]}, "
              f"SV {e2e_outcome['soft']:.4f}, HV {e2e_outcome['hard']:.4f}, "
              f"{e2e_outcome['elapsed']:.0f}s")
        assert all(a >= 0.95 for a in singles), singles
        assert e2e_outcome["soft"] >= float(np.mean(singles))
        assert e2e_outcome["soft"] >= 0.97
        assert e2e_outcome["elapsed"] < 300.0


# ---------------------------------------------------------------------------
def test_cal_ablation():
    """On 2-sigma overlap data, the margin loss strictly lowers the mean
    compactness ratio across 10 paired seeds; both arms' accuracies reported."""
    with criterion("class-aware loss ablation (10 paired seeds)"):
        ds = gen_synthetic(SyntheticSpec(n_classes=4, dim=8, counts=(80,) * 4,
                                         separation=2.0, sigma=1.0, seed=42))
        spec = EpisodeSpec(n_way=4, k_shot=5, q_query=5)
        ratios = {True: [], False: []}
        accs = {True: [], False: []}
        for seed in range(10):
            for use_cal in (True, False):
                train_index, test_index = stratified_split(ds.index(), 0.7, seed)
                enc_spec = EncoderSpec(kind="mlp", input_shape=(8,),
                                       embedding_dim=32, hidden=(32,), seed=seed)
                model = ProtoModel.create(f"ablate-{seed}", enc_spec,
                                          learning_rate=1e-3)
                cfg = TrainConfig(episode_spec=spec, seed=seed, epochs=20,
                                  episodes_per_epoch=16, learning_rate=1e-3,
                                  margin=0.5, use_cal=use_cal)
                train_model(model, ds, train_index, cfg)
                result = evaluate_model(model, ds, test_index, spec, 30,
                                        seed=seed + 10_000)
                ratios[use_cal].append(result.compactness_ratio)
                accs[use_cal].append(result.metrics.accuracy)
        mean_on = float(np.mean(ratios[True]))
        mean_off = float(np.mean(ratios[False]))
        print(f"\n  compactness ratio: on {mean_on:.4f} vs off {mean_off:.4f}; "
              f"accuracy: on {np.mean(accs[True]):.4f} vs off {np.mean(accs[False]):.4f}")
        assert mean_on < mean_off
        assert all(np.isfinite(a) for a in accs[True] + accs[False])


# ---------------------------------------------------------------------------
def test_format_round_trips(tmp_path):
    """FSEB, checkpoint and report files round-trip bit-exactly; malformed
    magic, version and truncation are rejected with typed errors."""
    with criterion("format round trips + typed rejection (FSEB/checkpoint/report)"):
        # FSEB
        rng = np.random.default_rng(0)
        store = FrozenEmbeddingStore(
            vectors={f"s{i}": rng.standard_normal(32).astype(np.float32)
                     for i in range(10)},
            source_dim=32, provenance="acceptance")
        a = tmp_path / "a.fseb"
        b = tmp_path / "b.fseb"
        dataio.write_embedding_store(a, store)
        dataio.write_embedding_store(b, dataio.load_frozen(a))
        assert a.read_bytes() == b.read_bytes()

        raw = bytearray(a.read_bytes())
        bad_magic = tmp_path / "magic.fseb"
        bad_magic.write_bytes(b"WHAT" + bytes(raw[4:]))
        with pytest.raises(dataio.BadMagicError):
            dataio.load_frozen(bad_magic)
        bad_version = tmp_path / "version.fseb"
        version_raw = bytearray(raw)
        struct.pack_into("<H", version_raw, 4, 7)
        bad_version.write_bytes(bytes(version_raw))
        with pytest.raises(dataio.UnsupportedVersionError):
            dataio.load_frozen(bad_version)
        truncated = tmp_path / "trunc.fseb"
        truncated.write_bytes(bytes(raw[:-9]))
        with pytest.raises(dataio.TruncatedPayloadError):
            dataio.load_frozen(truncated)

        # checkpoint
        encoder = init_encoder(EncoderSpec(kind="mlp", input_shape=(5,),
                                           embedding_dim=4, hidden=(6,), seed=1))
        adam = AdamState(learning_rate=1e-4)
        grads = {p.name: rng.standard_normal(p.value.shape).astype(np.float32)
                 for p in encoder.parameters()}
        adam_step(encoder.parameters(), grads, adam)
        ca = tmp_path / "a.fscp"
        cb = tmp_path / "b.fscp"
        dataio.save_checkpoint(ca, encoder, adam, extra={"model_id": "m"})
        enc2, adam2, extra = dataio.load_checkpoint(ca)
        dataio.save_checkpoint(cb, enc2, adam2, extra=extra)
        assert ca.read_bytes() == cb.read_bytes()
        ckpt_raw = bytearray(ca.read_bytes())
        bad_ckpt = tmp_path / "bad.fscp"
        bad_ckpt.write_bytes(b"ZZZZ" + bytes(ckpt_raw[4:]))
        with pytest.raises(dataio.BadMagicError):
            dataio.load_checkpoint(bad_ckpt)
        ver_ckpt = tmp_path / "ver.fscp"
        ver_raw = bytearray(ckpt_raw)
        struct.pack_into("<H", ver_raw, 4, 3)
        ver_ckpt.write_bytes(bytes(ver_raw))
        with pytest.raises(dataio.UnsupportedVersionError):
            dataio.load_checkpoint(ver_ckpt)
        trunc_ckpt = tmp_path / "trunc.fscp"
        trunc_ckpt.write_bytes(bytes(ckpt_raw[:-11]))
        with pytest.raises(dataio.TruncatedPayloadError):
            dataio.load_checkpoint(trunc_ckpt)

        # report
        ra = tmp_path / "a.json"
        rb = tmp_path / "b.json"
        doc = {"config": {"seed": 1, "margin": 0.5, "use_cal": True},
               "models": [{"model_id": "m", "metrics": {"accuracy": 1 / 3}}]}
        dataio.write_report(ra, doc)
        dataio.write_report(rb, dataio.read_report(ra))
        assert ra.read_bytes() == rb.read_bytes()
        with pytest.raises(dataio.UnsupportedVersionError):
            (tmp_path / "r.json").write_text('{"schema_version": 99}')
            dataio.read_report(tmp_path / "r.json")
