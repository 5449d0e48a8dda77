"""Backbone embedding exporter: image folders -> FSEB stores."""

from .backbones import SUPPORTED, UnknownBackboneError, build_extractor
from .export import ExportJob, ExportResult, export_embeddings

__version__ = "0.1.0"
