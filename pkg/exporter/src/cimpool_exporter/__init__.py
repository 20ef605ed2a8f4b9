"""Checkpoint-to-.cmodel export bridge for the cimpool toolchain."""

from .export import ExportError, ExportJob, export_checkpoint, load_checkpoint
from .fixtures import ARCHS, make_fixture

__all__ = [
    "ARCHS",
    "ExportError",
    "ExportJob",
    "export_checkpoint",
    "load_checkpoint",
    "make_fixture",
]
