"""Export bridge: torch checkpoints and digit subsets to LGTW/LGTD files."""

from .export import (
    digits_split,
    emit_baseline,
    emit_reference_logits,
    export_dataset,
    export_model,
    framework_accuracy,
    framework_logits,
)
from .formats import decode_lgtd, decode_lgtw, encode_lgtd, encode_lgtw
from .model import build_fixture_cnn, fold_batchnorm, load_fixture_cnn, walk_module

__version__ = "0.1.0"

__all__ = [
    "build_fixture_cnn",
    "decode_lgtd",
    "decode_lgtw",
    "digits_split",
    "emit_baseline",
    "emit_reference_logits",
    "encode_lgtd",
    "encode_lgtw",
    "export_dataset",
    "export_model",
    "fold_batchnorm",
    "framework_accuracy",
    "framework_logits",
    "load_fixture_cnn",
    "walk_module",
    "__version__",
]
