"""legopack: post-training model compression by block clustering.

Weight matrices are tiled into b-by-b blocks, the blocks are K-means
clustered into a small codebook of "legos", and the model is stored as that
codebook plus bit-packed per-block indices.
"""

from .blocking import Block, BlockSet, breakup, flatten_to_matrix, reassemble
from .clustering import Assignment, Codebook, assign, kmeans, kmeanspp_seed
from .codec import (
    CompressedLayer,
    CompressedModel,
    CrBreakdown,
    RawLayer,
    bits_for_k,
    codebook_bytes,
    compute_cr,
    decode_compressed,
    encode_compressed,
    pack_indices,
    read_compressed,
    unpack_indices,
    write_compressed,
)
from .container import (
    DatasetBundle,
    LayerSpec,
    ModelBundle,
    Role,
    Tensor,
    WORDLENGTH,
    decode_dataset,
    decode_model,
    encode_dataset,
    encode_model,
    model_param_count,
    read_dataset,
    read_model,
    write_dataset,
    write_model,
)
from .errors import (
    BadMagic,
    ChecksumMismatch,
    CountMismatch,
    DimensionMismatch,
    FormatError,
    IndexOverflow,
    IoFailure,
    LegopackError,
    LengthMismatch,
    ShapeMismatch,
    SkippedLayerWarning,
    TooFewBlocks,
    TrailingGarbage,
    TruncatedFile,
    UnsupportedRank,
    UnsupportedVersion,
    ValidationError,
)
from .inference import forward, output_deviation, probe_inputs, probe_shape, top1_accuracy
from .pipeline import (
    CompressionReport,
    SearchOutcome,
    SearchPolicy,
    accuracy_eval,
    compress,
    deviation_eval,
    make_eval,
    reconstruct,
    search_lego_a,
    search_lego_c,
)
from .report import (
    outcome_to_dict,
    render_sweep_figure,
    report_to_dict,
    sweep_csv,
    write_sweep_csv,
)

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "BadMagic",
    "Block",
    "BlockSet",
    "ChecksumMismatch",
    "Codebook",
    "CompressedLayer",
    "CompressedModel",
    "CompressionReport",
    "CountMismatch",
    "CrBreakdown",
    "DatasetBundle",
    "DimensionMismatch",
    "FormatError",
    "IndexOverflow",
    "IoFailure",
    "LayerSpec",
    "LegopackError",
    "LengthMismatch",
    "ModelBundle",
    "RawLayer",
    "Role",
    "SearchOutcome",
    "SearchPolicy",
    "ShapeMismatch",
    "SkippedLayerWarning",
    "Tensor",
    "TooFewBlocks",
    "TrailingGarbage",
    "TruncatedFile",
    "UnsupportedRank",
    "UnsupportedVersion",
    "ValidationError",
    "WORDLENGTH",
    "accuracy_eval",
    "assign",
    "bits_for_k",
    "breakup",
    "codebook_bytes",
    "compress",
    "compute_cr",
    "decode_compressed",
    "decode_dataset",
    "decode_model",
    "deviation_eval",
    "encode_compressed",
    "encode_dataset",
    "encode_model",
    "flatten_to_matrix",
    "forward",
    "kmeans",
    "kmeanspp_seed",
    "make_eval",
    "model_param_count",
    "outcome_to_dict",
    "output_deviation",
    "pack_indices",
    "probe_inputs",
    "probe_shape",
    "read_compressed",
    "read_dataset",
    "read_model",
    "reassemble",
    "reconstruct",
    "render_sweep_figure",
    "report_to_dict",
    "search_lego_a",
    "search_lego_c",
    "sweep_csv",
    "top1_accuracy",
    "unpack_indices",
    "write_compressed",
    "write_dataset",
    "write_model",
    "write_sweep_csv",
]
