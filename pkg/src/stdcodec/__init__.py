"""Sparse Tucker compression of MU-MIMO beamforming weight tensors."""

__version__ = "0.1.0"

from .blob import BlobError, ChecksumError, TruncatedBlobError, UnsupportedVersionError  # noqa: E402
from .entropy import QuantizerSpec  # noqa: E402
from .givens import GivensParams, givens_decompose, givens_reconstruct, normalize_column_phases  # noqa: E402
from .pipeline import CodecConfig, compress, compression_ratio, decompress, raw_blob, td_baseline  # noqa: E402
from .solver import DescentTrace, SparseTucker, StdConfig, apbcd_solve, prox_l0_topk  # noqa: E402
from .tensor import hosvd, mode_product, read_ct3, tucker_reconstruct, unfold, write_ct3  # noqa: E402

__all__ = [
    "BlobError", "ChecksumError", "TruncatedBlobError", "UnsupportedVersionError",
    "QuantizerSpec", "GivensParams", "givens_decompose", "givens_reconstruct",
    "normalize_column_phases", "CodecConfig", "compress", "decompress",
    "compression_ratio", "raw_blob", "td_baseline", "DescentTrace", "SparseTucker",
    "StdConfig", "apbcd_solve", "prox_l0_topk", "hosvd", "mode_product", "read_ct3",
    "tucker_reconstruct", "unfold", "write_ct3",
]
