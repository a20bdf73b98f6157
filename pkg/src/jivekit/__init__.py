"""Robust angle-based joint and individual variation explained (JIVE).

Blocks are stored variables-by-subjects (p_k x n). The decomposition splits
each block into joint, individual and residual parts, with either a classical
or a Huber-robust SVD backend.
"""

__version__ = "0.1.0"

from .ajive import (AjiveConfig, AjiveResult, DecompositionError, MultiBlockDataset,  # noqa: E402
                    SegmentationConfig, decompose)
from .robust_svd import HuberConfig, classical_svd, robust_svd  # noqa: E402

__all__ = ["AjiveConfig", "AjiveResult", "DecompositionError", "HuberConfig",
           "MultiBlockDataset", "SegmentationConfig", "classical_svd", "decompose",
           "robust_svd", "__version__"]
