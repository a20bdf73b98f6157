"""Angle-based joint and individual variation decomposition.

Three phases:

1. per-block rank-``r_k`` SVD giving row bases ``V_k`` (n x r_k);
2. SVD of the stacked bases ``M = [V_1^T; ...; V_K^T]``; right singular
   directions whose squared singular value (between 0 and K) clears a
   random-subspace null threshold form the joint basis;
3. projection of each block on the joint basis, and a thresholded SVD of
   the projection residual for the individual part.

The SVD backend is pluggable: ``classical`` gives the usual aJIVE, ``robust``
swaps every SVD for the Huber version in :mod:`jivekit.robust_svd`.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field

import numpy as np

from .robust_svd import HuberConfig, get_backend, mad_scale

log = logging.getLogger(__name__)


class DecompositionError(RuntimeError):
    """A numerical failure inside one phase of the decomposition."""

    def __init__(self, phase: str, message: str, block: int | None = None):
        self.phase = phase
        self.block = block
        where = f"{phase}" if block is None else f"{phase}, block {block}"
        super().__init__(f"[{where}] {message}")


@dataclass
class MultiBlockDataset:
    """K blocks of shape (p_k, n) measured on the same n subjects."""

    blocks: list
    masks: list | None = None
    block_names: list | None = None

    def __post_init__(self):
        self.blocks = [np.asarray(b, dtype=float) for b in self.blocks]
        if len(self.blocks) < 2:
            raise ValueError(f"need at least 2 blocks, got {len(self.blocks)}")
        for k, b in enumerate(self.blocks):
            if b.ndim != 2:
                raise ValueError(f"block {k} is not a matrix")
        n = self.blocks[0].shape[1]
        for k, b in enumerate(self.blocks):
            if b.shape[1] != n:
                raise ValueError(
                    f"block {self.name(k)!r} has {b.shape[1]} subjects, expected {n}")
        if self.masks is not None:
            if len(self.masks) != len(self.blocks):
                raise ValueError("one mask (or None) per block is required")
            masks = []
            for k, (b, m) in enumerate(zip(self.blocks, self.masks)):
                if m is None:
                    masks.append(None)
                    continue
                m = np.asarray(m, dtype=bool)
                if m.shape != b.shape:
                    raise ValueError(f"mask of block {k} has shape {m.shape}, block is {b.shape}")
                masks.append(None if m.all() else m)
            self.masks = masks if any(m is not None for m in masks) else None
        for k, b in enumerate(self.blocks):
            m = self.mask(k)
            vals = b if m is None else b[m]
            if not np.all(np.isfinite(vals)):
                raise ValueError(f"block {self.name(k)!r} has non-finite observed values")
        if self.block_names is None:
            self.block_names = [f"block{k + 1}" for k in range(len(self.blocks))]
        elif len(self.block_names) != len(self.blocks):
            raise ValueError("one name per block is required")

    @property
    def K(self) -> int:
        return len(self.blocks)

    @property
    def n(self) -> int:
        return self.blocks[0].shape[1]

    @property
    def dims(self) -> list[int]:
        return [b.shape[0] for b in self.blocks]

    def mask(self, k):
        return None if self.masks is None else self.masks[k]

    def name(self, k) -> str:
        return self.block_names[k] if self.block_names else f"block{k + 1}"


@dataclass(frozen=True)
class SegmentationConfig:
    n_resamples: int = 100
    quantile: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.n_resamples < 10:
            raise ValueError("n_resamples must be >= 10")
        if not 0 < self.quantile < 1:
            raise ValueError("quantile must lie in (0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class AjiveConfig:
    initial_ranks: tuple
    backend: str = "classical"
    huber: HuberConfig = field(default_factory=HuberConfig)
    joint_rank_override: int | None = None
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)

    def __post_init__(self):
        object.__setattr__(self, "initial_ranks", tuple(int(r) for r in self.initial_ranks))
        get_backend(self.backend)
        if any(r < 1 for r in self.initial_ranks):
            raise ValueError("initial ranks must be positive")
        if len(self.initial_ranks) < 2:
            raise ValueError("need an initial rank for each of at least two blocks")
        if sum(self.initial_ranks) <= max(self.initial_ranks):
            raise ValueError("sum of initial ranks must exceed the largest one")
        if self.joint_rank_override is not None and self.joint_rank_override < 0:
            raise ValueError("joint_rank_override must be non-negative")

    def check_against(self, data: MultiBlockDataset):
        if len(self.initial_ranks) != data.K:
            raise ValueError(
                f"{len(self.initial_ranks)} initial ranks given for {data.K} blocks")
        for k, (r, p) in enumerate(zip(self.initial_ranks, data.dims)):
            if r > min(p, data.n):
                raise ValueError(
                    f"initial rank {r} of block {data.name(k)!r} exceeds min{(p, data.n)}")


@dataclass
class BlockDecomposition:
    joint: np.ndarray
    individual: np.ndarray
    noise: np.ndarray
    individual_rank: int
    # individual row basis (n x individual_rank) and the noise threshold used
    individual_basis: np.ndarray | None = None
    individual_threshold: float = float("nan")


@dataclass
class SegmentationDiagnostics:
    sv_squared: np.ndarray
    threshold: float
    null_threshold: float
    floor: float
    clamped: bool = False
    warnings: list = field(default_factory=list)


@dataclass
class AjiveResult:
    joint_rank: int
    joint_basis: np.ndarray
    joint_scores: np.ndarray
    per_block: list
    segmentation_diagnostics: SegmentationDiagnostics
    backend: str = "classical"

    @property
    def individual_ranks(self) -> list[int]:
        return [b.individual_rank for b in self.per_block]


# ---------------------------------------------------------------- phase 1

@dataclass
class SignalSpace:
    U: np.ndarray
    s: np.ndarray
    V: np.ndarray
    residual_scale: float


def initial_extraction(data: MultiBlockDataset, cfg: AjiveConfig) -> list[SignalSpace]:
    """Rank-``r_k`` backend SVD of every block."""
    cfg.check_against(data)
    svd = get_backend(cfg.backend)
    out = []
    for k, (X, r) in enumerate(zip(data.blocks, cfg.initial_ranks)):
        mask = data.mask(k)
        try:
            res = svd(X, r, mask=mask, cfg=cfg.huber)
        except (ArithmeticError, ValueError) as exc:
            raise DecompositionError("initial extraction", str(exc), block=k) from exc
        floor = 1e-12 * max(float(np.sqrt(np.mean(np.where(mask, X, 0.0) ** 2)))
                            if mask is not None else float(np.sqrt(np.mean(X ** 2))), 1e-300)
        scale = mad_scale(res.residual, mask, floor)
        out.append(SignalSpace(res.U, res.s, res.V, scale))
    return out


# ---------------------------------------------------------------- phase 2

def stack_scores(spaces) -> np.ndarray:
    """Stack the transposed row bases into the (sum r_k) x n matrix M."""
    Vs = [s.V if isinstance(s, SignalSpace) else np.asarray(s) for s in spaces]
    n = Vs[0].shape[0]
    for k, V in enumerate(Vs):
        if V.shape[0] != n:
            raise ValueError(f"row basis {k} has {V.shape[0]} rows, expected {n}")
    return np.vstack([V.T for V in Vs])


def _random_basis(rng, n, r):
    Q, R = np.linalg.qr(rng.standard_normal((n, r)))
    return Q * np.sign(np.diag(R))


@functools.lru_cache(maxsize=256)
def random_direction_null(n: int, ranks: tuple, n_resamples: int, quantile: float,
                          seed: int) -> float:
    """Quantile of the leading squared singular value of M under independent
    uniformly random row subspaces of the given ranks."""
    rng = np.random.default_rng(seed)
    ranks = tuple(sorted(ranks, reverse=True))
    draws = np.empty(n_resamples)
    for b in range(n_resamples):
        M = np.vstack([_random_basis(rng, n, r).T for r in ranks])
        draws[b] = np.linalg.svd(M, compute_uv=False)[0] ** 2
    return float(np.quantile(draws, quantile))


@functools.lru_cache(maxsize=256)
def gaussian_noise_null(p: int, n: int, n_resamples: int, quantile: float, seed: int) -> float:
    """Quantile of the largest singular value of a p x n standard Gaussian matrix."""
    rng = np.random.default_rng(seed)
    draws = np.empty(n_resamples)
    for b in range(n_resamples):
        draws[b] = np.linalg.svd(rng.standard_normal((p, n)), compute_uv=False)[0]
    return float(np.quantile(draws, quantile))


def segment_score_space(M, cfg: AjiveConfig, noise_basis_dims):
    """Select the joint rank and joint row basis from the stacked bases.

    ``noise_basis_dims`` are the block ranks ``r_k`` (the row count of each
    block's slice of ``M``). Returns ``(joint_rank, V_J, diagnostics)``.
    """
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        raise ValueError("stacked score matrix is empty")
    dims = [int(d) for d in noise_basis_dims]
    if sum(dims) != M.shape[0]:
        raise ValueError(f"block ranks {dims} do not add up to {M.shape[0]} rows of M")
    K = len(dims)
    n = M.shape[1]
    max_joint = min(dims)
    seg = cfg.segmentation

    svd = get_backend(cfg.backend)
    rank = min(max_joint, min(M.shape))
    try:
        res = svd(M, rank, cfg=cfg.huber)
    except (ArithmeticError, ValueError) as exc:
        raise DecompositionError("score space segmentation", str(exc)) from exc
    V = res.V
    # squared alignment of each direction with the block row spaces; for an
    # orthonormal direction this is sum_k cos^2(angle to row space k) <= K
    sv2 = np.sum((M @ V) ** 2, axis=0)
    order = np.argsort(-sv2, kind="stable")
    sv2, V = sv2[order], V[:, order]

    null = random_direction_null(n, tuple(dims), seg.n_resamples, seg.quantile, seg.seed)
    floor = 1.0 + (K - 1) / 2.0
    threshold = max(null, floor)
    diag = SegmentationDiagnostics(sv_squared=sv2, threshold=threshold,
                                   null_threshold=null, floor=floor)
    if cfg.joint_rank_override is not None:
        r = int(cfg.joint_rank_override)
    else:
        r = int(np.sum(sv2 > threshold))
    if r > max_joint:
        msg = f"joint rank {r} clamped to smallest initial rank {max_joint}"
        log.warning(msg)
        diag.warnings.append(msg)
        diag.clamped = True
        r = max_joint
    if r > V.shape[1]:
        # override beyond the computed directions: complete with classical ones
        _, _, Vt = np.linalg.svd(M, full_matrices=False)
        V = Vt[:r].T
    VJ = V[:, :r]
    if r:
        Q, R = np.linalg.qr(VJ)
        VJ = Q * np.sign(np.diag(R))
    return r, VJ, diag


# ---------------------------------------------------------------- phase 3

def _complete(X, mask, space: SignalSpace | None):
    """Observed values, with missing cells filled from the phase-1 fit."""
    if mask is None:
        return X
    fill = (space.U * space.s) @ space.V.T if space is not None else 0.0
    return np.where(mask, X, fill)


def final_decomposition(data: MultiBlockDataset, VJ, cfg: AjiveConfig,
                        spaces: list[SignalSpace] | None = None) -> list[BlockDecomposition]:
    """Joint projection plus thresholded individual SVD for every block."""
    VJ = np.asarray(VJ, dtype=float).reshape(data.n, -1)
    r = VJ.shape[1]
    svd = get_backend(cfg.backend)
    seg = cfg.segmentation
    out = []
    for k, X in enumerate(data.blocks):
        mask = data.mask(k)
        space = spaces[k] if spaces is not None else None
        Xf = _complete(X, mask, space)
        J = (Xf @ VJ) @ VJ.T
        R = Xf - J
        p, n = X.shape
        cap = max(cfg.initial_ranks[k] - r, 0)
        cap = min(cap, p, n - r)
        if space is not None:
            scale = space.residual_scale
        else:
            scale = mad_scale(R, mask, 1e-300)
        threshold = scale * gaussian_noise_null(p, n, seg.n_resamples, seg.quantile, seg.seed)
        ind_rank = 0
        I = np.zeros_like(Xf)
        basis = np.zeros((n, 0))
        if cap > 0:
            try:
                # R is already completed; only the robust fit down-weights filled cells
                fit_mask = mask if cfg.backend == "robust" else None
                res = svd(R, cap, mask=fit_mask, cfg=cfg.huber)
            except (ArithmeticError, ValueError) as exc:
                raise DecompositionError("final decomposition", str(exc), block=k) from exc
            ind_rank = int(np.sum(res.s > threshold))
            if ind_rank:
                I = (res.U[:, :ind_rank] * res.s[:ind_rank]) @ res.V[:, :ind_rank].T
                basis = res.V[:, :ind_rank]
        E = Xf - J - I
        out.append(BlockDecomposition(joint=J, individual=I, noise=E, individual_rank=ind_rank,
                                      individual_basis=basis, individual_threshold=threshold))
    return out


def decompose(data: MultiBlockDataset, cfg: AjiveConfig) -> AjiveResult:
    """Run all three phases. ``cfg.backend`` selects aJIVE or its robust form."""
    cfg.check_against(data)
    spaces = initial_extraction(data, cfg)
    M = stack_scores(spaces)
    r, VJ, diag = segment_score_space(M, cfg, [s.V.shape[1] for s in spaces])
    per_block = final_decomposition(data, VJ, cfg, spaces)
    return AjiveResult(joint_rank=r, joint_basis=VJ, joint_scores=np.sqrt(data.n) * VJ,
                       per_block=per_block, segmentation_diagnostics=diag, backend=cfg.backend)
