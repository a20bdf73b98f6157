"""Classical and Huber-robust truncated SVD.

The robust variant fits one rank-one term at a time by alternating
single-coefficient regressions ``x_ij = a_i b_j + e_ij`` solved with
iteratively reweighted least squares under the Huber loss, then deflates
the residual and repeats. Missing cells are given zero weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

MAD_CONSISTENCY = 1.4826


class DegenerateFitError(ArithmeticError):
    """A regression step had a zero weighted denominator."""


@dataclass(frozen=True)
class HuberConfig:
    """Tuning for the Huber IRLS fits.

    ``scale_floor`` is relative: the absolute floor on the residual scale is
    ``scale_floor * ||X||_F / sqrt(m * n)`` for the matrix being fitted.
    """

    c: float = 1.345
    max_iter: int = 100
    tol: float = 1e-6
    scale_floor: float = 1e-8
    refit_sweeps: int = 2

    def __post_init__(self):
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ValueError(f"Huber constant c must be positive, got {self.c}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not self.scale_floor > 0:
            raise ValueError("scale_floor must be positive")
        if self.refit_sweeps < 0:
            raise ValueError("refit_sweeps must be >= 0")


@dataclass
class RankOneFit:
    delta: float
    u: np.ndarray
    v: np.ndarray
    iterations: int = 0
    converged: bool = True


@dataclass
class RobustSvdResult:
    """Ordered singular triples plus the deflation residual."""

    components: list[RankOneFit]
    residual: np.ndarray
    # column-wise singular vectors, convenient for callers
    U: np.ndarray = field(init=False, repr=False)
    s: np.ndarray = field(init=False, repr=False)
    V: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        m, n = self.residual.shape
        k = len(self.components)
        self.U = np.column_stack([c.u for c in self.components]) if k else np.zeros((m, 0))
        self.V = np.column_stack([c.v for c in self.components]) if k else np.zeros((n, 0))
        self.s = np.array([c.delta for c in self.components], dtype=float)

    @property
    def rank(self) -> int:
        return len(self.components)

    @property
    def converged(self) -> bool:
        return all(c.converged for c in self.components)

    def low_rank(self) -> np.ndarray:
        return (self.U * self.s) @ self.V.T


def huber_rho(x: float, c: float = 1.345) -> float:
    """Huber loss: ``x**2`` inside ``[-c, c]``, ``2c|x| - c**2`` outside."""
    if not (c > 0 and math.isfinite(c)):
        raise ValueError(f"c must be positive and finite, got {c}")
    if not math.isfinite(x):
        raise ValueError(f"x must be finite, got {x}")
    ax = abs(x)
    if ax <= c:
        return x * x
    return 2.0 * c * ax - c * c


def huber_weight(residual: float, scale: float, c: float = 1.345) -> float:
    """IRLS weight ``psi(z)/z`` for ``z = residual/scale``; always in (0, 1]."""
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    z = abs(residual) / scale
    if z <= c:
        return 1.0
    return c / z


def _huber_weights(resid: np.ndarray, scale: float, c: float) -> np.ndarray:
    az = np.abs(resid)
    thresh = c * scale
    w = np.ones_like(az)
    big = az > thresh
    w[big] = thresh / az[big]
    return w


def mad_scale(residuals, mask=None, scale_floor: float = 1e-8) -> float:
    """Normal-consistent MAD of the observed residuals, clamped at ``scale_floor``."""
    r = np.asarray(residuals, dtype=float)
    if mask is not None:
        r = r[np.asarray(mask, dtype=bool)]
    r = r.ravel()
    if r.size == 0:
        raise ValueError("mad_scale needs at least one observed residual")
    med = np.median(r)
    mad = MAD_CONSISTENCY * float(np.median(np.abs(r - med)))
    return max(mad, scale_floor)


def _check_matrix(X, mask):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-d matrix, got shape {X.shape}")
    if mask is None:
        if not np.all(np.isfinite(X)):
            raise ValueError("matrix contains non-finite values and no missing mask was given")
        return X, None
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != X.shape:
        raise ValueError(f"mask shape {mask.shape} does not match matrix shape {X.shape}")
    if not np.all(np.isfinite(X[mask])):
        raise ValueError("observed cells must be finite")
    if mask.all():
        return X, None
    return X, mask


def _canonical_sign(u, v):
    i = int(np.argmax(np.abs(u)))
    if u[i] < 0:
        return -u, -v
    return u, v


def _floor_for(X, mask):
    vals = X[mask] if mask is not None else X
    rms = float(np.sqrt(np.mean(vals * vals))) if vals.size else 0.0
    return rms


def robust_rank_one(X, mask=None, cfg: HuberConfig | None = None, init=None,
                    _Xz=None, _abs_floor=None) -> RankOneFit:
    """Huber M-estimate of the best rank-one approximation ``a b^T``.

    Parameters
    ----------
    X : (m, n) array
    mask : (m, n) bool array, optional
        True marks observed cells. Missing cells get zero weight.
    cfg : HuberConfig
    init : tuple (u, v), optional
        Starting directions; defaults to the leading classical singular pair
        of the winsorized matrix, with missing cells read as zero.

    Returns
    -------
    RankOneFit
    """
    cfg = cfg or HuberConfig()
    if _Xz is None:
        X, mask = _check_matrix(X, mask)
        Xz = X if mask is None else np.where(mask, X, 0.0)
    else:
        Xz = _Xz
    m, n = Xz.shape
    if m < 2 or n < 2:
        raise ValueError(f"robust rank-one fit needs at least 2x2, got {Xz.shape}")
    if mask is not None:
        if (mask.sum(axis=0) < 2).any() or (mask.sum(axis=1) < 2).any():
            raise ValueError("every row and column needs at least 2 observed cells")
    M = None if mask is None else mask.astype(float)
    if _abs_floor is None:
        _abs_floor = cfg.scale_floor * max(_floor_for(Xz, mask), np.finfo(float).tiny)
    floor = _abs_floor

    if init is None:
        u0, s0, v0 = _leading_pair(Xz, mask)
        a = u0 * s0
        b = v0.copy()
    else:
        a, b = (np.array(t, dtype=float) for t in init)

    try:
        return _irls(Xz, M, mask, a, b, cfg, floor)
    except DegenerateFitError:
        # fixed-seed random restart
        rng = np.random.default_rng(0)
        a = rng.uniform(-1, 1, m)
        b = rng.uniform(-1, 1, n)
        return _irls(Xz, M, mask, a, b, cfg, floor)


@numba.njit(cache=True)
def _kth_smallest(x, n, k, lo, hi, idx, tmp):
    """Exact k-th order statistic (0-based) of x[:n], all within [lo, hi].

    Repeatedly buckets the candidates and keeps only the bucket holding
    rank k. ``idx`` and ``tmp`` are scratch arrays of length >= n.
    """
    nb = 1024
    counts = np.empty(nb, np.int64)
    src = x
    while True:
        if lo == hi:
            return lo
        inv = nb / (hi - lo)
        counts[:] = 0
        for t in range(n):
            j = int((src[t] - lo) * inv)
            if j >= nb:
                j = nb - 1
            idx[t] = j
            counts[j] += 1
        acc = 0
        b = 0
        while acc + counts[b] <= k:
            acc += counts[b]
            b += 1
        k -= acc
        m = counts[b]
        c = 0
        new_lo = np.inf
        new_hi = -np.inf
        for t in range(n):
            if idx[t] == b:
                v = src[t]
                tmp[c] = v
                c += 1
                new_lo = min(new_lo, v)
                new_hi = max(new_hi, v)
        if m <= 32:
            part = np.sort(tmp[:m])
            return part[k]
        # lo and hi fall in different buckets, so m < n and the loop shrinks
        if src is x:
            src = tmp
            tmp = np.empty(m)
        else:
            src, tmp = tmp, src
        n = m
        lo = new_lo
        hi = new_hi


@numba.njit(cache=True)
def _median(x, n, lo, hi, idx, tmp):
    k = n // 2
    upper = _kth_smallest(x, n, k, lo, hi, idx, tmp)
    if n % 2 == 1:
        return upper
    lower = _kth_smallest(x, n, k - 1, lo, hi, idx, tmp)
    return 0.5 * (lower + upper)


@numba.njit(cache=True)
def _sweep(Xz, M, has_mask, a, b, c, floor, buf, idx, tmp):
    m, n = Xz.shape
    # residual scale from the current fit
    cnt = 0
    lo = np.inf
    hi = -np.inf
    for i in range(m):
        ai = a[i]
        for j in range(n):
            if has_mask and M[i, j] == 0.0:
                continue
            r = Xz[i, j] - ai * b[j]
            buf[cnt] = r
            lo = min(lo, r)
            hi = max(hi, r)
            cnt += 1
    med = _median(buf, cnt, lo, hi, idx, tmp)
    hi = 0.0
    lo = np.inf
    for t in range(cnt):
        v = abs(buf[t] - med)
        buf[t] = v
        lo = min(lo, v)
        hi = max(hi, v)
    scale = max(1.4826 * _median(buf, cnt, lo, hi, idx, tmp), floor)
    thresh = c * scale

    # b-step: b_j = sum_i w_ij a_i x_ij / sum_i w_ij a_i^2
    num = np.zeros(n)
    den = np.zeros(n)
    for i in range(m):
        ai = a[i]
        for j in range(n):
            w = 1.0
            if has_mask:
                w = M[i, j]
                if w == 0.0:
                    continue
            x = Xz[i, j]
            r = abs(x - ai * b[j])
            if r > thresh:
                w *= thresh / r
            wa = w * ai
            num[j] += wa * x
            den[j] += wa * ai
    for j in range(n):
        if not den[j] > 0.0:
            return False
    for j in range(n):
        b[j] = num[j] / den[j]

    # a-step with the updated b
    for i in range(m):
        nu = 0.0
        de = 0.0
        ai = a[i]
        for j in range(n):
            w = 1.0
            if has_mask:
                w = M[i, j]
                if w == 0.0:
                    continue
            bj = b[j]
            x = Xz[i, j]
            r = abs(x - ai * bj)
            if r > thresh:
                w *= thresh / r
            wb = w * bj
            nu += wb * x
            de += wb * bj
        if not de > 0.0:
            return False
        a[i] = nu / de
    return True


def _irls(Xz, M, mask, a, b, cfg, floor):
    has_mask = M is not None
    Mk = M if has_mask else np.empty((1, 1))
    Xc = np.ascontiguousarray(Xz, dtype=float)
    buf = np.empty(Xc.size)
    idx = np.empty(Xc.size, np.int32)
    tmp = np.empty(Xc.size)
    a = np.ascontiguousarray(a, dtype=float).copy()
    b = np.ascontiguousarray(b, dtype=float).copy()
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        a_old, b_old = a.copy(), b.copy()
        ok = _sweep(Xc, Mk, has_mask, a, b, cfg.c, floor, buf, idx, tmp)
        if not ok:
            raise DegenerateFitError("zero weighted denominator in a regression step")
        # ||a b^T - a_old b_old^T||_F without forming either matrix
        na2, nb2 = a @ a, b @ b
        no2 = (a_old @ a_old) * (b_old @ b_old)
        cross = (a @ a_old) * (b @ b_old)
        diff = math.sqrt(max(na2 * nb2 + no2 - 2.0 * cross, 0.0))
        if diff / max(math.sqrt(no2), floor) < cfg.tol:
            converged = True
            break

    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0 or nb == 0:
        raise DegenerateFitError("rank-one fit collapsed to zero")
    u, v = _canonical_sign(a / na, b / nb)
    return RankOneFit(delta=na * nb, u=u, v=v, iterations=it, converged=converged)


# starting pairs are computed on a copy winsorized at median +- INIT_CLIP * MAD
INIT_CLIP = 20.0


def _leading_pair(X, mask=None):
    """Classical leading pair of ``X`` after winsorizing gross cells.

    A single huge cell is an exact rank-one fit, so starting IRLS at the
    plain classical pair would lock onto it; clipping keeps the start inside
    the basin of the bulk structure and leaves clean data almost unchanged.
    """
    vals = X if mask is None else X[mask]
    med = float(np.median(vals))
    spread = 1.4826 * float(np.median(np.abs(vals - med)))
    if spread > 0:
        Y = np.clip(X, med - INIT_CLIP * spread, med + INIT_CLIP * spread)
        if mask is not None:
            Y[~mask] = 0.0
    else:
        Y = X
    u, s, vt = np.linalg.svd(Y, full_matrices=False)
    if s[0] == 0 and Y is not X:
        u, s, vt = np.linalg.svd(X, full_matrices=False)
    return u[:, 0], float(s[0]), vt[0]


def _orthogonalize(comps, m, n):
    """Exact SVD of ``sum_i delta_i u_i v_i^T`` (rank <= len(comps))."""
    A = np.column_stack([c.u * c.delta for c in comps])
    B = np.column_stack([c.v for c in comps])
    Qa, Ra = np.linalg.qr(A)
    Qb, Rb = np.linalg.qr(B)
    Us, s, Vts = np.linalg.svd(Ra @ Rb.T)
    U = Qa @ Us
    V = Qb @ Vts.T
    # diagnostics follow the fitted components in decreasing-delta order
    order = sorted(range(len(comps)), key=lambda i: -comps[i].delta)
    out = []
    for i, j in enumerate(order):
        u, v = _canonical_sign(U[:, i], V[:, i])
        out.append(RankOneFit(delta=float(s[i]), u=u, v=v,
                              iterations=comps[j].iterations, converged=comps[j].converged))
    return out


def robust_svd(X, rank: int, mask=None, cfg: HuberConfig | None = None) -> RobustSvdResult:
    """Rank-``rank`` robust SVD by repeated Huber rank-one fits and deflation.

    After the deflation pass, ``cfg.refit_sweeps`` backfitting sweeps refit
    each term against ``X`` minus all the other terms (warm started), so
    that no rank-one fit sees unextracted signal as residual. The fitted
    low-rank matrix is finally rewritten as an exact SVD, which makes the
    returned singular vectors orthonormal and sorted by decreasing delta.
    The residual is ``X - sum_i delta_i u_i v_i^T`` on observed cells and 0
    on missing cells.
    """
    cfg = cfg or HuberConfig()
    X, mask = _check_matrix(X, mask)
    m, n = X.shape
    if rank < 1 or rank > min(m, n):
        raise ValueError(f"rank must be in [1, {min(m, n)}], got {rank}")
    if min(m, n) < 2:
        raise ValueError(f"robust SVD needs at least a 2x2 matrix, got {X.shape}")
    Xz = X if mask is None else np.where(mask, X, 0.0)
    abs_floor = cfg.scale_floor * max(_floor_for(Xz, mask), np.finfo(float).tiny)
    R = Xz.copy()
    comps = []
    for _ in range(rank):
        fit = robust_rank_one(None, mask, cfg, _Xz=R, _abs_floor=abs_floor)
        comps.append(fit)
        R -= fit.delta * np.outer(fit.u, fit.v)
        if mask is not None:
            R[~mask] = 0.0

    if rank > 1:
        for _ in range(cfg.refit_sweeps):
            for k, old in enumerate(comps):
                R += old.delta * np.outer(old.u, old.v)
                fit = robust_rank_one(None, mask, cfg, init=(old.u * old.delta, old.v),
                                      _Xz=R, _abs_floor=abs_floor)
                fit.iterations += old.iterations
                comps[k] = fit
                R -= fit.delta * np.outer(fit.u, fit.v)
                if mask is not None:
                    R[~mask] = 0.0

    comps = _orthogonalize(comps, m, n)
    low = sum(c.delta * np.outer(c.u, c.v) for c in comps)
    R = Xz - low
    if mask is not None:
        R[~mask] = 0.0
    return RobustSvdResult(comps, R)


def classical_svd(X, rank: int, mask=None, cfg=None) -> RobustSvdResult:
    """Truncated LAPACK SVD in the same result type (missing cells read as 0)."""
    X, mask = _check_matrix(X, mask)
    m, n = X.shape
    if rank < 1 or rank > min(m, n):
        raise ValueError(f"rank must be in [1, {min(m, n)}], got {rank}")
    Xz = X if mask is None else np.where(mask, X, 0.0)
    U, s, Vt = np.linalg.svd(Xz, full_matrices=False)
    comps = []
    for i in range(rank):
        u, v = _canonical_sign(U[:, i], Vt[i])
        comps.append(RankOneFit(delta=float(s[i]), u=u, v=v, iterations=0, converged=True))
    low = (U[:, :rank] * s[:rank]) @ Vt[:rank]
    R = Xz - low
    if mask is not None:
        R[~mask] = 0.0
    return RobustSvdResult(comps, R)


BACKENDS = {"classical": classical_svd, "robust": robust_svd}


def get_backend(name: str):
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown SVD backend {name!r}; choose from {sorted(BACKENDS)}") from None
