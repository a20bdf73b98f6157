"""Synthetic multi-block data, cell-wise contamination and replicated studies."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .ajive import AjiveConfig, DecompositionError, MultiBlockDataset, decompose
from .metrics import MetricRecord, evaluate
from .robust_svd import DegenerateFitError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GeneratorConfig:
    n: int
    p: tuple
    joint_rank: int
    individual_ranks: tuple
    signal_scale: float = 1.0
    noise_sd: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "p", tuple(int(x) for x in self.p))
        object.__setattr__(self, "individual_ranks", tuple(int(x) for x in self.individual_ranks))
        if len(self.p) != len(self.individual_ranks):
            raise ValueError("p and individual_ranks must have one entry per block")
        if len(self.p) < 2:
            raise ValueError("need at least two blocks")
        if self.joint_rank < 0 or any(r < 0 for r in self.individual_ranks):
            raise ValueError("ranks must be non-negative")
        for k, (pk, rk) in enumerate(zip(self.p, self.individual_ranks)):
            if self.joint_rank + rk > min(pk, self.n):
                raise ValueError(
                    f"block {k}: joint rank {self.joint_rank} + individual rank {rk} "
                    f"exceeds min(p_k, n) = {min(pk, self.n)}")
        if not self.signal_scale > 0 or not self.noise_sd >= 0:
            raise ValueError("signal_scale must be positive and noise_sd non-negative")


@dataclass
class GroundTruth:
    joint_basis: np.ndarray
    joint: list
    individual: list
    individual_bases: list
    joint_rank: int
    individual_ranks: tuple
    labels: np.ndarray


def _orthonormal(rng, n, r, against=None):
    Z = rng.standard_normal((n, r))
    if against is not None and against.shape[1]:
        Z -= against @ (against.T @ Z)
        # second pass keeps the orthogonality at machine precision
        Z -= against @ (against.T @ Z)
    Q, R = np.linalg.qr(Z)
    return Q * np.sign(np.diag(R))


def logistic(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def generate_multiblock(cfg: GeneratorConfig):
    """Draw blocks ``X_k = A_k U^T + B_k W_k^T + noise``.

    ``U`` (n x r) is shared, each ``W_k`` (n x r_k) is orthogonal to ``U``;
    loadings are i.i.d. N(0, signal_scale^2). Binary labels follow
    ``Bernoulli(logistic(2 * sqrt(n) * U[:, 0]))``, i.e. they are driven by the
    first joint score on unit-variance scale (all zero labels impossible is not
    guaranteed when r = 0; labels are then fair coin flips).
    """
    rng = np.random.default_rng(cfg.seed)
    n, r = cfg.n, cfg.joint_rank
    U = _orthonormal(rng, n, r)
    blocks, joints, indivs, Ws = [], [], [], []
    for pk, rk in zip(cfg.p, cfg.individual_ranks):
        W = _orthonormal(rng, n, rk, against=U)
        A = cfg.signal_scale * rng.standard_normal((pk, r))
        B = cfg.signal_scale * rng.standard_normal((pk, rk))
        J = A @ U.T
        I = B @ W.T
        E = cfg.noise_sd * rng.standard_normal((pk, n))
        blocks.append(J + I + E)
        joints.append(J)
        indivs.append(I)
        Ws.append(W)
    eta = 2.0 * math.sqrt(n) * U[:, 0] if r else np.zeros(n)
    y = (rng.random(n) < logistic(eta)).astype(int)
    data = MultiBlockDataset(blocks)
    truth = GroundTruth(joint_basis=U, joint=joints, individual=indivs, individual_bases=Ws,
                        joint_rank=r, individual_ranks=cfg.individual_ranks, labels=y)
    return data, truth


class Configuration(str, Enum):
    NONE = "NONE"
    O1 = "O1"
    O2 = "O2"
    O3 = "O3"
    O4 = "O4"
    O5 = "O5"
    O6 = "O6"


@dataclass(frozen=True)
class FixedDistribution:
    mean: float
    sd: float
    kind: str = "fixed"


@dataclass(frozen=True)
class AdaptiveDistribution:
    """Mean ``a*m + b*s`` and sd ``s_mult*s`` from the affected variable's mean m and sd s."""
    a: float = 3.0
    b: float = 5.0
    s_mult: float = 3.0
    kind: str = "adaptive"


@dataclass(frozen=True)
class OutlierConfig:
    configuration: Configuration = Configuration.NONE
    variable_fraction: float | None = None
    observation_fraction: float = 0.1
    distribution: FixedDistribution | AdaptiveDistribution = FixedDistribution(10.0, 2.0)
    seed: int = 0
    # "per_variable": every contaminated variable draws its own subject columns;
    # "shared": one subject subset is drawn per study and reused everywhere
    column_mode: str = "per_variable"

    def __post_init__(self):
        object.__setattr__(self, "configuration", Configuration(self.configuration))
        vf = self.variable_fraction
        if vf is not None and not 0 <= vf <= 1:
            raise ValueError("variable_fraction must lie in [0, 1]")
        if not 0 <= self.observation_fraction <= 1:
            raise ValueError("observation_fraction must lie in [0, 1]")
        if self.column_mode not in ("per_variable", "shared"):
            raise ValueError(f"unknown column_mode {self.column_mode!r}")

    def effective_variable_fraction(self) -> float:
        c = self.configuration
        if c is Configuration.NONE:
            return 0.0
        if self.variable_fraction is not None:
            return self.variable_fraction
        return 0.2 if c in (Configuration.O1, Configuration.O2, Configuration.O3) else 1.0


def target_blocks(configuration, initial_ranks) -> list[int]:
    c = Configuration(configuration)
    K = len(initial_ranks)
    if c is Configuration.NONE:
        return []
    if c in (Configuration.O1, Configuration.O4):
        return list(range(K))
    ranks = list(initial_ranks)
    if c in (Configuration.O2, Configuration.O5):
        best = max(ranks)
    else:
        best = min(ranks)
    return [ranks.index(best)]  # lowest index wins ties


def contamination_counts(dims, n, cfg: OutlierConfig, initial_ranks):
    """Closed-form (rows, columns-per-row) touched in each block."""
    frac = cfg.effective_variable_fraction()
    ncol = math.floor(cfg.observation_fraction * n + 1e-9)
    targets = set(target_blocks(cfg.configuration, initial_ranks))
    return [(math.floor(frac * p + 1e-9), ncol) if k in targets else (0, 0)
            for k, p in enumerate(dims)]


def inject_outliers(data: MultiBlockDataset, truth, cfg: OutlierConfig, initial_ranks,
                    return_cells: bool = False):
    """Add contamination draws to selected cells; the input is left untouched."""
    rng = np.random.default_rng(cfg.seed)
    counts = contamination_counts(data.dims, data.n, cfg, initial_ranks)
    shared_cols = None
    if cfg.column_mode == "shared":
        ncol = math.floor(cfg.observation_fraction * data.n + 1e-9)
        shared_cols = np.sort(rng.choice(data.n, size=ncol, replace=False))
    blocks, cells = [], []
    for k, (X, (nrow, ncol)) in enumerate(zip(data.blocks, counts)):
        X = X.copy()
        touched = np.zeros(X.shape, dtype=bool)
        if nrow and ncol:
            rows = np.sort(rng.choice(X.shape[0], size=nrow, replace=False))
            dist = cfg.distribution
            mask = data.mask(k)
            for i in rows:
                if shared_cols is None:
                    cols = rng.choice(X.shape[1], size=ncol, replace=False)
                else:
                    cols = shared_cols
                if isinstance(dist, AdaptiveDistribution):
                    vals = X[i] if mask is None else X[i, mask[i]]
                    m, s = float(vals.mean()), float(vals.std(ddof=1))
                    mean, sd = dist.a * m + dist.b * s, dist.s_mult * s
                else:
                    mean, sd = dist.mean, dist.sd
                X[i, cols] += rng.normal(mean, sd, size=ncol)
                touched[i, cols] = True
        blocks.append(X)
        cells.append(touched)
    out = MultiBlockDataset(blocks, masks=data.masks, block_names=list(data.block_names))
    return (out, cells) if return_cells else out


METHODS = ("classical", "robust")
# metric names aggregated per method x scenario, besides per-block ones
FAILURE_LIMIT = 0.2


class StudyError(RuntimeError):
    pass


@dataclass(frozen=True)
class StudyConfig:
    """A replicated study.

    ``outliers`` holds one or more contamination scenarios; every scenario is
    applied to the same generated data within a replication, so scenario
    comparisons are paired. Replication ``i`` uses generator seed
    ``generator.seed + i`` and contamination seed ``outliers[j].seed + i``.
    """
    generator: GeneratorConfig
    outliers: tuple = (OutlierConfig(),)
    replications: int = 1
    ajive: AjiveConfig | None = None
    methods: tuple = ("classical",)
    parallel_workers: int = 1

    def __post_init__(self):
        outs = self.outliers
        if isinstance(outs, OutlierConfig):
            outs = (outs,)
        object.__setattr__(self, "outliers", tuple(outs))
        object.__setattr__(self, "methods", tuple(self.methods))
        if int(self.replications) < 1:
            raise ValueError("replications must be at least 1")
        if int(self.parallel_workers) < 1:
            raise ValueError("parallel_workers must be at least 1")
        if not self.outliers:
            raise ValueError("at least one outlier scenario is required")
        if not self.methods or any(m not in METHODS for m in self.methods):
            raise ValueError(f"methods must be a non-empty subset of {METHODS}")
        if len(set(self.methods)) != len(self.methods):
            raise ValueError("duplicate methods")
        labels = self.scenario_labels()
        if len(set(labels)) != len(labels):
            raise ValueError("outlier scenarios must have distinct configurations")
        ajive = self.ajive
        if ajive is None:
            g = self.generator
            ajive = AjiveConfig(tuple(g.joint_rank + r for r in g.individual_ranks))
            object.__setattr__(self, "ajive", ajive)
        if len(ajive.initial_ranks) != len(self.generator.p):
            raise ValueError("ajive.initial_ranks must have one entry per block")

    def scenario_labels(self) -> list[str]:
        return [o.configuration.value for o in self.outliers]


@dataclass
class ReplicationFailure:
    scenario: str
    replication: int
    method: str
    error: str


@dataclass
class StudyReport:
    config: StudyConfig
    records: dict          # (scenario, method) -> {replication: MetricRecord}
    failures: list
    aggregates: dict       # (scenario, method) -> {metric: (median, q1, q3)}

    def failure_count(self, scenario, method) -> int:
        return sum(f.scenario == scenario and f.method == method for f in self.failures)


def metric_table(record: MetricRecord) -> dict:
    """Flatten a record into named scalar metrics."""
    out = {"joint_rank": float(record.joint_rank)}
    for k, r in enumerate(record.individual_ranks):
        out[f"individual_rank_{k + 1}"] = float(r)
    out["sre"] = record.sre
    out["auc"] = record.auc
    v = record.variance
    for k in range(len(v.joint)):
        out[f"joint_fraction_{k + 1}"] = v.joint[k]
        out[f"individual_fraction_{k + 1}"] = v.individual[k]
        out[f"residual_fraction_{k + 1}"] = v.residual[k]
    return out


def aggregate(records: dict) -> dict:
    """Median and quartiles per metric, over replications in index order."""
    out = {}
    for key, by_rep in records.items():
        if not by_rep:
            out[key] = {}
            continue
        rows = [metric_table(by_rep[i]) for i in sorted(by_rep)]
        names = list(rows[0])
        stats = {}
        for name in names:
            x = np.array([row[name] for row in rows])
            q1, med, q3 = np.percentile(x, [25, 50, 75])
            stats[name] = (float(med), float(q1), float(q3))
        out[key] = stats
    return out


_RECOVERABLE = (DecompositionError, DegenerateFitError, np.linalg.LinAlgError,
                FloatingPointError, ArithmeticError)


def _replication(cfg: StudyConfig, i: int):
    """Run one replication across all scenarios and methods."""
    gen = replace(cfg.generator, seed=cfg.generator.seed + i)
    data, truth = generate_multiblock(gen)
    out = []
    for oc in cfg.outliers:
        label = oc.configuration.value
        d = inject_outliers(data, truth, replace(oc, seed=oc.seed + i), cfg.ajive.initial_ranks)
        for method in cfg.methods:
            try:
                res = decompose(d, replace(cfg.ajive, backend=method))
                out.append((label, method, evaluate(method, res, d, truth)))
            except _RECOVERABLE as exc:
                out.append((label, method, f"{type(exc).__name__}: {exc}"))
    return i, out


def _replication_star(args):
    return _replication(*args)


def run_study(cfg: StudyConfig, workers: int | None = None) -> StudyReport:
    """Run every replication and aggregate; results do not depend on ``workers``."""
    workers = cfg.parallel_workers if workers is None else int(workers)
    tasks = [(cfg, i) for i in range(cfg.replications)]
    if workers > 1 and cfg.replications > 1:
        with ProcessPoolExecutor(max_workers=min(workers, cfg.replications)) as pool:
            results = list(pool.map(_replication_star, tasks))
    else:
        results = [_replication(c, i) for c, i in tasks]
    records = {(s, m): {} for s in cfg.scenario_labels() for m in cfg.methods}
    failures = []
    for i, entries in sorted(results, key=lambda t: t[0]):
        for label, method, rec in entries:
            if isinstance(rec, str):
                failures.append(ReplicationFailure(label, i, method, rec))
                log.warning("replication %d (%s, %s) failed: %s", i, label, method, rec)
            else:
                records[(label, method)][i] = rec
    for (label, method) in records:
        nfail = sum(f.scenario == label and f.method == method for f in failures)
        if nfail > FAILURE_LIMIT * cfg.replications:
            raise StudyError(f"{nfail} of {cfg.replications} replications failed "
                             f"for scenario {label}, method {method}")
    return StudyReport(config=cfg, records=records, failures=failures,
                       aggregates=aggregate(records))
