"""Performance measures: ranks, variance proportions, subspace error, AUC."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class VarianceProportions:
    joint: list
    individual: list
    residual: list

    def total(self) -> list:
        return [j + i + r for j, i, r in zip(self.joint, self.individual, self.residual)]


@dataclass
class LogisticFit:
    coef: np.ndarray
    iterations: int
    converged: bool
    separated: bool
    loglik: float

    def predict_proba(self, X):
        X = np.asarray(X, dtype=float).reshape(len(X), -1)
        return _sigmoid(self.coef[0] + X @ self.coef[1:])


@dataclass
class MetricRecord:
    method: str
    joint_rank: int
    individual_ranks: list
    variance: VarianceProportions
    sre: float
    auc: float
    separated: bool = False

    def to_dict(self):
        d = asdict(self)
        d["individual_ranks"] = [int(x) for x in self.individual_ranks]
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(method=d["method"], joint_rank=int(d["joint_rank"]),
                   individual_ranks=[int(x) for x in d["individual_ranks"]],
                   variance=VarianceProportions(**d["variance"]), sre=d["sre"], auc=d["auc"],
                   separated=bool(d.get("separated", False)))


def variance_explained(result, data) -> VarianceProportions:
    """Squared-Frobenius share of each component in its block.

    With missing cells the denominator is the completed block ``J + I + E``
    (observed values, model fill elsewhere).
    """
    joint, indiv, resid = [], [], []
    for k, (X, blk) in enumerate(zip(data.blocks, result.per_block)):
        mask = data.mask(k)
        Xo = X if mask is None else blk.joint + blk.individual + blk.noise
        total = float(np.sum(Xo ** 2))
        if total == 0:
            raise ValueError(f"block {k} has zero norm")
        joint.append(float(np.sum(blk.joint ** 2)) / total)
        indiv.append(float(np.sum(blk.individual ** 2)) / total)
        resid.append(float(np.sum(blk.noise ** 2)) / total)
    return VarianceProportions(joint, indiv, resid)


def _check_orthonormal(B, name, tol=1e-6):
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    G = B.T @ B
    if not np.allclose(G, np.eye(B.shape[1]), atol=tol):
        raise ValueError(f"{name} must have orthonormal columns")
    return B


def subspace_recovery_error(estimated_basis, true_basis) -> float:
    """``||P_hat - P||_F / r`` with ``r`` the true rank.

    Projection matrices are used so that the value does not depend on the
    choice of basis; mismatched ranks are allowed.
    """
    U = _check_orthonormal(true_basis, "true basis")
    r = U.shape[1]
    if r == 0:
        raise ValueError("true basis must have at least one column")
    Uh = np.asarray(estimated_basis, dtype=float)
    if Uh.ndim == 1:
        Uh = Uh[:, None]
    if Uh.shape[0] != U.shape[0]:
        raise ValueError("bases live in spaces of different dimension")
    if Uh.shape[1]:
        Uh = _check_orthonormal(Uh, "estimated basis")
    # ||P_hat - P||^2 = ||(I - P) Uh||^2 + ||(I - P_hat) U||^2, free of the
    # cancellation in the trace form r_hat + r - 2 ||Uh^T U||^2
    if Uh.shape[1]:
        a = Uh - U @ (U.T @ Uh)
        b = U - Uh @ (Uh.T @ U)
        sq = float(np.sum(a * a) + np.sum(b * b))
    else:
        sq = float(r)
    return math.sqrt(sq) / r


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _loglik(eta, y):
    # sum y*eta - log(1 + e^eta), stable
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def fit_logistic(scores, labels, max_iter: int = 50, tol: float = 1e-8,
                 ridge: float = 1e-8, separation_norm: float = 1e3) -> LogisticFit:
    """Maximum-likelihood logistic regression with intercept, by IRLS.

    ``separated`` is set when the slope norm exceeds ``separation_norm`` or
    when the fit stops unconverged with the classes perfectly split by the
    linear predictor; the last iterate is returned either way.
    """
    X = np.asarray(scores, dtype=float)
    X = X.reshape(X.shape[0], -1)
    y = np.asarray(labels, dtype=float).ravel()
    n, r = X.shape
    if y.shape[0] != n:
        raise ValueError("scores and labels disagree in length")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary 0/1")
    if y.min() == y.max():
        raise ValueError("both classes must be present")
    if n <= r + 1:
        raise ValueError(f"need more than {r + 1} observations, got {n}")
    Z = np.column_stack([np.ones(n), X])
    beta = np.zeros(r + 1)
    ll_old = _loglik(Z @ beta, y)
    converged = False
    separated = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = Z @ beta
        mu = _sigmoid(eta)
        w = mu * (1.0 - mu)
        H = Z.T @ (w[:, None] * Z) + ridge * np.eye(r + 1)
        step = np.linalg.solve(H, Z.T @ (y - mu))
        beta = beta + step
        ll = _loglik(Z @ beta, y)
        if np.linalg.norm(beta[1:]) > separation_norm:
            separated = True
            break
        if abs(ll - ll_old) <= tol * max(abs(ll_old), 1e-300):
            converged = True
            break
        ll_old = ll
    if not converged and not separated:
        # coefficients grow only ~linearly per step under separation, so the
        # norm rule can miss it within max_iter; check the split directly
        eta = Z @ beta
        separated = bool(eta[y == 1].min() > eta[y == 0].max())
    return LogisticFit(coef=beta, iterations=it, converged=converged, separated=separated,
                       loglik=_loglik(Z @ beta, y))


def auc(predicted, labels) -> float:
    """Mann-Whitney estimate of P(score_pos > score_neg) + P(tie)/2, exact."""
    s = np.asarray(predicted, dtype=float).ravel()
    y = np.asarray(labels).ravel().astype(int)
    if s.shape != y.shape:
        raise ValueError("predictions and labels disagree in length")
    pos, neg = s[y == 1], s[y == 0]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUC needs both classes present")
    neg_sorted = np.sort(neg)
    below = np.searchsorted(neg_sorted, pos, side="left")
    upto = np.searchsorted(neg_sorted, pos, side="right")
    wins = below.sum() + 0.5 * (upto - below).sum()
    return float(wins / (pos.size * neg.size))


def rank_recovery(result, truth):
    """Signed errors (estimated - true) for the joint and individual ranks."""
    joint_err = int(result.joint_rank) - int(truth.joint_rank)
    ind_err = [int(e) - int(t) for e, t in zip(result.individual_ranks, truth.individual_ranks)]
    return joint_err, ind_err


def classification_auc(result, labels):
    """In-sample AUC of a logistic model on the estimated joint scores.

    Returns ``(auc, separated)``; with joint rank 0 the model has only an
    intercept and the AUC is 0.5.
    """
    y = np.asarray(labels)
    if result.joint_rank == 0:
        return 0.5, False
    fit = fit_logistic(result.joint_scores, y)
    return auc(fit.predict_proba(result.joint_scores), y), fit.separated


def evaluate(method, result, data, truth) -> MetricRecord:
    var = variance_explained(result, data)
    sre = subspace_recovery_error(result.joint_basis, truth.joint_basis)
    a, sep = classification_auc(result, truth.labels)
    return MetricRecord(method=method, joint_rank=int(result.joint_rank),
                        individual_ranks=list(result.individual_ranks), variance=var,
                        sre=sre, auc=a, separated=sep)
