import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jivekit.ajive import AjiveConfig, AjiveResult, BlockDecomposition, MultiBlockDataset, decompose
from jivekit.metrics import (MetricRecord, VarianceProportions, auc, classification_auc,
                             evaluate, fit_logistic, rank_recovery, subspace_recovery_error,
                             variance_explained)
from jivekit.simulation import GeneratorConfig, generate_multiblock


def orth(rng, n, r):
    Q, _ = np.linalg.qr(rng.standard_normal((n, r)))
    return Q


def fake_result(parts, r=0, n=None):
    blocks = [BlockDecomposition(joint=J, individual=I, noise=E, individual_rank=0)
              for J, I, E in parts]
    n = n or parts[0][0].shape[1]
    return AjiveResult(joint_rank=r, joint_basis=np.zeros((n, r)),
                       joint_scores=np.zeros((n, r)), per_block=blocks,
                       segmentation_diagnostics=None)


# ---- variance fractions


def test_variance_all_joint():
    rng = np.random.default_rng(0)
    X = [rng.standard_normal((4, 6)) for _ in range(2)]
    res = fake_result([(x, np.zeros_like(x), np.zeros_like(x)) for x in X])
    v = variance_explained(res, MultiBlockDataset(X))
    assert v.joint == [1.0, 1.0] and v.individual == [0.0, 0.0] and v.residual == [0.0, 0.0]


def test_variance_orthogonal_parts_sum_to_one():
    rng = np.random.default_rng(1)
    V = orth(rng, 20, 4)
    parts, X = [], []
    for _ in range(2):
        J = rng.standard_normal((5, 2)) @ V[:, :2].T
        I = rng.standard_normal((5, 2)) @ V[:, 2:].T
        parts.append((J, I, np.zeros_like(J)))
        X.append(J + I)
    v = variance_explained(fake_result(parts), MultiBlockDataset(X))
    assert all(abs(t - 1) < 1e-10 for t in v.total())


def test_variance_zero_block():
    X = [np.zeros((3, 4)), np.ones((3, 4))]
    res = fake_result([(x, x * 0, x * 0) for x in X])
    with pytest.raises(ValueError):
        variance_explained(res, MultiBlockDataset(X))


def test_variance_engine_output_near_one():
    data, _ = generate_multiblock(GeneratorConfig(100, (200, 180, 150), 3, (17, 9, 4),
                                                  10.0, 0.1, seed=0))
    res = decompose(data, AjiveConfig((20, 12, 7)))
    v = variance_explained(res, data)
    assert all(0.99 <= t <= 1.01 for t in v.total())
    # block 1 carries far more individual than joint structure
    assert v.joint[0] < v.individual[0]


# ---- subspace recovery error


def test_sre_examples():
    rng = np.random.default_rng(2)
    U = orth(rng, 30, 3)
    assert subspace_recovery_error(U, U) == pytest.approx(0.0, abs=1e-12)
    assert subspace_recovery_error(U[:, [2, 0, 1]], U) == pytest.approx(0.0, abs=1e-12)
    u, v = U[:, :1], U[:, 1:2]
    assert subspace_recovery_error(u, v) == pytest.approx(math.sqrt(2), abs=1e-12)
    # brute force against the explicit projection matrices
    P = u @ u.T - v @ v.T
    assert np.linalg.norm(P) == pytest.approx(math.sqrt(2), abs=1e-12)
    with pytest.raises(ValueError):
        subspace_recovery_error(U, np.zeros((30, 0)))
    with pytest.raises(ValueError):
        subspace_recovery_error(U, 2 * U)


def test_sre_empty_estimate():
    U = orth(np.random.default_rng(3), 10, 2)
    assert subspace_recovery_error(np.zeros((10, 0)), U) == pytest.approx(1 / math.sqrt(2))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4), st.integers(0, 4))
def test_sre_properties(seed, r, rh):
    rng = np.random.default_rng(seed)
    n = 12
    U, Uh = orth(rng, n, r), orth(rng, n, rh)
    e = subspace_recovery_error(Uh, U)
    brute = np.linalg.norm(Uh @ Uh.T - U @ U.T) / r
    assert e == pytest.approx(brute, abs=1e-10)
    Q = orth(rng, r, r)
    assert subspace_recovery_error(Uh, U @ Q) == pytest.approx(e, abs=1e-10)
    if rh:
        assert subspace_recovery_error(U, Uh) * rh == pytest.approx(e * r, abs=1e-10)
    if rh == r:
        assert 0 <= e <= math.sqrt(2 * r) / r + 1e-12


# ---- logistic regression


def test_logistic_null_slopes():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((1000, 2))
    y = rng.integers(0, 2, 1000)
    fit = fit_logistic(X, y)
    assert fit.converged and np.all(np.abs(fit.coef[1:]) < 0.1)


def test_logistic_separation_flagged():
    x = np.random.default_rng(5).standard_normal(200)
    y = (x > np.median(x)).astype(int)
    fit = fit_logistic(x, y)
    assert fit.separated


def test_logistic_consistency():
    rng = np.random.default_rng(6)
    x = rng.standard_normal(100_000)
    y = (rng.random(x.size) < 1 / (1 + np.exp(-2 * x))).astype(int)
    fit = fit_logistic(x, y)
    assert 1.9 <= fit.coef[1] <= 2.1


def test_logistic_rejects():
    with pytest.raises(ValueError):
        fit_logistic(np.ones(5), np.ones(5))
    with pytest.raises(ValueError):
        fit_logistic(np.ones((3, 2)), np.array([0, 1, 0]))
    with pytest.raises(ValueError):
        fit_logistic(np.ones(4), np.array([0, 1, 2, 0]))


# ---- AUC


def test_auc_examples():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc(np.full(6, 0.3), [0, 1, 0, 1, 1, 0]) == 0.5
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 1])


def _trapezoid_auc(s, y):
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    P, N = y.sum(), (1 - y).sum()
    tpr, fpr = [0.0], [0.0]
    tp = fp = 0
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and s[j] == s[i]:
            tp += y[j]
            fp += 1 - y[j]
            j += 1
        tpr.append(tp / P)
        fpr.append(fp / N)
        i = j
    return float(np.trapezoid(tpr, fpr)) if hasattr(np, "trapezoid") else float(np.trapz(tpr, fpr))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 500), st.integers(0, 2**31 - 1), st.booleans())
def test_auc_matches_roc_integration(n, seed, coarse):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    y[0], y[1] = 0, 1
    s = rng.integers(0, 5, n).astype(float) if coarse else rng.standard_normal(n)
    a = auc(s, y)
    assert a == pytest.approx(_trapezoid_auc(s, y), abs=1e-12)
    # strictly increasing transforms change nothing
    assert auc(np.exp(s) * 3 + 1, y) == a


# ---- rank recovery and records


def test_rank_recovery():
    class R:
        joint_rank, individual_ranks = 3, [17, 9, 9]

    class T:
        joint_rank, individual_ranks = 2, (18, 10, 10)

    assert rank_recovery(R, T) == (1, [-1, -1, -1])
    T.joint_rank, T.individual_ranks = 3, (17, 9, 9)
    assert rank_recovery(R, T) == (0, [0, 0, 0])


def test_record_roundtrip_and_ranges():
    data, truth = generate_multiblock(GeneratorConfig(100, (60, 50, 40), 2, (3, 3, 3),
                                                      5.0, 0.1, seed=1))
    res = decompose(data, AjiveConfig((5, 5, 5)))
    rec = evaluate("classical", res, data, truth)
    assert 0 <= rec.auc <= 1 and rec.sre >= 0
    assert MetricRecord.from_dict(rec.to_dict()) == rec
    assert rec.auc > 0.7
    assert classification_auc(res, truth.labels)[0] == rec.auc


def test_auc_for_rank_zero_is_half():
    class R:
        joint_rank = 0
    assert classification_auc(R, np.array([0, 1, 1, 0])) == (0.5, False)


def test_variance_proportions_total():
    v = VarianceProportions([0.2], [0.5], [0.3])
    assert v.total() == [pytest.approx(1.0)]
