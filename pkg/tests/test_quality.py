import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harmonic_nvh.errors import ConfigurationError, UsageError
from harmonic_nvh.quality import DreFilterBank, QualityEvaluator, convergence_rate, dre_step, hessian


def jacobi_eigenvalues(a: np.ndarray, tol: float = 1e-14, sweeps: int = 100) -> np.ndarray:
    """Cyclic Jacobi sweep for symmetric matrices (independent oracle)."""
    a = np.array(a, dtype=float)
    n = a.shape[0]
    for _ in range(sweeps):
        off = math.sqrt(sum(a[i, j] ** 2 for i in range(n) for j in range(n) if i != j))
        if off <= tol * max(1.0, np.abs(a).max()):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                j = np.eye(n)
                j[p, p] = j[q, q] = c
                j[p, q] = s
                j[q, p] = -s
                a = j.T @ a @ j
    return np.sort(np.diag(a))


def test_dre_examples():
    bank = DreFilterBank((0.9, 0.95, 0.99))
    psi, phi = dre_step(bank, 1.0, np.zeros(4))
    np.testing.assert_allclose(psi, [1.0, 0.1, 0.05, 0.01])
    assert np.all(phi == 0.0)
    for _ in range(5000):
        psi, phi = bank.step(2.5, np.zeros(4))
    np.testing.assert_allclose(psi, 2.5, rtol=1e-12)
    assert np.all(phi == 0.0)


def test_dre_channel_zero_is_identity_and_unit_dc_gain():
    bank = DreFilterBank()
    w = np.array([0.3, -1.0, 2.0, 0.5])
    for _ in range(6000):
        psi, phi = bank.step(0.0, w)
    np.testing.assert_array_equal(phi[0], w)
    np.testing.assert_allclose(phi, np.tile(w, (4, 1)), rtol=1e-12)


def test_dre_batched_modes_match_single():
    rng = np.random.default_rng(0)
    multi = DreFilterBank(q=2)
    singles = [DreFilterBank(), DreFilterBank()]
    for _ in range(50):
        w = rng.normal(size=(2, 4))
        y = float(rng.normal())
        _, phi = multi.step(y, w)
        for i in range(2):
            _, p1 = singles[i].step(y, w[i])
            np.testing.assert_allclose(phi[i], p1)


def test_filter_bank_validation():
    with pytest.raises(ConfigurationError):
        DreFilterBank((0.9, 0.9, 0.99))
    with pytest.raises(ConfigurationError):
        DreFilterBank((0.9, 1.0, 0.5))
    with pytest.raises(ConfigurationError):
        DreFilterBank((0.9, 0.5))


def test_hessian_examples():
    np.testing.assert_array_equal(hessian(np.eye(4), 1.0), np.eye(4))
    phi = np.zeros((4, 4))
    phi[0] = [1.0, 2.0, 0.5, -1.0]
    assert np.linalg.matrix_rank(hessian(phi, 0.7)) == 1
    rng = np.random.default_rng(5)
    phi = rng.normal(size=(4, 4))
    naive = np.array([[0.3 * sum(phi[k, i] * phi[k, j] for k in range(4)) for j in range(4)] for i in range(4)])
    np.testing.assert_allclose(hessian(phi, 0.3), naive, rtol=1e-13)


def test_convergence_rate_examples():
    r = convergence_rate(np.zeros((4, 4)), 0.1, 0.2)
    assert (r.rho, r.mu, r.L) == (1.0, 0.0, 0.0)
    assert convergence_rate(np.eye(4), 0.1, 0.1).rho == pytest.approx(0.9)
    r = convergence_rate(np.diag([1.0, 2.0, 3.0, 4.0]), 0.1, 0.5)
    assert (r.mu, r.L) == pytest.approx((1.0, 4.0))
    assert r.rho == pytest.approx(0.84)


def test_convergence_rate_rejects_bad_input():
    a = np.eye(4)
    a[0, 1] = 1.0
    with pytest.raises(UsageError):
        convergence_rate(a, 0.1, 0.1)
    with pytest.raises(UsageError):
        convergence_rate(np.eye(3), 0.1, 0.1)


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_eigenvalues_match_jacobi_oracle(seed):
    rng = np.random.default_rng(seed)
    phi = rng.normal(size=(4, 4)) * rng.uniform(0.01, 10)
    h = hessian(phi, rng.uniform(0.1, 1.0))
    ev = jacobi_eigenvalues(h)
    r = convergence_rate(h, 0.2, 0.3)
    assert r.mu == pytest.approx(ev[0], rel=1e-10, abs=1e-10 * ev[-1])
    assert r.L == pytest.approx(ev[-1], rel=1e-10)
    assert r.mu <= r.L


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_gate_soundness_rank(seed, rank):
    rng = np.random.default_rng(seed)
    phi = rng.normal(size=(4, rank)) @ rng.normal(size=(rank, 4))
    r = convergence_rate(hessian(phi, 1.0), 0.1, 0.1)
    assert (r.rho < 1.0) == (rank == 4)
    assert (r.mu > 0.0) == (rank == 4)


def test_constant_regressor_leaves_rho_one():
    ev = QualityEvaluator(1, 1e-3, 1e-3)
    for _ in range(2000):
        rep = ev.update(0.3, [(0.2, -0.1, 0.5, 0.4)], 0.9)
    assert rep[0].rho == pytest.approx(1.0, abs=1e-9)


def test_informative_regressor_gives_rho_below_one():
    ev = QualityEvaluator(1, 0.1, 0.1)
    rng = np.random.default_rng(2)
    for _ in range(300):
        rep = ev.update(0.0, [tuple(rng.normal(size=4))], 1.0)
    assert rep[0].rho < 1.0 - 1e-6


def test_decimation_holds_reports():
    ev = QualityEvaluator(1, 0.1, 0.1, decimation=3)
    rng = np.random.default_rng(2)
    out = [ev.update(0.0, [tuple(rng.normal(size=4))], 1.0)[0].rho for _ in range(9)]
    assert out[0] == out[1] == 1.0
    assert out[3] == out[4] == out[2]


def test_contraction_at_rate_rho_on_frozen_regression():
    rng = np.random.default_rng(11)
    phi = rng.normal(size=(4, 4))
    x_true = rng.normal(size=4)
    psi = phi @ x_true
    eta = 0.8
    h = hessian(phi, eta)
    ev = np.linalg.eigvalsh(h)
    gamma = 2.0 / (ev[0] + ev[-1])
    r = convergence_rate(h, gamma, gamma)
    x = rng.normal(size=4)
    for _ in range(200):
        e0 = np.sum((x - x_true) ** 2)
        x = x + gamma * eta * phi.T @ (psi - phi @ x)
        e1 = np.sum((x - x_true) ** 2)
        if e0 < 1e-24:
            break
        assert e1 <= r.rho * e0 * (1 + 1e-9)
