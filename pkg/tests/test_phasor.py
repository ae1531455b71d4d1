import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from harmonic_nvh.errors import ConfigurationError, SingularityError, UsageError
from harmonic_nvh.phasor import (
    ActiveLearningConfig,
    HarmonicMode,
    PhasorPair,
    TransferPhasor,
    control_law,
    excitation_law,
    excitation_signal,
    hss_eval,
    wrap_angle,
)
from harmonic_nvh.plant import algebraic_hss_step

finite = st.floats(-10, 10, allow_nan=False)


def test_hss_eval_examples():
    assert hss_eval([HarmonicMode(1, 0.0)], [(0.0, 1.0)]) == pytest.approx(1.0, abs=1e-15)
    assert hss_eval([HarmonicMode(1, math.pi / 2)], [(1.0, 0.0)]) == pytest.approx(1.0, abs=1e-15)
    modes = [HarmonicMode(1, math.pi / 6), HarmonicMode(2, math.pi / 3)]
    assert hss_eval(modes, [(1.0, 0.0), (0.0, 2.0)]) == pytest.approx(1.5, abs=1e-14)


def test_hss_eval_length_mismatch():
    with pytest.raises(UsageError):
        hss_eval([HarmonicMode(12)], [(1, 0), (0, 1)])
    with pytest.raises(UsageError):
        hss_eval([], [])


def test_control_law_examples():
    assert control_law(TransferPhasor(1, 0), (0.3, -0.4)) == pytest.approx((-0.3, 0.4))
    assert control_law(TransferPhasor(1, 0), (0.0, 0.0)) == pytest.approx((0.0, 0.0))
    assert control_law(TransferPhasor(0, 1), (1.0, 0.0)) == pytest.approx((0.0, 1.0), abs=1e-15)


def test_control_law_singular():
    with pytest.raises(SingularityError):
        control_law(TransferPhasor(1e-4, 0.0), (1.0, 0.0))


def test_excitation_law_examples():
    g = TransferPhasor(0.4, -0.7)
    assert excitation_law(g, (0.2, 0.1), (0.0, 0.0)) == pytest.approx(control_law(g, (0.2, 0.1)))
    assert excitation_law(TransferPhasor(1, 0), (0, 0), (0.2, 0)) == pytest.approx((0.2, 0.0))
    assert excitation_law(TransferPhasor(0, 1), (0.5, 0), (1, 0)) == pytest.approx((0.0, -0.5), abs=1e-15)


def test_excitation_signal_examples():
    cfg = ActiveLearningConfig(delta=1.0, threshold=0.1)
    # boundary 1 - rho == threshold, with exactly representable values
    edge = ActiveLearningConfig(delta=1.0, threshold=0.25)
    assert excitation_signal(3, None, 0.75, 2.0, edge) == (0.0, 0.0)
    assert excitation_signal(3, None, 0.5, 2.0, edge) == (0.0, 0.0)
    assert excitation_signal(3, None, 1.0, 0.0, cfg) == (0.0, 0.0)
    assert excitation_signal(0, None, 1.0, 2.0, cfg) == pytest.approx((2.0, 2.0))


def test_excitation_signal_frequencies():
    cfg = ActiveLearningConfig(omega_1=2 * math.pi * 5, omega_2=2 * math.pi * 8, delta=0.5, threshold=0.1, ts=1e-4)
    k = 123
    y = excitation_signal(k, None, 1.0, 1.0, cfg)
    assert y.s == pytest.approx(0.5 * math.cos(2 * math.pi * 5 * k * 1e-4))
    assert y.c == pytest.approx(0.5 * math.cos(2 * math.pi * 8 * k * 1e-4))


def test_active_learning_needs_distinct_frequencies():
    with pytest.raises(ConfigurationError):
        ActiveLearningConfig(omega_1=1.0, omega_2=1.0)


@given(finite, finite)
def test_block_matrix_identity(x1, x2):
    g = TransferPhasor(x1, x2).matrix()
    n = x1 * x1 + x2 * x2
    np.testing.assert_allclose(g @ g.T, n * np.eye(2), atol=1e-12 * max(1.0, n))
    assert np.linalg.eigvalsh(g @ g.T)[0] == pytest.approx(n, abs=1e-12 * max(1.0, n))


@given(finite, finite, finite, finite)
def test_inverse_times_g_is_identity(x1, x2, s, c):
    if x1 * x1 + x2 * x2 <= 1e-6:
        return
    g = TransferPhasor(x1, x2)
    # G^{-1} G v = v  <=>  control_law(g, -G v) = v
    gv = g.apply((s, c))
    back = control_law(g, (-gv.s, -gv.c))
    assert back == pytest.approx((s, c), rel=1e-9, abs=1e-9)


@given(finite, finite, finite, finite, st.floats(0, 2 * math.pi))
def test_true_parameters_cancel_on_algebraic_plant(x1, x2, ps, pc, phase):
    if x1 * x1 + x2 * x2 <= 1e-3:
        return
    u = control_law(TransferPhasor(x1, x2), (ps, pc))
    y = algebraic_hss_step([(x1, x2)], [(ps, pc)], [u], [phase])
    assert abs(y) < 1e-9 * max(1.0, abs(ps) + abs(pc))


@given(finite, finite, finite, finite, finite, finite, st.floats(0, 2 * math.pi))
def test_excitation_law_tracks_desired_output(x1, x2, ps, pc, ds, dc, phase):
    if x1 * x1 + x2 * x2 <= 1e-3:
        return
    u = excitation_law(TransferPhasor(x1, x2), (ps, pc), (ds, dc))
    y = algebraic_hss_step([(x1, x2)], [(ps, pc)], [u], [phase])
    expected = math.sin(phase) * ds + math.cos(phase) * dc
    assert y == pytest.approx(expected, abs=1e-8 * max(1.0, abs(ps) + abs(pc) + abs(ds) + abs(dc)))


@given(st.floats(-1e4, 1e4, allow_nan=False))
def test_wrap_angle_range(a):
    w = wrap_angle(a)
    assert 0.0 <= w < 2 * math.pi


def test_mode_phase_accumulates_and_basis_unit_norm():
    m = HarmonicMode(12)
    for _ in range(1000):
        m.advance(0.0419)
        s, c = m.basis
        assert s * s + c * c == pytest.approx(1.0, abs=1e-15)
    assert m.phase == pytest.approx(wrap_angle(12 * 0.0419 * 1000), abs=1e-9)


def test_mode_order_validation():
    with pytest.raises(ConfigurationError):
        HarmonicMode(0)
    with pytest.raises(ConfigurationError):
        HarmonicMode(2.5)


def test_phasor_amplitude():
    assert PhasorPair(3.0, 4.0).amplitude == 5.0
