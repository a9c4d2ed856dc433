import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import build
from inertia_placer.devices import Allocation, ClosedLoop, close_loop, gains_to_feedback
from inertia_placer.h2core import (UnstableSystemError, count_lyapunov_solves, gramians, h2_difference,
                                   h2_gradient, h2_norm, impulse_energy_oracle, solve_lyapunov)
from inertia_placer.netmodel import PerformanceWeights

import oracles


def raw_loop(A, G, Cp):
    n, k = G.shape
    return ClosedLoop(A=np.asarray(A, float), E=np.asarray(G, float), strengths=np.ones(k),
                      Cp=np.asarray(Cp, float), signals=np.asarray(Cp, float),
                      signal_feedthrough=np.zeros((Cp.shape[0], k)),
                      signal_labels=tuple(f"y[{i}]" for i in range(Cp.shape[0])),
                      state_labels=tuple(f"x[{i}]" for i in range(n)),
                      port_buses=tuple(str(i) for i in range(k)))


SCALAR = raw_loop(np.array([[-2.0]]), np.array([[1.0]]), np.array([[1.0]]))


@pytest.mark.parametrize("a, q, p", [(-1.0, 2.0, 1.0), (-2.0, 1.0, 0.25)])
def test_scalar_lyapunov(a, q, p):
    assert solve_lyapunov(np.array([[a]]), np.array([[q]]))[0, 0] == pytest.approx(p, abs=1e-15)


def test_random_8x8_residual(rng):
    S = rng.standard_normal((8, 8))
    A = -(S @ S.T) - 0.5 * np.eye(8) + 0.3 * (S - S.T)
    Q = np.eye(8)
    P = solve_lyapunov(A, Q)
    assert np.max(np.abs(A.T @ P + P @ A + Q)) < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 12))
def test_lyapunov_matches_scipy_and_is_psd(seed, n):
    rng = np.random.default_rng(seed)
    A = oracles.random_stable(rng, n)
    C = rng.standard_normal((3, n))
    Q = C.T @ C
    P = solve_lyapunov(A, Q)
    ref = oracles.lyap_obs(A, Q)
    assert np.max(np.abs(P - ref)) <= 1e-8 * max(1.0, np.max(np.abs(ref)))
    np.testing.assert_array_equal(P, P.T)
    assert np.min(np.linalg.eigvalsh(P)) >= -1e-9 * np.linalg.norm(P, 2)


def test_unstable_signals_error():
    with pytest.raises(UnstableSystemError, match="unstable system"):
        h2_norm(raw_loop(np.array([[0.1]]), np.ones((1, 1)), np.ones((1, 1))))


def test_scalar_h2():
    assert h2_norm(SCALAR) == pytest.approx(0.25, abs=1e-15)


def test_zero_disturbance():
    assert h2_norm(raw_loop(np.array([[-2.0]]), np.zeros((1, 1)), np.ones((1, 1)))) == 0.0


@pytest.mark.parametrize("mode, m0", [("following", 0.0), ("forming", 1.0)])
def test_triangle_base_allocation(derived, mode, m0):
    _, sys = build("triangle", mode, ["3"])
    cl = close_loop(sys, gains_to_feedback(Allocation(("3",), [m0], [0.0]), mode))
    h = h2_norm(cl)
    assert h == pytest.approx(derived[f"triangle_h2_base_{mode}"], rel=1e-10)
    assert h == pytest.approx(oracles.lyap_h2(cl.A, cl.G, cl.Cp), rel=1e-10)


def test_triangle_zero_allocation_vs_oracle():
    _, sys = build("triangle", "following", ["3"])
    cl = close_loop(sys, gains_to_feedback(Allocation.zeros(("3",)), "following"))
    assert impulse_energy_oracle(cl, 120.0, 1e-3) == pytest.approx(h2_norm(cl), rel=1e-6)


def test_gramians_solve_their_equations():
    _, sys = build("six_bus", "following", ["4", "5"])
    cl = close_loop(sys, gains_to_feedback(Allocation(("4", "5"), [0.1, 0.2], [0.5, 0.3]), "following"))
    P, L = gramians(cl)
    A, G, Cp = cl.A, cl.G, cl.Cp
    assert np.max(np.abs(A.T @ P + P @ A + Cp.T @ Cp)) < 1e-10 * np.max(np.abs(P)) * np.linalg.norm(A)
    assert np.max(np.abs(A @ L + L @ A.T + G @ G.T)) < 1e-10 * np.max(np.abs(L)) * np.linalg.norm(A)
    assert np.max(np.abs(P - P.T)) <= 1e-10 and np.max(np.abs(L - L.T)) <= 1e-10


def test_gradient_two_solves_and_structure():
    _, sys = build("six_bus", "following", ["4", "5"])
    K = gains_to_feedback(Allocation(("4", "5"), [0.1, 0.2], [0.5, 0.3]), "following")
    with count_lyapunov_solves() as solves:
        rep = h2_gradient(sys, K)
    assert solves() == 2
    for j in range(2):
        np.testing.assert_array_equal(rep.structured[j], rep.full[j, 2 * j:2 * j + 2])


def test_zeroed_input_column_gives_exact_zero():
    _, sys = build("six_bus", "following", ["4", "5"])
    B = sys.B.copy()
    B[:, 1] = 0.0
    sys0 = dataclasses.replace(sys, B=B)
    K = gains_to_feedback(Allocation(("4", "5"), [0.1, 0.2], [0.5, 0.3]), "following")
    rep = h2_gradient(sys0, K)
    assert np.all(rep.full[1] == 0.0)


@pytest.mark.parametrize("mode", ["following", "forming"])
def test_gradient_scales_with_output(mode):
    w = PerformanceWeights(1.0, 0.1, 0.1, 0.1)
    w4 = PerformanceWeights(4.0, 0.4, 0.4, 0.4)   # Cp doubles
    alloc = Allocation(("3",), [0.4], [0.7])
    g1 = h2_gradient(build("triangle", mode, ["3"], w)[1], gains_to_feedback(alloc, mode))
    g4 = h2_gradient(build("triangle", mode, ["3"], w4)[1], gains_to_feedback(alloc, mode))
    np.testing.assert_allclose(g4.full, 4 * g1.full, rtol=1e-10)


@pytest.mark.parametrize("mode", ["following", "forming"])
def test_first_order_prediction(mode):
    _, sys = build("six_bus", mode, ["4", "5"])
    alloc = Allocation(("4", "5"), [0.4, 0.3], [0.5, 0.6])
    K = gains_to_feedback(alloc, mode)
    rep = h2_gradient(sys, K)
    dK = np.array([[0.3, -0.2], [0.1, 0.25]])
    errs = []
    for s in (1e-3, 5e-4, 2.5e-4):
        Ks = dataclasses.replace(K, blocks=K.blocks + s * dK)
        pred = rep.value + s * np.sum(rep.structured * dK)
        errs.append(abs(h2_norm(close_loop(sys, Ks)) - pred))
    assert 3.0 < errs[0] / errs[1] < 5.0 and 3.0 < errs[1] / errs[2] < 5.0


def test_h2_difference_matches_direct():
    _, sys = build("six_bus", "forming", ["4", "5"])
    a0 = Allocation(("4", "5"), [0.4, 0.3], [0.5, 0.6])
    a1 = Allocation(("4", "5"), [0.41, 0.29], [0.52, 0.6])
    rep = h2_gradient(sys, gains_to_feedback(a0, "forming"))
    cl1 = close_loop(sys, gains_to_feedback(a1, "forming"))
    diff = h2_difference(rep.closed_loop, rep.P, cl1)
    ref = oracles.lyap_h2(cl1.A, cl1.G, cl1.Cp) - oracles.lyap_h2(rep.closed_loop.A, rep.closed_loop.G,
                                                                 rep.closed_loop.Cp)
    assert diff == pytest.approx(ref, rel=1e-9)


def test_oracle_scalar():
    assert impulse_energy_oracle(SCALAR, 10.0, 1e-3) == pytest.approx(0.25, abs=1e-6)


def test_oracle_fourth_order():
    _, sys = build("triangle", "forming", ["3"])
    cl = close_loop(sys, gains_to_feedback(Allocation(("3",), [0.5], [0.5]), "forming"))
    h = h2_norm(cl)
    e1 = abs(impulse_energy_oracle(cl, 150.0, 0.08) - h)
    e2 = abs(impulse_energy_oracle(cl, 150.0, 0.04) - h)
    assert e1 / e2 >= 8.0


def test_oracle_truncated_horizon_below():
    assert impulse_energy_oracle(SCALAR, 0.5, 1e-3) < h2_norm(SCALAR)
