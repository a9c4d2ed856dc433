import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from conftest import build
from inertia_placer import fixtures as fx
from inertia_placer.devices import (Allocation, DeviceError, DeviceSet, DeviceSite, GainMatrix,
                                    GridFollowingVI, GridFormingVI, close_loop, device_block, feedback_to_gains,
                                    gains_to_feedback)
from inertia_placer.h2core import h2_norm, spectral_abscissa
from inertia_placer.netmodel import PerformanceWeights, assemble_open_loop, network_from_dict

import oracles


def test_forming_block_structure():
    blk = device_block(GridFormingVI("3", 2.0, 0.5))
    np.testing.assert_array_equal(blk.A, [[0, 1], [0, 0]])
    np.testing.assert_array_equal(blk.b_u, [0, 1])
    assert blk.output_labels == ("omega_vi[3]", "neg_p_vi[3]")


def test_following_pll_settles_to_frozen_angle():
    blk = device_block(GridFollowingVI("3"))
    # x' = A x + b_net * theta_bus; the steady state solves A x = -b_net * 0.1
    t_end = 50 * 0.05 * 4
    n = blk.A.shape[0]
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = blk.A
    M[:n, n] = blk.b_network * 0.1
    x = sla.expm(M * t_end)[:n, n]
    assert x[0] == pytest.approx(0.1, abs=1e-8)
    assert x[1] == pytest.approx(0.0, abs=1e-8)


def test_pll_ramp_matches_reference_law():
    dev = GridFollowingVI("3")
    blk = device_block(dev)
    omega0, t_end = 0.3, 50 * dev.tau
    from scipy.integrate import solve_ivp
    sol = solve_ivp(lambda t, x: blk.A @ x + blk.b_network * omega0 * t, (0, t_end), np.zeros(4),
                    method="DOP853", rtol=1e-12, atol=1e-14)
    ref = oracles.pll_ramp(dev.tau, dev.kp, dev.ki, omega0, t_end)
    np.testing.assert_allclose(sol.y[:3, -1], ref, atol=1e-9)


@pytest.mark.parametrize("cls, kw, msg", [
    (GridFollowingVI, {"tau": 0.0}, "tau must be positive"),
    (GridFollowingVI, {"damping": -1.0}, "nonnegative"),
    (GridFormingVI, {"inertia": 0.0}, "inertia must be positive"),
    (GridFormingVI, {"susceptance": 0.0}, "susceptance"),
])
def test_device_invariants(cls, kw, msg):
    with pytest.raises(DeviceError, match=msg):
        cls("3", **kw)


def test_gains_following():
    K = gains_to_feedback(Allocation(("3",), [2.0], [0.5]), "following")
    np.testing.assert_array_equal(K.blocks, [[0.5, 2.0]])


def test_gains_forming():
    K = gains_to_feedback(Allocation(("3",), [2.0], [0.5]), "forming")
    np.testing.assert_array_equal(K.blocks, [[-0.25, 0.5]])


def test_gains_forming_zero_inertia():
    with pytest.raises(DeviceError, match="inertia must be positive for grid-forming"):
        gains_to_feedback(Allocation(("3",), [0.0], [0.5]), "forming")


def test_inverse_examples():
    a = feedback_to_gains(GainMatrix("forming", ("3",), np.array([[-0.25, 0.5]])))
    assert (a.inertia[0], a.damping[0]) == (2.0, 0.5)
    a = feedback_to_gains(GainMatrix("following", ("3",), np.zeros((1, 2))))
    assert (a.inertia[0], a.damping[0]) == (0.0, 0.0)


def test_block_diagonal_matrix():
    K = gains_to_feedback(Allocation(("4", "5"), [1.0, 2.0], [3.0, 4.0]), "following")
    np.testing.assert_array_equal(K.matrix, [[3, 1, 0, 0], [0, 0, 4, 2]])
    assert K.structure.sum() == 4


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(["following", "forming"]),
       st.lists(st.tuples(st.floats(1e-3, 50), st.floats(0, 50)), min_size=1, max_size=6))
def test_round_trip(mode, gains):
    m = np.array([g[0] for g in gains])
    d = np.array([g[1] for g in gains])
    buses = tuple(str(k) for k in range(len(gains)))
    back = feedback_to_gains(gains_to_feedback(Allocation(buses, m, d), mode))
    np.testing.assert_allclose(back.inertia, m, rtol=1e-14, atol=0)
    np.testing.assert_allclose(back.damping, d, rtol=1e-14, atol=1e-14)


def test_zero_feedback_keeps_A():
    _, sys = build("triangle", "following", ["3"])
    cl = close_loop(sys, gains_to_feedback(Allocation.zeros(("3",)), "following"))
    assert np.array_equal(cl.A, sys.A)


def test_forming_triangle_stable():
    _, sys = build("triangle", "forming", ["3"])
    cl = close_loop(sys, gains_to_feedback(Allocation(("3",), [2.0], [0.5]), "forming"))
    assert spectral_abscissa(cl.A) < 0


def test_mode_mismatch():
    _, sys = build("triangle", "forming", ["3"])
    with pytest.raises(DeviceError):
        close_loop(sys, gains_to_feedback(Allocation(("3",), [2.0], [0.5]), "following"))


def coupled_pair(weights=PerformanceWeights(1, 0, 0, 0)):
    """One machine and one forming device behind stiff couplings (line b = 50, filter 50).

    With weak coupling the frequency-only norm has an interior minimum in d
    (a heavily damped device pins its angle and the machine swings against
    it), so the monotone-damping property needs the device close to the machine.
    """
    model = network_from_dict(fx.two_bus((0.0, 0.0), 50.0))
    devices = DeviceSet.from_sites([DeviceSite("2", p_max=1.0, susceptance=50.0)], "forming")
    return assemble_open_loop(model, devices, weights, "forming")


@pytest.mark.parametrize("m", [1e-3, 0.1, 0.5, 1.0, 2.0])
def test_damping_sweep_frequency_only(m):
    """More virtual damping never raises the frequency-only H2 norm (1 machine + 1 device)."""
    sys = coupled_pair()
    vals = [h2_norm(close_loop(sys, gains_to_feedback(Allocation(("2",), [m], [d]), "forming")))
            for d in np.linspace(0, 5, 51)]
    assert np.all(np.diff(vals) < 0)


def test_duplicate_sites_rejected():
    with pytest.raises(DeviceError):
        DeviceSet.from_sites(fx.sites(["3", "3"]), "following")
