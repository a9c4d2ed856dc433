"""Reference computations that share no numerical code with the package.

Each helper solves the same problem as a package routine by a different
route (scipy solvers, matrix exponentials, enumeration, finite differences)
so that agreement is evidence of correctness rather than of consistency.
"""

from __future__ import annotations

import itertools

import numpy as np
import scipy.linalg as sla
from scipy.integrate import solve_ivp


def lyap_h2(A, G, Cp) -> float:
    """Squared H2 norm through scipy's Lyapunov solver (controllability form)."""
    L = sla.solve_continuous_lyapunov(A, -G @ G.T)
    return float(np.trace(Cp @ L @ Cp.T))


def lyap_obs(A, Q):
    """Solve A^T P + P A + Q = 0 with scipy."""
    return sla.solve_continuous_lyapunov(A.T, -Q)


def expm_h2(A, G, Cp, horizon: float, n: int = 4001) -> float:
    """Impulse energy by Simpson quadrature of ||Cp expm(A t) G||_F^2."""
    from scipy.integrate import simpson
    t = np.linspace(0.0, horizon, n)
    step = sla.expm(A * (t[1] - t[0]))
    X = G.copy()
    vals = np.empty(n)
    for k in range(n):
        vals[k] = np.sum((Cp @ X) ** 2)
        X = step @ X
    return float(simpson(vals, x=t))


def step_response(A, b, t):
    """Exact x(t) for x' = A x + b, x(0) = 0, via the augmented exponential."""
    n = A.shape[0]
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = A
    M[:n, n] = b
    out = np.empty((t.size, n))
    for k, tk in enumerate(t):
        out[k] = sla.expm(M * tk)[:n, n]
    return out


def random_stable(rng, n: int, margin: float = 0.1):
    """Random Hurwitz matrix: a random matrix shifted left past its abscissa."""
    A = rng.standard_normal((n, n))
    shift = np.max(np.linalg.eigvals(A).real) + margin + rng.uniform(0, 1)
    return A - shift * np.eye(n)


def project_box_budget_bruteforce(v, cap, budget):
    """Euclidean projection onto {0 <= x <= cap, sum x <= budget} by active-set enumeration.

    Every coordinate is tried at its lower bound, its upper bound or free,
    with the budget either inactive or tight.  Each pattern fixes an
    equality-constrained least-squares problem with a closed form; the best
    primal-feasible candidate is the projection because the optimal pattern
    is among those enumerated.
    """
    v = np.asarray(v, float)
    cap = np.asarray(cap, float)
    n = v.size
    pats = np.array(list(itertools.product((0, 1, 2), repeat=n)), dtype=np.int8)
    lo = pats == 0
    hi = pats == 1
    free = pats == 2
    base = np.where(hi, cap, 0.0)
    # budget inactive: free coordinates sit at v
    X0 = np.where(free, v, base)
    # budget tight: free coordinates shift by a common multiplier
    nfree = free.sum(axis=1)
    fixed_sum = base.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = ((v * free).sum(axis=1) - (budget - fixed_sum)) / nfree
    X1 = np.where(free, v - lam[:, None], base)
    X1[nfree == 0] = np.nan
    cand = np.vstack([X0, X1])
    tol = 1e-12 * max(1.0, float(np.max(np.abs(cap))), budget)
    ok = (np.all(cand >= -tol, axis=1) & np.all(cand <= cap + tol, axis=1)
          & (cand.sum(axis=1) <= budget + tol * n) & np.all(np.isfinite(cand), axis=1))
    cand = cand[ok]
    obj = np.sum((cand - v) ** 2, axis=1)
    return cand[np.argmin(obj)]


def central_difference(f, x, h_rel: float = 1e-6):
    """Central finite-difference gradient with steps h_rel * max(1, |x_i|)."""
    x = np.asarray(x, float)
    g = np.empty_like(x)
    for i in range(x.size):
        h = h_rel * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def pll_ramp(tau, kp, ki, omega0, t_end):
    """Integrate the PLL law against a bus angle ramp theta = omega0 t.

    theta_hat' = omega_hat
    tau omega_hat' = -omega_hat - kp (theta_hat - theta) - ki z
    z' = theta_hat - theta
    """
    def f(t, x):
        th, w, z = x
        vq = th - omega0 * t
        return [w, (-w - kp * vq - ki * z) / tau, vq]
    sol = solve_ivp(f, (0.0, t_end), [0.0, 0.0, 0.0], method="DOP853", rtol=1e-12, atol=1e-14)
    return sol.y[:, -1]


def forming_direct(sys, inertia, damping, port, magnitude, t):
    """Open-loop plant with the grid-forming law applied as an explicit controller.

    u_k = (-d_k omega_vi,k - P_vi,k) / m_k evaluated from the plant state
    labels and the physical P_VI signal rows, integrated with a tight
    adaptive scheme.  No feedback matrix is formed.
    """
    j = list(sys.port_buses).index(port)
    w = np.zeros(len(sys.port_buses))
    w[j] = magnitude * sys.strengths[j]
    idx_w = [sys.state_labels.index(f"omega_vi[{b}]") for b in sys.device_buses]
    rows = [sys.signal_labels.index(f"p_vi[{b}]") for b in sys.device_buses]
    S, Sw = sys.signals[rows], sys.signal_feedthrough[rows]
    m = np.asarray(inertia, float)
    d = np.asarray(damping, float)
    Ew = sys.E @ w

    def f(_, x):
        p_vi = S @ x + Sw @ w
        u = (-d * x[idx_w] - p_vi) / m
        return sys.A @ x + sys.B @ u + Ew

    sol = solve_ivp(f, (t[0], t[-1]), np.zeros(sys.n_states), t_eval=t, method="DOP853",
                    rtol=1e-13, atol=1e-15)
    return sol.y.T
