"""Grid-based backward recursion for the per-unit-wealth value function J_k(phi).

The market state is discretized on a sorted node grid; its one-step law is a
row-stochastic cell-mass matrix.  Return expectations use a tensorized
Gauss-Hermite rule frozen at the current node, taken independently of the
state expectation.  Each node maximization is a small concave program solved
by the barrier engine, warm-started from the neighboring node.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr

from . import concave
from .market import ModelParams

logger = logging.getLogger(__name__)

SERIAL_VERSION = 1
U_FLOOR = 1e-10  # lower guard on portfolio growth at quadrature nodes

DEFAULT_GRID = np.linspace(-2.0, 2.0, 21)
DEFAULT_QUAD_POINTS = 3


class NodeSolveError(RuntimeError):
    """Inner solver failed to converge at a Bellman node."""

    def __init__(self, k: int, phi: float, status: str):
        self.k = k
        self.phi = phi
        super().__init__(f"node solve failed at stage k={k}, phi={phi:.6g} (status={status})")


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor-product Gauss-Hermite rule for a standard normal vector."""

    nodes: np.ndarray    # (Q, n)
    weights: np.ndarray  # (Q,)

    @property
    def count(self) -> int:
        return self.nodes.shape[0]


def build_quadrature(q: int, n: int) -> QuadratureRule:
    """q points per dimension, tensorized over n dimensions (probabilists' weights)."""
    if q not in (3, 5, 7):
        raise ValueError(f"unsupported quadrature order q={q}; use 3, 5 or 7")
    if n > 4:
        raise ValueError(f"tensor rule limited to n <= 4 dimensions, got {n}")
    x, w = np.polynomial.hermite_e.hermegauss(q)
    w = w / w.sum()
    nodes = np.array(list(itertools.product(x, repeat=n)))
    weights = np.prod(np.array(list(itertools.product(w, repeat=n))), axis=1)
    return QuadratureRule(nodes=nodes, weights=weights)


@dataclass(frozen=True)
class PhiTransition:
    """Row-stochastic transition of the state grid."""

    P: np.ndarray
    stage_independent: bool = True


def build_phi_transition(grid: np.ndarray, p: ModelParams) -> PhiTransition:
    """Discretize N(phi_i (1 - lam*delta), phi_step_var) onto midpoint cells.

    Cell j collects the normal mass between the midpoints around node j; the
    outermost cells extend to +-infinity.  A zero-variance law degenerates to
    unit mass on the nearest node.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be a sorted 1-d array with at least two nodes")
    G = grid.size
    mids = 0.5 * (grid[:-1] + grid[1:])
    var = p.phi_step_var
    P = np.zeros((G, G))
    means = grid * (1.0 - p.lam * p.delta)
    if var <= 0.0:
        for i, m in enumerate(means):
            P[i, int(np.argmin(np.abs(grid - m)))] = 1.0
        return PhiTransition(P=P)
    sd = math.sqrt(var)
    for i, m in enumerate(means):
        cdf = ndtr((mids - m) / sd)
        row = np.empty(G)
        row[0] = cdf[0]
        row[1:-1] = np.diff(cdf)
        row[-1] = 1.0 - cdf[-1]
        P[i] = row / row.sum()
    return PhiTransition(P=P)


@dataclass(frozen=True)
class ValueGrid:
    """Nodal values, slopes, and policy of the backward recursion."""

    grid: np.ndarray        # (G,)
    J: np.ndarray           # (K+1, G)
    node_slope: np.ndarray  # (K, G), averaged-segment slopes at the nodes
    policy_pi: np.ndarray   # (K, G, n)
    policy_c: np.ndarray    # (K, G)

    @property
    def K(self) -> int:
        return self.J.shape[0] - 1


def node_returns(p: ModelParams, quad: QuadratureRule, phi: float) -> np.ndarray:
    """Gross returns at every joint quadrature node, state frozen at phi."""
    mu_k = p.mu0 + p.mu1 * phi
    log_r = (mu_k - 0.5 * p.sigma_sq) * p.delta + (quad.nodes @ p.sigma.T) * p.sqrt_delta
    return np.exp(log_r)


def bellman_node_problem(p: ModelParams, Rq: np.ndarray, wq: np.ndarray, EJ: float):
    """Oracle and constraints of one node maximization over x = (pi, c).

    Objective: alpha*delta*c^(1-gamma)/(1-gamma) + beta^delta * EJ * E_q[u^(1-gamma)]
    with u = R_f + (Rq - R_f)'pi - c, guarded away from zero at every node.
    """
    n = p.n
    gamma = p.gamma
    excess = Rq - p.R_f
    disc = p.beta**p.delta
    a_cons = p.alpha * p.delta

    def growth(x):
        return p.R_f + excess @ x[:n] - x[n]

    def value(x):
        c = x[n]
        u = growth(x)
        if np.min(u) <= 0.0 or (a_cons > 0.0 and c <= 0.0):
            return -np.inf
        v = disc * EJ * float(np.dot(wq, u ** (1.0 - gamma)))
        if a_cons > 0.0:
            v += a_cons * c ** (1.0 - gamma) / (1.0 - gamma)
        return v

    def gradient(x):
        c = x[n]
        u = growth(x)
        wu = wq * u ** (-gamma)
        coef = disc * EJ * (1.0 - gamma)
        g = np.empty(n + 1)
        g[:n] = coef * (excess.T @ wu)
        g[n] = -coef * float(np.sum(wu))
        if a_cons > 0.0:
            g[n] += a_cons * c ** (-gamma)
        return g

    def hessian(x):
        c = x[n]
        u = growth(x)
        wu2 = wq * u ** (-gamma - 1.0)
        coef = disc * EJ * (1.0 - gamma) * (-gamma)
        ext = np.hstack([excess, -np.ones((excess.shape[0], 1))])
        H = coef * (ext.T * wu2) @ ext
        if a_cons > 0.0:
            H[n, n] += a_cons * (-gamma) * c ** (-gamma - 1.0)
        return H

    # Rows: budget c + R_f 1'pi <= R_f, then the growth guards per node.
    A = np.vstack([
        np.concatenate([np.full(n, p.R_f), [1.0]]),
        np.hstack([-excess, np.ones((excess.shape[0], 1))]),
    ])
    b = np.concatenate([[p.R_f], np.full(excess.shape[0], p.R_f - U_FLOOR)])
    cons = concave.LinearConstraints(A=A, b=b, nonneg_mask=np.ones(n + 1, dtype=bool))
    oracle = concave.ObjectiveOracle(value=value, gradient=gradient, hessian=hessian)
    return oracle, cons


def _default_start(n: int, eps: float = 1e-3) -> np.ndarray:
    return np.concatenate([np.full(n, eps / n), [eps]])


def _pick_start(candidates, cons: concave.LinearConstraints, oracle) -> np.ndarray:
    for cand in candidates:
        if cand is None:
            continue
        s = cons.slack(cand)
        if np.min(s) > 1e-11 and np.isfinite(oracle.value(cand)):
            return cand
    raise RuntimeError("no strictly feasible start found")


def backward_recursion(
    p: ModelParams,
    grid: Optional[np.ndarray] = None,
    quad: Optional[QuadratureRule] = None,
    pt: Optional[PhiTransition] = None,
    solver: Callable = concave.maximize,
    node_tol: float = 1e-8,
) -> ValueGrid:
    """Solve the stage recursion on the grid, storing values, slopes and policy."""
    grid = DEFAULT_GRID.copy() if grid is None else np.asarray(grid, dtype=float)
    quad = quad if quad is not None else build_quadrature(DEFAULT_QUAD_POINTS, p.n)
    pt = pt if pt is not None else build_phi_transition(grid, p)
    G = grid.size
    K = p.K
    J = np.empty((K + 1, G))
    node_slope = np.empty((K, G))
    policy_pi = np.empty((K, G, p.n))
    policy_c = np.empty((K, G))
    J[K] = (1.0 - p.alpha) / (1.0 - p.gamma)
    default = _default_start(p.n)
    for k in range(K - 1, -1, -1):
        EJ_nodes = pt.P @ J[k + 1]
        prev = None
        for i in range(G):
            Rq = node_returns(p, quad, grid[i])
            oracle, cons = bellman_node_problem(p, Rq, quad.weights, float(EJ_nodes[i]))
            shrunk = None if prev is None else 0.999 * prev + 0.001 * default
            x0 = _pick_start([shrunk, default], cons, oracle)
            sol = solver(oracle, cons, x0, tol=node_tol)
            if logger.isEnabledFor(logging.DEBUG):
                logger.debug("node k=%d phi=%+.3f: %d newton steps, kkt %.2e, f trace %s",
                             k, grid[i], sol.iterations, sol.kkt_residual,
                             np.array2string(np.asarray(sol.trace_f), precision=10))
            if sol.status != concave.STATUS_CONVERGED:
                raise NodeSolveError(k, float(grid[i]), sol.status)
            J[k, i] = sol.f
            policy_pi[k, i] = sol.x[: p.n]
            policy_c[k, i] = sol.x[p.n]
            prev = sol.x
        seg = np.diff(J[k]) / np.diff(grid)
        node_slope[k, 0] = seg[0]
        node_slope[k, -1] = seg[-1]
        node_slope[k, 1:-1] = 0.5 * (seg[:-1] + seg[1:])
    return ValueGrid(grid=grid, J=J, node_slope=node_slope, policy_pi=policy_pi, policy_c=policy_c)


def interpolate_J(vg: ValueGrid, k: int, phi: float) -> float:
    """Piecewise-linear nodal interpolation; linear continuation beyond the grid."""
    g, J = vg.grid, vg.J[k]
    if phi <= g[0]:
        return float(J[0] + (phi - g[0]) * (J[1] - J[0]) / (g[1] - g[0]))
    if phi >= g[-1]:
        return float(J[-1] + (phi - g[-1]) * (J[-1] - J[-2]) / (g[-1] - g[-2]))
    return float(np.interp(phi, g, J))


def gradient_J(vg: ValueGrid, k: int, phi: float) -> float:
    """Slope of the interpolant; averaged adjacent slopes exactly at interior nodes."""
    g, J = vg.grid, vg.J[k if k < vg.K else vg.K]
    seg = np.diff(J) / np.diff(g)
    if phi <= g[0]:
        return float(seg[0])
    if phi >= g[-1]:
        return float(seg[-1])
    idx = int(np.searchsorted(g, phi))
    if phi == g[idx]:
        return float(0.5 * (seg[idx - 1] + seg[idx]))
    return float(seg[idx - 1])


def policy_lookup(vg: ValueGrid, k: int, phi: float, p: ModelParams) -> tuple:
    """Componentwise interpolation of the nodal policy, projected back into A.

    Beyond the outermost nodes the nearest nodal policy is used (constant
    extrapolation) before projection.
    """
    g = vg.grid
    x = min(max(phi, g[0]), g[-1])
    pi = np.array([np.interp(x, g, vg.policy_pi[k, :, j]) for j in range(vg.policy_pi.shape[2])])
    c = float(np.interp(x, g, vg.policy_c[k]))
    pi = np.maximum(pi, 0.0)
    total = float(np.sum(pi))
    if total > 1.0:
        pi = pi / total
        total = 1.0
    c = min(max(c, 0.0), p.R_f * (1.0 - total))
    return pi, c


def make_grid_policy(vg: ValueGrid, p: ModelParams):
    """Stage policy callback for simulation; wealth-independent under CRRA."""

    def policy(k: int, phi: float, W: float):
        return policy_lookup(vg, k, phi, p)

    return policy


def value_grid_to_dict(vg: ValueGrid, p: ModelParams) -> dict:
    return {
        "version": SERIAL_VERSION,
        "params_hash": p.content_hash(),
        "params": p.to_dict(),
        "grid": vg.grid.tolist(),
        "J": vg.J.tolist(),
        "node_slope": vg.node_slope.tolist(),
        "policy_pi": vg.policy_pi.tolist(),
        "policy_c": vg.policy_c.tolist(),
    }


def value_grid_from_dict(data: dict) -> tuple:
    version = data.get("version")
    if version != SERIAL_VERSION:
        raise ValueError(f"unsupported value-grid file version {version!r}")
    p = ModelParams.from_dict(data["params"])
    if data.get("params_hash") != p.content_hash():
        raise ValueError("value-grid file is corrupt: params hash mismatch")
    vg = ValueGrid(
        grid=np.asarray(data["grid"], dtype=float),
        J=np.asarray(data["J"], dtype=float),
        node_slope=np.asarray(data["node_slope"], dtype=float),
        policy_pi=np.asarray(data["policy_pi"], dtype=float),
        policy_c=np.asarray(data["policy_c"], dtype=float),
    )
    return vg, p


def save_value_grid(path: str, vg: ValueGrid, p: ModelParams) -> None:
    with open(path, "w") as fh:
        json.dump(value_grid_to_dict(vg, p), fh, sort_keys=True)
        fh.write("\n")


def load_value_grid(path: str):
    with open(path) as fh:
        return value_grid_from_dict(json.load(fh))
