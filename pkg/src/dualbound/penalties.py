"""Per-path penalty construction for the dual (perfect-foresight) bounds.

Penalties are represented as affine forms in the invested amounts Pi_k and
consumption amounts C_k: a decision-independent constant plus linear
coefficients per stage.  Two concrete penalties are built from a baseline
policy and the grid value function:

  m1 -- per stage k, three shock-linear terms: two decision-independent ones
        carrying W_k^(1-gamma) grad J_k times the state loadings, and one
        affine in Pi_k carrying (1-gamma) W_k^(-gamma) J_k times sigma Z;
  m2 -- same, with the two decision-independent terms Taylor-expanded to first
        order around the previous-stage baseline decisions, adding linear
        coefficients on (Pi_{k-1}, C_{k-1}).

Both have zero mean under any non-anticipative policy, which
`feasibility_check` verifies by Monte Carlo.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
import numpy as np

from . import dp_solver
from .market import ModelParams, ShockPath, simulate_policy_path

logger = logging.getLogger(__name__)

PENALTY_KINDS = ("zero", "m1", "m2")


@dataclass(frozen=True)
class PenaltyForm:
    """Affine decomposition M(Pi, C) = constant + sum_k lin_Pi[k]'Pi_k + lin_C[k] C_k."""

    constant: float
    lin_Pi: np.ndarray  # (K, n)
    lin_C: np.ndarray   # (K,)

    def evaluate(self, Pi: np.ndarray, C: np.ndarray) -> float:
        return self.constant + float(np.sum(self.lin_Pi * Pi)) + float(np.dot(self.lin_C, C))


def zero_form(K: int, n: int) -> PenaltyForm:
    return PenaltyForm(constant=0.0, lin_Pi=np.zeros((K, n)), lin_C=np.zeros(K))


@dataclass(frozen=True)
class PenaltyContext:
    """Decision-independent data collected along one baseline trajectory.

    Arrays are indexed by stage k = 0..K-1; R[k] is the gross return realized
    over period [k, k+1], so the return known at time k is R[k-1].
    """

    phi: np.ndarray     # (K,) baseline states at stages 0..K-1
    W: np.ndarray       # (K,) baseline wealth at stages 0..K-1
    Pi: np.ndarray      # (K, n) baseline invested amounts
    C: np.ndarray       # (K,) baseline consumption amounts
    R: np.ndarray       # (K, n) realized gross returns
    J: np.ndarray       # (K,) value interpolant at the baseline states
    gradJ: np.ndarray   # (K,) its slope at the baseline states
    Z: np.ndarray       # (K, n)
    Ztilde: np.ndarray  # (K, d)

    @property
    def K(self) -> int:
        return self.phi.shape[0]


def build_context(p: ModelParams, vg: dp_solver.ValueGrid, policy, shocks: ShockPath) -> PenaltyContext:
    """Run the baseline policy along the shocks and evaluate J and its slope."""
    path = simulate_policy_path(p, policy, shocks)
    K = p.K
    J = np.array([dp_solver.interpolate_J(vg, k, path.phi[k]) for k in range(K)])
    gradJ = np.array([dp_solver.gradient_J(vg, k, path.phi[k]) for k in range(K)])
    return PenaltyContext(
        phi=path.phi[:K].copy(),
        W=path.W[:K].copy(),
        Pi=path.Pi.copy(),
        C=path.C.copy(),
        R=path.R.copy(),
        J=J,
        gradJ=gradJ,
        Z=shocks.Z,
        Ztilde=shocks.Ztilde,
    )


def _shock_terms(ctx: PenaltyContext, p: ModelParams) -> tuple:
    """Per-stage scalars grad J_k(phi_k) * (loading . shock) * sqrt(delta)."""
    sd = p.sqrt_delta
    base1 = ctx.gradJ * (ctx.Z @ p.sigma_phi1) * sd
    base2 = ctx.gradJ * (p.sigma_phi2 * ctx.Ztilde[:, 0]) * sd
    return base1, base2


def m1_form(ctx: PenaltyContext, p: ModelParams) -> PenaltyForm:
    """Discretized value-function penalty; only the Pi_k coefficients depend on decisions."""
    K, n = ctx.K, p.n
    gamma = p.gamma
    disc = p.beta ** (np.arange(K) * p.delta)
    base1, base2 = _shock_terms(ctx, p)
    constant = float(np.sum(disc * ctx.W ** (1.0 - gamma) * (base1 + base2)))
    sigZ = ctx.Z @ p.sigma.T * p.sqrt_delta  # row k = (sigma Z_{k+1})' sqrt(delta)
    lin_Pi = (disc * (1.0 - gamma) * ctx.W ** (-gamma) * ctx.J)[:, None] * sigZ
    return PenaltyForm(constant=constant, lin_Pi=lin_Pi, lin_C=np.zeros(K))


def m2_form(ctx: PenaltyContext, p: ModelParams) -> PenaltyForm:
    """M1 with the decision-independent terms linearized around the previous
    stage's baseline decisions; anchored so that it equals M1 at the baseline."""
    K, n = ctx.K, p.n
    gamma = p.gamma
    disc = p.beta ** (np.arange(K) * p.delta)
    base1, base2 = _shock_terms(ctx, p)
    base = base1 + base2
    m1 = m1_form(ctx, p)
    lin_Pi = m1.lin_Pi.copy()
    lin_C = np.zeros(K)
    constant = m1.constant
    for k in range(1, K):
        # d/dPi_{k-1} W_k = R_k - R_f, d/dC_{k-1} W_k = -1, at frozen W_{k-1}.
        slope = disc[k] * (1.0 - gamma) * ctx.W[k] ** (-gamma) * base[k]
        excess_prev = ctx.R[k - 1] - p.R_f
        lin_Pi[k - 1] += slope * excess_prev
        lin_C[k - 1] += -slope
        constant += -slope * (float(np.dot(excess_prev, ctx.Pi[k - 1])) - ctx.C[k - 1])
    return PenaltyForm(constant=constant, lin_Pi=lin_Pi, lin_C=lin_C)


def penalty_form(kind: str, ctx: PenaltyContext, p: ModelParams) -> PenaltyForm:
    if kind == "zero":
        return zero_form(ctx.K, p.n)
    if kind == "m1":
        return m1_form(ctx, p)
    if kind == "m2":
        return m2_form(ctx, p)
    raise ValueError(f"unknown penalty kind {kind!r}; valid: {PENALTY_KINDS}")


@dataclass(frozen=True)
class FeasibilityReport:
    kind: str
    n_pairs: int
    mean: float
    stderr: float
    passed: bool

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n_pairs": self.n_pairs, "mean": self.mean,
                "stderr": self.stderr, "passed": self.passed}


def feasibility_check(kind, p: ModelParams, vg: dp_solver.ValueGrid,
                      policy=None, n_paths: int = 10_000, seed: int = 0) -> FeasibilityReport:
    """Monte Carlo zero-mean check of a penalty under the baseline policy.

    Samples n_paths antithetic pairs, evaluates the penalty at the baseline
    decisions, and passes iff |mean| <= 3 * stderr (pair averages are the
    i.i.d. observations).  `kind` is one of PENALTY_KINDS or a callable
    (ctx, params) -> PenaltyForm for custom penalties.
    """
    if n_paths < 100:
        raise ValueError(f"need at least 100 paths, got {n_paths}")
    form_fn = kind if callable(kind) else (lambda ctx, params: penalty_form(kind, ctx, params))
    kind_name = kind if isinstance(kind, str) else getattr(kind, "__name__", "custom")
    if isinstance(kind, str) and kind not in PENALTY_KINDS:
        raise ValueError(f"unknown penalty kind {kind!r}; valid: {PENALTY_KINDS}")
    if policy is None:
        policy = dp_solver.make_grid_policy(vg, p)
    rng = np.random.Generator(np.random.Philox(key=np.random.SeedSequence(
        (seed, 0x7EA5)).generate_state(2, np.uint64)))
    pair_means = np.empty(n_paths)
    leg_ratio_log: list = []
    for i in range(n_paths):
        shocks = ShockPath(Z=rng.standard_normal((p.K, p.n)),
                           Ztilde=rng.standard_normal((p.K, p.d)))
        vals = []
        for sp in (shocks, shocks.antithetic()):
            ctx = build_context(p, vg, policy, sp)
            form = form_fn(ctx, p)
            vals.append(form.evaluate(ctx.Pi, ctx.C))
        pair_means[i] = 0.5 * (vals[0] + vals[1])
        if i < 16 and max(abs(vals[0]), abs(vals[1])) > 0:
            leg_ratio_log.append(abs(pair_means[i]) / max(abs(vals[0]), abs(vals[1])))
    if leg_ratio_log:
        logger.debug("antithetic pair-mean to leg magnitude ratios (first pairs): %s",
                     np.array2string(np.asarray(leg_ratio_log), precision=3))
    mean = float(np.mean(pair_means))
    stderr = float(np.std(pair_means, ddof=1) / math.sqrt(n_paths))
    passed = abs(mean) <= 3.0 * stderr or (mean == 0.0 and stderr == 0.0)
    return FeasibilityReport(kind=kind_name, n_pairs=n_paths, mean=mean, stderr=stderr, passed=passed)
