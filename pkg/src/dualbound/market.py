"""Discretized market dynamics: mean-reverting state, lognormal returns, wealth recursion.

The model family is a one-dimensional Ornstein-Uhlenbeck market state driving
the drift of n risky assets, advanced on a fixed grid of K periods of length
delta.  All stepping functions are stateless; path simulation applies a policy
callback stage by stage and enforces the admissible set

    A = {(pi, c) : pi >= 0, c >= 0, c <= R_f (1 - 1'pi)}

with strictly positive wealth along the way.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

WEALTH_FLOOR = 1e-12
FEAS_TOL = 1e-9


class AdmissibilityError(ValueError):
    """A policy decision left the admissible set, or wealth hit the floor."""

    def __init__(self, stage: int, message: str):
        self.stage = stage
        super().__init__(f"stage {stage}: {message}")


@dataclass(frozen=True)
class ModelParams:
    """Market and preference constants of the discretized portfolio problem.

    sigma is lower-triangular with positive diagonal (per sqrt-year units);
    mu0/mu1 are per-year drift intercept and state loading; lam is the
    mean-reversion rate of the market state; sigma_phi1 (length n) and
    sigma_phi2 (scalar, d=1) load the state on the return shocks Z and the
    extra shock Ztilde.  Preferences: CRRA coefficient gamma (> 0, != 1),
    consumption weight alpha in [0, 1], discount base beta.
    """

    n: int
    d: int
    mu0: np.ndarray
    mu1: np.ndarray
    sigma: np.ndarray
    r_f: float
    lam: float
    sigma_phi1: np.ndarray
    sigma_phi2: float
    alpha: float
    beta: float
    gamma: float
    delta: float
    K: int
    phi0: float = 0.0
    W0: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mu0", _frozen_array(self.mu0, (self.n,)))
        object.__setattr__(self, "mu1", _frozen_array(self.mu1, (self.n,)))
        object.__setattr__(self, "sigma", _frozen_array(self.sigma, (self.n, self.n)))
        object.__setattr__(self, "sigma_phi1", _frozen_array(self.sigma_phi1, (self.n,)))
        self._validate()

    def _validate(self):
        if self.n < 1 or self.d != 1:
            raise ValueError(f"need n >= 1 and d == 1, got n={self.n}, d={self.d}")
        if self.K < 1 or not self.delta > 0:
            raise ValueError(f"need K >= 1 and delta > 0, got K={self.K}, delta={self.delta}")
        if not np.allclose(self.sigma, np.tril(self.sigma)):
            raise ValueError("sigma must be lower-triangular")
        if np.any(np.diag(self.sigma) <= 0):
            raise ValueError("sigma must have strictly positive diagonal")
        if not self.R_f > 0:
            raise ValueError(f"R_f = 1 + r_f*delta = {self.R_f} must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.gamma > 0 or self.gamma == 1.0:
            raise ValueError(f"gamma must be positive and != 1, got {self.gamma}")
        if not self.W0 > 0:
            raise ValueError(f"W0 must be positive, got {self.W0}")

    @property
    def T(self) -> float:
        return self.K * self.delta

    @property
    def R_f(self) -> float:
        # Simple-rate convention: 1 + r_f*delta, not e^{r_f*delta}.
        return 1.0 + self.r_f * self.delta

    @property
    def sqrt_delta(self) -> float:
        return math.sqrt(self.delta)

    @property
    def sigma_sq(self) -> np.ndarray:
        """Per-asset instantaneous variances, the diagonal of sigma sigma'."""
        return np.sum(self.sigma * self.sigma, axis=1)

    @property
    def phi_step_var(self) -> float:
        """Conditional variance of phi_{k+1} given phi_k."""
        s1 = float(np.dot(self.sigma_phi1, self.sigma_phi1))
        return (s1 + self.sigma_phi2**2) * self.delta

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "d": self.d,
            "mu0": self.mu0.tolist(),
            "mu1": self.mu1.tolist(),
            "sigma": self.sigma.tolist(),
            "r_f": self.r_f,
            "lambda": self.lam,
            "sigma_phi1": self.sigma_phi1.tolist(),
            "sigma_phi2": self.sigma_phi2,
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "delta": self.delta,
            "K": self.K,
            "phi0": self.phi0,
            "W0": self.W0,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        known = {
            "n", "d", "mu0", "mu1", "sigma", "r_f", "lambda", "sigma_phi1",
            "sigma_phi2", "alpha", "beta", "gamma", "delta", "K", "phi0", "W0",
        }
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown ModelParams fields: {sorted(unknown)}")
        missing = known - set(data)
        if missing:
            raise ValueError(f"missing ModelParams fields: {sorted(missing)}")
        kwargs = {("lam" if k == "lambda" else k): v for k, v in data.items()}
        for key in ("mu0", "mu1", "sigma", "sigma_phi1"):
            kwargs[key] = np.asarray(kwargs[key], dtype=float)
        return cls(**kwargs)

    def to_json(self, **dump_kwargs) -> str:
        dump_kwargs.setdefault("indent", 2)
        dump_kwargs.setdefault("sort_keys", True)
        return json.dumps(self.to_dict(), **dump_kwargs)

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        return cls.from_dict(json.loads(text))

    def content_hash(self) -> str:
        import hashlib

        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def _frozen_array(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    arr.flags.writeable = False
    return arr


# Published parameter sets.  Sets 1/3 have slow mean reversion and small state
# volatility; sets 2/4 have fast mean reversion and large state volatility.
_PARAMETER_SETS = {
    1: {
        "mu0": [0.081, 0.110, 0.130],
        "mu1": [0.034, 0.059, 0.073],
        "sigma": [[0.186, 0.0, 0.0], [0.228, 0.083, 0.0], [0.251, 0.139, 0.069]],
        "lambda": 0.336,
        "sigma_phi1": [-0.741, -0.037, -0.060],
        "sigma_phi2": 0.284,
    },
    2: {
        "mu0": [0.081, 0.110, 0.130],
        "mu1": [0.034, 0.059, 0.073],
        "sigma": [[0.186, 0.0, 0.0], [0.228, 0.083, 0.0], [0.251, 0.139, 0.069]],
        "lambda": 1.671,
        "sigma_phi1": [-0.017, 0.149, 0.058],
        "sigma_phi2": 1.725,
    },
    3: {
        "mu0": [0.142, 0.109, 0.089],
        "mu1": [0.065, 0.049, 0.049],
        "sigma": [[0.256, 0.0, 0.0], [0.217, 0.054, 0.0], [0.207, 0.062, 0.062]],
        "lambda": 0.336,
        "sigma_phi1": [-0.741, -0.040, -0.034],
        "sigma_phi2": 0.288,
    },
    4: {
        "mu0": [0.142, 0.109, 0.089],
        "mu1": [0.061, 0.060, 0.067],
        "sigma": [[0.256, 0.0, 0.0], [0.217, 0.054, 0.0], [0.206, 0.062, 0.062]],
        "lambda": 1.671,
        "sigma_phi1": [-0.017, 0.212, 0.096],
        "sigma_phi2": 1.716,
    },
}

PARAMETER_SET_IDS = tuple(sorted(_PARAMETER_SETS))


def parameter_set(set_id: int, gamma: float = 1.5) -> ModelParams:
    """Published parameter set 1..4; gamma is supplied per experiment."""
    if set_id not in _PARAMETER_SETS:
        raise ValueError(f"unknown parameter set {set_id}; valid ids: {list(PARAMETER_SET_IDS)}")
    tbl = _PARAMETER_SETS[set_id]
    return ModelParams(
        n=3,
        d=1,
        mu0=np.array(tbl["mu0"]),
        mu1=np.array(tbl["mu1"]),
        sigma=np.array(tbl["sigma"]),
        r_f=0.01,
        lam=tbl["lambda"],
        sigma_phi1=np.array(tbl["sigma_phi1"]),
        sigma_phi2=tbl["sigma_phi2"],
        alpha=0.5,
        beta=1.0,
        gamma=gamma,
        delta=0.1,
        K=10,
        phi0=0.0,
        W0=1.0,
    )


@dataclass(frozen=True)
class ShockPath:
    """One realization of the Gaussian drivers: Z is K x n, Ztilde is K x d."""

    Z: np.ndarray
    Ztilde: np.ndarray
    antithetic_of: Optional["ShockPath"] = None

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=float)
        Zt = np.asarray(self.Ztilde, dtype=float)
        if Z.ndim != 2 or Zt.ndim != 2 or Z.shape[0] != Zt.shape[0]:
            raise ValueError(f"bad shock shapes {Z.shape}, {Zt.shape}")
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "Ztilde", Zt)

    @property
    def K(self) -> int:
        return self.Z.shape[0]

    def antithetic(self) -> "ShockPath":
        """Elementwise negation; exact in IEEE arithmetic."""
        return ShockPath(Z=-self.Z, Ztilde=-self.Ztilde, antithetic_of=self)


@dataclass
class MarketPath:
    """A simulated trajectory: states, gross returns, wealth and consumption."""

    phi: np.ndarray    # (K+1,)
    R: np.ndarray      # (K, n); row k is the gross return over period [k, k+1]
    W: np.ndarray      # (K+1,)
    C: np.ndarray      # (K,) consumption amounts C_k = c_k * W_k
    Pi: np.ndarray     # (K, n) invested amounts Pi_k = pi_k * W_k


def step_state(phi_k: float, z: np.ndarray, ztilde, p: ModelParams) -> float:
    """Advance the market state one period: OU drift plus both shock loadings."""
    zt = float(np.asarray(ztilde).reshape(-1)[0]) if np.ndim(ztilde) else float(ztilde)
    drift = -p.lam * phi_k * p.delta
    diff = (float(np.dot(p.sigma_phi1, z)) + p.sigma_phi2 * zt) * p.sqrt_delta
    return phi_k + drift + diff


def log_return_mean(phi_k: float, p: ModelParams) -> np.ndarray:
    """Per-period mean of log gross returns at state phi_k."""
    mu_k = p.mu0 + p.mu1 * phi_k
    return (mu_k - 0.5 * p.sigma_sq) * p.delta


def step_return(phi_k: float, z: np.ndarray, p: ModelParams) -> np.ndarray:
    """Gross returns over one period given state phi_k and shock z."""
    log_r = log_return_mean(phi_k, p) + (p.sigma @ z) * p.sqrt_delta
    return np.exp(log_r)


def step_wealth(W_k: float, Pi_k: np.ndarray, C_k: float, R_next: np.ndarray, p: ModelParams) -> float:
    """Wealth recursion in invested amounts; exactly linear in (Pi_k, C_k)."""
    return W_k * p.R_f + float(np.dot(R_next - p.R_f, Pi_k)) - C_k


def check_admissible(pi: np.ndarray, c: float, p: ModelParams, tol: float = FEAS_TOL) -> Optional[str]:
    """Return a violation description for (pi, c) outside A, or None."""
    if np.any(pi < -tol):
        return f"pi has negative component {float(np.min(pi)):.3e}"
    if c < -tol:
        return f"c = {c:.3e} is negative"
    budget = p.R_f * (1.0 - float(np.sum(pi)))
    if c > budget + tol:
        return f"c = {c:.6g} exceeds budget R_f(1 - 1'pi) = {budget:.6g}"
    return None


Policy = Callable[[int, float, float], tuple]


def simulate_policy_path(p: ModelParams, policy: Policy, shocks: ShockPath) -> MarketPath:
    """Run `policy(k, phi_k, W_k) -> (pi, c)` along one shock path.

    Raises AdmissibilityError naming the stage if the policy leaves A or
    wealth falls to the floor.
    """
    K = p.K
    if shocks.K != K:
        raise ValueError(f"shock path has {shocks.K} stages, params have K={K}")
    phi = np.empty(K + 1)
    W = np.empty(K + 1)
    R = np.empty((K, p.n))
    C = np.empty(K)
    Pi = np.empty((K, p.n))
    phi[0] = p.phi0
    W[0] = p.W0
    for k in range(K):
        pi_k, c_k = policy(k, phi[k], W[k])
        pi_k = np.asarray(pi_k, dtype=float)
        violation = check_admissible(pi_k, c_k, p)
        if violation is not None:
            raise AdmissibilityError(k, violation)
        # Clip float-level fuzz so the wealth recursion sees a point of A.
        pi_k = np.maximum(pi_k, 0.0)
        c_k = min(max(c_k, 0.0), p.R_f * (1.0 - float(np.sum(pi_k))))
        Pi[k] = W[k] * pi_k
        C[k] = W[k] * c_k
        R[k] = step_return(phi[k], shocks.Z[k], p)
        phi[k + 1] = step_state(phi[k], shocks.Z[k], shocks.Ztilde[k], p)
        W[k + 1] = step_wealth(W[k], Pi[k], C[k], R[k], p)
        if W[k + 1] <= WEALTH_FLOOR:
            raise AdmissibilityError(k + 1, f"wealth {W[k + 1]:.3e} at or below floor {WEALTH_FLOOR:g}")
    return MarketPath(phi=phi, R=R, W=W, C=C, Pi=Pi)
