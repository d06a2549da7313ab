"""Exact information-relaxation duality on small finite MDPs.

Everything here is enumeration-based and exact up to float rounding: backward
induction for the primal value, exhaustive (or stagewise, when the penalty is
stage-separable) inner maximization per disturbance scenario, and the dual
bound as the probability-weighted sum over all scenarios.  Small instances
serve as the ground-truth oracle for weak duality, strong duality with the
value-function penalty, and the zero-mean property of that penalty.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

ENUMERATION_GUARD = 1_000_000
PROB_TOL = 1e-12


class EnumerationGuardError(RuntimeError):
    """Scenario space too large for exact enumeration."""


class DualityCheckError(AssertionError):
    """One of the exact duality checks failed; carries the full report."""

    def __init__(self, report: "DualityReport"):
        self.report = report
        failed = [name for name, ok in report.checks.items() if not ok]
        super().__init__(f"duality checks failed: {failed}; report={report}")


@dataclass(frozen=True)
class FiniteMDP:
    """Finite-horizon MDP with i.i.d. (optionally per-stage) disturbances.

    transition[x, a, o] is the index of the successor state; stage_reward is
    indexed (stage, state, action); outcome_probs is either one row shared by
    all stages or a (horizon, n_outcomes) table.
    """

    horizon: int
    states: tuple
    actions: tuple
    outcomes: tuple
    outcome_probs: np.ndarray
    transition: np.ndarray
    stage_reward: np.ndarray
    terminal_reward: np.ndarray
    initial_state: int

    def __post_init__(self):
        S, A, O, K = len(self.states), len(self.actions), len(self.outcomes), self.horizon
        if K < 1:
            raise ValueError(f"horizon must be >= 1, got {K}")
        probs = np.asarray(self.outcome_probs, dtype=float)
        if probs.ndim == 1:
            probs = np.tile(probs, (K, 1))
        if probs.shape != (K, O):
            raise ValueError(f"outcome_probs must have shape ({K}, {O}) or ({O},), got {probs.shape}")
        if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > PROB_TOL):
            raise ValueError("outcome probabilities must be nonnegative and sum to 1 per stage")
        trans = np.asarray(self.transition, dtype=int)
        if trans.shape != (S, A, O):
            raise ValueError(f"transition must have shape ({S}, {A}, {O}), got {trans.shape}")
        if np.any(trans < 0) or np.any(trans >= S):
            raise ValueError("transition entries must index into states")
        reward = np.asarray(self.stage_reward, dtype=float)
        if reward.shape != (K, S, A):
            raise ValueError(f"stage_reward must have shape ({K}, {S}, {A}), got {reward.shape}")
        term = np.asarray(self.terminal_reward, dtype=float)
        if term.shape != (S,):
            raise ValueError(f"terminal_reward must have shape ({S},), got {term.shape}")
        if not 0 <= self.initial_state < S:
            raise ValueError("initial_state out of range")
        object.__setattr__(self, "outcome_probs", probs)
        object.__setattr__(self, "transition", trans)
        object.__setattr__(self, "stage_reward", reward)
        object.__setattr__(self, "terminal_reward", term)
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "actions", tuple(self.actions))
        object.__setattr__(self, "outcomes", tuple(self.outcomes))

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_outcomes(self) -> int:
        return len(self.outcomes)

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "states": list(self.states),
            "actions": list(self.actions),
            "outcomes": list(self.outcomes),
            "outcome_probs": self.outcome_probs.tolist(),
            "transition": self.transition.tolist(),
            "stage_reward": self.stage_reward.tolist(),
            "terminal_reward": self.terminal_reward.tolist(),
            "initial_state": self.states[self.initial_state],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FiniteMDP":
        states = tuple(data["states"])
        init = data["initial_state"]
        if isinstance(init, str):
            init = states.index(init)
        return cls(
            horizon=int(data["horizon"]),
            states=states,
            actions=tuple(data["actions"]),
            outcomes=tuple(data["outcomes"]),
            outcome_probs=np.asarray(data["outcome_probs"], dtype=float),
            transition=np.asarray(data["transition"], dtype=int),
            stage_reward=np.asarray(data["stage_reward"], dtype=float),
            terminal_reward=np.asarray(data["terminal_reward"], dtype=float),
            initial_state=int(init),
        )

    @classmethod
    def from_json(cls, text: str) -> "FiniteMDP":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class StageValues:
    """Backward-induction values (stages 0..K) and an argmax policy (0..K-1)."""

    values: np.ndarray  # (K+1, S)
    policy: np.ndarray  # (K, S), lowest-index ties


@dataclass(frozen=True)
class ScenarioSequence:
    """One disturbance sequence and its probability."""

    outcomes: tuple
    probability: float


def solve_dp(mdp: FiniteMDP) -> StageValues:
    """Exact backward induction; ties broken by the lowest action index."""
    K, S = mdp.horizon, mdp.n_states
    V = np.empty((K + 1, S))
    policy = np.empty((K, S), dtype=int)
    V[K] = mdp.terminal_reward
    for k in range(K - 1, -1, -1):
        # Q[x, a] = g_k(x, a) + sum_o p_k(o) V_{k+1}(f(x, a, o))
        Q = mdp.stage_reward[k] + np.einsum("o,xao->xa", mdp.outcome_probs[k], V[k + 1][mdp.transition])
        policy[k] = np.argmax(Q, axis=1)
        V[k] = Q[np.arange(S), policy[k]]
    return StageValues(values=V, policy=policy)


def enumerate_scenarios(mdp: FiniteMDP, guard: int = ENUMERATION_GUARD):
    """All positive-probability disturbance sequences, in lexicographic order."""
    supports = [np.flatnonzero(mdp.outcome_probs[k] > 0.0) for k in range(mdp.horizon)]
    count = 1
    for sup in supports:
        count *= len(sup)
        if count > guard:
            raise EnumerationGuardError(
                f"scenario space exceeds the enumeration guard ({guard})")
    scenarios = []
    for combo in itertools.product(*supports):
        prob = 1.0
        for k, o in enumerate(combo):
            prob *= mdp.outcome_probs[k, o]
        scenarios.append(ScenarioSequence(outcomes=tuple(int(o) for o in combo), probability=prob))
    return scenarios


def trajectory(mdp: FiniteMDP, action_seq: Sequence[int], scenario: ScenarioSequence) -> np.ndarray:
    """States visited under (actions, disturbances), starting at the initial state."""
    if len(action_seq) != mdp.horizon or len(scenario.outcomes) != mdp.horizon:
        raise ValueError("action sequence and scenario must have length equal to the horizon")
    xs = np.empty(mdp.horizon + 1, dtype=int)
    xs[0] = mdp.initial_state
    for k in range(mdp.horizon):
        xs[k + 1] = mdp.transition[xs[k], action_seq[k], scenario.outcomes[k]]
    return xs


def pathwise_reward(mdp: FiniteMDP, action_seq: Sequence[int], scenario: ScenarioSequence) -> float:
    xs = trajectory(mdp, action_seq, scenario)
    total = float(mdp.terminal_reward[xs[-1]])
    for k in range(mdp.horizon):
        total += mdp.stage_reward[k, xs[k], action_seq[k]]
    return total


def _expected_next_value(mdp: FiniteMDP, V_next: np.ndarray, k: int, x: int, a: int) -> float:
    return float(np.dot(mdp.outcome_probs[k], V_next[mdp.transition[x, a]]))


def optimal_penalty_value(mdp: FiniteMDP, sv: StageValues, action_seq: Sequence[int],
                          scenario: ScenarioSequence) -> float:
    """Sum of realized-minus-conditional-expected next-stage values along the path."""
    xs = trajectory(mdp, action_seq, scenario)
    total = 0.0
    for k in range(mdp.horizon):
        total += float(sv.values[k + 1, xs[k + 1]]) \
            - _expected_next_value(mdp, sv.values[k + 1], k, xs[k], action_seq[k])
    return total


class StagewisePenalty:
    """Penalty of the form sum_k term(k, x_k, a_k, v_{k+1}); the stagewise
    structure lets the inner problem run as a deterministic DP over states."""

    def __init__(self, mdp: FiniteMDP, term: Callable[[int, int, int, int], float]):
        self._mdp = mdp
        self.stage_term = term

    def __call__(self, action_seq: Sequence[int], scenario: ScenarioSequence) -> float:
        xs = trajectory(self._mdp, action_seq, scenario)
        return sum(self.stage_term(k, int(xs[k]), int(action_seq[k]), int(scenario.outcomes[k]))
                   for k in range(self._mdp.horizon))


def zero_penalty(mdp: FiniteMDP) -> StagewisePenalty:
    return StagewisePenalty(mdp, lambda k, x, a, o: 0.0)


def optimal_penalty(mdp: FiniteMDP, sv: Optional[StageValues] = None) -> StagewisePenalty:
    """The martingale-difference penalty built from the exact stage values."""
    if sv is None:
        sv = solve_dp(mdp)

    def term(k: int, x: int, a: int, o: int) -> float:
        x_next = int(mdp.transition[x, a, o])
        return float(sv.values[k + 1, x_next]) - _expected_next_value(mdp, sv.values[k + 1], k, x, a)

    return StagewisePenalty(mdp, term)


def scaled_penalty(base: StagewisePenalty, factor: float) -> StagewisePenalty:
    return StagewisePenalty(base._mdp, lambda k, x, a, o: factor * base.stage_term(k, x, a, o))


def inner_solve(mdp: FiniteMDP, penalty, scenario: ScenarioSequence):
    """Exact maximizer over ALL action sequences for one disturbance scenario.

    A general penalty may couple stages, so the default is exhaustive
    enumeration (ties resolved to the lexicographically lowest sequence);
    penalties exposing `stage_term` take a stagewise deterministic DP instead,
    which resolves ties identically.
    """
    if penalty is None:
        penalty = zero_penalty(mdp)
    if len(scenario.outcomes) != mdp.horizon:
        raise ValueError("scenario length must equal the horizon")
    if hasattr(penalty, "stage_term"):
        return _inner_solve_stagewise(mdp, penalty, scenario)
    best_seq = None
    best_val = -np.inf
    for seq in itertools.product(range(mdp.n_actions), repeat=mdp.horizon):
        val = pathwise_reward(mdp, seq, scenario) - penalty(seq, scenario)
        if val > best_val:
            best_val = val
            best_seq = seq
    return best_seq, float(best_val)


def _inner_solve_stagewise(mdp: FiniteMDP, penalty: StagewisePenalty, scenario: ScenarioSequence):
    K, S, A = mdp.horizon, mdp.n_states, mdp.n_actions
    I = np.empty((K + 1, S))
    choice = np.empty((K, S), dtype=int)
    I[K] = mdp.terminal_reward
    for k in range(K - 1, -1, -1):
        o = scenario.outcomes[k]
        for x in range(S):
            best_val, best_a = -np.inf, 0
            for a in range(A):
                val = mdp.stage_reward[k, x, a] - penalty.stage_term(k, x, a, o) \
                    + I[k + 1, mdp.transition[x, a, o]]
                if val > best_val:
                    best_val, best_a = val, a
            I[k, x] = best_val
            choice[k, x] = best_a
    seq = []
    x = mdp.initial_state
    for k in range(K):
        a = int(choice[k, x])
        seq.append(a)
        x = int(mdp.transition[x, a, scenario.outcomes[k]])
    return tuple(seq), float(I[0, mdp.initial_state])


def dual_bound_exact(mdp: FiniteMDP, penalty, guard: int = ENUMERATION_GUARD) -> float:
    """Exact dual bound: probability-weighted inner optimum over every scenario."""
    total = 0.0
    for scen in enumerate_scenarios(mdp, guard=guard):
        _, val = inner_solve(mdp, penalty, scen)
        total += scen.probability * val
    return float(total)


def policy_action_sequence(mdp: FiniteMDP, policy: np.ndarray, scenario: ScenarioSequence):
    """Actions taken by a Markov policy table (K, S) along one scenario."""
    seq = []
    x = mdp.initial_state
    for k in range(mdp.horizon):
        a = int(policy[k, x])
        seq.append(a)
        x = int(mdp.transition[x, a, scenario.outcomes[k]])
    return tuple(seq)


def expected_penalty_under_policy(mdp: FiniteMDP, penalty, policy: np.ndarray,
                                  guard: int = ENUMERATION_GUARD) -> float:
    """Exact expectation of the penalty when actions follow a Markov policy."""
    total = 0.0
    for scen in enumerate_scenarios(mdp, guard=guard):
        seq = policy_action_sequence(mdp, policy, scen)
        total += scen.probability * penalty(seq, scen)
    return float(total)


@dataclass(frozen=True)
class DualityReport:
    v0: float
    zero_penalty_bound: float
    optimal_penalty_bound: float
    expected_optimal_penalty: float
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return {
            "v0": self.v0,
            "zero_penalty_bound": self.zero_penalty_bound,
            "optimal_penalty_bound": self.optimal_penalty_bound,
            "expected_optimal_penalty": self.expected_optimal_penalty,
            "checks": dict(self.checks),
            "passed": self.passed,
        }


def verify_duality(mdp: FiniteMDP, strong_tol: float = 1e-10, martingale_tol: float = 1e-12,
                   raise_on_failure: bool = True) -> DualityReport:
    """Exact weak/strong duality and zero-mean checks on one instance.

    Computes the primal value, the zero-penalty (pure foresight) bound and the
    optimal-penalty bound by enumeration, plus the exact expectation of the
    optimal penalty under the argmax policy.  Failures raise a
    DualityCheckError carrying the report unless raise_on_failure is False.
    """
    sv = solve_dp(mdp)
    v0 = float(sv.values[0, mdp.initial_state])
    zero_bound = dual_bound_exact(mdp, None)
    mstar = optimal_penalty(mdp, sv)
    opt_bound = dual_bound_exact(mdp, mstar)
    e_mstar = expected_penalty_under_policy(mdp, mstar, sv.policy)
    checks = {
        "weak_duality_zero_penalty": zero_bound >= v0 - 1e-12,
        "strong_duality_optimal_penalty": abs(opt_bound - v0) <= strong_tol,
        "zero_mean_under_optimal_policy": abs(e_mstar) <= martingale_tol,
    }
    report = DualityReport(
        v0=v0,
        zero_penalty_bound=zero_bound,
        optimal_penalty_bound=opt_bound,
        expected_optimal_penalty=e_mstar,
        checks=checks,
    )
    if raise_on_failure and not report.passed:
        raise DualityCheckError(report)
    return report
