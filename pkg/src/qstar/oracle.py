"""Exact ground truth by backward induction, plus structural-lemma checks.

Everything here enumerates finite stage-indexed state sets and computes
expectations over the finite reward/transition laws exactly (double
precision). Soundness quantities range over states accessible from the
initial state, matching their definitions; the DP itself covers the full
declared decomposition.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .distributions import FiniteDist
from .hard_family import HardInstance
from .mdp import (
    MdpModel,
    SizeCapError,
    StagePolicy,
    TabularModel,
    TreeState,
    accessible_states,
    state_str,
)

DEFAULT_STATE_CAP = 2_000_000


@dataclass
class ValueTables:
    """Stage-indexed exact q*, v*, and action gaps."""

    horizon: int
    num_actions: int
    q: dict  # q[h][s] -> ndarray over actions
    v: dict  # v[h][s] -> float, stages 1..H+1
    gap: dict  # gap[h][s] -> ndarray over actions

    def q_of(self, h: int, s, a: int) -> float:
        return float(self.q[h][s][a - 1])

    def v_of(self, h: int, s) -> float:
        return float(self.v[h][s])

    def gap_of(self, h: int, s, a: int) -> float:
        return float(self.gap[h][s][a - 1])


def _check_cap(model: MdpModel, cap: int) -> None:
    total = 0
    for h in range(1, model.horizon + 2):
        total += model.num_states_at(h)
        if total > cap:
            raise SizeCapError(
                f"state enumeration exceeds cap {cap} at stage {h} "
                f"(cumulative {total})", stage=h,
            )


def solve_backward(model: MdpModel, alpha: float | None = None, cap: int = DEFAULT_STATE_CAP) -> ValueTables:
    """Exact q*, v*, gaps over the declared decomposition, stages H down to 1."""
    _check_cap(model, cap)
    a_disc = model.alpha if alpha is None else alpha
    H, k = model.horizon, model.num_actions
    v = {H + 1: {s: 0.0 for s in model.states_at(H + 1)}}
    q, gap = {}, {}
    for h in range(H, 0, -1):
        v[h], q[h], gap[h] = {}, {}, {}
        v_next = v[h + 1]
        for s in model.states_at(h):
            vals = np.empty(k)
            for a in range(1, k + 1):
                future = sum(
                    p * v_next[s2]
                    for s2, p in zip(*_law_pairs(model.transition_law(s, a)))
                )
                vals[a - 1] = model.reward_law(s, a).mean() + a_disc * future
            best = float(vals.max())
            q[h][s] = vals
            v[h][s] = best
            gap[h][s] = best - vals
    return ValueTables(horizon=H, num_actions=k, q=q, v=v, gap=gap)


def _law_pairs(dist: FiniteDist):
    support = [(s2, p) for s2, p in zip(dist.values, dist.probs) if p > 0.0]
    return [s2 for s2, _ in support], [p for _, p in support]


def export_tables_csv(tables: ValueTables, fh) -> None:
    """CSV rows h,state,action,q,v,gap with canonical state strings."""
    fh.write("h,state,action,q,v,gap\n")
    for h in range(1, tables.horizon + 1):
        for s in tables.q[h]:
            for a in range(1, tables.num_actions + 1):
                fh.write(
                    f"{h},{state_str(s)},{a},{tables.q_of(h, s, a):.17g},"
                    f"{tables.v_of(h, s):.17g},{tables.gap_of(h, s, a):.17g}\n"
                )


@dataclass
class RealizabilityReport:
    max_residual: float
    at: tuple  # (h, s, a) maximizing the residual
    tol: float

    @property
    def ok(self) -> bool:
        return self.max_residual <= self.tol


def check_realizability(
    instance: HardInstance,
    tables: ValueTables,
    tol: float = 1e-9,
    theta: np.ndarray | None = None,
) -> RealizabilityReport:
    """max |q*_h(s,a) - <phi_h(s,a), theta*>| over accessible (h, s, a)."""
    th = instance.theta_star if theta is None else np.asarray(theta, dtype=float)
    worst, arg = -1.0, None
    acc = accessible_states(instance)
    for h in range(1, instance.horizon + 1):
        for s in acc[h]:
            for a in range(1, instance.num_actions + 1):
                resid = abs(tables.q_of(h, s, a) - float(instance.phi(h, s, a) @ th))
                if resid > worst:
                    worst, arg = resid, (h, s, a)
    return RealizabilityReport(max_residual=worst, at=arg, tol=tol)


def policy_value(
    model: MdpModel,
    policy: StagePolicy,
    alpha: float | None = None,
    cap: int = DEFAULT_STATE_CAP,
) -> dict:
    """Exact v^pi over the declared decomposition by backward induction under pi."""
    _check_cap(model, cap)
    a_disc = model.alpha if alpha is None else alpha
    H, k = model.horizon, model.num_actions
    v = {H + 1: {s: 0.0 for s in model.states_at(H + 1)}}
    for h in range(H, 0, -1):
        v[h] = {}
        v_next = v[h + 1]
        for s in model.states_at(h):
            probs = policy.prob(h, s)
            total = 0.0
            for a in range(1, k + 1):
                pa = float(probs[a - 1])
                if pa == 0.0:
                    continue
                future = sum(
                    p * v_next[s2]
                    for s2, p in zip(*_law_pairs(model.transition_law(s, a)))
                )
                total += pa * (model.reward_law(s, a).mean() + a_disc * future)
            v[h][s] = total
    return v


def suboptimality(
    model: MdpModel,
    policy: StagePolicy,
    tables: ValueTables | None = None,
    cap: int = DEFAULT_STATE_CAP,
) -> float:
    """delta^pi = max over accessible (h, s) of v*_h(s) - v^pi_h(s)."""
    tables = tables if tables is not None else solve_backward(model, cap=cap)
    vp = policy_value(model, policy, cap=cap)
    acc = accessible_states(model)
    return max(
        tables.v_of(h, s) - vp[h][s]
        for h in range(1, model.horizon + 1)
        for s in acc[h]
    )


@dataclass
class SoundnessMass:
    worst: float
    at: tuple | None


def check_transition_soundness(
    model: MdpModel,
    policy: StagePolicy,
    delta: float,
    tables: ValueTables | None = None,
    indicator_slack: float = 1e-12,
) -> SoundnessMass:
    """max over accessible (h, s) of the pi-mass on actions with gap >= delta."""
    tables = tables if tables is not None else solve_backward(model)
    worst, arg = -1.0, None
    acc = accessible_states(model)
    for h in range(1, model.horizon + 1):
        for s in acc[h]:
            probs = policy.prob(h, s)
            mass = float(probs[tables.gap[h][s] >= delta - indicator_slack].sum())
            if mass > worst:
                worst, arg = mass, (h, s)
    return SoundnessMass(worst=worst, at=arg)


@dataclass
class Prop1Report:
    delta_pi: float
    forward_ok: bool  # (delta, zeta)-transition-sound => H delta + H(H+1) zeta/2 sound
    converse_ok: bool  # delta-sound => (delta/zeta, zeta)-transition-sound

    @property
    def ok(self) -> bool:
        return self.forward_ok and self.converse_ok


def prop1_check(
    model: MdpModel,
    policy: StagePolicy,
    delta: float,
    zeta: float,
    tables: ValueTables | None = None,
    tol: float = 1e-9,
) -> Prop1Report:
    """Verify both soundness-conversion directions on this (model, policy)."""
    if not 0.0 < zeta <= 1.0:
        raise ValueError(f"zeta={zeta} outside (0, 1]")
    if delta <= 0.0:
        raise ValueError("delta must be positive (the converse threshold is delta/zeta)")
    tables = tables if tables is not None else solve_backward(model)
    H = model.horizon
    dpi = suboptimality(model, policy, tables=tables)
    forward_ok = True
    if check_transition_soundness(model, policy, delta, tables=tables).worst <= zeta + tol:
        forward_ok = dpi <= H * delta + H * (H + 1) * zeta / 2.0 + tol
    converse_ok = True
    if dpi <= delta + tol:
        converse_ok = (
            check_transition_soundness(model, policy, delta / zeta, tables=tables).worst
            <= zeta + tol
        )
    return Prop1Report(delta_pi=dpi, forward_ok=forward_ok, converse_ok=converse_ok)


@dataclass
class Lemma8Report:
    lhs: float  # max_h ||v*_h - v^pi_h||_inf for the f-greedy policy
    rhs: float  # 2 sum_h ||q*_h - f_h||_inf

    @property
    def ok(self) -> bool:
        return self.lhs <= self.rhs + 1e-9

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


def greedy_from_values(model: MdpModel, f) -> StagePolicy:
    """Deterministic policy greedy w.r.t. f(h, s, a); ties go to the lowest index."""

    def choose(h, s):
        vals = [f(h, s, a) for a in range(1, model.num_actions + 1)]
        return int(np.argmax(vals)) + 1

    return StagePolicy.deterministic(model.num_actions, choose)


def greedy_from_tables(model: MdpModel, tables: ValueTables) -> StagePolicy:
    return greedy_from_values(model, lambda h, s, a: tables.q_of(h, s, a))


def lemma8_check(model: MdpModel, f, tables: ValueTables | None = None) -> Lemma8Report:
    """Greedy-policy error bound for arbitrary stage-indexed f over the model."""
    tables = tables if tables is not None else solve_backward(model)
    policy = greedy_from_values(model, f)
    vp = policy_value(model, policy)
    lhs = max(
        abs(tables.v_of(h, s) - vp[h][s])
        for h in range(1, model.horizon + 1)
        for s in model.states_at(h)
    )
    rhs = 2.0 * sum(
        max(
            abs(tables.q_of(h, s, a) - f(h, s, a))
            for s in model.states_at(h)
            for a in range(1, model.num_actions + 1)
        )
        for h in range(1, model.horizon + 1)
    )
    return Lemma8Report(lhs=lhs, rhs=rhs)


@dataclass
class LikelihoodFloorReport:
    min_ratio: float
    n: int
    floor_single: float  # 1 - epsilon (effective epsilon in discounted mode)
    at: tuple | None

    @property
    def nth_power(self) -> float:
        return self.min_ratio**self.n

    @property
    def floor(self) -> float:
        return self.floor_single**self.n

    @property
    def ok(self) -> bool:
        return self.min_ratio >= self.floor_single - 1e-12


def likelihood_floor_check(instance: HardInstance, n: int) -> LikelihoodFloorReport:
    """min over (s, a != a*, r in test-MDP support) of P_{M_a*}(r)/P_{M_0}(r), to the n-th power.

    The test MDP pays the point mass at 0 everywhere, so the ratio is
    P_{M_a*}(R = 0 | s, a), which is 1 off the leaves and 1 - mu on them.
    """
    if instance.a_star is None:
        raise ValueError("likelihood floor compares M_{a*} against the test MDP")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    p = instance.params
    eps_eff = p.epsilon * (p.alpha ** (-(p.H - 1)) if p.discounted else 1.0)
    worst, arg = 2.0, None
    for h in range(1, p.H + 1):
        for s in instance.states_at(h):
            if not isinstance(s, TreeState):
                continue
            for a in range(1, p.k + 1):
                if a == instance.a_star:
                    continue
                ratio = instance.reward_law(s, a).prob_of(0.0)
                if ratio < worst:
                    worst, arg = ratio, (h, s, a)
    return LikelihoodFloorReport(min_ratio=worst, n=n, floor_single=1.0 - eps_eff, at=arg)


@dataclass
class SymmetryReport:
    ok: bool
    permutations_checked: int
    counterexample: tuple | None


def _relabel(s, rho: dict):
    if isinstance(s, TreeState):
        return TreeState(tuple(rho[a] for a in s.actions))
    return s  # game-over states are fixed points


def m0_symmetry_check(instance: HardInstance, max_permutations: int | None = None) -> SymmetryReport:
    """Transition/reward commutation with action relabelings, by enumeration."""
    if instance.a_star is not None:
        raise ValueError("symmetry holds for the test MDP only")
    k = instance.num_actions
    checked = 0
    for perm in itertools.permutations(range(1, k + 1)):
        if max_permutations is not None and checked >= max_permutations:
            break
        rho = {a: perm[a - 1] for a in range(1, k + 1)}
        for h in range(1, instance.horizon + 1):
            for s in instance.states_at(h):
                rs = _relabel(s, rho)
                for a in range(1, k + 1):
                    t = instance.transition(s, a)
                    if _relabel(t, rho) != instance.transition(rs, rho[a]):
                        return SymmetryReport(False, checked, (perm, h, s, a, "transition"))
                    if not instance.reward_law(s, a).same_as(
                        instance.reward_law(rs, rho[a])
                    ):
                        return SymmetryReport(False, checked, (perm, h, s, a, "reward"))
        checked += 1
    return SymmetryReport(True, checked, None)


REWARD_GRID = tuple(round(0.1 * i, 1) for i in range(11))


def random_mdp(
    rng: np.random.Generator, horizon: int, num_actions: int, max_states: int
) -> TabularModel:
    """Random stage-structured MDP: deterministic uniform transitions, grid rewards."""
    sizes = [1] + [int(rng.integers(1, max_states + 1)) for _ in range(horizon)]
    stages = [[(h + 1, i) for i in range(n)] for h, n in enumerate(sizes)]
    rewards, transitions = {}, {}
    for h in range(1, horizon + 1):
        for s in stages[h - 1]:
            for a in range(1, num_actions + 1):
                rewards[(h, s, a)] = FiniteDist.point(
                    float(REWARD_GRID[rng.integers(0, len(REWARD_GRID))])
                )
                nxt = stages[h][rng.integers(0, len(stages[h]))]
                transitions[(h, s, a)] = FiniteDist.point(nxt)
    return TabularModel(horizon, num_actions, stages, rewards, transitions)


def random_policy(rng: np.random.Generator, model: MdpModel) -> StagePolicy:
    """Dirichlet-random stochastic policy over the declared decomposition."""
    table = {}
    for h in range(1, model.horizon + 1):
        for s in model.states_at(h):
            table[(h, s)] = rng.dirichlet(np.ones(model.num_actions))
    return StagePolicy.from_table(model.num_actions, table)
