"""Core MDP abstractions: states, models, policies, and the query protocol.

States of the constructed families are canonical values: a tree state is a
duplicate-free tuple of action indices, a game-over state carries its level.
Models expose finite reward/transition laws per (state, action); a simulator
query draws from both and bumps a monotone query meter.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from .distributions import FiniteDist

POLICY_TOL = 1e-12


class ProtocolError(RuntimeError):
    """Malformed planner query: bad action index or state outside the model."""


class EvaluationError(RuntimeError):
    """Policy undefined or invalid at a state that must be evaluated."""


class SizeCapError(RuntimeError):
    """State enumeration exceeded the configured cap."""

    def __init__(self, message: str, stage: int):
        super().__init__(message)
        self.stage = stage


@dataclass(frozen=True)
class TreeState:
    """Node of the k-ary construction tree: the action sequence leading to it."""

    actions: tuple = ()

    def __post_init__(self):
        if len(set(self.actions)) != len(self.actions):
            raise ValueError(f"tree state has a repeated action: {self.actions}")

    @property
    def level(self) -> int:
        return len(self.actions) + 1

    def child(self, a: int) -> "TreeState":
        return TreeState(self.actions + (a,))

    def __contains__(self, a: int) -> bool:
        return a in self.actions

    def __str__(self) -> str:
        return ".".join(str(a) for a in self.actions) if self.actions else "root"


@dataclass(frozen=True)
class GameOverState:
    """Absorbing-chain state f_h, entered on playing a* or a repeated action."""

    level: int

    def __post_init__(self):
        if self.level < 2:
            raise ValueError(f"game-over level must be >= 2, got {self.level}")

    def __str__(self) -> str:
        return f"f{self.level}"


ROOT = TreeState()


def state_level(s) -> int:
    return s.level


def state_str(s) -> str:
    return str(s)


@dataclass
class QueryMeter:
    """Monotone query counter, incremented exactly once per simulator query."""

    count: int = 0

    def add(self, n: int = 1) -> None:
        if n < 0:
            raise ValueError("meter increments must be nonnegative")
        self.count += n


class MdpModel(ABC):
    """Stage-structured MDP with enumerable per-level state sets.

    ``states_at(h)`` is the declared level decomposition S_h for h in
    1..H+1 (the domain of the DP oracle and of planner designs); it may be a
    superset of the states accessible from the initial state.
    """

    alpha: float = 1.0  # 1.0 = fixed horizon; in (0, 1) = discounted

    @property
    @abstractmethod
    def horizon(self) -> int: ...

    @property
    @abstractmethod
    def num_actions(self) -> int: ...

    @property
    @abstractmethod
    def initial_state(self): ...

    @abstractmethod
    def states_at(self, h: int) -> list: ...

    def num_states_at(self, h: int) -> int:
        return len(self.states_at(h))

    @abstractmethod
    def reward_law(self, s, a: int) -> FiniteDist: ...

    @abstractmethod
    def transition_law(self, s, a: int) -> FiniteDist: ...

    def validate_query(self, s, a: int) -> None:
        if not isinstance(a, (int, np.integer)) or not 1 <= a <= self.num_actions:
            raise ProtocolError(f"action {a!r} outside 1..{self.num_actions}")


def query(model: MdpModel, meter: QueryMeter, rng: np.random.Generator, s, a: int):
    """One generative-model query: returns (reward, next state), metered."""
    model.validate_query(s, a)
    r = float(model.reward_law(s, a).sample(rng))
    nxt = model.transition_law(s, a).sample(rng)
    meter.add(1)
    return r, nxt


def sample_batch(model: MdpModel, meter: QueryMeter, rng: np.random.Generator, s, a: int, n: int):
    """n queries at one (s, a), aggregated: (mean reward, [(next state, count)]).

    Distribution-faithful to n independent ``query`` calls (reward and next
    state are drawn from the model's separate laws); the meter advances by n.
    """
    model.validate_query(s, a)
    if n < 1:
        raise ProtocolError(f"batch size must be >= 1, got {n}")
    r_mean = model.reward_law(s, a).sample_mean(rng, n)
    nexts = model.transition_law(s, a).sample_counts(rng, n)
    meter.add(n)
    return r_mean, nexts


class GenerativeSimulator:
    """Planner-facing handle bundling a model, a meter, and the query ops."""

    def __init__(self, model: MdpModel, meter: QueryMeter):
        self.model = model
        self.meter = meter

    @property
    def horizon(self) -> int:
        return self.model.horizon

    @property
    def num_actions(self) -> int:
        return self.model.num_actions

    @property
    def alpha(self) -> float:
        return self.model.alpha

    def states_at(self, h: int) -> list:
        return self.model.states_at(h)

    def query(self, rng, s, a):
        return query(self.model, self.meter, rng, s, a)

    def sample_batch(self, rng, s, a, n):
        return sample_batch(self.model, self.meter, rng, s, a, n)


class StagePolicy:
    """Memoryless stage-indexed policy: pi_h(.|s) as a length-k probability vector."""

    def __init__(self, num_actions: int, prob_fn):
        self.num_actions = num_actions
        self._prob_fn = prob_fn

    def prob(self, h: int, s) -> np.ndarray:
        try:
            p = self._prob_fn(h, s)
        except KeyError as e:
            raise EvaluationError(f"policy undefined at stage {h}, state {s}") from e
        p = np.asarray(p, dtype=float)
        if p.shape != (self.num_actions,):
            raise EvaluationError(f"policy at ({h}, {s}) has shape {p.shape}")
        if (p < -POLICY_TOL).any() or abs(float(p.sum()) - 1.0) > POLICY_TOL:
            raise EvaluationError(f"policy at ({h}, {s}) is not a probability vector: {p}")
        return p

    def action(self, h: int, s, rng: np.random.Generator) -> int:
        return int(rng.choice(self.num_actions, p=self.prob(h, s))) + 1

    @classmethod
    def from_table(cls, num_actions: int, table: dict) -> "StagePolicy":
        return cls(num_actions, lambda h, s: table[(h, s)])

    @classmethod
    def deterministic(cls, num_actions: int, choose) -> "StagePolicy":
        def fn(h, s):
            a = choose(h, s)
            p = np.zeros(num_actions)
            p[a - 1] = 1.0
            return p

        return cls(num_actions, fn)

    @classmethod
    def uniform(cls, num_actions: int) -> "StagePolicy":
        p = np.full(num_actions, 1.0 / num_actions)
        return cls(num_actions, lambda h, s: p)


@dataclass
class Trajectory:
    states: list
    actions: list
    rewards: list

    def total_reward(self, alpha: float = 1.0) -> float:
        return float(sum(r * alpha**t for t, r in enumerate(self.rewards)))


def run_policy(model: MdpModel, policy: StagePolicy, rng: np.random.Generator) -> Trajectory:
    """Roll out one episode of exactly H transitions from the initial state."""
    s = model.initial_state
    states, actions, rewards = [s], [], []
    for h in range(1, model.horizon + 1):
        a = policy.action(h, s, rng)
        r = float(model.reward_law(s, a).sample(rng))
        s = model.transition_law(s, a).sample(rng)
        actions.append(a)
        rewards.append(r)
        states.append(s)
    return Trajectory(states, actions, rewards)


def reachable_states(model: MdpModel, h: int) -> list:
    """The declared level-h state set S_h (shared across a family of models)."""
    if not 1 <= h <= model.horizon + 1:
        raise ValueError(f"stage {h} outside 1..{model.horizon + 1}")
    return list(model.states_at(h))


def accessible_states(model: MdpModel) -> dict:
    """States actually accessible from the initial state, per stage (BFS).

    A subset of the declared decomposition; realizability and policy
    soundness are defined over these sets.
    """
    out = {1: [model.initial_state]}
    for h in range(1, model.horizon + 1):
        nxt, seen = [], set()
        for s in out[h]:
            for a in range(1, model.num_actions + 1):
                for t in model.transition_law(s, a).support():
                    if t not in seen:
                        seen.add(t)
                        nxt.append(t)
        out[h + 1] = nxt
    return out


class TabularModel(MdpModel):
    """Explicit stage-structured model, used for tests and random instances."""

    def __init__(self, horizon, num_actions, stage_states, rewards, transitions, alpha=1.0):
        self._horizon = horizon
        self._num_actions = num_actions
        self._stages = [list(states) for states in stage_states]
        if len(self._stages) != horizon + 1:
            raise ValueError("stage_states must cover stages 1..H+1")
        self._rewards = rewards
        self._transitions = transitions
        self.alpha = alpha
        self._members = [set(states) for states in self._stages]

    @property
    def horizon(self) -> int:
        return self._horizon

    @property
    def num_actions(self) -> int:
        return self._num_actions

    @property
    def initial_state(self):
        return self._stages[0][0]

    def states_at(self, h: int) -> list:
        if not 1 <= h <= self._horizon + 1:
            raise ValueError(f"stage {h} outside 1..{self._horizon + 1}")
        return self._stages[h - 1]

    def _stage_of(self, s) -> int:
        for h, members in enumerate(self._members, start=1):
            if s in members:
                return h
        raise ProtocolError(f"state {s!r} outside the model")

    def validate_query(self, s, a: int) -> None:
        super().validate_query(s, a)
        if self._stage_of(s) > self._horizon:
            raise ProtocolError(f"state {s!r} is terminal; queries need level <= H")

    def reward_law(self, s, a: int) -> FiniteDist:
        return self._rewards[(self._stage_of(s), s, a)]

    def transition_law(self, s, a: int) -> FiniteDist:
        return self._transitions[(self._stage_of(s), s, a)]
