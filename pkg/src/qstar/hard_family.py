"""The hard q*-realizable MDP family and its action-symmetric test MDP.

State space: duplicate-free action sequences (the tree) plus a game-over
chain f_2, ..., f_{H+1}. With x = (1-gamma)/(2gamma) >= 3/2:

    c_h        = 1/2 + (1+gamma)/2 * sum_{l=1}^{H-h} x^l          (c_H = 1/2)
    phi_h(s,a) = 0 if s game-over or a in s, else (c_h, x^{H-h+1} sigma_{s,a} v_a)
    sigma      = 1 at the root; sigma_{sa,a'} = sigma_{s,a} x <v_a,v_a'> + (1+gamma)/2
    theta*     = epsilon (1, v_{a*})

Playing a* (or repeating an action) drops into the game-over chain; a* pays a
deterministic reward <phi, theta*>, other actions pay nothing until the leaf
level, where they pay a Bernoulli with mean epsilon-small. In the discounted
variant features and leaf means are scaled by alpha^{-h+1} / alpha^{-H+1},
which cancels the discount in the Bellman equations.

The test MDP (no special action) keeps the transitions minus the a* clause
and pays zero reward everywhere; it is invariant to action relabelings.
"""

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .distributions import FiniteDist
from .mdp import GameOverState, MdpModel, ProtocolError, ROOT, TreeState
from .vectors import VectorFamily, verify_family

_BOUND_SLACK = 1e-9


@dataclass(frozen=True)
class HardParams:
    """Construction parameters; alpha = 1.0 means fixed horizon."""

    d: int
    H: int
    gamma: float
    k: int
    epsilon: float
    eta: float | None = None
    alpha: float = 1.0

    def __post_init__(self):
        if self.d < 2:
            raise ValueError(f"d must be >= 2, got {self.d}")
        if self.H < 1:
            raise ValueError(f"H must be >= 1, got {self.H}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not 0.0 < self.gamma <= 0.25 * (1.0 + _BOUND_SLACK):
            raise ValueError(f"gamma={self.gamma} violates 0 < gamma <= 1/4")
        if self.alpha != 1.0 and not (2.0 / 3.0 - _BOUND_SLACK <= self.alpha < 1.0):
            raise ValueError(f"discount alpha={self.alpha} outside [2/3, 1)")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        cap = epsilon_formula(self.gamma, self.H)
        if self.epsilon > cap * (1.0 + _BOUND_SLACK):
            raise ValueError(
                f"epsilon={self.epsilon} exceeds the formula value (1/3) x^-H = {cap}; "
                "only downward overrides keep the construction bounded"
            )

    @property
    def x(self) -> float:
        """Shorthand (1-gamma)/(2gamma), >= 3/2 whenever gamma <= 1/4."""
        return (1.0 - self.gamma) / (2.0 * self.gamma)

    @property
    def discounted(self) -> bool:
        return self.alpha != 1.0

    @property
    def mode(self) -> str:
        return "discounted" if self.discounted else "fixed_horizon"


def eta_bound(d: int) -> float:
    """Upper end of the admissible eta range, 1/2 - 2/log2(d-1)."""
    return 0.5 - 2.0 / math.log2(d - 1)


def epsilon_formula(gamma: float, H: int) -> float:
    x = (1.0 - gamma) / (2.0 * gamma)
    return x ** (-H) / 3.0


def derive_params(d: int, H: int, eta: float, alpha: float = 1.0) -> HardParams:
    """Paper-formula parameters: gamma = (d-1)^(eta-1/2), k = floor(e^{(d-1)^{2eta}/8})."""
    if d < 18:
        raise ValueError(f"paper-parameter mode requires d >= 18, got {d}")
    hi = eta_bound(d)
    if not 0.0 < eta <= hi + _BOUND_SLACK:
        raise ValueError(f"eta={eta} violates 0 < eta <= 1/2 - 2/log2(d-1) = {hi:.6g}")
    gamma = (d - 1.0) ** (-0.5 + eta)
    k = math.floor(math.exp((d - 1.0) ** (2.0 * eta) / 8.0))
    return HardParams(
        d=d, H=H, gamma=min(gamma, 0.25), k=k,
        epsilon=epsilon_formula(min(gamma, 0.25), H), eta=eta, alpha=alpha,
    )


def desk_params(
    d: int, H: int, gamma: float, k: int, epsilon: float | None = None, alpha: float = 1.0
) -> HardParams:
    """Desk-scale parameters with gamma and k decoupled from d (eta unset).

    Every proved property only uses unit norms, |<v_a,v_b>| <= gamma <= 1/4,
    and epsilon <= (1/3) x^-H, so any verified vector family may be plugged in.
    """
    eps = epsilon_formula(gamma, H) if epsilon is None else epsilon
    return HardParams(d=d, H=H, gamma=gamma, k=k, epsilon=eps, alpha=alpha)


def override_k(params: HardParams, k: int, family: VectorFamily) -> HardParams:
    """Replace k after checking the supplied family meets the construction's needs."""
    if family.k != k:
        raise ValueError(f"family has {family.k} vectors, expected k={k}")
    if family.d_prime != params.d - 1:
        raise ValueError(f"family dimension {family.d_prime} != d-1 = {params.d - 1}")
    rep = verify_family(family)
    if rep.max_overlap > params.gamma + _BOUND_SLACK:
        raise ValueError(
            f"family max overlap {rep.max_overlap:.6g} exceeds gamma = {params.gamma:.6g}"
        )
    if rep.max_norm_dev > 1e-12:
        raise ValueError(f"family norms deviate from 1 by {rep.max_norm_dev:.3g}")
    return replace(params, k=k)


def c_of(h: int, params: HardParams) -> float:
    """Bias constant c_h; the empty sum at h = H gives exactly 1/2."""
    if not 1 <= h <= params.H:
        raise ValueError(f"stage {h} outside 1..{params.H}")
    x = params.x
    tail = sum(x**l for l in range(1, params.H - h + 1))
    return 0.5 + 0.5 * (1.0 + params.gamma) * tail


def n_choice(params: HardParams) -> int:
    """floor(min(k/4, (1/epsilon - 1)/3.5)): the adversary's intended query budget."""
    return math.floor(min(params.k / 4.0, (1.0 / params.epsilon - 1.0) / 3.5))


class HardInstance(MdpModel):
    """One member M_{a*,eps} of the family, or the test MDP when a_star is None.

    All members share the state space, feature map, and vector family; only
    the transition clause for a* and the reward law differ.
    """

    def __init__(
        self,
        params: HardParams,
        family: VectorFamily,
        a_star: int | None,
        sigma_corruption: float = 1.0,
    ):
        if family.k != params.k or family.d_prime != params.d - 1:
            raise ValueError(
                f"family shape ({family.k}, {family.d_prime}) does not match "
                f"(k, d-1) = ({params.k}, {params.d - 1})"
            )
        rep = verify_family(family)
        if rep.max_overlap > params.gamma + _BOUND_SLACK or rep.max_norm_dev > 1e-12:
            raise ValueError(
                f"vector family violates the construction's needs: max overlap "
                f"{rep.max_overlap:.6g} (gamma {params.gamma:.6g}), norm deviation "
                f"{rep.max_norm_dev:.3g}"
            )
        if a_star is not None and not 1 <= a_star <= params.k:
            raise ValueError(f"a_star={a_star} outside 1..{params.k}")
        self.params = params
        self.family = family
        self.a_star = a_star
        self.alpha = params.alpha
        # fault-injection knob for verification tests: scales every non-root sigma
        self._sigma_corruption = sigma_corruption
        self._sigma_memo: dict = {}
        self._c = np.array([c_of(h, params) for h in range(1, params.H + 1)])
        if a_star is None:
            self.theta_star = np.zeros(params.d)
        else:
            self.theta_star = params.epsilon * np.concatenate(
                ([1.0], family.vectors[a_star - 1])
            )

    # -- family plumbing ---------------------------------------------------

    @property
    def is_m0(self) -> bool:
        return self.a_star is None

    def sibling(self, a_star: int | None) -> "HardInstance":
        """Same parameters and vectors, different special action (None = test MDP)."""
        return HardInstance(self.params, self.family, a_star, self._sigma_corruption)

    # -- MdpModel interface ------------------------------------------------

    @property
    def horizon(self) -> int:
        return self.params.H

    @property
    def num_actions(self) -> int:
        return self.params.k

    @property
    def initial_state(self):
        return ROOT

    def states_at(self, h: int) -> list:
        H, k = self.params.H, self.params.k
        if not 1 <= h <= H + 1:
            raise ValueError(f"stage {h} outside 1..{H + 1}")
        if h == 1:
            return [ROOT]
        if h == H + 1:
            return [GameOverState(H + 1)]
        trees = [TreeState(p) for p in itertools.permutations(range(1, k + 1), h - 1)]
        return [GameOverState(h)] + trees

    def num_states_at(self, h: int) -> int:
        H, k = self.params.H, self.params.k
        if h == 1 or h == H + 1:
            return 1
        return 1 + math.perm(k, h - 1)

    def validate_query(self, s, a: int) -> None:
        super().validate_query(s, a)
        H, k = self.params.H, self.params.k
        if isinstance(s, TreeState):
            ok = len(s.actions) <= H - 1 and all(1 <= b <= k for b in s.actions)
        elif isinstance(s, GameOverState):
            ok = 2 <= s.level <= H
        else:
            ok = False
        if not ok:
            raise ProtocolError(f"state {s!r} is not a queryable level<=H state of this model")

    # -- construction ingredients -------------------------------------------

    def sigma(self, s: TreeState, a: int) -> float:
        """Feature scaling sigma_{s,a}; defined for tree states with a not in s."""
        if not isinstance(s, TreeState):
            raise ValueError(f"sigma is defined on tree states, got {s!r}")
        if a in s:
            raise ValueError(f"sigma({s}, {a}) violates a not in s")
        if not s.actions:
            return 1.0
        key = (s.actions, a)
        val = self._sigma_memo.get(key)
        if val is None:
            prefix, last = TreeState(s.actions[:-1]), s.actions[-1]
            val = (
                self.sigma(prefix, last) * self.params.x * self.family.dot(last, a)
                + 0.5 * (1.0 + self.params.gamma)
            ) * self._sigma_corruption
            self._sigma_memo[key] = val
        return val

    def c(self, h: int) -> float:
        return float(self._c[h - 1])

    def phi(self, h: int, s, a: int) -> np.ndarray:
        """Feature vector phi_h(s, a); discounted mode scales by alpha^{-h+1}."""
        p = self.params
        if h < 1:
            raise ValueError(f"stage {h} must be >= 1")
        if h > p.H:
            if p.discounted:
                return np.zeros(p.d)
            raise ValueError(f"stage {h} outside 1..{p.H}")
        if isinstance(s, GameOverState) or a in s:
            return np.zeros(p.d)
        out = np.empty(p.d)
        out[0] = self._c[h - 1]
        out[1:] = p.x ** (p.H - h + 1) * self.sigma(s, a) * self.family.vectors[a - 1]
        if p.discounted:
            out *= p.alpha ** (-(h - 1))
        return out

    def feature_map(self, h: int, s, a: int) -> np.ndarray:
        return self.phi(h, s, a)

    def mu(self, s: TreeState, a: int) -> float:
        """Leaf Bernoulli mean for a != a*, a not in s; matches <phi_H(s,a), theta*>."""
        if self.a_star is None:
            raise ValueError("the test MDP has no Bernoulli rewards")
        p = self.params
        base = p.epsilon * self.sigma(s, a) * p.x * self.family.dot(a, self.a_star) + p.epsilon / 2.0
        if p.discounted:
            base *= p.alpha ** (-(p.H - 1))
        return base

    def transition(self, s, a: int):
        """Deterministic next state; the a* clause is absent in the test MDP."""
        H = self.params.H
        lvl = s.level
        if lvl >= H:
            return GameOverState(H + 1)
        if isinstance(s, GameOverState):
            return GameOverState(lvl + 1)
        if (self.a_star is not None and a == self.a_star) or a in s:
            return GameOverState(lvl + 1)
        return s.child(a)

    def transition_law(self, s, a: int) -> FiniteDist:
        return FiniteDist.point(self.transition(s, a))

    def reward_law(self, s, a: int) -> FiniteDist:
        if self.a_star is None:
            return FiniteDist.point(0.0)  # test MDP: rewards are always zero
        if isinstance(s, TreeState):
            if a == self.a_star:
                return FiniteDist.point(float(self.phi(s.level, s, a) @ self.theta_star))
            if s.level == self.params.H and a not in s:
                return FiniteDist.bernoulli(self.mu(s, a))
        return FiniteDist.point(0.0)


def describe(instance: HardInstance, seed=None, vector_file=None) -> dict:
    """Instance descriptor in the plain-text config vocabulary."""
    p = instance.params
    out = {
        "d": p.d,
        "H": p.H,
        "eta": p.eta,
        "gamma": p.gamma,
        "k": p.k,
        "epsilon": p.epsilon,
        "mode": "discounted" if p.discounted else "fixed",
        "alpha": p.alpha,
        "a_star": 0 if instance.a_star is None else instance.a_star,
        "vector_file": vector_file,
        "seed": seed,
    }
    return {key: val for key, val in out.items() if val is not None}
