"""Least-squares value iteration with per-stage near-G-optimal designs.

Stage h regresses sampled Bellman backups (empirical averages of
R + alpha * max_a' f_{h+1}(S', a') over n draws per design support point)
onto the stage-h features, then clips predictions to [-H, H]. Designs depend
only on the feature sets, so they are computed up front; the realized maximal
support size m feeds the concentration width beta and the sample-size rule.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .design import Design, DesignError, g_optimal_design, least_squares
from .mdp import StagePolicy

CLIP_WARN = "degenerate log argument clamped at 0"


class LsviError(RuntimeError):
    """LSVI aborted (design failure carries the offending stage)."""


@dataclass
class LsviConfig:
    """Sampling and design knobs; n = None derives it from delta_target."""

    n: int | None = None
    zeta: float = 0.1
    delta_target: float | None = None
    design_tolerance: float = 0.05
    design_max_iters: int = 10_000

    def __post_init__(self):
        if self.n is not None and self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not 0.0 < self.zeta <= 1.0:
            raise ValueError(f"zeta={self.zeta} outside (0, 1]")
        if self.n is None and self.delta_target is None:
            raise ValueError("either n or delta_target must be set")
        if self.delta_target is not None and self.delta_target <= 0.0:
            raise ValueError("delta_target must be positive")


def sample_size(H: int, d: int, m: int, delta: float) -> int:
    """ceil(32 H^4 ln(4 H m / delta) ((2 + sqrt(2d))^H - 1)^2 / delta^2)."""
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    log_term = math.log(4.0 * H * m / delta)
    if log_term < 0.0:
        warnings.warn(CLIP_WARN, RuntimeWarning, stacklevel=2)
        log_term = 0.0
    n = math.ceil(32.0 * H**4 * log_term * ((2.0 + math.sqrt(2.0 * d)) ** H - 1.0) ** 2 / delta**2)
    return max(n, 1)


def beta_of(n: int, H: int, m: int, zeta: float) -> float:
    """Hoeffding + union-bound width H sqrt((2/n) ln(2 H m / zeta))."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if zeta <= 0.0:
        raise ValueError(f"zeta={zeta} must be positive")
    log_term = math.log(2.0 * H * m / zeta)
    if log_term < 0.0:
        warnings.warn(CLIP_WARN, RuntimeWarning, stacklevel=2)
        log_term = 0.0
    return H * math.sqrt(2.0 / n * log_term)


def error_envelope(h: int, H: int, d: int, beta: float) -> float:
    """Stage-h sup-norm error bound beta ((2 + sqrt(2d))^{H-h+1} - 1)."""
    return beta * ((2.0 + math.sqrt(2.0 * d)) ** (H - h + 1) - 1.0)


@dataclass
class StageEstimate:
    """Linear stage estimate f_h(s, a) = clip_H(<phi_h(s, a), theta_hat>)."""

    h: int
    theta_hat: np.ndarray
    clip: float

    def value(self, phi_vec: np.ndarray) -> float:
        raw = float(np.dot(phi_vec, self.theta_hat))
        return max(-self.clip, min(self.clip, raw))


@dataclass
class StageRecord:
    """Per-stage run artifact: the design summary plus the sampled responses."""

    h: int
    support_size: int
    design_rank: int
    max_leverage: float
    n: int
    keys: list
    mu_hat: np.ndarray


@dataclass
class LsviResult:
    estimates: dict  # h -> StageEstimate
    records: list = field(default_factory=list)
    n: int = 0
    m: int = 0
    beta: float = 0.0
    zeta: float = 0.0
    d: int = 0
    queries: int = 0


def _max_f(estimate: StageEstimate | None, feature_map, h: int, s, num_actions: int) -> float:
    if estimate is None:
        return 0.0
    return max(estimate.value(feature_map(h, s, a)) for a in range(1, num_actions + 1))


def lsvi_run(sim, feature_map, config: LsviConfig, rng: np.random.Generator) -> LsviResult:
    """Run the planner against a generative simulator; returns stage estimates.

    ``sim`` provides horizon, num_actions, alpha, states_at(h), and
    sample_batch(rng, s, a, n); ``feature_map(h, s, a)`` evaluates the known
    features. Total queries are n * sum_h |support(rho_h)|, all metered.
    """
    H, k, alpha = sim.horizon, sim.num_actions, sim.alpha
    designs: dict[int, Design] = {}
    d = None
    for h in range(1, H + 1):
        keys = [(s, a) for s in sim.states_at(h) for a in range(1, k + 1)]
        X = np.array([feature_map(h, s, a) for s, a in keys])
        d = X.shape[1]
        try:
            designs[h] = g_optimal_design(
                X, keys=keys,
                tolerance=config.design_tolerance,
                max_iters=config.design_max_iters,
            )
        except DesignError as e:
            raise LsviError(f"design failed at stage {h}: {e}") from e

    m = max(designs[h].support_size for h in designs)
    n = config.n if config.n is not None else sample_size(H, d, m, config.delta_target)
    beta = beta_of(n, H, m, config.zeta)

    start = sim.meter.count
    estimates: dict[int, StageEstimate] = {}
    records = []
    for h in range(H, 0, -1):
        des = designs[h]
        above = estimates.get(h + 1)
        mu_hat = np.empty(des.support_size)
        for j, (s, a) in enumerate(des.keys):
            r_mean, next_counts = sim.sample_batch(rng, s, a, n)
            backup = sum(
                cnt * _max_f(above, feature_map, h + 1, s2, k)
                for s2, cnt in next_counts
            )
            mu_hat[j] = r_mean + alpha * backup / n
        theta = least_squares(des, mu_hat)
        estimates[h] = StageEstimate(h=h, theta_hat=theta, clip=float(H))
        records.append(
            StageRecord(
                h=h, support_size=des.support_size, design_rank=des.rank,
                max_leverage=des.max_leverage, n=n, keys=list(des.keys), mu_hat=mu_hat,
            )
        )
    return LsviResult(
        estimates=estimates, records=records, n=n, m=m, beta=beta,
        zeta=config.zeta, d=d, queries=sim.meter.count - start,
    )


def greedy_policy(estimates: dict, feature_map, num_actions: int) -> StagePolicy:
    """Deterministic argmax policy on the estimates; ties go to the lowest index."""

    def choose(h, s):
        est = estimates.get(h)
        if est is None:
            raise KeyError(h)
        vals = [est.value(feature_map(h, s, a)) for a in range(1, num_actions + 1)]
        return int(np.argmax(vals)) + 1

    return StagePolicy.deterministic(num_actions, choose)
