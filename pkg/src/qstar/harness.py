"""Experiment orchestration: verify / bench / adversary / solve.

The bench CSV is fully determined by (config, master seed): replicate i draws
all of its randomness from streams rooted at seed + i, records are merged in
replicate order, and floats are printed at 17 significant digits. Wall-clock
statistics live in the JSON summary only, which keeps the CSV byte-stable.
"""

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, build_instance
from .hard_family import HardInstance, describe, n_choice
from .lsvi import LsviConfig, error_envelope, greedy_policy, lsvi_run
from .mdp import GenerativeSimulator, QueryMeter, StagePolicy, accessible_states
from .oracle import (
    ValueTables,
    check_realizability,
    greedy_from_tables,
    likelihood_floor_check,
    m0_symmetry_check,
    solve_backward,
    suboptimality,
)
from .rng import stream

BENCH_HEADER = "seed,planner,k,H,d,gamma,epsilon,N,delta_pi,max_stage_err,pass"
STAGE_HEADER = "seed,h,support,n,beta,max_mu_dev,max_stage_err,epsilon_h"
SYMMETRY_PERM_CAP = 720  # exhaustive for k <= 6


class QueryBudgetError(RuntimeError):
    """The planner hit the harness-imposed query budget (truncated run)."""


class BudgetedSimulator(GenerativeSimulator):
    """Simulator wrapper owning budget enforcement and the query-action log."""

    def __init__(self, model, meter, budget: int | None = None, log_actions: bool = False):
        super().__init__(model, meter)
        self.budget = budget
        self.actions: list = [] if log_actions else None

    def _take(self, a: int, n: int) -> int:
        grant = n
        if self.budget is not None:
            grant = min(n, self.budget - self.meter.count)
            if grant <= 0:
                raise QueryBudgetError(f"query budget {self.budget} exhausted")
        if self.actions is not None:
            self.actions.append((a, grant))
        return grant

    def query(self, rng, s, a):
        self._take(a, 1)
        return super().query(rng, s, a)

    def sample_batch(self, rng, s, a, n):
        grant = self._take(a, n)
        out = super().sample_batch(rng, s, a, grant)
        if grant < n:
            raise QueryBudgetError(
                f"query budget {self.budget} hit after {grant} of {n} requested draws"
            )
        return out

    def logged_actions(self, first_n: int | None = None) -> set:
        """Distinct actions among the first `first_n` logged queries."""
        if self.actions is None:
            raise ValueError("simulator was not logging actions")
        out, used = set(), 0
        for a, cnt in self.actions:
            if first_n is not None and used >= first_n:
                break
            if cnt > 0:
                out.add(a)
            used += cnt
        return out


@dataclass
class PlanOutput:
    policy: StagePolicy
    queries: int
    lsvi_result: object = None


def plan_lsvi(instance, sim, cfg: ExperimentConfig, rng) -> PlanOutput:
    lcfg = LsviConfig(
        n=cfg.n, zeta=cfg.zeta, delta_target=cfg.delta_target,
        design_tolerance=cfg.design_tolerance, design_max_iters=cfg.design_max_iters,
    )
    result = lsvi_run(sim, instance.phi, lcfg, rng)
    policy = greedy_policy(result.estimates, instance.phi, instance.num_actions)
    return PlanOutput(policy=policy, queries=result.queries, lsvi_result=result)


def plan_random(instance, sim, cfg: ExperimentConfig, rng) -> PlanOutput:
    """Commits to one uniformly random deterministic policy; makes no queries."""
    table = {}
    for h in range(1, instance.horizon + 1):
        for s in instance.states_at(h):
            p = np.zeros(instance.num_actions)
            p[int(rng.integers(0, instance.num_actions))] = 1.0
            table[(h, s)] = p
    return PlanOutput(policy=StagePolicy.from_table(instance.num_actions, table), queries=0)


def plan_greedy_oracle(instance, sim, cfg: ExperimentConfig, rng, tables=None) -> PlanOutput:
    """Cheating baseline reading exact q*; the soundness floor at zero queries."""
    tables = tables if tables is not None else solve_backward(instance, cap=cfg.cap)
    return PlanOutput(policy=greedy_from_tables(instance, tables), queries=0)


PLANNERS = {"lsvi": plan_lsvi, "random": plan_random, "greedy-oracle": plan_greedy_oracle}


# -- verify ------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


@dataclass
class VerifyReport:
    checks: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def add(self, name: str, ok: bool, detail: str) -> None:
        self.checks.append(CheckResult(name, bool(ok), detail))

    def lines(self) -> list:
        return [f"{'PASS' if c.ok else 'FAIL'} {c.name}: {c.detail}" for c in self.checks]


def _enumerate_sigma_mu(instance: HardInstance):
    """All (tree state, admissible action) sigma values and leaf Bernoulli means."""
    p = instance.params
    sigmas, mus = [], []
    for h in range(1, p.H + 1):
        for s in instance.states_at(h):
            if not hasattr(s, "actions"):
                continue
            for a in range(1, p.k + 1):
                if a in s:
                    continue
                sigmas.append(instance.sigma(s, a))
                if h == p.H and instance.a_star is not None and a != instance.a_star:
                    mus.append(instance.mu(s, a))
    return np.array(sigmas), np.array(mus)


def cmd_verify(cfg: ExperimentConfig, mutate_sigma: float | None = None) -> VerifyReport:
    """Construction checks; any failure flips the exit status."""
    report = VerifyReport()
    instance = build_instance(cfg)
    if mutate_sigma is not None:
        instance = HardInstance(
            instance.params, instance.family, instance.a_star, sigma_corruption=mutate_sigma
        )
    p = instance.params
    tol = cfg.realizability_tol
    eps_eff = p.epsilon * (p.alpha ** (-(p.H - 1)) if p.discounted else 1.0)

    sigmas, mus = _enumerate_sigma_mu(instance)
    report.add(
        "sigma-range",
        bool((sigmas >= p.gamma - 1e-12).all() and (sigmas <= 1.0 + 1e-12).all()),
        f"{sigmas.size} values in [{sigmas.min():.6g}, {sigmas.max():.6g}], "
        f"target [{p.gamma:.6g}, 1]",
    )
    if mus.size:
        report.add(
            "mu-range",
            bool((mus >= -1e-15).all() and (mus <= eps_eff + 1e-15).all()),
            f"{mus.size} leaf means in [{mus.min():.6g}, {mus.max():.6g}], "
            f"target [0, {eps_eff:.6g}]",
        )

    lo, hi = _reward_support_range(instance)
    report.add("reward-range", 0.0 - 1e-15 <= lo and hi <= 1.0 + 1e-15,
               f"reward support within [{lo:.6g}, {hi:.6g}], target [0, 1]")

    tables = solve_backward(instance, cap=cfg.cap)
    real = check_realizability(instance, tables, tol=tol)
    report.add(
        "realizability",
        real.ok,
        f"max residual {real.max_residual:.3g} at {real.at} (tol {tol:g})",
    )

    if instance.a_star is not None:
        gaps = [
            tables.gap_of(1, instance.initial_state, a)
            for a in range(1, p.k + 1)
            if a != instance.a_star
        ]
        formula_eps = abs(p.epsilon - _formula_eps(p)) <= 1e-15
        if gaps:
            ok = min(gaps) >= 0.25 - 1e-12 if formula_eps else True
            detail = f"min root gap {min(gaps):.12g}" + ("" if formula_eps else " (eps overridden; informational)")
            if _orthonormal(instance) and formula_eps:
                ok = ok and abs(min(gaps) - 1.0 / 3.0) <= 1e-12 and abs(max(gaps) - 1.0 / 3.0) <= 1e-12
                detail += ", orthonormal target exactly 1/3"
            report.add("root-gap", ok, detail)
        star_gaps = _astar_gaps(instance, tables)
        report.add("a-star-optimal", star_gaps <= 1e-12,
                   f"max gap of a* over accessible tree states {star_gaps:.3g}")
        nch = n_choice(p)
        floor = likelihood_floor_check(instance, max(nch, 1))
        ok = floor.ok and (nch < 1 or (1.0 - eps_eff) ** nch > 0.75)
        report.add(
            "likelihood-floor",
            ok,
            f"min ratio {floor.min_ratio:.12g} >= 1-eps {floor.floor_single:.12g}; "
            f"n_choice={nch}, (1-eps)^n = {(1.0 - eps_eff) ** max(nch, 1):.6g}",
        )
    else:
        sym = m0_symmetry_check(
            instance,
            max_permutations=None if math.factorial(p.k) <= SYMMETRY_PERM_CAP else 120,
        )
        report.add(
            "m0-symmetry", sym.ok,
            f"{sym.permutations_checked} permutations checked"
            + ("" if sym.ok else f", counterexample {sym.counterexample}"),
        )

    if p.discounted:
        worst = _discounted_value_bound(instance)
        report.add("discounted-value-bound", worst <= 1.0 + 1e-12,
                   f"max <phi', theta*> = {worst:.6g} <= 1")
    return report


def _formula_eps(p) -> float:
    from .hard_family import epsilon_formula

    return epsilon_formula(p.gamma, p.H)


def _orthonormal(instance: HardInstance) -> bool:
    from .vectors import verify_family

    return verify_family(instance.family).max_overlap == 0.0


def _astar_gaps(instance: HardInstance, tables: ValueTables) -> float:
    worst = 0.0
    acc = accessible_states(instance)
    for h in range(1, instance.horizon + 1):
        for s in acc[h]:
            if hasattr(s, "actions"):
                worst = max(worst, tables.gap_of(h, s, instance.a_star))
    return worst


def _reward_support_range(instance: HardInstance):
    lo, hi = math.inf, -math.inf
    for h in range(1, instance.horizon + 1):
        for s in instance.states_at(h):
            for a in range(1, instance.num_actions + 1):
                for v in instance.reward_law(s, a).support():
                    lo, hi = min(lo, float(v)), max(hi, float(v))
    return lo, hi


def _discounted_value_bound(instance: HardInstance) -> float:
    worst = -math.inf
    for h in range(1, instance.horizon + 1):
        for s in instance.states_at(h):
            for a in range(1, instance.num_actions + 1):
                worst = max(worst, float(instance.phi(h, s, a) @ instance.theta_star))
    return worst


# -- bench -------------------------------------------------------------------


@dataclass
class RunRecord:
    seed: int
    planner: str
    k: int
    H: int
    d: int
    gamma: float
    epsilon: float
    queries: int
    delta_pi: float
    max_stage_err: float
    passed: int
    wall_ms: float
    stage_rows: list = field(default_factory=list)


@lru_cache(maxsize=8)
def _cached_setup(cfg: ExperimentConfig):
    instance = build_instance(cfg)
    tables = solve_backward(instance, cap=cfg.cap)
    return instance, tables


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def run_replicate(cfg: ExperimentConfig, index: int) -> RunRecord:
    instance, tables = _cached_setup(cfg)
    seed = cfg.seed + index
    meter = QueryMeter()
    sim = BudgetedSimulator(instance, meter, budget=cfg.budget)
    rng = stream(seed, "planner")
    start = time.perf_counter()
    truncated = False
    try:
        out = PLANNERS[cfg.planner](instance, sim, cfg, rng)
    except QueryBudgetError:
        truncated = True
        out = None
    wall_ms = (time.perf_counter() - start) * 1000.0

    stage_rows = []
    if truncated:
        delta_pi, max_err = math.nan, math.nan
    else:
        delta_pi = suboptimality(instance, out.policy, tables=tables)
        max_err = math.nan
        if out.lsvi_result is not None:
            diag = lsvi_diagnostics(instance, out.lsvi_result, tables)
            max_err = max(row["max_stage_err"] for row in diag)
            stage_rows = [
                (seed, row["h"], row["support"], row["n"], row["beta"],
                 row["max_mu_dev"], row["max_stage_err"], row["epsilon_h"])
                for row in diag
            ]
    target = cfg.delta_target
    passed = int(not truncated and (target is None or delta_pi <= target))
    p = instance.params
    return RunRecord(
        seed=seed, planner=cfg.planner, k=p.k, H=p.H, d=p.d, gamma=p.gamma,
        epsilon=p.epsilon, queries=meter.count, delta_pi=delta_pi,
        max_stage_err=max_err, passed=passed, wall_ms=wall_ms, stage_rows=stage_rows,
    )


def lsvi_diagnostics(instance, result, tables: ValueTables) -> list:
    """Per-stage |mu_hat - mu| against the true model and sup errors vs q*."""
    rows = []
    k, H = instance.num_actions, instance.horizon
    for rec in sorted(result.records, key=lambda r: r.h):
        h = rec.h
        above = result.estimates.get(h + 1)
        dev = 0.0
        for (s, a), mh in zip(rec.keys, rec.mu_hat):
            mu = instance.reward_law(s, a).mean() + instance.alpha * sum(
                pr * _max_f_est(above, instance.phi, h + 1, s2, k)
                for s2, pr in zip(
                    instance.transition_law(s, a).values,
                    instance.transition_law(s, a).probs,
                )
                if pr > 0.0
            )
            dev = max(dev, abs(mh - mu))
        est = result.estimates[h]
        err = max(
            abs(est.value(instance.phi(h, s, a)) - tables.q_of(h, s, a))
            for s in instance.states_at(h)
            for a in range(1, k + 1)
        )
        rows.append(
            {
                "h": h, "support": rec.support_size, "n": rec.n, "beta": result.beta,
                "max_mu_dev": dev, "max_stage_err": err,
                "epsilon_h": error_envelope(h, H, result.d, result.beta),
                "within_beta": dev <= result.beta,
            }
        )
    return rows


def _max_f_est(estimate, feature_map, h, s, k):
    if estimate is None:
        return 0.0
    return max(estimate.value(feature_map(h, s, a)) for a in range(1, k + 1))


def cmd_bench(cfg: ExperimentConfig, out_dir, workers: int | None = None) -> dict:
    """Replicated planner runs; writes records CSV, stage CSV, and a JSON summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = cfg.workers if workers is None else workers
    indices = list(range(cfg.replication))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_replicate_star, [(cfg, i) for i in indices]))
    else:
        records = [run_replicate(cfg, i) for i in indices]
    records.sort(key=lambda r: r.seed)

    csv_path = out_dir / f"{cfg.name}_records.csv"
    with open(csv_path, "w") as fh:
        fh.write(BENCH_HEADER + "\n")
        for r in records:
            fh.write(
                ",".join(
                    _fmt(v)
                    for v in (
                        r.seed, r.planner, r.k, r.H, r.d, r.gamma, r.epsilon,
                        r.queries, r.delta_pi, r.max_stage_err, r.passed,
                    )
                )
                + "\n"
            )
    stage_path = out_dir / f"{cfg.name}_stages.csv"
    with open(stage_path, "w") as fh:
        fh.write(STAGE_HEADER + "\n")
        for r in records:
            for row in r.stage_rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")

    deltas = [r.delta_pi for r in records if not math.isnan(r.delta_pi)]
    ns = [r.queries for r in records]
    summary = {
        "config": cfg.name,
        "planner": cfg.planner,
        "replication": cfg.replication,
        "master_seed": cfg.seed,
        "records_csv": str(csv_path),
        "stages_csv": str(stage_path),
        "mean_N": _mean(ns),
        "max_N": max(ns) if ns else math.nan,
        "mean_delta_pi": _mean(deltas),
        "max_delta_pi": max(deltas) if deltas else math.nan,
        "pass_rate": _mean([r.passed for r in records]),
        "truncated": sum(math.isnan(r.delta_pi) for r in records),
        "wall_ms_mean": _mean([r.wall_ms for r in records]),
        "wall_ms_max": max(r.wall_ms for r in records),
    }
    if cfg.delta_target is not None:
        summary["delta_target"] = cfg.delta_target
        summary["failure_rate"] = _mean(
            [1.0 if (math.isnan(r.delta_pi) or r.delta_pi > cfg.delta_target) else 0.0
             for r in records]
        )
    with open(out_dir / f"{cfg.name}_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def _mean(xs) -> float:
    return sum(xs) / len(xs) if xs else math.nan


def _replicate_star(args):
    return run_replicate(*args)


# -- adversary ----------------------------------------------------------------


def cmd_adversary(
    cfg: ExperimentConfig,
    budget: int | None = None,
    replicates: int | None = None,
    planner=None,
) -> dict:
    """Identification probe: the planner vs the test MDP and every M_a.

    Reports, per action a, the empirical probability that a is absent from the
    planner's first `budget` query actions under the test MDP and under M_a,
    against the single-episode likelihood floor (1 - eps)^budget.
    """
    instance = build_instance(cfg, a_star=1)
    p = instance.params
    if budget is None:
        budget = n_choice(p)
    if budget < 1:
        raise ValueError(
            f"query budget must be >= 1 (n_choice gives {n_choice(p)}; pass --budget)"
        )
    reps = cfg.replication if replicates is None else replicates
    plan = planner if planner is not None else PLANNERS[cfg.planner]
    eps_eff = p.epsilon * (p.alpha ** (-(p.H - 1)) if p.discounted else 1.0)
    floor = (1.0 - eps_eff) ** budget

    def absent_freq(model) -> np.ndarray:
        misses = np.zeros(p.k)
        for i in range(reps):
            meter = QueryMeter()
            sim = BudgetedSimulator(model, meter, budget=budget, log_actions=True)
            rng = stream(cfg.seed + i, "adversary", state_tag(model))
            try:
                plan(model, sim, cfg, rng)
            except QueryBudgetError:
                pass
            seen = sim.logged_actions(first_n=budget)
            for a in range(1, p.k + 1):
                if a not in seen:
                    misses[a - 1] += 1
        return misses / reps

    def state_tag(model) -> str:
        return "m0" if model.a_star is None else f"m{model.a_star}"

    p0 = absent_freq(instance.sibling(None))
    rows = []
    slack_den = 3.0 / math.sqrt(reps)  # ~3 sigma of a Bernoulli frequency
    for a in range(1, p.k + 1):
        pa = absent_freq(instance.sibling(a))[a - 1]
        ok = pa >= floor * p0[a - 1] - slack_den
        rows.append(
            {"a": a, "p_m0_absent": p0[a - 1], "p_ma_absent": pa, "ok": bool(ok)}
        )
    min_in_freq = float(min(1.0 - p0))
    return {
        "budget": budget,
        "replicates": reps,
        "floor": floor,
        "rows": rows,
        "pigeonhole_min_freq_m0": min_in_freq,
        "pigeonhole_bound": budget / p.k,
        "ok": all(r["ok"] for r in rows),
    }


# -- solve ---------------------------------------------------------------------


def cmd_solve(cfg: ExperimentConfig, out_path) -> dict:
    from .oracle import export_tables_csv

    instance = build_instance(cfg)
    tables = solve_backward(instance, cap=cfg.cap)
    with open(out_path, "w") as fh:
        export_tables_csv(tables, fh)
    return describe(instance, seed=cfg.seed)
