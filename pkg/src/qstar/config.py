"""Plain-text experiment configs: `key = value` lines, '#' comments.

Two parameter modes. Paper mode sets `eta` (requires d >= 18) and derives
gamma/k/epsilon from the paper formulas; an explicit `k` then overrides the
derived one after the vector family is verified. Desk mode sets `gamma`
directly (any d >= 2) and requires `k`. `a_star = 0` selects the
action-symmetric test MDP.
"""

import os
from dataclasses import dataclass, fields

from . import hard_family, vectors
from .rng import stream


class ConfigError(ValueError):
    """Named parse/validation error with file and line information."""


@dataclass(frozen=True)
class ExperimentConfig:
    # instance
    d: int
    H: int
    eta: float | None = None
    gamma: float | None = None
    k: int | None = None
    epsilon: float | None = None
    mode: str = "fixed"  # fixed | discounted
    alpha: float | None = None
    a_star: int = 1  # 0 selects the test MDP
    vectors: str = "orthonormal"  # orthonormal | gaussian | file
    vector_file: str | None = None
    # harness
    planner: str = "lsvi"  # lsvi | random | greedy-oracle
    replication: int = 1
    seed: int = 0
    n: int | None = None
    zeta: float = 0.1
    delta_target: float | None = None
    budget: int | None = None
    out_dir: str | None = None
    cap: int = 2_000_000
    realizability_tol: float = 1e-9
    design_tolerance: float = 0.05
    design_max_iters: int = 10_000
    workers: int = 1
    name: str = "experiment"


_PARSERS = {
    "d": int, "H": int, "eta": float, "gamma": float, "k": int, "epsilon": float,
    "mode": str, "alpha": float, "a_star": int, "vectors": str, "vector_file": str,
    "planner": str, "replication": int, "seed": int, "n": int, "zeta": float,
    "delta_target": float, "budget": int, "out_dir": str, "cap": int,
    "realizability_tol": float, "design_tolerance": float, "design_max_iters": int,
    "workers": int,
}

_REQUIRED = ("d", "H")
PLANNERS = ("lsvi", "random", "greedy-oracle")


def parse_config_text(text: str, name: str = "<config>") -> ExperimentConfig:
    values: dict = {}
    lines: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{name}:{lineno}: expected `key = value`, got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _PARSERS:
            raise ConfigError(f"{name}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{name}:{lineno}: duplicate key {key!r} (first at line {lines[key]})")
        try:
            values[key] = _PARSERS[key](val)
        except ValueError as e:
            raise ConfigError(f"{name}:{lineno}: bad value for {key}: {e}") from e
        lines[key] = lineno

    for key in _REQUIRED:
        if key not in values:
            raise ConfigError(f"{name}: missing required key {key!r}")
    cfg = ExperimentConfig(name=os.path.splitext(os.path.basename(name))[0], **values)
    _validate(cfg, name, lines)
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config_text(fh.read(), name=str(path))


def _fail(name, lines, key, message):
    loc = f"{name}:{lines[key]}" if key in lines else name
    raise ConfigError(f"{loc}: {message}")


def _validate(cfg: ExperimentConfig, name: str, lines: dict) -> None:
    if cfg.eta is None and cfg.gamma is None:
        raise ConfigError(f"{name}: one of eta (paper mode) or gamma (desk mode) is required")
    if cfg.eta is not None and cfg.gamma is not None:
        _fail(name, lines, "gamma", "set either eta or gamma, not both")
    if cfg.eta is not None:
        if cfg.d < 18:
            _fail(name, lines, "d", f"paper mode (eta set) requires d >= 18, got {cfg.d}")
        hi = hard_family.eta_bound(cfg.d)
        if not 0.0 < cfg.eta <= hi + 1e-9:
            _fail(name, lines, "eta",
                  f"eta={cfg.eta} violates 0 < eta <= 1/2 - 2/log2(d-1) = {hi:.6g}")
    else:
        if not 0.0 < cfg.gamma <= 0.25:
            _fail(name, lines, "gamma", f"gamma={cfg.gamma} outside (0, 1/4]")
        if cfg.k is None:
            raise ConfigError(f"{name}: desk mode (gamma set) requires k")
    if cfg.k is not None and cfg.k < 1:
        _fail(name, lines, "k", f"k must be >= 1, got {cfg.k}")
    if cfg.mode not in ("fixed", "discounted"):
        _fail(name, lines, "mode", f"mode must be fixed or discounted, got {cfg.mode!r}")
    if cfg.mode == "discounted":
        if cfg.alpha is None:
            raise ConfigError(f"{name}: discounted mode requires alpha in [2/3, 1)")
        if not 2.0 / 3.0 - 1e-9 <= cfg.alpha < 1.0:
            _fail(name, lines, "alpha", f"alpha={cfg.alpha} outside [2/3, 1)")
    elif cfg.alpha is not None and cfg.alpha != 1.0:
        _fail(name, lines, "alpha", "alpha is only meaningful in discounted mode")
    if cfg.vectors not in ("orthonormal", "gaussian", "file"):
        _fail(name, lines, "vectors",
              f"vectors must be orthonormal, gaussian, or file, got {cfg.vectors!r}")
    if cfg.vectors == "file":
        if cfg.vector_file is None:
            raise ConfigError(f"{name}: vectors = file requires vector_file")
        if not os.path.exists(cfg.vector_file):
            _fail(name, lines, "vector_file", f"vector file {cfg.vector_file!r} does not exist")
    if cfg.replication < 1:
        _fail(name, lines, "replication", f"replication must be >= 1, got {cfg.replication}")
    if cfg.planner not in PLANNERS:
        _fail(name, lines, "planner", f"planner must be one of {PLANNERS}, got {cfg.planner!r}")
    if cfg.a_star < 0:
        _fail(name, lines, "a_star", "a_star must be 0 (test MDP) or a 1-based action index")
    if cfg.n is not None and cfg.n < 1:
        _fail(name, lines, "n", f"n must be >= 1, got {cfg.n}")
    if not 0.0 < cfg.zeta <= 1.0:
        _fail(name, lines, "zeta", f"zeta={cfg.zeta} outside (0, 1]")
    if cfg.cap < 1:
        _fail(name, lines, "cap", "cap must be positive")
    if cfg.workers < 1:
        _fail(name, lines, "workers", "workers must be >= 1")
    if cfg.planner == "lsvi" and cfg.n is None and cfg.delta_target is None:
        raise ConfigError(f"{name}: planner = lsvi needs n or delta_target")


def with_overrides(cfg: ExperimentConfig, **kwargs) -> ExperimentConfig:
    current = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    current.update({k: v for k, v in kwargs.items() if v is not None})
    return ExperimentConfig(**current)


def build_params(cfg: ExperimentConfig) -> hard_family.HardParams:
    alpha = cfg.alpha if cfg.mode == "discounted" else 1.0
    if cfg.eta is not None:
        params = hard_family.derive_params(cfg.d, cfg.H, cfg.eta, alpha=alpha)
        if cfg.epsilon is not None:
            params = hard_family.HardParams(
                d=params.d, H=params.H, gamma=params.gamma, k=params.k,
                epsilon=cfg.epsilon, eta=params.eta, alpha=alpha,
            )
        return params
    return hard_family.desk_params(
        cfg.d, cfg.H, cfg.gamma, cfg.k, epsilon=cfg.epsilon, alpha=alpha
    )


def build_family(cfg: ExperimentConfig, params: hard_family.HardParams) -> vectors.VectorFamily:
    k = cfg.k if cfg.k is not None else params.k
    if cfg.vectors == "file":
        return vectors.load_family(cfg.vector_file)
    if cfg.vectors == "orthonormal":
        return vectors.orthonormal_family(params.d - 1, k, gamma=params.gamma)
    return vectors.generate_family(
        params.d - 1, k, params.gamma, stream(cfg.seed, "vectors")
    )


_USE_CONFIG = object()


def build_instance(cfg: ExperimentConfig, a_star=_USE_CONFIG) -> hard_family.HardInstance:
    """Instance for the configured a_star (0 or None selects the test MDP)."""
    params = build_params(cfg)
    family = build_family(cfg, params)
    if cfg.k is not None and cfg.k != params.k:
        params = hard_family.override_k(params, cfg.k, family)
    elif cfg.vectors == "file":
        params = hard_family.override_k(params, family.k, family)
    star = cfg.a_star if a_star is _USE_CONFIG else a_star
    star = None if star in (0, None) else star
    if star is not None and not 1 <= star <= params.k:
        raise ConfigError(f"a_star={star} outside 1..{params.k}")
    return hard_family.HardInstance(params, family, star)
