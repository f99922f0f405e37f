"""Versioned JSON experiment configs with per-suite parameter schemas."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

SCHEMA_VERSION = 1
SUITES = ("bandit", "counterexample", "linmdp", "bounds", "boorl")


class ConfigError(ValueError):
    pass


def _pos_int(v):
    return isinstance(v, int) and not isinstance(v, bool) and v > 0


def _nonneg_int(v):
    return isinstance(v, int) and not isinstance(v, bool) and v >= 0


def _number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _pos(v):
    return _number(v) and v > 0


def _prob(v):
    return _number(v) and 0 < v < 1


def _unit(v):
    return _number(v) and 0 <= v <= 1


def _num_list(v):
    return isinstance(v, list) and len(v) > 0 and all(_number(x) and x >= 0 for x in v)


def _str_list(v):
    return isinstance(v, list) and len(v) > 0 and all(isinstance(x, str) for x in v)


# (validator, message) per parameter
SCHEMAS = {
    "bandit": {
        "n_arms": (_pos_int, "positive integer"),
        "offline_pulls": (_nonneg_int, "non-negative integer"),
        "horizon": (_pos_int, "positive integer"),
        "agents": (_str_list, "non-empty list of agent tags"),
        "k": (_pos, "positive number"),
        "prior_alpha": (_pos, "positive number"),
        "prior_beta": (_pos, "positive number"),
        "trace_stride": (_pos_int, "positive integer"),
    },
    "counterexample": {
        "epsilon": (lambda v: _number(v) and 0 < v < 0.05, "number in (0, 0.05)"),
        "n": (lambda v: _pos_int(v) and v >= 500, "integer >= 500"),
        "k": (_pos, "positive number"),
        "ucb_draws": (_pos_int, "positive integer"),
        "lcb_draws": (lambda v: _pos_int(v) and v >= 2, "integer >= 2"),
        "horizon": (_pos_int, "positive integer"),
    },
    "linmdp": {
        "n_states": (_pos_int, "positive integer"),
        "n_actions": (_pos_int, "positive integer"),
        "H": (_pos_int, "positive integer"),
        "episodes": (_pos_int, "positive integer"),
        "replays": (_pos_int, "positive integer"),
        "info_samples": (_pos_int, "positive integer"),
        "delta": (_prob, "number in (0, 1)"),
        "ridge": (_pos, "positive number"),
    },
    "bounds": {
        "d": (_pos_int, "positive integer"),
        "H": (_pos_int, "positive integer"),
        "N": (_num_list, "non-empty list of non-negative numbers"),
        "T": (_num_list, "non-empty list of non-negative numbers"),
        "C_dagger": (lambda v: _number(v) and v >= 1, "number >= 1"),
        "c": (_pos, "positive number"),
        "delta": (_prob, "number in (0, 1)"),
    },
    "boorl": {
        "map": (lambda v: isinstance(v, str) and "S" in v and "G" in v, "text map with S and G"),
        "slip_prob": (lambda v: _number(v) and 0 <= v < 1, "number in [0, 1)"),
        "horizon": (_pos_int, "positive integer"),
        "discount": (lambda v: _number(v) and 0 < v <= 1, "number in (0, 1]"),
        "dataset_size": (_pos_int, "positive integer"),
        "behavior_epsilon": (_unit, "number in [0, 1]"),
        "variants": (_str_list, "non-empty list of variant names"),
        "L": (_pos_int, "positive integer"),
        "p": (lambda v: _number(v) and 0 < v <= 1, "number in (0, 1]"),
        "lambda_bc": (_pos, "positive number"),
        "temperature": (_pos, "positive number"),
        "epsilon": (_unit, "number in [0, 1]"),
        "total_steps": (_nonneg_int, "non-negative integer"),
        "batch_size": (_pos_int, "positive integer"),
        "lr": (lambda v: _number(v) and 0 < v <= 1, "number in (0, 1]"),
    },
}

_GRIDWORLD = """\
S....
.##..
...#.
.#...
....G
"""

DEFAULTS = {
    "bandit": dict(n_arms=10, offline_pulls=1000, horizon=100_000,
                   agents=["ucb", "lcb", "ts", "soft1.5", "soft2", "soft4", "hard2", "hard4"],
                   k=1.0, prior_alpha=1.0, prior_beta=1.0, trace_stride=1),
    "counterexample": dict(epsilon=0.04, n=500, k=1.0, ucb_draws=100_000, lcb_draws=10_000, horizon=1000),
    "linmdp": dict(n_states=3, n_actions=2, H=2, episodes=500, replays=200, info_samples=2000,
                   delta=0.05, ridge=1.0),
    "bounds": dict(d=4, H=5, N=[0.0] + [10 ** (i / 7) for i in range(49)],
                   T=[10 ** (i / 10) for i in range(50)],
                   C_dagger=1.0, c=1.0, delta=0.05),
    "boorl": dict(map=_GRIDWORLD, slip_prob=0.0, horizon=20, discount=0.95, dataset_size=2000,
                  behavior_epsilon=0.3, variants=["boorl", "optimistic", "pessimistic"],
                  L=5, p=0.9, lambda_bc=0.4, temperature=1.0, epsilon=0.05, total_steps=3000,
                  batch_size=256, lr=0.5),
}

PRESETS = {
    "dilemma": ("bandit", dict(trace_stride=100), list(range(100))),
    "bandit_smoke": ("bandit", dict(horizon=2000, agents=["ucb", "lcb", "ts"]), [0, 1, 2]),
    "counterexamples": ("counterexample", {}, [0]),
    "bound_check": ("linmdp", {}, [0, 1, 2]),
    "bound_grid": ("bounds", {}, [0]),
    "gridworld": ("boorl", {}, list(range(20))),
    "ablation": ("boorl", dict(variants=["full", "ensemble1", "uniform_buffer"]), list(range(20))),
}

BANDIT_AGENTS = ("ucb", "lcb", "ts", "soft", "hard")
BOORL_VARIANTS = ("boorl", "optimistic", "pessimistic", "full", "ensemble1", "uniform_buffer")


@dataclass
class ExperimentConfig:
    suite: str
    params: dict
    seeds: list
    output_dir: str = "out"
    preset: str | None = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        validate(self)

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version, "suite": self.suite, "preset": self.preset,
                "seeds": list(self.seeds), "params": self.params, "output_dir": self.output_dir}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> str:
        """SHA-256 of everything that determines outputs (not the output dir)."""
        body = {k: v for k, v in self.to_dict().items() if k != "output_dir"}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def _parse_agent(tag: str):
    for kind in BANDIT_AGENTS:
        if tag.startswith(kind):
            rest = tag[len(kind):]
            if kind in ("soft", "hard"):
                try:
                    return kind, float(rest)
                except ValueError:
                    return None
            return (kind, None) if rest == "" else None
    return None


def validate(cfg: ExperimentConfig) -> None:
    if cfg.schema_version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {cfg.schema_version!r} (expected {SCHEMA_VERSION})")
    if cfg.suite not in SUITES:
        raise ConfigError(f"unknown suite {cfg.suite!r}; choose from {', '.join(SUITES)}")
    if not isinstance(cfg.seeds, list) or not cfg.seeds:
        raise ConfigError("seeds must be a non-empty list")
    if not all(_nonneg_int(s) for s in cfg.seeds):
        raise ConfigError("seeds must be non-negative integers")
    if len(set(cfg.seeds)) != len(cfg.seeds):
        raise ConfigError("seeds must be distinct")
    if not isinstance(cfg.params, dict):
        raise ConfigError("params must be an object")
    schema = SCHEMAS[cfg.suite]
    unknown = sorted(set(cfg.params) - set(schema))
    if unknown:
        raise ConfigError(f"{cfg.suite}: unknown parameter(s) {', '.join(unknown)}")
    missing = sorted(set(schema) - set(cfg.params))
    if missing:
        raise ConfigError(f"{cfg.suite}: missing parameter(s) {', '.join(missing)}")
    for key, (check, msg) in schema.items():
        if not check(cfg.params[key]):
            raise ConfigError(f"{cfg.suite}.{key}: expected {msg}, got {cfg.params[key]!r}")
    p = cfg.params
    if cfg.suite == "bandit":
        for tag in p["agents"]:
            parsed = _parse_agent(tag)
            if parsed is None:
                raise ConfigError(f"bandit.agents: cannot parse agent tag {tag!r}")
            if parsed[0] in ("soft", "hard") and parsed[1] <= 0:
                raise ConfigError(f"bandit.agents: switch parameter must be positive in {tag!r}")
        if len(set(p["agents"])) != len(p["agents"]):
            raise ConfigError("bandit.agents must be distinct")
        if p["n_arms"] < 2:
            raise ConfigError("bandit.n_arms must be at least 2")
    if cfg.suite == "boorl":
        bad = [v for v in p["variants"] if v not in BOORL_VARIANTS]
        if bad:
            raise ConfigError(f"boorl.variants: unknown {', '.join(bad)}")
        if len(set(p["variants"])) != len(p["variants"]):
            raise ConfigError("boorl.variants must be distinct")


def from_preset(name: str, seeds=None, output_dir: str = "out") -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
    suite, overrides, default_seeds = PRESETS[name]
    params = json.loads(json.dumps(DEFAULTS[suite]))
    params.update(overrides)
    return ExperimentConfig(suite, params, list(seeds if seeds is not None else default_seeds),
                            output_dir, preset=name)


def presets_for(suite: str) -> list[str]:
    return [name for name, (s, _, _) in PRESETS.items() if s == suite]


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a JSON config; a ``preset`` key fills in unspecified parameters."""
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = sorted(set(doc) - {"schema_version", "suite", "preset", "seeds", "params", "output_dir"})
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")
    suite = doc.get("suite")
    preset = doc.get("preset")
    params = {}
    seeds = doc.get("seeds")
    if preset is not None:
        base = from_preset(preset)
        if suite is not None and suite != base.suite:
            raise ConfigError(f"{path}: preset {preset!r} belongs to suite {base.suite!r}, not {suite!r}")
        suite = base.suite
        params = dict(base.params)
        seeds = base.seeds if seeds is None else seeds
    elif suite in DEFAULTS:
        params = json.loads(json.dumps(DEFAULTS[suite]))
    extra = doc.get("params", {})
    if not isinstance(extra, dict):
        raise ConfigError(f"{path}: params must be an object")
    params.update(extra)
    return ExperimentConfig(suite, params, seeds, doc.get("output_dir", "out"), preset,
                            doc.get("schema_version", SCHEMA_VERSION))
