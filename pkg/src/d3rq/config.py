"""Run configuration: defaults, key=value files, ``--key=value`` overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .envsim import TASKS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    task: str = "pendulum"
    total_frames: int = 100_000
    seed: int = 1
    mode: str = "categorical"
    pixels: bool = False
    frame_stack: int = 3
    episode_len: int = 0  # 0: task default, counted in agent steps
    # optimisation
    n_step: int = 3
    gamma: float = 0.99
    batch_size: int = 256
    lr: float = 1e-4
    tau: float = 0.01
    update_every: int = 2
    hidden_dim: int = 1024
    features_dim: int = 50
    dtype: str = "float32"
    # data collection
    action_repeat: int = 2
    capacity: int = 1_000_000
    warmup_steps: int = 2000
    sigma_init: float = 1.0
    sigma_final: float = 0.05
    sigma_start: int = 0
    sigma_end: int = 50_000
    noise_clip: float = 0.2
    # value distribution; None resolves to (0, R_max / (1 - gamma))
    v_min: float | None = None
    v_max: float | None = None
    n_atoms: int = 51
    # evaluation and output
    eval_every: int = 2000
    eval_episodes: int = 10
    checkpoint_every: int = 0
    timing: bool = False
    # actor-learner runtime
    workers: int = 1
    transport: str = "inproc"
    endpoint: str = "127.0.0.1:5555"
    poll_every: int = 1000
    publish_every: int = 1
    lockstep: bool = False

    def __post_init__(self):
        _validate(self)

    @property
    def agent_steps(self) -> int:
        return self.total_frames // self.action_repeat

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name}={_format(value)}")
        return "\n".join(lines) + "\n"


FIELD_TYPES = {
    f.name: f.type for f in fields(Config)
}


def _format(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(key: str, raw: str):
    kind = FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw.replace("_", ""))
        if kind == "float":
            return float(raw)
        if kind == "float | None":
            return None if raw.lower() in ("auto", "none", "") else float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse {key}={raw!r} as {kind}") from None


def _validate(c: Config):
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    need(c.task in TASKS, f"task must be one of {TASKS}, got {c.task!r}")
    need(c.mode in ("categorical", "scalar"), f"mode must be categorical or scalar, got {c.mode!r}")
    need(c.total_frames >= 0, "total_frames must be >= 0")
    need(0.0 <= c.gamma < 1.0, f"gamma must lie in [0, 1), got {c.gamma}")
    need(0.0 <= c.tau <= 1.0, f"tau must lie in [0, 1], got {c.tau}")
    need(c.lr > 0, "lr must be positive")
    for name in ("n_step", "batch_size", "update_every", "hidden_dim", "features_dim",
                 "action_repeat", "capacity", "frame_stack", "eval_every", "eval_episodes",
                 "workers", "poll_every", "publish_every"):
        need(getattr(c, name) >= 1, f"{name} must be >= 1")
    need(c.warmup_steps >= 0 and c.episode_len >= 0 and c.checkpoint_every >= 0,
         "warmup_steps, episode_len and checkpoint_every must be >= 0")
    need(c.n_atoms >= 2, "n_atoms must be >= 2")
    need(0.0 <= c.sigma_final <= c.sigma_init, "need 0 <= sigma_final <= sigma_init")
    need(c.sigma_end > c.sigma_start >= 0, "need sigma_end > sigma_start >= 0")
    need(c.noise_clip > 0, "noise_clip must be positive")
    need((c.v_min is None) == (c.v_max is None), "set both v_min and v_max, or neither")
    need(c.v_min is None or c.v_max > c.v_min, "v_max must exceed v_min")
    need(c.transport in ("inproc", "socket"), "transport must be inproc or socket")
    need(c.dtype in ("float32", "float64"), "dtype must be float32 or float64")
    need(c.seed >= 0, "seed must be >= 0")


def normalize_key(key: str) -> str:
    return key.strip().lstrip("-").replace("-", "_")


def parse_pairs(lines, source="<config>") -> dict:
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        key = normalize_key(key)
        if key not in FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _parse(key, raw)
    return out


def parse_overrides(args) -> dict:
    """Turn ``--key=value`` (or ``--key value``) tokens into typed values."""
    out = {}
    args = list(args)
    i = 0
    while i < len(args):
        tok = args[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        if "=" in tok:
            key, raw = tok[2:].split("=", 1)
        else:
            if i + 1 >= len(args):
                raise ConfigError(f"missing value for {tok}")
            key, raw = tok[2:], args[i + 1]
            i += 1
        key = normalize_key(key)
        if key not in FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}")
        out[key] = _parse(key, raw)
        i += 1
    return out


def load_config(path=None, overrides=None) -> Config:
    """Defaults, then the file at ``path``, then ``overrides`` (dict or flag list)."""
    values = {}
    if path is not None:
        with open(path) as fh:
            values.update(parse_pairs(fh.read().splitlines(), str(path)))
    if overrides:
        if isinstance(overrides, dict):
            for key, value in overrides.items():
                key = normalize_key(key)
                if key not in FIELD_TYPES:
                    raise ConfigError(f"unknown key {key!r}")
                values[key] = _parse(key, value) if isinstance(value, str) else value
        else:
            values.update(parse_overrides(overrides))
    return Config(**values)


def loads_config(text: str) -> Config:
    return Config(**parse_pairs(text.splitlines()))
