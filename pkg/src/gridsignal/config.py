"""Configuration types and the named traffic-flow programs.

All knobs live in small dataclasses so a run can be described by one
ExperimentSpec, rebuilt exactly from a saved manifest. Flow rates are defined
against a fixed 4000 s reference episode; running shorter episodes keeps the
same traffic intensity and inserts proportionally fewer vehicles.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path


REFERENCE_EPISODE_S = 4000.0

#: vehicles per route per reference episode, one tuple per equal-length segment
FLOW_TABLE = {
    "low": [(600, 600, 600, 600, 600, 600)],
    "middle": [(800, 800, 800, 800, 800, 800)],
    "high": [(1000, 1000, 1000, 1000, 1000, 1000)],
    "mutable": [
        (600, 600, 600, 600, 600, 600),
        (900, 900, 900, 900, 900, 900),
        (720, 720, 720, 720, 720, 720),
    ],
    "unbalanced": [
        (600, 900, 600, 900, 600, 600),
        (900, 600, 600, 600, 900, 600),
        (900, 900, 600, 600, 900, 600),
    ],
}


class ConfigError(ValueError):
    """Bad configuration key, value, or combination (CLI exit code 1)."""


@dataclass(frozen=True)
class FlowProgram:
    """Per-route insertion rates, switched over equal fractions of an episode."""

    name: str
    segments: tuple[tuple[float, ...], ...]  # vehicles per route per 4000 s

    @property
    def n_segments(self) -> int:
        return len(self.segments)

    def rates_per_s(self):
        """Segment rates in vehicles/second per route instance."""
        return [
            tuple(n / REFERENCE_EPISODE_S for n in seg) for seg in self.segments
        ]


def flow_program(name: str) -> FlowProgram:
    try:
        segs = FLOW_TABLE[name]
    except KeyError:
        raise ConfigError(
            f"unknown flow {name!r}; choose from {sorted(FLOW_TABLE)}"
        ) from None
    return FlowProgram(name=name, segments=tuple(tuple(map(float, s)) for s in segs))


@dataclass(frozen=True)
class NetworkConfig:
    rows: int = 1
    cols: int = 1
    lane_length_m: float = 500.0
    cell_m: float = 5.0
    step_s: float = 1.0
    amber_steps: int = 1
    v_max: int = 3  # cells per step

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigError("grid must have at least one row and one column")
        if self.lane_length_m <= 0 or self.cell_m <= 0:
            raise ConfigError("lane dimensions must be positive")
        if self.step_s <= 0:
            raise ConfigError("sim.step_s must be positive")
        if self.amber_steps < 0:
            raise ConfigError("sim.amber_steps must be >= 0")

    @property
    def lane_cells(self) -> int:
        return int(round(self.lane_length_m / self.cell_m))


@dataclass(frozen=True)
class RuleParams:
    beta: float = 0.13
    low_speed_kmh: float = 30.0

    def low_speed_cells(self, cfg: NetworkConfig) -> int:
        """Largest cell-per-step speed strictly below the km/h threshold."""
        thresh_mps = self.low_speed_kmh / 3.6
        cell_mps = cfg.cell_m / cfg.step_s
        # speed v qualifies iff v * cell_mps < thresh_mps
        v = 0
        while (v + 1) * cell_mps < thresh_mps:
            v += 1
        return v


@dataclass(frozen=True)
class ImitationConfig:
    c: float = 1e-4  # weight decay coefficient in the imitation loss
    m: int = 500  # minibatch SGD iterations per round
    batch: int = 100  # minibatch size N_b
    xi: float | None = None  # accuracy early-stop; resolved per grid size
    pool_capacity: int = 50_000
    max_rounds: int = 30
    lr: float = 3e-4  # SGD learning rate (config key train.lr)


@dataclass(frozen=True)
class RlConfig:
    gamma: float = 0.6
    alpha1: float = 1.0  # value-loss weight
    alpha2: float = 0.1  # entropy-bonus weight
    eps_clip: float = 0.2
    n_max: int = 8  # advantage horizon N and update interval
    episodes: int | None = None  # resolved per grid size: 30 single, 200 multi
    lr: float = 1e-4  # adaptive-moment optimizer step size
    epochs: int = 1  # gradient passes per update cycle


CONTROLLERS = ("fixed20", "fixed40", "rule", "il-only", "dr", "dri")
TRAINABLE = ("il-only", "dr", "dri")


@dataclass
class ExperimentSpec:
    net: NetworkConfig = field(default_factory=NetworkConfig)
    rule: RuleParams = field(default_factory=RuleParams)
    imitation: ImitationConfig = field(default_factory=ImitationConfig)
    rl: RlConfig = field(default_factory=RlConfig)
    flow: str = "low"
    controller: str = "dri"
    seed: int = 0
    episode_s: float = 4000.0
    out: Path = Path("runs/run")
    eval_episodes: int = 5

    def resolved(self) -> "ExperimentSpec":
        """Fill grid-dependent defaults and validate cross-field rules."""
        if self.controller not in CONTROLLERS:
            raise ConfigError(
                f"unknown controller {self.controller!r}; choose from {CONTROLLERS}"
            )
        flow_program(self.flow)  # validates the name
        spec = self
        multi = self.net.rows * self.net.cols > 1
        if multi and self.flow != "low" and self.controller in TRAINABLE:
            # Multi-intersection training presets stick to low flow.
            spec = replace(spec, flow="low")
        if self.imitation.xi is None:
            xi = 0.7 if multi else 0.9
            spec = replace(spec, imitation=replace(self.imitation, xi=xi))
        if self.rl.episodes is None:
            episodes = 200 if multi else 30
            spec = replace(spec, rl=replace(self.rl, episodes=episodes))
        elif self.rl.episodes < 1:
            raise ConfigError("rl.episodes must be at least 1")
        if self.episode_s <= 0:
            raise ConfigError("sim.episode_s must be positive")
        return spec

    @property
    def episode_steps(self) -> int:
        return int(round(self.episode_s / self.net.step_s))


# Config-file key -> (dataclass attribute path, type). Files use key=value
# lines with '#' comments; CLI flags override file values.
CONFIG_KEYS = {
    "grid.rows": ("net.rows", int),
    "grid.cols": ("net.cols", int),
    "lane.length_m": ("net.lane_length_m", float),
    "lane.cell_m": ("net.cell_m", float),
    "sim.step_s": ("net.step_s", float),
    "sim.amber_steps": ("net.amber_steps", int),
    "sim.v_max": ("net.v_max", int),
    "sim.episode_s": ("episode_s", float),
    "flow.name": ("flow", str),
    "controller": ("controller", str),
    "seed": ("seed", int),
    "rule.beta": ("rule.beta", float),
    "rule.low_speed_kmh": ("rule.low_speed_kmh", float),
    "imitation.c": ("imitation.c", float),
    "imitation.m": ("imitation.m", int),
    "imitation.N_b": ("imitation.batch", int),
    "imitation.xi": ("imitation.xi", float),
    "imitation.pool.capacity": ("imitation.pool_capacity", int),
    "imitation.max_rounds": ("imitation.max_rounds", int),
    "train.lr": ("imitation.lr", float),
    "rl.gamma": ("rl.gamma", float),
    "rl.alpha1": ("rl.alpha1", float),
    "rl.alpha2": ("rl.alpha2", float),
    "rl.eps_clip": ("rl.eps_clip", float),
    "rl.n_max": ("rl.n_max", int),
    "rl.episodes": ("rl.episodes", int),
    "rl.lr": ("rl.lr", float),
    "rl.epochs": ("rl.epochs", int),
    "eval.episodes": ("eval_episodes", int),
}


def parse_config_file(path: Path | str) -> dict[str, str]:
    """Read a key=value config file, rejecting unknown keys."""
    mapping: dict[str, str] = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        mapping[key] = value
    return mapping


def apply_config(spec: ExperimentSpec, mapping: dict[str, str]) -> ExperimentSpec:
    """Apply string key=value overrides onto a spec, with type conversion."""
    for key, value in mapping.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        attr_path, conv = CONFIG_KEYS[key]
        try:
            typed = conv(value)
        except ValueError:
            raise ConfigError(f"bad value for {key}: {value!r}") from None
        parts = attr_path.split(".")
        if len(parts) == 1:
            spec = replace(spec, **{parts[0]: typed})
        else:
            sub = getattr(spec, parts[0])
            spec = replace(spec, **{parts[0]: replace(sub, **{parts[1]: typed})})
    return spec


def spec_to_flat_config(spec: ExperimentSpec) -> dict[str, str]:
    """Inverse of apply_config for manifests: every key, resolved values."""
    flat: dict[str, str] = {}
    for key, (attr_path, _) in CONFIG_KEYS.items():
        parts = attr_path.split(".")
        value = getattr(spec, parts[0])
        if len(parts) == 2:
            value = getattr(value, parts[1])
        flat[key] = repr(value) if isinstance(value, float) else str(value)
    return flat
