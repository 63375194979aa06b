"""Simulation configuration with flat dotted-key (de)serialisation."""

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from typing import Optional

BEAMFORMERS = ("MOP", "MRC")
POWER_STRATEGIES = ("LOFPC", "Fixed", "Ci", "Lgr")
G_REFERENCES = ("optimum", "first_update")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TopologySection:
    K: int = 3
    L: int = 6
    n_rx: int = 4
    area_side: float = 500.0


@dataclass(frozen=True)
class ChannelSection:
    carrier_hz: float = 2.4e9
    exponent: float = 3.0
    d0: float = 1.0
    noise_dbm: float = -101.0
    bandwidth_hz: float = 20e6  # informational; the noise level is given directly


@dataclass(frozen=True)
class TaskSection:
    q: int = 10
    rho: float = 5e-5
    D: int = 1000
    eta: float = 0.05
    omega: int = 1
    batch_size: Optional[int] = None
    label_noise_std: float = 0.2
    label_weight_2: float = 1.0
    label_weight_5: float = 3.0


@dataclass(frozen=True)
class BudgetSection:
    p_ave: float = 0.3
    p_max: float = 0.5


@dataclass(frozen=True)
class GapSection:
    G: Optional[float] = None  # None: G_safety * norm of the reference model below
    G_reference: str = "optimum"  # "optimum": pooled ridge solution; "first_update": max_k ||w_k^1||
    G_safety: float = 2.0
    S: float = 1.0
    mu: float = 0.0
    N: float = 0.0
    W: float = 0.0
    A: Optional[float] = None
    B: Optional[float] = None
    C: Optional[float] = None


@dataclass(frozen=True)
class StrategySection:
    beamformer: str = "MOP"
    power: str = "LOFPC"


@dataclass(frozen=True)
class LyapunovSection:
    V: float = 10.0
    max_sweeps: int = 100
    tol: float = 1e-8


@dataclass(frozen=True)
class AlternationSection:
    max_iters: int = 20
    tol: float = 1e-6


@dataclass(frozen=True)
class DualSection:
    step: float = 0.1
    max_iters: int = 500
    tol: float = 1e-3


@dataclass(frozen=True)
class RunSection:
    T: int = 300
    seed: int = 0
    perfect_aggregation: bool = False
    out_dir: str = "results"


@dataclass(frozen=True)
class SimulationConfig:
    topology: TopologySection = field(default_factory=TopologySection)
    channel: ChannelSection = field(default_factory=ChannelSection)
    task: TaskSection = field(default_factory=TaskSection)
    budget: BudgetSection = field(default_factory=BudgetSection)
    gap: GapSection = field(default_factory=GapSection)
    strategy: StrategySection = field(default_factory=StrategySection)
    lyapunov: LyapunovSection = field(default_factory=LyapunovSection)
    alternation: AlternationSection = field(default_factory=AlternationSection)
    dual: DualSection = field(default_factory=DualSection)
    run: RunSection = field(default_factory=RunSection)

    def __post_init__(self):
        validate(self)

    def to_flat(self):
        flat = {}
        for sec in dataclasses.fields(self):
            for f in dataclasses.fields(getattr(self, sec.name)):
                flat[f"{sec.name}.{f.name}"] = getattr(getattr(self, sec.name), f.name)
        return flat

    def to_json(self):
        return json.dumps(self.to_flat(), indent=2, sort_keys=True)

    def replace(self, **dotted):
        return from_flat(dotted, base=self)


def validate(cfg):
    t, b = cfg.topology, cfg.budget
    if t.K < 1 or t.L < 1 or t.n_rx < 1:
        raise ConfigError("topology.K, topology.L and topology.n_rx must be >= 1")
    if not t.area_side > 0:
        raise ConfigError("topology.area_side must be positive")
    if not 0 < b.p_ave <= b.p_max:
        raise ConfigError(f"need 0 < budget.p_ave <= budget.p_max, got {b.p_ave} and {b.p_max}")
    if cfg.task.q < 5:
        raise ConfigError("task.q must be >= 5 for the label rule")
    if cfg.task.D < 1 or cfg.task.omega < 1 or not cfg.task.eta > 0 or cfg.task.rho < 0:
        raise ConfigError("invalid task hyperparameters")
    if cfg.strategy.beamformer not in BEAMFORMERS:
        raise ConfigError(f"strategy.beamformer must be one of {BEAMFORMERS}")
    if cfg.strategy.power not in POWER_STRATEGIES:
        raise ConfigError(f"strategy.power must be one of {POWER_STRATEGIES}")
    if not cfg.lyapunov.V > 0:
        raise ConfigError("lyapunov.V must be positive")
    if cfg.run.T < 1:
        raise ConfigError("run.T must be >= 1")
    if cfg.gap.G_reference not in G_REFERENCES:
        raise ConfigError(f"gap.G_reference must be one of {G_REFERENCES}")
    if cfg.gap.G is not None and not cfg.gap.G > 0:
        raise ConfigError("gap.G must be positive")
    if cfg.channel.d0 <= 0:
        raise ConfigError("channel.d0 must be positive")


def _field_types():
    types = {}
    for sec in dataclasses.fields(SimulationConfig):
        hints = typing.get_type_hints(sec.type)
        for f in dataclasses.fields(sec.type):
            types[f"{sec.name}.{f.name}"] = hints[f.name]
    return types


FIELD_TYPES = _field_types()


def coerce(key, value):
    """Convert ``value`` (typed JSON value or CLI string) to the field's type."""
    if key not in FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    tp = FIELD_TYPES[key]
    optional = typing.get_origin(tp) is typing.Union
    base = [a for a in typing.get_args(tp) if a is not type(None)][0] if optional else tp
    if isinstance(value, str) and base is not str:
        text = value.strip()
        if optional and text.lower() in ("none", "null", ""):
            return None
        try:
            value = json.loads(text.lower() if base is bool else text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{key}: cannot parse {value!r} as {base.__name__}") from exc
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{key} may not be null")
    if base is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return value
    if base is int:
        if isinstance(value, bool) or not (isinstance(value, int) or (isinstance(value, float) and value.is_integer())):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if base is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


def from_flat(flat, base=None):
    base = SimulationConfig() if base is None else base
    sections = {sec.name: dataclasses.asdict(getattr(base, sec.name)) for sec in dataclasses.fields(base)}
    for key, value in flat.items():
        value = coerce(key, value)
        sec, name = key.split(".", 1)
        sections[sec][name] = value
    kwargs = {sec.name: sec.type(**sections[sec.name]) for sec in dataclasses.fields(SimulationConfig)}
    return SimulationConfig(**kwargs)


def load(path=None, overrides=(), base=None):
    """Read a flat JSON config file, then apply ``key=value`` overrides in order."""
    flat = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object of dotted keys")
        flat.update(data)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        flat[key.strip()] = value
    return from_flat(flat, base)
