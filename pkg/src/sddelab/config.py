"""INI run configuration.

Example::

    [model]
    hurst = 0.75
    horizon = 2.0
    delay = 1.0
    eta = 0
    sigma = 1 + 0.25*tanh(x)
    b = 0.1*sin(x)
    scan_min = -10
    scan_max = 10

    [simulation]
    paths = 100000
    steps_per_delay = 32
    seed = 20240101

    [verification]
    t_early = 0.5
    t_late = 1.5

    [output]
    directory = out
    formats = csv,json,svg
"""
from __future__ import annotations

import configparser
import os
import hashlib
from dataclasses import asdict, dataclass, field, fields

from .coeffs import ExpressionError
from .sdde import ModelError, ModelSpec, make_model


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    hurst: float = 0.75
    horizon: float = 2.0
    delay: float = 1.0
    eta: str = "0"
    eta0: float | None = None
    sigma: str = "1"
    b: str = "0"
    scan_min: float = -10.0
    scan_max: float = 10.0
    scan_points: int = 100_001
    lambda_: float | None = None
    Lambda: float | None = None


@dataclass
class SimulationConfig:
    paths: int = 100_000
    steps_per_delay: int = 32
    seed: int = 20240101
    workers: int = 0  # 0 = one per CPU


@dataclass
class VerificationConfig:
    t_early: float = 0.5
    t_late: float = 1.5
    x_radius: float = 3.0
    points: int = 101
    theta_nodes: int = 16
    bins: int = 41
    min_bin_count: int = 200
    c1: float | None = None
    c2: float | None = None
    n_se: float = 3.0
    n_values: list = field(default_factory=lambda: [8, 16, 32, 64])
    kh_paths: int = 1000
    x_target: float | None = None
    checks: list = field(default_factory=lambda: ["early", "late"])


@dataclass
class OutputConfig:
    directory: str | None = None
    formats: list = field(default_factory=lambda: ["csv", "json"])


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    verification: VerificationConfig = field(default_factory=VerificationConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    source_text: str = ""

    def validate(self):
        m, s = self.model, self.simulation
        if not 0.5 < m.hurst < 1.0:
            raise ConfigError(f"model.hurst = {m.hurst} must lie in (0.5, 1)")
        if m.delay <= 0:
            raise ConfigError(f"model.delay = {m.delay} must be positive")
        if m.horizon <= 0:
            raise ConfigError(f"model.horizon = {m.horizon} must be positive")
        if s.paths < 100:
            raise ConfigError(f"simulation.paths = {s.paths} must be >= 100")
        if s.steps_per_delay < 1:
            raise ConfigError("simulation.steps_per_delay must be >= 1")
        if s.workers < 0:
            raise ConfigError("simulation.workers must be >= 0")
        v = self.verification
        if v.points < 2 or v.x_radius <= 0 or v.n_se <= 0:
            raise ConfigError("verification.points >= 2, x_radius > 0 and n_se > 0 required")
        if v.kh_paths < 1:
            raise ConfigError("verification.kh_paths must be >= 1")
        if m.scan_max <= m.scan_min:
            raise ConfigError("model.scan_max must exceed model.scan_min")
        return self

    @property
    def workers(self):
        return self.simulation.workers or os.cpu_count() or 1

    def build_model(self) -> ModelSpec:
        m = self.model
        try:
            return make_model(
                m.hurst, m.horizon, m.delay, m.sigma, m.b, eta=m.eta, eta0=m.eta0,
                steps_per_delay=self.simulation.steps_per_delay,
                scan_range=(m.scan_min, m.scan_max), scan_points=m.scan_points,
                declared_lambda=m.lambda_, declared_Lambda=m.Lambda,
            )
        except (ModelError, ExpressionError) as exc:
            raise ConfigError(str(exc)) from exc

    def digest(self):
        return hashlib.sha256(canonical(self).encode()).hexdigest()

    def as_dict(self):
        d = asdict(self)
        d.pop("source_text")
        return d


_SECTIONS = {
    "model": ModelConfig,
    "simulation": SimulationConfig,
    "verification": VerificationConfig,
    "output": OutputConfig,
}

_KEY_ALIASES = {"lambda": "lambda_", "h": "hurst", "t": "horizon", "r": "delay"}


def _convert(raw, ftype, where):
    raw = raw.strip()
    t = str(ftype)
    if raw.lower() in ("", "none") and "None" in t:
        return None
    try:
        if t.startswith("list"):
            items = [p.strip() for p in raw.split(",") if p.strip()]
            return [int(p) if p.lstrip("-").isdigit() else p for p in items]
        if t.startswith("int"):
            return int(raw)
        if t.startswith("float"):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from exc


def apply(cfg: RunConfig, section, key, raw):
    if section not in _SECTIONS:
        raise ConfigError(f"unknown section [{section}]")
    key = _KEY_ALIASES.get(key, key) if section == "model" else key
    target = getattr(cfg, section)
    ftypes = {f.name: f.type for f in fields(target)}
    if key not in ftypes:
        raise ConfigError(f"unknown key {section}.{key}")
    setattr(target, key, _convert(raw, ftypes[key], f"{section}.{key}"))


def load(path=None, text=None, overrides=()) -> RunConfig:
    """Read an INI file (or text); ``overrides`` are 'section.key=value' strings."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if text is None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    cfg = RunConfig(source_text=text)
    for section in parser.sections():
        for key, raw in parser.items(section):
            apply(cfg, section, key, raw)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} is not section.key=value")
        lhs, raw = item.split("=", 1)
        section, key = lhs.split(".", 1)
        apply(cfg, section.strip(), key.strip(), raw)
    return cfg.validate()


# settings that cannot change any number in the outputs
_NOT_HASHED = {("simulation", "workers"), ("output", "directory"), ("output", "formats")}


def canonical(cfg: RunConfig):
    """Stable text rendering used for the config hash."""
    lines = []
    for name in _SECTIONS:
        sec = getattr(cfg, name)
        lines.append(f"[{name}]")
        for f in fields(sec):
            if (name, f.name) not in _NOT_HASHED:
                lines.append(f"{f.name} = {getattr(sec, f.name)!r}")
    return "\n".join(lines) + "\n"
