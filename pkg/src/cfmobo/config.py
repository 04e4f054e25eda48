"""Scenario presets and the flat ``section.key = value`` experiment file format.

Example::

    experiment.scenario = cf5x5
    experiment.methods = nehvi, sobol
    experiment.seeds = 0, 1, 2
    network.shadow_std_db = 8.0
    optimizer.budget = 30

The preset named by ``experiment.scenario`` is expanded first (wherever that
line appears), then every other line overrides it in file order.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Iterable

from .bo_loop import METHODS, BoConfig
from .errors import InvalidConfig
from .topology import NetworkConfig


class ConfigError(InvalidConfig):
    """Configuration problem, with the offending location in the message when known."""


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    optimizer: BoConfig
    methods: tuple[str, ...] = METHODS
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)

    @property
    def network(self) -> NetworkConfig:
        return self.optimizer.network

    def validate(self) -> "ExperimentConfig":
        self.optimizer.validate()
        if not self.methods:
            raise ConfigError("methods must not be empty")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"methods: unknown method {m!r}; expected a subset of {list(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods must not repeat")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if len(set(self.seeds)) != len(self.seeds) or min(self.seeds) < 0:
            raise ConfigError("seeds must be distinct nonnegative integers")
        return self


def _preset(scenario, L, K, area, mode, budget, methods=METHODS, **opt) -> ExperimentConfig:
    net = NetworkConfig(num_aps=L, num_ues=K, antennas_per_ap=128, area_side=area, p_max_ul=0.2, p_max_dl=0.2 * K)
    return ExperimentConfig(scenario, BoConfig(network=net, mode=mode, budget=budget, **opt), tuple(methods))


PRESETS: dict[str, ExperimentConfig] = {
    p.scenario: p
    for p in (
        _preset("link1x1_powers", 1, 1, 500.0, "powers_only", 50),
        _preset("link1x1_weights", 1, 1, 500.0, "weights_only", 50),
        _preset("link1x1_mixed", 1, 1, 500.0, "mixed", 50),
        _preset("cf5x5", 5, 5, 500.0, "full", 50),
        # thousands of inputs: fewer and shorter GP restarts keep an iteration to seconds
        _preset("cf30x20", 20, 30, 1000.0, "full", 100, ("nehvi", "sobol"), gp_restarts=4, gp_maxiter=100),
        _preset("cf60x40", 40, 60, 1000.0, "full", 100, ("nehvi", "sobol"), gp_restarts=4, gp_maxiter=100),
    )
}


def preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown scenario {name!r}; available: {', '.join(PRESETS)}") from None


_NETWORK_KEYS = {f.name: f.type for f in fields(NetworkConfig)}
_OPTIMIZER_KEYS = {f.name: f.type for f in fields(BoConfig) if f.name != "network"}
_EXPERIMENT_KEYS = {"scenario": "str", "methods": "list[str]", "seeds": "list[int]"}
SECTIONS = {"experiment": _EXPERIMENT_KEYS, "network": _NETWORK_KEYS, "optimizer": _OPTIMIZER_KEYS}


def _convert(text: str, type_name: str):
    text = text.strip()
    if type_name.endswith("| None"):
        if text.lower() == "none":
            return None
        type_name = type_name[: -len("| None")].strip()
    if type_name == "bool":
        low = text.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError(f"expected true/false, got {text!r}")
    if type_name == "int":
        return int(text)
    if type_name == "float":
        return float(text)
    if type_name == "str":
        if not text:
            raise ValueError("expected a non-empty string")
        return text
    if type_name.startswith("list["):
        inner = type_name[5:-1]
        items = [t.strip() for t in text.split(",") if t.strip()]
        return tuple(_convert(t, inner) for t in items)
    raise ValueError(f"unsupported field type {type_name}")


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


@dataclass
class _Entry:
    line: int
    section: str
    key: str
    raw: str


def _split_line(line: str, lineno: int, source: str) -> _Entry | None:
    body = line.split("#", 1)[0].strip()
    if not body:
        return None
    if "=" not in body:
        raise ConfigError(f"{source}:{lineno}: expected 'section.key = value', got {body!r}")
    lhs, rhs = (s.strip() for s in body.split("=", 1))
    if "." not in lhs:
        raise ConfigError(f"{source}:{lineno}: key {lhs!r} needs a section prefix (one of {', '.join(SECTIONS)})")
    section, key = lhs.split(".", 1)
    if section not in SECTIONS:
        raise ConfigError(f"{source}:{lineno}: unknown section {section!r}")
    if key not in SECTIONS[section]:
        raise ConfigError(f"{source}:{lineno}: unknown key {lhs!r}")
    return _Entry(lineno, section, key, rhs)


def _apply(cfg: ExperimentConfig, entries: Iterable[_Entry], source: str) -> ExperimentConfig:
    net, opt, exp = {}, {}, {}
    seen: dict[str, int] = {}
    for e in entries:
        if e.section == "experiment" and e.key == "scenario":
            continue
        try:
            value = _convert(e.raw, SECTIONS[e.section][e.key])
        except ValueError as err:
            raise ConfigError(f"{source}:{e.line}: {e.section}.{e.key}: {err}") from None
        {"network": net, "optimizer": opt, "experiment": exp}[e.section][e.key] = value
        seen[f"{e.section}.{e.key}"] = e.line
    out = replace(
        cfg,
        optimizer=replace(cfg.optimizer, network=replace(cfg.network, **net), **opt),
        **exp,
    )
    try:
        return out.validate()
    except InvalidConfig as err:
        msg = str(err)
        # attribute the failure to the line that set the key it names
        hits = [k for k in seen if k.split(".", 1)[1] in msg]
        if hits:
            key = max(hits, key=lambda k: len(k.split(".", 1)[1]))
            raise ConfigError(f"{source}:{seen[key]}: {key}: {msg}") from None
        raise ConfigError(f"{source}: {msg}") from None


def parse_text(text: str, scenario: str | None = None, source: str = "<config>") -> ExperimentConfig:
    """Parse config text; ``scenario`` is used when the text does not name one."""
    entries = [e for i, line in enumerate(text.splitlines(), 1) if (e := _split_line(line, i, source))]
    named = [e for e in entries if e.section == "experiment" and e.key == "scenario"]
    if named:
        scenario = named[-1].raw.strip()
    if scenario is None:
        raise ConfigError(f"{source}: no scenario given (set experiment.scenario)")
    try:
        base = preset(scenario)
    except ConfigError as err:
        where = f"{source}:{named[-1].line}" if named else source
        raise ConfigError(f"{where}: {err}") from None
    return _apply(base, entries, source)


def parse_config(path, scenario: str | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err.strerror or err}") from None
    return parse_text(text, scenario, str(path))


def apply_overrides(cfg: ExperimentConfig, overrides: Iterable[str]) -> ExperimentConfig:
    """Apply ``section.key=value`` strings (as given on the command line)."""
    entries = []
    for i, item in enumerate(overrides, 1):
        e = _split_line(item, i, "--override")
        if e is None:
            continue
        if e.section == "experiment" and e.key == "scenario":
            raise ConfigError("--override: the scenario cannot be overridden; use --scenario")
        entries.append(e)
    return _apply(cfg, entries, "--override")


def emit_config(cfg: ExperimentConfig) -> str:
    """Every setting, one per line, in a form :func:`parse_text` reads back identically."""
    lines = [
        f"experiment.scenario = {cfg.scenario}",
        f"experiment.methods = {_format(cfg.methods)}",
        f"experiment.seeds = {_format(cfg.seeds)}",
    ]
    lines += [f"network.{k} = {_format(getattr(cfg.network, k))}" for k in _NETWORK_KEYS]
    lines += [f"optimizer.{k} = {_format(getattr(cfg.optimizer, k))}" for k in _OPTIMIZER_KEYS]
    return "\n".join(lines) + "\n"
