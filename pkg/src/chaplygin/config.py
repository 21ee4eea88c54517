"""Run configuration: TOML loading, dotted-key overrides, validation.

A run configuration bundles the plant parameters, controller gains,
integrator settings, a list of initial-condition scenarios and output
options.  The packaged default (``chaplygin/presets/default.toml``)
reproduces the published benchmark experiment: the Coulomb-approximation
sleigh regulated from four headings for 100 s.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .controller import ControllerParams
from .integrator import IntegratorConfig
from .model import (
    ConstantDamping,
    CoulombApproxDamping,
    DampingModel,
    ModelParams,
    QState,
    ZeroDamping,
)

__all__ = [
    "ConfigError",
    "Scenario",
    "OutputSpec",
    "RunConfig",
    "load_raw_config",
    "apply_overrides",
    "parse_run_config",
    "load_run_config",
    "default_config_path",
]


class ConfigError(ValueError):
    """Invalid run configuration; ``errors`` lists field-level messages."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass(frozen=True)
class Scenario:
    """One initial condition (x, y, theta, p1, p2)."""

    name: str
    q0: tuple[float, float, float]
    p0: tuple[float, float] = (0.0, 0.0)

    @property
    def initial(self) -> QState:
        return QState(self.q0[0], self.q0[1], self.q0[2],
                      self.p0[0], self.p0[1])


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "runs"
    formats: tuple[str, ...] = ("csv", "json")


@dataclass(frozen=True)
class RunConfig:
    model: ModelParams
    controller: ControllerParams
    integrator: IntegratorConfig
    scenarios: tuple[Scenario, ...]
    outputs: OutputSpec = field(default_factory=OutputSpec)


def default_config_path() -> Path:
    """Path of the packaged default configuration."""
    return Path(str(resources.files("chaplygin") / "presets" / "default.toml"))


def load_raw_config(path: Optional[str] = None) -> dict:
    """Read a TOML configuration file (the packaged default when omitted)."""
    p = Path(path) if path is not None else default_config_path()
    try:
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {p}"])
    except tomllib.TOMLDecodeError as err:
        raise ConfigError([f"{p}: {err}"])


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``section.key=value`` overrides to a raw config tree.

    Values are parsed as TOML literals; anything that does not parse is kept
    as a bare string.  Returns a new tree; the input is not modified.
    """
    import copy

    tree = copy.deepcopy(raw)
    errors = []
    for item in overrides or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            errors.append(f"override {item!r}: expected key.path=value")
            continue
        try:
            parsed = tomllib.loads(f"v = {value}")["v"]
        except tomllib.TOMLDecodeError:
            parsed = value
        node = tree
        parts = key.split(".")
        ok = True
        for part in parts[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                errors.append(f"override {item!r}: {part} is not a table")
                ok = False
                break
            node = nxt
        if ok:
            node[parts[-1]] = parsed
    if errors:
        raise ConfigError(errors)
    return tree


def _expect_table(raw, key, errors) -> dict:
    value = raw.get(key)
    if value is None:
        errors.append(f"{key}: missing section")
        return {}
    if not isinstance(value, dict):
        errors.append(f"{key}: expected a table")
        return {}
    return value


def _reject_unknown(table: dict, known, prefix: str, errors) -> None:
    for key in table:
        if key not in known:
            errors.append(f"{prefix}.{key}: unknown key")


def _parse_damping(table, errors) -> DampingModel:
    kind = table.get("kind", "zero")
    try:
        if kind == "zero":
            _reject_unknown(table, {"kind"}, "model.damping", errors)
            return ZeroDamping()
        if kind == "constant":
            _reject_unknown(table, {"kind", "d1", "d2"}, "model.damping", errors)
            return ConstantDamping(float(table.get("d1", 0.0)),
                                   float(table.get("d2", 0.0)))
        if kind == "coulomb_approx":
            _reject_unknown(table, {"kind", "epsilon"}, "model.damping", errors)
            return CoulombApproxDamping(float(table.get("epsilon", 0.1)))
        errors.append(f"model.damping.kind: unknown kind {kind!r}")
    except (TypeError, ValueError) as err:
        errors.append(f"model.damping: {err}")
    return ZeroDamping()


def parse_run_config(raw: dict) -> RunConfig:
    """Validate a raw config tree, collecting field-level errors."""
    errors: list[str] = []
    known_sections = {"model", "controller", "integrator", "scenarios", "outputs"}
    for key in raw:
        if key not in known_sections:
            errors.append(f"{key}: unknown section")

    mt = _expect_table(raw, "model", errors)
    _reject_unknown(mt, {"m", "J", "l", "damping"}, "model", errors)
    damping = _parse_damping(mt.get("damping", {"kind": "zero"}) or {}, errors)
    model = None
    try:
        model = ModelParams(m=float(mt.get("m", 0.0)), J=float(mt.get("J", 0.0)),
                            l=float(mt.get("l", 0.0)), damping=damping)
    except (TypeError, ValueError) as err:
        errors.append(f"model: {err}")

    ct = _expect_table(raw, "controller", errors)
    _reject_unknown(ct, {"gains", "k", "d_hat", "form"}, "controller", errors)
    controller = None
    try:
        controller = ControllerParams(
            gains=tuple(ct.get("gains", (2.0, 0.5, 0.8))),
            k=float(ct.get("k", 0.1)),
            d_hat=np.asarray(ct.get("d_hat", [4.0, 8.0]), dtype=float),
            form=ct.get("form", "velocity"))
    except (TypeError, ValueError) as err:
        errors.append(f"controller: {err}")

    it = _expect_table(raw, "integrator", errors)
    known_int = {"rel_tol", "abs_tol", "dt_init", "dt_min", "dt_max",
                 "t_final", "stop_tol", "record_interval"}
    _reject_unknown(it, known_int, "integrator", errors)
    integrator = None
    try:
        integrator = IntegratorConfig(**{k: float(v) for k, v in it.items()})
    except (TypeError, ValueError) as err:
        errors.append(f"integrator: {err}")

    scenarios: list[Scenario] = []
    sc_raw = raw.get("scenarios")
    if not isinstance(sc_raw, list) or not sc_raw:
        errors.append("scenarios: need at least one [[scenarios]] entry")
        sc_raw = []
    for i, entry in enumerate(sc_raw):
        label = f"scenarios[{i}]"
        if not isinstance(entry, dict):
            errors.append(f"{label}: expected a table")
            continue
        _reject_unknown(entry, {"name", "q0", "p0"}, label, errors)
        name = str(entry.get("name", f"s{i + 1}"))
        try:
            q0 = tuple(float(v) for v in entry["q0"])
            p0 = tuple(float(v) for v in entry.get("p0", (0.0, 0.0)))
            if len(q0) != 3:
                raise ValueError("q0 must have 3 entries")
            if len(p0) != 2:
                raise ValueError("p0 must have 2 entries")
            scenarios.append(Scenario(name=name, q0=q0, p0=p0))
        except (KeyError, TypeError, ValueError) as err:
            errors.append(f"{label}: {err if str(err) else 'missing q0'}")

    names = [s.name for s in scenarios]
    if len(set(names)) != len(names):
        errors.append("scenarios: names must be unique")

    ot_raw = raw.get("outputs", {})
    outputs = OutputSpec()
    if not isinstance(ot_raw, dict):
        errors.append("outputs: expected a table")
    else:
        _reject_unknown(ot_raw, {"directory", "formats"}, "outputs", errors)
        formats = tuple(ot_raw.get("formats", ("csv", "json")))
        bad = [f for f in formats if f not in ("csv", "json")]
        if bad:
            errors.append(f"outputs.formats: unknown format(s) {bad}")
        outputs = OutputSpec(directory=str(ot_raw.get("directory", "runs")),
                             formats=formats)

    if errors:
        raise ConfigError(errors)
    assert model is not None and controller is not None and integrator is not None
    return RunConfig(model=model, controller=controller, integrator=integrator,
                     scenarios=tuple(scenarios), outputs=outputs)


def load_run_config(path: Optional[str] = None, overrides=()) -> RunConfig:
    """Load, override and validate in one step."""
    return parse_run_config(apply_overrides(load_raw_config(path), overrides))
