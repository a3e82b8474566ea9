"""Run configuration in ``key = value`` INI form.

Sections: ``[eos]``, ``[equilibrium]``, ``[perturbation]``, ``[sim]``,
``[diagnostics]``, ``[sweep]``, ``[scan]``, ``[check]`` and ``[output]``.
Every value is validated, including cross-field constraints, before any
computation starts.  Errors carry the offending file line where possible.
"""

from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diagnostics import DiagnosticsConfig, ParameterError, theorem_rates
from .eos import make_eos
from .simulator import Perturbation, SimConfig

SWEEP_AXES = ("rho_c", "theta", "epsilon", "nu1", "nu2", "gamma")


class ConfigError(ValueError):
    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where = f"{path}:"
            if line is not None:
                where += f"{line}:"
            where += " "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.line = line
        self.path = path


@dataclass(frozen=True)
class EquilibriumSettings:
    rho_c: float | None = 1.0
    target_mass: float | None = None
    G: float = 1.0
    ode_tol: float = 1e-10
    rho_c_low: float = 1e-3
    rho_c_high: float = 1e3
    tol_mass: float = 1e-10
    max_iter: int = 200


@dataclass(frozen=True)
class ScanSettings:
    rho_c_min: float = 1.0
    rho_c_max: float = 1e6
    n_points: int = 60
    plateau_tol: float = 0.05

    def grid(self):
        return np.geomspace(self.rho_c_min, self.rho_c_max, self.n_points)


@dataclass(frozen=True)
class SweepSettings:
    axis: str | None = None
    values: tuple = ()


@dataclass(frozen=True)
class CheckSettings:
    s_max: float = 1e6
    n_samples: int = 200


@dataclass(frozen=True)
class RunConfig:
    eos: object
    equilibrium: EquilibriumSettings
    perturbation: Perturbation
    sim: SimConfig
    diagnostics: DiagnosticsConfig
    scan: ScanSettings = ScanSettings()
    sweep: SweepSettings = SweepSettings()
    check: CheckSettings = CheckSettings()
    output: str | None = None
    echo: dict = field(default_factory=dict)

    def with_value(self, axis, value):
        """Copy with one sweep axis set; the echo is updated to match."""
        echo = {k: dict(v) for k, v in self.echo.items()}
        if axis == "rho_c":
            eq = dataclasses.replace(self.equilibrium, rho_c=value, target_mass=None)
            echo.setdefault("equilibrium", {})["rho_c"] = repr(value)
            echo["equilibrium"].pop("target_mass", None)
            return dataclasses.replace(self, equilibrium=eq, echo=echo)
        if axis == "theta":
            echo.setdefault("diagnostics", {})["theta"] = repr(value)
            return dataclasses.replace(
                self, diagnostics=dataclasses.replace(self.diagnostics, theta=value), echo=echo)
        if axis == "epsilon":
            echo.setdefault("perturbation", {})["epsilon"] = repr(value)
            return dataclasses.replace(
                self, perturbation=dataclasses.replace(self.perturbation, epsilon=value), echo=echo)
        if axis in ("nu1", "nu2"):
            echo.setdefault("sim", {})[axis] = repr(value)
            return dataclasses.replace(self, sim=dataclasses.replace(self.sim, **{axis: value}), echo=echo)
        if axis == "gamma":
            if self.eos.kind != "polytrope":
                raise ConfigError("gamma sweep needs a polytrope equation of state")
            echo.setdefault("eos", {})["gamma"] = repr(value)
            eos = make_eos("polytrope", kappa=self.eos.kappa, gamma=value)
            return dataclasses.replace(self, eos=eos, echo=echo)
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")

    def validate(self, rates=True):
        """Cross-field checks; raises ``ConfigError``.

        ``rates=False`` skips the checks tied to decay rates, which only
        matter for commands that run the dynamics.
        """
        if rates:
            self._validate_rates()
        lo, hi = self.diagnostics.fit_window
        if not 1 <= lo < hi:
            raise ConfigError("fit window must satisfy 1 <= t_lo < t_hi")
        eq = self.equilibrium
        if (eq.rho_c is None) == (eq.target_mass is None):
            raise ConfigError("give exactly one of equilibrium.rho_c and equilibrium.target_mass")
        if self.sweep.axis is not None and self.sweep.axis not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {self.sweep.axis!r}")
        return self

    def _validate_rates(self):
        gb = self.eos.gamma_bar
        try:
            theorem_rates(gb, self.diagnostics.theta)
        except ParameterError as exc:
            raise ConfigError(str(exc)) from None
        for qty, rate in self.diagnostics.fits:
            if rate not in _known_rates():
                raise ConfigError(f"unknown rate {rate!r} in diagnostics.fits")
            if rate == "density_min" and theorem_rates(gb, self.diagnostics.theta).rates[rate] is None:
                raise ConfigError("density_min rate requires 2 < gamma_bar < 4 and small theta")


def _known_rates():
    return set(theorem_rates(5.0 / 3.0, 0.1).rates)


# ---------------------------------------------------------------------------
# parsing


_FIELDS = {
    "equilibrium": {f.name: f for f in dataclasses.fields(EquilibriumSettings)},
    "sim": {f.name: f for f in dataclasses.fields(SimConfig)},
    "scan": {f.name: f for f in dataclasses.fields(ScanSettings)},
    "check": {f.name: f for f in dataclasses.fields(CheckSettings)},
}
_INT_KEYS = {"n_cells", "newton_max", "max_rejections", "growth_after", "max_iter", "n_points",
             "n_samples"}


def _line_of(text, section, key):
    """1-based line of ``key`` inside ``[section]`` (None if not found)."""
    current = None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"\[(.+)\]$", line)
        if m:
            current = m.group(1).strip()
            continue
        if current == section and re.match(rf"{re.escape(key)}\s*[=:]", line):
            return n
    return None


class _Reader:
    def __init__(self, parser, text, path):
        self.parser, self.text, self.path = parser, text, path

    def error(self, msg, section=None, key=None):
        line = _line_of(self.text, section, key) if section and key else None
        return ConfigError(msg, line, self.path)

    def get(self, section, key, conv, default=None):
        if not self.parser.has_option(section, key):
            return default
        raw = self.parser.get(section, key).strip()
        if raw.lower() in ("none", ""):
            return None
        try:
            return conv(raw)
        except (TypeError, ValueError) as exc:
            raise self.error(f"[{section}] {key} = {raw!r}: {exc}", section, key) from None

    def unknown(self, section, allowed):
        if not self.parser.has_section(section):
            return
        for key in self.parser.options(section):
            if key not in allowed:
                raise self.error(f"unknown key {key!r} in [{section}]", section, key)


def _float(raw):
    return float(raw)


def _int(raw):
    val = float(raw)
    if val != int(val):
        raise ValueError("expected an integer")
    return int(val)


def _floats(raw):
    return tuple(float(s) for s in re.split(r"[,\s]+", raw.strip()) if s)


def _fits(raw):
    out = []
    for item in re.split(r"[,\n]+", raw):
        item = item.strip()
        if not item:
            continue
        if ":" not in item:
            raise ValueError(f"fit entry {item!r} must read quantity:rate")
        q, r = (s.strip() for s in item.split(":", 1))
        out.append((q, r))
    return tuple(out)


def _settings(reader, section, cls):
    fields = _FIELDS[section]
    reader.unknown(section, fields)
    kwargs = {}
    for name in fields:
        conv = _int if name in _INT_KEYS else _float
        val = reader.get(section, name, conv, dataclasses.MISSING)
        if val is not dataclasses.MISSING:
            kwargs[name] = val
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}", path=reader.path) from None


def parse_config(text, path=None, rates=True):
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str  # keys are case sensitive (G)
    try:
        parser.read_string(text, source=str(path or "<config>"))
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError(f"malformed line {exc.errors[0][1]}" if exc.errors else str(exc),
                          line, path) from None
    except configparser.Error as exc:
        raise ConfigError(str(exc), getattr(exc, "lineno", None), path) from None
    known = {"eos", "equilibrium", "perturbation", "sim", "diagnostics", "sweep", "scan", "check",
             "output"}
    for sec in parser.sections():
        if sec not in known:
            raise ConfigError(f"unknown section [{sec}]", _section_line(text, sec), path)
    r = _Reader(parser, text, path)

    if not parser.has_section("eos"):
        raise ConfigError("missing [eos] section", path=path)
    kind = r.get("eos", "kind", str)
    params = {k: r.get("eos", k, _float) for k in parser.options("eos") if k != "kind"}
    try:
        eos = make_eos(kind, **params)
    except KeyError as exc:
        raise r.error(f"[eos]: missing parameter {exc.args[0]}", "eos", "kind") from None
    except (TypeError, ValueError) as exc:
        raise r.error(f"[eos]: {exc}", "eos", "kind") from None

    equilibrium = _settings(r, "equilibrium", EquilibriumSettings)
    if parser.has_option("equilibrium", "target_mass") and not parser.has_option("equilibrium", "rho_c"):
        equilibrium = dataclasses.replace(equilibrium, rho_c=None)
    sim = _settings(r, "sim", SimConfig)
    scan = _settings(r, "scan", ScanSettings)
    check = _settings(r, "check", CheckSettings)

    r.unknown("perturbation", {"kind", "epsilon", "beta1", "beta2"})
    try:
        pert = Perturbation(
            kind=r.get("perturbation", "kind", str, "velocity_bump"),
            epsilon=r.get("perturbation", "epsilon", _float, 1e-3),
            beta1=r.get("perturbation", "beta1", _float),
            beta2=r.get("perturbation", "beta2", _float),
        )
    except ValueError as exc:
        raise r.error(f"[perturbation]: {exc}", "perturbation", "kind") from None

    r.unknown("diagnostics", {"theta", "l_frac", "slack", "fit_t_lo", "fit_t_hi", "fits"})
    dd = DiagnosticsConfig()
    try:
        diag = DiagnosticsConfig(
            theta=r.get("diagnostics", "theta", _float, dd.theta),
            l_frac=r.get("diagnostics", "l_frac", _float, dd.l_frac),
            slack=r.get("diagnostics", "slack", _float, dd.slack),
            fit_window=(r.get("diagnostics", "fit_t_lo", _float, dd.fit_window[0]),
                        r.get("diagnostics", "fit_t_hi", _float, dd.fit_window[1])),
            fits=r.get("diagnostics", "fits", _fits, dd.fits),
        )
    except ParameterError as exc:
        raise ConfigError(f"[diagnostics]: {exc}", path=path) from None

    r.unknown("sweep", {"axis", "values"})
    sweep = SweepSettings(axis=r.get("sweep", "axis", str), values=r.get("sweep", "values", _floats, ()))
    r.unknown("output", {"dir"})
    output = r.get("output", "dir", str)

    echo = {sec: dict(parser.items(sec)) for sec in parser.sections()}
    cfg = RunConfig(eos, equilibrium, pert, sim, diag, scan, sweep, check, output, echo)
    return cfg.validate(rates)


def _section_line(text, section):
    for n, raw in enumerate(text.splitlines(), 1):
        if raw.strip() == f"[{section}]":
            return n
    return None


def load_config(path, rates=True):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path=path) from None
    return parse_config(text, path, rates)


def render_config(echo):
    """INI text reproducing a config echo."""
    lines = []
    for sec, items in echo.items():
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {v}" for k, v in items.items())
        lines.append("")
    return "\n".join(lines)
