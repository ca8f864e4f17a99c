"""Scenario files.

A scenario is an INI file with sections ``[cone]``, ``[lagrangian]``,
``[terminal]``, ``[discount]`` and ``[run]``.  Arrays are written in
bracketed row-major form (JSON syntax), e.g. ``Q = [[[1.0]], [[1.0]]]``.
Keys are case-insensitive.

::

    [cone]
    generators = [[1, 0], [0, 1]]   ; rows span the dual cone
    c0 = [1, 1]                     ; optional
    k_grid = 33

    [lagrangian]
    family = QUADRATIC              ; or QUARTIC_REG (adds eps)
    Q = [[[1.0]], [[1.0]]]          ; (d, n, n)
    a = [[0.0], [1.0]]              ; (d, n)
    b = [0.0, 0.0]                  ; (d,)

    [terminal]
    family = LINEAR                 ; or CONVEX_QUAD_SAT (adds scale, centers)
    G = [[1.0], [0.0]]              ; (d, n)
    g0 = [0.0, 0.0]

    [discount]
    family = CONSTANT_RATE          ; HYPERBOLIC or VARIABLE_RATE
    rate = 0.1                      ; VARIABLE_RATE takes breakpoints, rates

    [run]
    horizon_T = 1.0
    grid_t = 0:0.8:5                ; optional command defaults
    grid_x = -1:1:5                 ; one LO:HI:N per state dimension, ';'-separated
    seed = 0
    jobs = 1
"""

from __future__ import annotations

import configparser
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, SetValuedHJBError
from .lattice import ConeSpec
from .problem import DiscountSpec, LagrangianSpec, Scenario, TerminalSpec

SECTIONS = ("cone", "lagrangian", "terminal", "discount", "run")
_KNOWN = {
    "cone": {"generators", "c0", "k_grid"},
    "lagrangian": {"family", "q", "a", "b", "eps"},
    "terminal": {"family", "g", "g0", "scale", "centers"},
    "discount": {"family", "rate", "breakpoints", "rates"},
    "run": {"horizon_t", "grid_t", "grid_x", "seed", "jobs", "tol", "panels"},
}
_REQUIRED = {
    "cone": ("generators",),
    "lagrangian": ("family", "q"),
    "terminal": ("family", "g"),
    "discount": ("family",),
    "run": ("horizon_t",),
}


@dataclass(frozen=True)
class GridSpec:
    lo: float
    hi: float
    count: int

    @classmethod
    def parse(cls, text):
        parts = str(text).strip().split(":")
        if len(parts) != 3:
            raise ConfigurationError(f"grid {text!r} must have the form LO:HI:N")
        try:
            lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError:
            raise ConfigurationError(f"grid {text!r} must have the form LO:HI:N") from None
        if count < 1:
            raise ConfigurationError(f"grid {text!r}: count must be ≥ 1")
        if not (np.isfinite(lo) and np.isfinite(hi)) or hi < lo:
            raise ConfigurationError(f"grid {text!r}: need finite LO ≤ HI")
        if count == 1 and hi != lo:
            raise ConfigurationError(f"grid {text!r}: a single point needs LO = HI")
        return cls(lo, hi, count)

    def values(self):
        return np.linspace(self.lo, self.hi, self.count)

    def __str__(self):
        return f"{self.lo!r}:{self.hi!r}:{self.count}"


@dataclass(frozen=True)
class RunDefaults:
    """Optional command defaults carried by the ``[run]`` section."""

    grid_t: GridSpec | None = None
    grid_x: tuple = ()
    seed: int | None = None
    jobs: int | None = None
    tol: float | None = None
    panels: int | None = None


@dataclass(frozen=True)
class ScenarioFile:
    scenario: Scenario
    run: RunDefaults = field(default_factory=RunDefaults)
    source: str = "<string>"


class _Reader:
    def __init__(self, text, source):
        self.text = text
        self.source = source
        self.parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
        try:
            self.parser.read_string(text, source=source)
        except configparser.Error as exc:
            line = getattr(exc, "lineno", None)
            where = f"{source}:{line}" if line else source
            raise ConfigurationError(f"{where}: {exc.message if hasattr(exc, 'message') else exc}") from None
        self._lines = self._index_lines(text)

    @staticmethod
    def _index_lines(text):
        where, section = {}, None
        for i, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            m = re.match(r"^\[([^\]]+)\]", line)
            if m:
                section = m.group(1).strip().lower()
                where[(section, None)] = i
                continue
            m = re.match(r"^([A-Za-z0-9_]+)\s*[=:]", line)
            if m and section is not None:
                where[(section, m.group(1).lower())] = i
        return where

    def error(self, section, key, message):
        line = self._lines.get((section, key)) or self._lines.get((section, None))
        loc = f"{self.source}:{line}" if line else self.source
        field_name = f"[{section}] {key}" if key else f"[{section}]"
        return ConfigurationError(f"{loc}: {field_name}: {message}")

    def check_layout(self):
        for sec in self.parser.sections():
            if sec.lower() not in SECTIONS:
                raise self.error(sec.lower(), None, f"unknown section; expected one of {', '.join(SECTIONS)}")
        for sec in SECTIONS:
            if not self.parser.has_section(sec):
                raise ConfigurationError(f"{self.source}: missing section [{sec}]")
            for key in self.parser[sec]:
                if key not in _KNOWN[sec]:
                    raise self.error(sec, key, "unknown field")
            for key in _REQUIRED[sec]:
                if key not in self.parser[sec]:
                    raise self.error(sec, key, "required field is missing")

    def raw(self, section, key):
        return self.parser[section].get(key)

    def array(self, section, key, default=None):
        text = self.raw(section, key)
        if text is None:
            return default
        try:
            value = json.loads(text)
        except json.JSONDecodeError as exc:
            raise self.error(section, key, f"not a bracketed numeric array ({exc.msg})") from None
        try:
            arr = np.asarray(value, dtype=float)
        except (TypeError, ValueError):
            raise self.error(section, key, "array is ragged or non-numeric") from None
        if not np.all(np.isfinite(arr)):
            raise self.error(section, key, "entries must be finite")
        return arr

    def scalar(self, section, key, kind=float, default=None):
        text = self.raw(section, key)
        if text is None:
            return default
        try:
            return kind(text)
        except ValueError:
            raise self.error(section, key, f"expected {kind.__name__}, got {text!r}") from None

    def word(self, section, key):
        return self.raw(section, key).strip().upper()

    def guarded(self, section, build):
        try:
            return build()
        except SetValuedHJBError as exc:
            if str(exc).startswith(f"{self.source}:"):
                raise
            raise self.error(section, None, str(exc)) from None


def parse_scenario(text, source="<string>"):
    """Parse scenario text; errors name the file, line and field."""
    rd = _Reader(text, source)
    rd.check_layout()
    cone = rd.guarded(
        "cone",
        lambda: ConeSpec.from_generators(
            rd.array("cone", "generators"), rd.array("cone", "c0"), rd.scalar("cone", "k_grid", int, 33)
        ),
    )
    lag = rd.guarded(
        "lagrangian",
        lambda: LagrangianSpec.build(
            rd.word("lagrangian", "family"),
            rd.array("lagrangian", "q"),
            rd.array("lagrangian", "a"),
            rd.array("lagrangian", "b"),
            rd.array("lagrangian", "eps"),
        ),
    )
    term = rd.guarded(
        "terminal",
        lambda: TerminalSpec.build(
            rd.word("terminal", "family"),
            rd.array("terminal", "g"),
            rd.array("terminal", "g0"),
            rd.array("terminal", "scale"),
            rd.array("terminal", "centers"),
        ),
    )
    disc = rd.guarded(
        "discount",
        lambda: DiscountSpec.build(
            rd.word("discount", "family"),
            rd.scalar("discount", "rate", float, 0.0),
            rd.array("discount", "breakpoints"),
            rd.array("discount", "rates"),
        ),
    )
    horizon = rd.scalar("run", "horizon_t", float)
    scn = rd.guarded("run", lambda: Scenario(cone, lag, term, disc, horizon))

    grid_t = rd.raw("run", "grid_t")
    grid_x = rd.raw("run", "grid_x")
    try:
        run = RunDefaults(
            grid_t=GridSpec.parse(grid_t) if grid_t else None,
            grid_x=tuple(GridSpec.parse(g) for g in grid_x.split(";")) if grid_x else (),
            seed=rd.scalar("run", "seed", int),
            jobs=rd.scalar("run", "jobs", int),
            tol=rd.scalar("run", "tol", float),
            panels=rd.scalar("run", "panels", int),
        )
    except ConfigurationError as exc:
        raise rd.error("run", None, str(exc)) from None
    return ScenarioFile(scn, run, source)


def load_scenario(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read scenario file {path}: {exc.strerror}") from None
    return parse_scenario(text, str(path))


def _fmt(arr):
    return json.dumps(np.asarray(arr, dtype=float).tolist())


def dump_scenario(scn, run=None):
    """Scenario text that :func:`parse_scenario` reads back to an equal instance."""
    cone, lag, term, disc = scn.cone, scn.lagrangian, scn.terminal, scn.discount
    out = [
        "[cone]",
        f"generators = {_fmt(cone.generators_dual)}",
        f"c0 = {_fmt(cone.c0)}",
        f"k_grid = {cone.k_grid}",
        "",
        "[lagrangian]",
        f"family = {lag.family}",
        f"Q = {_fmt(lag.Q)}",
        f"a = {_fmt(lag.a)}",
        f"b = {_fmt(lag.b)}",
    ]
    if lag.family == "QUARTIC_REG":
        out.append(f"eps = {_fmt(lag.eps)}")
    out += ["", "[terminal]", f"family = {term.family}", f"G = {_fmt(term.G)}", f"g0 = {_fmt(term.g0)}"]
    if term.family == "CONVEX_QUAD_SAT":
        out += [f"scale = {_fmt(term.scale)}", f"centers = {_fmt(term.centers)}"]
    out += ["", "[discount]", f"family = {disc.family}"]
    if disc.family == "VARIABLE_RATE":
        out += [f"breakpoints = {_fmt(disc.breakpoints)}", f"rates = {_fmt(disc.rates)}"]
    else:
        out.append(f"rate = {disc.rate!r}")
    out += ["", "[run]", f"horizon_T = {scn.horizon_T!r}"]
    if run is not None:
        if run.grid_t is not None:
            out.append(f"grid_t = {run.grid_t}")
        if run.grid_x:
            out.append("grid_x = " + "; ".join(str(g) for g in run.grid_x))
        for key in ("seed", "jobs", "tol", "panels"):
            val = getattr(run, key)
            if val is not None:
                out.append(f"{key} = {val!r}")
    return "\n".join(out) + "\n"


def bundled_path(name="standard.cfg"):
    return Path(__file__).with_name("data") / name
