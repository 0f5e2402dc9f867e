"""Key-value experiment configuration with sectioned, line-numbered validation.

The format is INI-like::

    [grid]
    dim = 1
    n = 64

Comments start with ``#`` or ``;``.  :func:`parse_config` collects every
problem it finds (unknown sections or keys, bad values, missing required
sections) before raising a single :class:`~sclab.errors.ConfigError`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .errors import ConfigError
from .hyperbolic import SCHEMES, SolverConfig
from .models import Control, Field, FluxModel, NoiseModel, TorusGrid

TASKS = ("solve", "skeleton", "parabolic", "mc", "minimize", "cond-b", "weak-probe",
         "kinetic-check", "action", "ldp-fit")
EVENT_KINDS = ("terminal_mean_threshold", "terminal_l1_ball_complement")


def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _floats(s: str) -> tuple[float, ...]:
    return tuple(_float(p) for p in s.replace(";", ",").split(",") if p.strip())


def _int(s: str) -> int:
    return int(s)


def _str(s: str) -> str:
    return s


def _choice(*options: str) -> Callable[[str], str]:
    def conv(s: str) -> str:
        if s not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return s
    return conv


@dataclass(frozen=True)
class Key:
    conv: Callable[[str], Any]
    default: Any = None
    check: Callable[[Any], str | None] | None = None
    required: bool = False


def _gt(lo):
    return lambda v: None if v > lo else f"must be > {lo}"


def _ge(lo):
    return lambda v: None if v >= lo else f"must be >= {lo}"


def _all_gt(lo):
    return lambda vs: None if vs and all(v > lo for v in vs) else f"values must be > {lo}"


def _cfl(v):
    return None if 0 < v <= 1 else "cfl out of (0,1]"


SCHEMA: dict[str, dict[str, Key]] = {
    "experiment": {
        "name": Key(_str, "experiment"),
        "task": Key(_choice(*TASKS)),
        "seed": Key(_int, 0, _ge(0)),
        "output_dir": Key(_str, "out"),
    },
    "grid": {
        "dim": Key(_int, 1, lambda v: None if v in (1, 2) else "dim must be 1 or 2"),
        "n": Key(_int, None, _ge(4), required=True),
    },
    "flux": {
        "kind": Key(_choice("burgers", "linear", "polynomial", "zero"), None, required=True),
        "c": Key(_floats, (1.0,)),
        "coeffs": Key(_floats, (0.0, 0.0, 0.5)),
    },
    "noise": {
        "K": Key(_int, 1, _ge(1)),
        "sigma": Key(_float, 0.0, _ge(0)),
        "q": Key(_float, 1.0, _ge(1)),
        "b0": Key(_float, 1.0),
        "b1": Key(_float, 0.0),
        "u_window": Key(_float, 10.0, _gt(0)),
    },
    "control": {
        "kind": Key(_choice("zero", "constant", "sine", "file"), "zero"),
        "values": Key(_floats, ()),
        "amplitude": Key(_float, 1.0),
        "frequency": Key(_float, 1.0),
        "mode": Key(_int, 1, _ge(1)),
        "file": Key(_str, None),
    },
    "time": {
        "T": Key(_float, None, _gt(0), required=True),
        "n_steps": Key(_int, None, _ge(1)),
        "dt": Key(_float, None, _gt(0)),
        "cfl": Key(_float, 0.45, _cfl),
    },
    "solver": {
        "scheme": Key(_choice(*SCHEMES), "engquist_osher"),
        "eta": Key(_float, 0.0, _ge(0)),
        "R": Key(_float, None, _gt(0)),
        "substeps": Key(_int, None, _ge(1)),
    },
    "initial": {
        "kind": Key(_choice("riemann", "sine", "constant"), "sine"),
        "left": Key(_float, 1.0),
        "right": Key(_float, 0.0),
        "x0": Key(_float, 0.5),
        "amplitude": Key(_float, 1.0),
        "offset": Key(_float, 0.0),
        "mode": Key(_int, 1, _ge(1)),
        "value": Key(_float, 0.0),
    },
    "stochastic": {
        "eps": Key(_float, 0.0, _ge(0)),
    },
    "mc": {
        "eps": Key(_floats, (0.02, 0.01, 0.005), _all_gt(0)),
        "n_traj": Key(_int, 1000, _ge(100)),
        "event": Key(_choice(*EVENT_KINDS), "terminal_mean_threshold"),
        "threshold": Key(_float, 0.1, _ge(0)),
        "action_star": Key(_float, None, _gt(0)),
    },
    "minimize": {
        "target": Key(_choice("shift", "unforced"), "shift"),
        "shift": Key(_float, 0.1),
        "delta_target": Key(_float, 1e-3, _gt(0)),
        "n_intervals": Key(_int, 4, _ge(1)),
        "penalty0": Key(_float, 10.0, _gt(0)),
        "rounds": Key(_int, 6, _ge(1)),
    },
    "condb": {
        "eps": Key(_floats, (0.04, 0.01, 0.0025), lambda vs: None if vs and all(v >= 0 for v in vs) else "values must be >= 0"),
        "n_traj": Key(_int, 100, _ge(1)),
        "M": Key(_float, None, _gt(0)),
        "delta": Key(_float, 0.05, _gt(0)),
    },
    "weak": {
        "amplitude": Key(_float, 1.0),
        "mode": Key(_int, 1, _ge(1)),
        "eps": Key(_floats, (0.1, 0.05, 0.025, 0.0125), _all_gt(0)),
        "M": Key(_float, None, _gt(0)),
    },
    "ldp": {
        "table": Key(_str, None),
        "action_star": Key(_float, None, _gt(0)),
    },
}

REQUIRED_SECTIONS = ("grid", "flux", "time")


@dataclass
class ExperimentSpec:
    """Validated configuration with every default filled in."""

    name: str
    task: str
    seed: int
    output_dir: str
    sections: dict[str, dict[str, Any]]
    base_dir: Path = field(default_factory=Path.cwd)

    def get(self, section: str, key: str) -> Any:
        return self.sections[section][key]

    @property
    def cfl(self) -> float:
        return self.get("time", "cfl")

    @property
    def scheme(self) -> str:
        return self.get("solver", "scheme")

    # model builders

    def grid(self) -> TorusGrid:
        return TorusGrid(self.get("grid", "dim"), self.get("grid", "n"))

    def flux(self) -> FluxModel:
        s = self.sections["flux"]
        dim = self.get("grid", "dim")
        if s["kind"] == "burgers":
            return FluxModel.burgers(dim)
        if s["kind"] == "zero":
            return FluxModel.zero(dim)
        if s["kind"] == "linear":
            c = list(s["c"])
            if len(c) == 1:
                c = c * dim
            return FluxModel.linear(c)
        return FluxModel.polynomial(s["coeffs"], dim=dim)

    def noise(self) -> NoiseModel:
        s = self.sections["noise"]
        return NoiseModel.trigonometric(s["K"], s["sigma"], q=s["q"], b0=s["b0"], b1=s["b1"],
                                        dim=self.get("grid", "dim"), u_window=s["u_window"])

    def n_steps(self) -> int:
        t = self.sections["time"]
        if t["n_steps"] is not None:
            return t["n_steps"]
        if t["dt"] is not None:
            return max(1, round(t["T"] / t["dt"]))
        return 20

    def control(self) -> Control:
        s = self.sections["control"]
        K = self.get("noise", "K")
        T = self.get("time", "T")
        n = self.n_steps()
        if s["kind"] == "zero":
            return Control.zeros(K, T, n)
        if s["kind"] == "constant":
            return Control.constant(s["values"], T, n)
        if s["kind"] == "sine":
            def fn(t):
                out = np.zeros((len(t), K))
                out[:, s["mode"] - 1] = s["amplitude"] * np.sin(2 * np.pi * s["frequency"] * t)
                return out
            return Control.from_function(fn, K, T, n)
        return Control.from_csv(Path(self.base_dir) / s["file"])

    def initial(self) -> Field:
        s = self.sections["initial"]
        g = self.grid()
        if s["kind"] == "riemann":
            return Field.from_function(
                g, lambda x, *rest: np.where(x < s["x0"], s["left"], s["right"]))
        if s["kind"] == "constant":
            return Field.constant(g, s["value"])
        return Field.from_function(
            g, lambda x, *rest: s["offset"] + s["amplitude"] * np.sin(2 * np.pi * s["mode"] * x))

    def solver_config(self, store: str = "all") -> SolverConfig:
        s = self.sections["solver"]
        return SolverConfig(cfl=self.cfl, scheme=s["scheme"], viscosity_eta=s["eta"],
                            truncation_R=s["R"], substeps=s["substeps"], store=store)

    def echo(self) -> dict[str, dict[str, Any]]:
        """Plain-data copy of every section (tuples as lists) for manifests."""
        return {sec: {k: (list(v) if isinstance(v, tuple) else v) for k, v in vals.items()}
                for sec, vals in sorted(self.sections.items())}


def _tokenize(text: str):
    """Yield ``(line_number, kind, a, b)`` with kind ``section``, ``kv`` or ``bad``."""
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip() if not raw.strip().startswith(("#", ";")) else ""
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                yield ln, "bad", f"malformed section header {raw.strip()!r}", None
            else:
                yield ln, "section", line[1:-1].strip(), None
        elif "=" in line:
            k, v = line.split("=", 1)
            yield ln, "kv", k.strip(), v.strip()
        else:
            yield ln, "bad", f"expected 'key = value', got {raw.strip()!r}", None


def parse_config(text: str, task: str | None = None, base_dir: str | Path | None = None,
                 seed: int | None = None) -> ExperimentSpec:
    """Parse and validate configuration text.

    ``task`` and ``seed`` override the ``[experiment]`` values (command-line
    arguments take precedence).  Relative control files resolve against
    ``base_dir``.
    """
    errors: list[tuple[int, str]] = []
    raw: dict[str, dict[str, tuple[int, str]]] = {}
    section_lines: dict[str, int] = {}
    current = None
    for ln, kind, a, b in _tokenize(text):
        if kind == "bad":
            errors.append((ln, a))
        elif kind == "section":
            if a not in SCHEMA:
                errors.append((ln, f"unknown section [{a}]"))
                current = None
                continue
            if a in raw:
                errors.append((ln, f"duplicate section [{a}]"))
            current = a
            raw.setdefault(a, {})
            section_lines.setdefault(a, ln)
        else:
            if current is None:
                if not any(ln == e[0] for e in errors):
                    errors.append((ln, f"key {a!r} outside any known section"))
                continue
            if a not in SCHEMA[current]:
                errors.append((ln, f"unknown key {a!r} in [{current}]"))
            elif a in raw[current]:
                errors.append((ln, f"duplicate key {a!r} in [{current}]"))
            else:
                raw[current][a] = (ln, b)

    for sec in REQUIRED_SECTIONS:
        if sec not in raw:
            errors.append((0, f"missing required section [{sec}]"))

    sections: dict[str, dict[str, Any]] = {}
    for sec, keys in SCHEMA.items():
        vals = {}
        given = raw.get(sec, {})
        for key, spec in keys.items():
            if key in given:
                ln, text_value = given[key]
                try:
                    v = spec.conv(text_value)
                except ValueError as exc:
                    errors.append((ln, f"[{sec}] {key}: invalid value {text_value!r} ({exc})"))
                    continue
                if spec.check is not None:
                    msg = spec.check(v)
                    if msg:
                        errors.append((ln, f"[{sec}] {key}: {msg}" if "cfl" not in msg else msg))
                        continue
                vals[key] = v
            else:
                if spec.required and sec in raw:
                    errors.append((section_lines[sec], f"[{sec}] missing required key {key!r}"))
                vals[key] = spec.default
        sections[sec] = vals

    base = Path(base_dir) if base_dir is not None else Path.cwd()
    ctl = raw.get("control", {})
    if sections["control"]["kind"] == "file":
        f = sections["control"]["file"]
        ln = ctl.get("file", ctl.get("kind", (section_lines.get("control", 0), "")))[0]
        if not f:
            errors.append((ln, "[control] kind = file needs a 'file' key"))
        elif not (base / f).exists():
            errors.append((ln, f"[control] file {f!r} does not exist"))
    elif sections["control"]["kind"] == "constant":
        K = sections["noise"]["K"]
        if len(sections["control"]["values"]) != K:
            ln = ctl.get("values", ctl.get("kind", (0, "")))[0]
            errors.append((ln, f"[control] values must list K = {K} numbers"))
    tsec = raw.get("time", {})
    if "n_steps" in tsec and "dt" in tsec:
        errors.append((tsec["dt"][0], "[time] give n_steps or dt, not both"))

    task = task or sections["experiment"]["task"]
    if task is None:
        errors.append((0, "no task given (set [experiment] task or pass it on the command line)"))
    elif task not in TASKS:
        errors.append((0, f"unknown task {task!r}"))
    if task == "cond-b" and sections["condb"]["M"] is None:
        errors.append((section_lines.get("condb", 0), "[condb] missing required key 'M'"))

    if errors:
        raise ConfigError(sorted(errors, key=lambda e: e[0]))
    exp = sections["experiment"]
    return ExperimentSpec(
        name=exp["name"], task=task,
        seed=int(seed if seed is not None else exp["seed"]),
        output_dir=exp["output_dir"], sections=sections, base_dir=base)
