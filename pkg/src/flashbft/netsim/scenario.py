"""Scenario files: ``key = value`` lines plus repeatable ``directive = ...`` lines.

Example::

    name = aws21-flash
    matrix = aws21
    variant = flash
    theta = 20
    duration_ms = 20000
    directive = at=6000 kind=crash targets=3

Directive parameters are ``name=value`` tokens.  Supported kinds: ``crash``,
``silent``, ``equivocate_coalition``, ``slow_link``, ``drop``, ``gst`` and
``fake_panic``.  Errors carry the offending line number.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

VARIANTS = ("flash", "aware", "conservative_only")
DIRECTIVE_KINDS = ("crash", "silent", "equivocate_coalition", "slow_link", "drop", "gst", "fake_panic")
PATTERN_ALIASES = {"three": "three_step", "three_step": "three_step", "seven": "seven_step",
                   "seven_step": "seven_step"}


class ScenarioError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Directive:
    at: float
    kind: str
    targets: tuple = ()
    factor: float = 1.0
    until: Optional[float] = None
    after: str = "correct"
    size: int = 0
    client: int = 0
    line: int = 0


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    matrix: str = "aws21"
    n: Optional[int] = None
    variant: str = "flash"
    pattern: str = "three_step"
    theta: int = 20
    duration_ms: float = 20_000.0
    warmup_ms: float = 0.0
    clients: Optional[tuple] = None  # region indices; None means one per replica region
    think_max_ms: float = 1000.0
    keys: int = 8
    read_ratio: float = 0.3
    checkpoint: int = 16
    timer_ms: Optional[float] = None  # None: derived from the predicted latency
    sync_timeout_ms: Optional[float] = None
    optimize_every: int = 200
    optimize_initial: bool = True
    anneal_iterations: int = 10_000
    watchdog_window: int = 32
    jitter: bool = False
    jitter_sigma: float = 0.05
    seed: int = 1
    max_time_ms: Optional[float] = None
    directives: tuple = ()

    def replace(self, **kw) -> "Scenario":
        return dataclasses.replace(self, **kw)


_INT = {"n", "theta", "keys", "checkpoint", "optimize_every", "anneal_iterations", "watchdog_window", "seed"}
_FLOAT = {"duration_ms", "warmup_ms", "think_max_ms", "read_ratio", "timer_ms", "sync_timeout_ms",
          "jitter_sigma", "max_time_ms"}
_BOOL = {"optimize_initial", "jitter"}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _ints(text: str, line: int) -> tuple:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ScenarioError(line, f"expected comma-separated integers, got {text!r}") from None


def parse_directive(text: str, line: int = 0) -> Directive:
    params = {}
    for tok in text.split():
        if "=" not in tok:
            raise ScenarioError(line, f"directive token {tok!r} is not name=value")
        k, v = tok.split("=", 1)
        params[k] = v
    kind = params.pop("kind", None)
    if kind not in DIRECTIVE_KINDS:
        raise ScenarioError(line, f"unknown directive kind {kind!r}")
    if "at" not in params:
        raise ScenarioError(line, "directive needs at=<ms>")
    kw = {"kind": kind, "line": line}
    try:
        kw["at"] = float(params.pop("at"))
        if "targets" in params:
            kw["targets"] = _ints(params.pop("targets"), line)
        if "factor" in params:
            kw["factor"] = float(params.pop("factor"))
        if "until" in params:
            kw["until"] = float(params.pop("until"))
        if "size" in params:
            kw["size"] = int(params.pop("size"))
        if "client" in params:
            kw["client"] = int(params.pop("client"))
    except ValueError as e:
        raise ScenarioError(line, f"bad directive value: {e}") from None
    if "after" in params:
        kw["after"] = params.pop("after")
        if kw["after"] not in ("correct", "silent"):
            raise ScenarioError(line, "after must be correct or silent")
    if params:
        raise ScenarioError(line, f"unknown directive parameter(s): {', '.join(sorted(params))}")
    d = Directive(**kw)
    if d.at < 0:
        raise ScenarioError(line, "directive time must be non-negative")
    if kind in ("crash", "silent", "slow_link", "drop") and not d.targets:
        raise ScenarioError(line, f"{kind} needs targets=")
    if kind == "slow_link" and len(d.targets) != 2:
        raise ScenarioError(line, "slow_link needs exactly two targets")
    if kind in ("slow_link", "gst") and d.factor < 1:
        raise ScenarioError(line, "factor must be >= 1")
    if kind == "gst" and d.until is None:
        raise ScenarioError(line, "gst needs until=<ms>")
    if kind == "equivocate_coalition" and not d.targets and d.size < 1:
        raise ScenarioError(line, "equivocate_coalition needs targets= or size=")
    return d


def parse_scenario(text: str) -> Scenario:
    kw = {}
    directives = []
    valid = {f.name for f in dataclasses.fields(Scenario)} - {"directives"}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(no, f"expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "directive":
            directives.append(parse_directive(value, no))
            continue
        if key not in valid:
            raise ScenarioError(no, f"unknown key {key!r}")
        try:
            if key in _INT:
                kw[key] = int(value)
            elif key in _FLOAT:
                kw[key] = None if value == "auto" else float(value)
            elif key in _BOOL:
                low = value.lower()
                if low not in _TRUE | _FALSE:
                    raise ValueError(f"expected a boolean, got {value!r}")
                kw[key] = low in _TRUE
            elif key == "clients":
                kw[key] = None if value == "all" else _ints(value, no)
            elif key == "pattern":
                if value not in PATTERN_ALIASES:
                    raise ValueError(f"unknown pattern {value!r}")
                kw[key] = PATTERN_ALIASES[value]
            elif key == "variant":
                if value not in VARIANTS:
                    raise ValueError(f"unknown variant {value!r}")
                kw[key] = value
            else:
                kw[key] = value
        except ValueError as e:
            raise ScenarioError(no, str(e)) from None
    sc = Scenario(directives=tuple(sorted(directives, key=lambda d: (d.at, d.line))), **kw)
    if sc.theta < 1:
        raise ScenarioError(0, "theta must be >= 1")
    return sc


def load_scenario(path) -> Scenario:
    return parse_scenario(Path(path).read_text())


def scenario_path(name: str) -> Path:
    """Resolve a bundled scenario by name (``aws21_flash``) or return the given path."""
    p = Path(name)
    if p.exists():
        return p
    bundled = Path(__file__).resolve().parent.parent / "data" / "scenarios" / f"{name}.scn"
    if bundled.exists():
        return bundled
    raise FileNotFoundError(f"no scenario file {name!r}")
