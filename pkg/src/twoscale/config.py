"""Run configuration: key=value files with defaults and range checks.

The file format is one `key = value` per line, `#` starts a comment.
Every key is optional; unknown keys and out-of-range values are
rejected with the offending key named.
"""

from dataclasses import dataclass, fields

SCENARIO_NAMES = ("carrier", "cantilever", "bridge", "lshape")
BACKENDS = ("fem", "bem")


@dataclass
class RunConfig:
    """All knobs of a batch run.

    `steps` counts refinements, so a run emits `steps + 1` table rows.
    `laminate_rounds` is the relaxation iteration count used for the
    comparison state of the error estimator.  `backend` `bem` adds a
    boundary-element cross-check of the cell responses to the run.
    """
    scenario: str = "carrier"
    level: int = 3
    steps: int = 14
    fraction: float = 0.4
    laminate_rounds: int = 50
    resolution: int = 64
    opt_iters: int = 18
    opt_tol: float = 1e-6
    output_dir: str = "out"
    backend: str = "fem"
    load_width: float = 0.05

    def validate(self) -> "RunConfig":
        if self.scenario not in SCENARIO_NAMES:
            raise ValueError(f"scenario: unknown value {self.scenario!r}, "
                             f"expected one of {', '.join(SCENARIO_NAMES)}")
        if self.backend not in BACKENDS:
            raise ValueError(f"backend: unknown value {self.backend!r}, "
                             f"expected one of {', '.join(BACKENDS)}")
        _require("level", 1 <= self.level <= 8)
        _require("steps", 1 <= self.steps <= 30)
        _require("fraction", 0.0 < self.fraction <= 1.0)
        _require("laminate_rounds", 0 <= self.laminate_rounds <= 1000)
        _require("resolution", 2 <= self.resolution <= 512)
        _require("opt_iters", 1 <= self.opt_iters <= 10000)
        _require("opt_tol", 0.0 < self.opt_tol <= 1.0)
        _require("load_width", 0.0 < self.load_width <= 0.5)
        return self


def _require(key: str, ok: bool):
    if not ok:
        raise ValueError(f"{key}: value out of range")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, text: str):
    kind = _FIELD_TYPES[key]
    try:
        return kind(text)
    except ValueError:
        raise ValueError(
            f"{key}: cannot parse {text!r} as {kind.__name__}") from None


def parse_assignment(line: str):
    """One `key=value` string -> (key, parsed value)."""
    if "=" not in line:
        raise ValueError(f"expected key=value, got {line!r}")
    key, _, raw = line.partition("=")
    key = key.strip()
    raw = raw.strip()
    if key not in _FIELD_TYPES:
        raise ValueError(f"unknown configuration key {key!r}")
    return key, _parse_value(key, raw)


def load_config(path, overrides=()) -> RunConfig:
    """Parse a config file, apply overrides, validate ranges."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                key, val = parse_assignment(line)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            values[key] = val
    for item in overrides:
        key, val = parse_assignment(item)
        values[key] = val
    return RunConfig(**values).validate()
