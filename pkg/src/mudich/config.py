"""Flat ``key = value`` configuration files.

One setting per line (or several whitespace-separated ``key=value`` pairs),
``#`` starts a comment, lists are comma separated.
Ranges ``a:b`` (inclusive) are accepted wherever a list of integers is.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, DomainError
from .scenarios import PERTURBATION_KINDS, PRESETS

__all__ = ["RunConfig", "parse_config", "load_config", "KEYS"]

_RATE_KINDS = ("exp", "exponential", "poly", "polynomial", "log", "logarithmic", "table", "custom")
_FLAVORS = ("nonuniform", "with_norms", "strong")


def _choice(options):
    def conv(v):
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return v
    return conv


def _positive_int(v):
    n = int(v)
    if n < 1:
        raise ValueError("expected a positive integer")
    return n


def _nonneg_int(v):
    n = int(v)
    if n < 0:
        raise ValueError("expected a nonnegative integer")
    return n


def _float_list(v):
    out = [float(p) for p in v.split(",") if p.strip()]
    if not out:
        raise ValueError("empty list")
    return out


def _int_list(v):
    out = []
    for part in v.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            a, b = (int(x) for x in part.split(":", 1))
            if b < a:
                raise ValueError(f"empty range {part}")
            out.extend(range(a, b + 1))
        else:
            out.append(int(part))
    if not out:
        raise ValueError("empty list")
    return out


def _flavor_list(v):
    out = [p.strip() for p in v.split(",") if p.strip()]
    bad = [p for p in out if p not in _FLAVORS]
    if bad or not out:
        raise ValueError(f"expected flavors from {', '.join(_FLAVORS)}")
    return out


def _bool(v):
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


# key -> (converter, default)
KEYS = {
    "scenario": (_choice(PRESETS), "S1"),
    "rate.kind": (_choice(_RATE_KINDS), "poly"),
    "rate.table": (str, None),
    "lambda0": (float, 1.0),
    "eps0": (float, 0.1),
    "horizon": (_positive_int, None),
    "norms": (_choice(("sup", "euclidean")), "sup"),
    "fit.flavor": (_flavor_list, ["nonuniform"]),
    "solve.trials": (_positive_int, 5),
    "solve.norms": (_choice(("auto", "reference", "adapted")), "auto"),
    "margin": (_nonneg_int, 20),
    "tail": (_nonneg_int, 20),
    "recover.times": (_int_list, None),
    "recover.extension": (_nonneg_int, 0),
    "estimates.alpha": (_float_list, [0.25, 0.5, 1.0, 2.0, 4.0]),
    "estimates.r_max": (_positive_int, 50),
    "perturb.kind": (_choice(PERTURBATION_KINDS), "weighted"),
    "perturb.scale": (float, 1.0),
    "lambda.grid": (_float_list, [0.0, 0.0025, 0.005, 0.0075, 0.01]),
    "delta": (float, 0.5),
    "detect.coupling": (float, None),
    "inverse.trials": (_positive_int, 16),
    "strict": (_bool, False),
}


@dataclass
class RunConfig:
    """Parsed configuration; ``values`` holds every key with defaults filled in."""

    values: dict
    explicit: set = field(default_factory=set)
    source: str = "<string>"

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        v = self.values.get(key)
        return default if v is None else v

    def is_set(self, key):
        return key in self.explicit


def parse_config(text: str, source="<string>") -> RunConfig:
    """Parse configuration text.

    Raises
    ------
    ConfigError
        For malformed lines and for bad keys or values; the
        message starts with the offending line number.
    """
    values = {k: d for k, (_, d) in KEYS.items()}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {raw.strip()!r}", line=lineno)
        tokens = line.split()
        pairs = tokens if len(tokens) > 1 and all("=" in t for t in tokens) else [line]
        for pair in pairs:
            _assign(values, seen, pair, lineno)
    if values["rate.kind"] in ("table", "custom") and not values["rate.table"]:
        raise ConfigError("rate.kind=table or custom needs rate.table")
    return RunConfig(values, seen, source)


def _assign(values, seen, pair, lineno):
    key, value = (p.strip() for p in pair.split("=", 1))
    if key not in KEYS:
        raise ConfigError(f"unknown key {key!r}", line=lineno)
    if key in seen:
        raise ConfigError(f"repeated key {key!r}", line=lineno)
    if not value:
        raise ConfigError(f"empty value for {key!r}", line=lineno)
    try:
        values[key] = KEYS[key][0](value)
    except (ValueError, DomainError) as exc:
        raise ConfigError(f"invalid value {value!r} for {key!r}: {exc}", line=lineno) from None
    seen.add(key)


def load_config(path) -> RunConfig:
    """Read and parse a UTF-8 configuration file."""
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), str(path))
