"""Linkage configuration: field schema, fixed-point weights, threshold, disclosure."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path

FUZZY_FIELDS = ("combined_name", "city")
EXACT_FIELDS = ("postcode", "birth_year", "birth_month", "birth_day")
ALL_FIELDS = FUZZY_FIELDS + EXACT_FIELDS

WEIGHT_SCALE = 64
TAU_SCALE = 1 << 16
DELTA_SCALE = 3
WEIGHT_BUDGET = 65536  # sum over fields of DELTA_SCALE**2 * w_f


class ConfigError(ValueError):
    pass


class Disclosure(str, Enum):
    BIT = "bit"
    INDEX = "index"
    FULL = "full"

    @classmethod
    def parse(cls, value) -> "Disclosure":
        aliases = {"bit-only": "bit", "index+score": "full"}
        try:
            return cls(aliases.get(str(value), str(value)))
        except ValueError:
            raise ConfigError(f"unknown disclosure mode {value!r}") from None


def compute_field_weight(frequency, error_rate) -> int:
    """Fixed-point (x64) weight ``log2((1 - e) / f)``, floored at 1."""
    f, e = Fraction(frequency), Fraction(error_rate)
    if not 0 < f < 1:
        raise ConfigError(f"frequency must lie in (0, 1), got {frequency}")
    if not 0 <= e < 1:
        raise ConfigError(f"error rate must lie in [0, 1), got {error_rate}")
    w = WEIGHT_SCALE * math.log2((1 - e) / f)
    return max(1, math.floor(w + 0.5))


# Default field statistics: (chance-agreement frequency, error rate).  The
# combined name agrees by chance only when first and last name both do.
DEFAULT_FIELD_STATS = {
    "combined_name": (1e-7, 0.15),
    "city": (1 / 40, 0.05),
    "postcode": (1 / 400, 0.05),
    "birth_year": (1 / 80, 0.05),
    "birth_month": (1 / 12, 0.05),
    "birth_day": (1 / 30, 0.05),
}


def default_weights() -> dict:
    return {f: compute_field_weight(*DEFAULT_FIELD_STATS[f]) for f in ALL_FIELDS}


DEFAULT_THRESHOLD = 0.70


def tau_to_fixed(tau) -> int:
    return math.floor(Fraction(str(tau)) * TAU_SCALE + Fraction(1, 2))


@dataclass(frozen=True)
class LinkageConfig:
    weights: dict = field(default_factory=default_weights)
    tau_fixed: int = tau_to_fixed(DEFAULT_THRESHOLD)
    disclosure: Disclosure = Disclosure.INDEX

    @property
    def tau(self) -> float:
        return self.tau_fixed / TAU_SCALE

    def weight_vector(self) -> list[int]:
        return [int(self.weights[f]) for f in ALL_FIELDS]

    def to_dict(self) -> dict:
        return {
            "weights": {f: int(self.weights[f]) for f in ALL_FIELDS},
            "tau_fixed": int(self.tau_fixed),
            "disclosure": self.disclosure.value,
        }

    def digest(self) -> bytes:
        raw = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(raw).digest()

    def with_threshold(self, tau) -> "LinkageConfig":
        return validate_config(LinkageConfig(dict(self.weights), tau_to_fixed(tau), self.disclosure))

    @classmethod
    def from_dict(cls, data: dict) -> "LinkageConfig":
        weights = data.get("weights")
        if weights is None:
            weights = default_weights()
        else:
            weights = {
                f: compute_field_weight(v["frequency"], v["error_rate"]) if isinstance(v, dict) else v
                for f, v in weights.items()
            }
        if "tau_fixed" in data:
            tau_fixed = data["tau_fixed"]
        else:
            tau_fixed = tau_to_fixed(data.get("threshold", DEFAULT_THRESHOLD))
        disclosure = Disclosure.parse(data.get("disclosure", "index"))
        return validate_config(cls(weights, tau_fixed, disclosure))

    @classmethod
    def load(cls, path) -> "LinkageConfig":
        text = Path(path).read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(data.get("linkage", data))


def validate_config(config: LinkageConfig) -> LinkageConfig:
    """Reject configs that break the schema or the overflow budget."""
    missing = [f for f in ALL_FIELDS if f not in config.weights]
    unknown = [f for f in config.weights if f not in ALL_FIELDS]
    if missing:
        raise ConfigError(f"weights missing for fields: {', '.join(missing)}")
    if unknown:
        raise ConfigError(f"weights given for unknown fields: {', '.join(unknown)}")
    for f, w in config.weights.items():
        if isinstance(w, bool) or not isinstance(w, int) or w < 1:
            raise ConfigError(f"weight of {f} must be a positive integer, got {w!r}")
    load = sum(DELTA_SCALE**2 * w for w in config.weights.values())
    if load > WEIGHT_BUDGET:
        raise ConfigError(f"weight budget exceeded: sum 9*w_f = {load} > {WEIGHT_BUDGET}")
    if isinstance(config.tau_fixed, bool) or not isinstance(config.tau_fixed, int):
        raise ConfigError("tau_fixed must be an integer")
    if not 0 < config.tau_fixed < TAU_SCALE:
        raise ConfigError(f"threshold must lie in (0, 1), got tau_fixed={config.tau_fixed}")
    if not isinstance(config.disclosure, Disclosure):
        raise ConfigError(f"bad disclosure {config.disclosure!r}")
    return config
