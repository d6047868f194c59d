"""Deployment configuration: party endpoints, pairwise seeds, shaping preset.

One JSON file can serve every process of a deployment::

    {
      "parties": {"p0": "10.0.0.1:7000", "p1": "10.0.0.2:7000", "helper": "10.0.0.3:7000"},
      "seeds": {"master": "<64 hex digits>"},
      "net_preset": "off",
      "linkage": {"threshold": 0.7, "disclosure": "index"}
    }

``seeds`` may instead list the pair seeds (``p0-p1``, ``p0-helper``,
``p1-helper``) so each party's file holds only the two it needs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .config import ConfigError, LinkageConfig
from .net.transport import NET_PRESETS, PARTY_ROLES, Role, parse_addr
from .ring import Pair, SeedBook

LINKAGE_KEYS = ("weights", "threshold", "tau_fixed", "disclosure")
PAIR_KEYS = {"p0-p1": Pair.P0_P1, "p0-helper": Pair.P0_HELPER, "p1-helper": Pair.P1_HELPER}


def parse_hex(text: str, what: str = "seed") -> bytes:
    try:
        raw = bytes.fromhex(text.strip().removeprefix("0x"))
    except ValueError:
        raise ConfigError(f"{what} is not a hex string") from None
    if len(raw) < 16:
        raise ConfigError(f"{what} must be at least 16 bytes (32 hex digits)")
    return raw


def parse_peers(text: str) -> dict:
    """'p0=host:port,p1=host:port' -> {Role: 'host:port'}."""
    out = {}
    for item in filter(None, (p.strip() for p in text.split(","))):
        name, sep, addr = item.partition("=")
        if not sep:
            raise ConfigError(f"peer entry {item!r} is not role=host:port")
        try:
            role = Role.parse(name)
        except KeyError:
            raise ConfigError(f"unknown role {name!r}") from None
        try:
            parse_addr(addr)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        out[role] = addr
    return out


def parse_seeds(data) -> SeedBook:
    if isinstance(data, str):
        return SeedBook.from_master(parse_hex(data))
    if "master" in data:
        return SeedBook.from_master(parse_hex(data["master"]))
    seeds = {}
    for key, value in data.items():
        if key not in PAIR_KEYS:
            raise ConfigError(f"unknown seed entry {key!r}")
        seeds[PAIR_KEYS[key]] = parse_hex(value, f"seed {key}")
    return SeedBook(seeds)


def check_preset(name: str | None) -> str | None:
    if name is not None and name.lower() not in NET_PRESETS:
        raise ConfigError(f"unknown network preset {name!r} (choose from {', '.join(NET_PRESETS)})")
    return None if name is None or name.lower() == "off" else name.lower()


@dataclass
class Deployment:
    parties: dict = field(default_factory=dict)  # Role -> addr
    seeds: SeedBook | None = None
    net_preset: str | None = None
    linkage: LinkageConfig = field(default_factory=LinkageConfig)

    @classmethod
    def load(cls, path) -> "Deployment":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        parties = {}
        for name, addr in data.get("parties", {}).items():
            parties.update(parse_peers(f"{name}={addr}"))
        return cls(
            parties,
            parse_seeds(data["seeds"]) if "seeds" in data else None,
            check_preset(data.get("net_preset")),
            LinkageConfig.from_dict(data.get("linkage", {k: v for k, v in data.items() if k in LINKAGE_KEYS})),
        )

    def require(self, *roles) -> None:
        missing = [r.label for r in roles if r not in self.parties]
        if missing:
            raise ConfigError(f"no address for {', '.join(missing)}")

    def party_roles(self):
        return PARTY_ROLES
