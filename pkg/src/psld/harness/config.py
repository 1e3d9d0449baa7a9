"""Flat key-value config files with dotted sections.

Grammar (UTF-8 text):
  * one `key = value` pair per line; keys may contain dots (`beta.kind`),
  * `#` starts a comment (full-line or trailing), blank lines are ignored,
  * values are parsed as int, then float, then bare string.

Recognized keys for the forward process:
  gamma, nu, mass_inv, gamma0, dim,
  beta.kind (constant|linear), beta.const, beta.min, beta.max.
`nu` may be omitted, in which case it is set by the critical-damping rule.
"""

from __future__ import annotations

import hashlib

from ..errors import ConfigError
from ..recipe import BetaSchedule, PsldParams, critical_nu

SDE_KEYS = {"gamma", "nu", "mass_inv", "gamma0", "dim",
            "beta.kind", "beta.const", "beta.min", "beta.max"}


def parse_config(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = _coerce(value)
    return out


def _coerce(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            continue
    return value


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def params_from_config(cfg: dict):
    """Build (PsldParams, dim) from parsed keys; unknown SDE keys rejected."""
    unknown = set(cfg) - SDE_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kind = cfg.get("beta.kind", "constant")
    if kind == "constant":
        beta = BetaSchedule(kind="constant",
                            beta_const=float(cfg.get("beta.const", 8.0)))
    elif kind == "linear":
        beta = BetaSchedule(kind="linear",
                            beta_min=float(cfg.get("beta.min", 0.1)),
                            beta_max=float(cfg.get("beta.max", 20.0)))
    else:
        raise ConfigError(f"beta.kind must be constant or linear, got {kind!r}")
    gamma = float(cfg.get("gamma", 0.01))
    mass_inv = float(cfg.get("mass_inv", 4.0))
    nu = float(cfg["nu"]) if "nu" in cfg else critical_nu(gamma, mass_inv)
    try:
        params = PsldParams(gamma=gamma, nu=nu, mass_inv=mass_inv, beta=beta,
                            gamma0=float(cfg.get("gamma0", 0.04)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    dim = int(cfg.get("dim", 2))
    if dim < 1:
        raise ConfigError("dim must be >= 1")
    return params, dim


def config_hash(text: str) -> str:
    """Short git-blob-style content hash of the raw config text."""
    blob = b"blob %d\0%s" % (len(text.encode()), text.encode())
    return hashlib.sha1(blob).hexdigest()[:12]


def default_config_text() -> str:
    return (
        "# phase-space forward process\n"
        "gamma = 0.01\n"
        "mass_inv = 4.0\n"
        "gamma0 = 0.04\n"
        "dim = 2\n"
        "beta.kind = constant\n"
        "beta.const = 8.0\n"
    )
