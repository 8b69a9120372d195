"""Experiment configuration: TOML file with the space at top level and one
section per subcommand. Unknown keys are rejected and every value is
type-checked before any computation starts."""

from __future__ import annotations

import copy
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .core_space import TraitSpace, build_kernel_pair
from .errors import ConfigError

INT, FLOAT, STR, BOOL, VEC, IVEC, MAT = "int", "float", "str", "bool", "vector", "int vector", "matrix"

TOP = {"K": (INT, None), "gamma": (VEC, None), "c": (MAT, None), "seed": (INT, 0), "labels": (None, None)}

SECTIONS: Dict[str, Dict[str, tuple]] = {
    "mf": {
        "nu0": (VEC, None),
        "T": (FLOAT, 1.0),
        "dt": (FLOAT, 1e-3),
        "method": (STR, "rk4"),
        "tol": (FLOAT, 1e-10),
        "picard_max_iters": (INT, 500),
        "picard_tol": (FLOAT, 1e-13),
        "scale_plus": (FLOAT, 1.0),
        "scale_minus": (FLOAT, 1.0),
    },
    "particles": {
        "nu0": (VEC, None),
        "N0": (IVEC, None),
        "n": (FLOAT, 1.0),
        "T": (FLOAT, 1.0),
        "stream": (INT, 0),
    },
    "fke": {
        "n": (FLOAT, 1.0),
        "N_max": (INT, 12),
        "nu0": (VEC, None),
        "N0": (IVEC, None),
        "T": (FLOAT, 1.0),
        "dt": (FLOAT, 1e-3),
        "leak_budget": (FLOAT, 1e-6),
        "stride": (INT, 1),
        "birth_scale": (FLOAT, 1.0),
        "death_scale": (FLOAT, 1.0),
    },
    "fke.balance": {
        "ns": (VEC, [1.0, 2.0, 4.0]),
        "N_max_values": (IVEC, [8, 16]),
    },
    "limits.entropy": {
        "nu_bar": (VEC, None),
        "f": (VEC, None),
        "ns": (VEC, [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0]),
        "direct_ns": (VEC, [1.0, 2.0, 4.0, 8.0]),
    },
    "limits.chaos": {
        "nu0": (VEC, None),
        "t": (FLOAT, 1.0),
        "ns": (VEC, [1.0, 2.0, 4.0, 8.0]),
        "dt": (FLOAT, 1e-3),
    },
    "limits.concentrate": {
        "nu0": (VEC, None),
        "f": (VEC, None),
        "t": (FLOAT, 1.0),
        "ns": (VEC, [2.0, 4.0, 8.0, 16.0]),
        "dt": (FLOAT, 1e-3),
        "runs": (INT, 400),
        "max_states": (INT, 200_000),
    },
    "limits.superpose": {
        "atoms": (MAT, None),
        "weights": (VEC, None),
        "samples": (INT, 1000),
        "T": (FLOAT, 1.0),
        "dt": (FLOAT, 1e-3),
    },
}


def _coerce(kind, value, where):
    def bad():
        return ConfigError(f"{where}: expected {kind}, got {value!r}")

    if kind is None:
        return value
    if kind == INT:
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad()
        return value
    if kind == FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad()
        return float(value)
    if kind == STR:
        if not isinstance(value, str):
            raise bad()
        return value
    if kind == BOOL:
        if not isinstance(value, bool):
            raise bad()
        return value
    if kind in (VEC, IVEC):
        if not isinstance(value, list):
            raise bad()
        return [_coerce(INT if kind == IVEC else FLOAT, v, where) for v in value]
    if kind == MAT:
        if not isinstance(value, list) or not all(isinstance(r, list) for r in value):
            raise bad()
        return [_coerce(VEC, r, where) for r in value]
    raise AssertionError(kind)


def _flatten_sections(doc: dict) -> Dict[str, dict]:
    """Map dotted section names to their scalar/array entries."""
    out: Dict[str, dict] = {}

    def walk(prefix, table):
        plain = {}
        for key, val in table.items():
            name = f"{prefix}.{key}" if prefix else key
            if isinstance(val, dict):
                if name not in SECTIONS and not any(s.startswith(name + ".") for s in SECTIONS):
                    raise ConfigError(f"unknown section [{name}]")
                walk(name, val)
            else:
                plain[key] = val
        if prefix and prefix not in SECTIONS and plain:
            raise ConfigError(f"unknown keys {sorted(plain)} in grouping section [{prefix}]")
        out[prefix] = plain

    walk("", doc)
    return out


def validate(doc: dict) -> dict:
    """Return a normalised copy of ``doc`` with defaults filled in."""
    flat = _flatten_sections(doc)
    top = flat.get("", {})
    for key in top:
        if key not in TOP:
            raise ConfigError(f"unknown top-level key {key!r}")
    out: Dict[str, Any] = {}
    for key, (kind, default) in TOP.items():
        if key in top:
            out[key] = _coerce(kind, top[key], key)
        elif default is None and key != "labels":
            raise ConfigError(f"missing required key {key!r}")
        elif default is not None:
            out[key] = default
    for name, schema in SECTIONS.items():
        sec = flat.get(name, {})
        for key in sec:
            if key not in schema:
                raise ConfigError(f"unknown key {key!r} in section [{name}]")
        norm = {}
        for key, (kind, default) in schema.items():
            if key in sec:
                norm[key] = _coerce(kind, sec[key], f"[{name}] {key}")
            elif default is not None:
                norm[key] = copy.deepcopy(default)
        out[name] = norm
    build_space(out)
    return out


def build_space(cfg: dict):
    """TraitSpace and KernelPair from a validated config (raises on violations)."""
    ts = TraitSpace(cfg["K"], cfg["gamma"], cfg.get("labels"))
    k = build_kernel_pair(cfg["c"])
    if k.K != ts.K:
        raise ConfigError(f"c is {k.K}x{k.K} but K={ts.K}")
    return ts, k


def parse_value(text: str):
    """Parse a command-line override as a TOML value, falling back to a string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def load(path: Optional[str] = None) -> dict:
    """Read a TOML config (the bundled canonical one when ``path`` is None)."""
    try:
        if path is None:
            text = resources.files("bpdl").joinpath("data/canonical.toml").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        return tomllib.loads(text)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc


def set_key(doc: dict, dotted: str, value) -> None:
    """Override ``section.key`` (or a top-level key) in a raw config document."""
    *path, key = dotted.split(".")
    node = doc
    for p in path:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {dotted}: {p} is not a section")
    node[key] = value
