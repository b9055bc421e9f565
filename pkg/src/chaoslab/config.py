"""Experiment configuration: TOML file + command-line overrides, validated up front."""

from __future__ import annotations

import copy
import hashlib
import json
import math

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__

FAMILIES = ("bounded_confidence", "coulomb", "bessel", "custom")

DEFAULTS = {
    "seed": 0,
    "output_dir": "chaoslab-out",
    "kernel": {"family": "bounded_confidence", "R": 1.0, "route": "force", "sign": 1.0, "d": 1,
               "W_file": "", "V_file": "", "mode": "product", "a_W": 0.0, "a_V": 0.0},
    "schedule": {"beta": 0.05, "N_list": [128, 256, 512, 1024, 2048, 4096]},
    "sde": {"sigma": 0.5, "T": 0.5, "n_steps": 128, "n_save": 64},
    "grid": {"L": 8.0, "n": 1024},
    "initial": {"mean": 0.0, "var": 1.0},
    "diagnostics": {"alpha": 0.3, "delta": 0.05, "gamma": 1.0, "replicas": 200, "lln": True},
    "kernel_check": {"eps_list": []},
    "pde_compare": {"eps_list": [0.2, 0.1, 0.05, 0.025], "n_save": 32},
    "liouville": {"N": 2, "coarse_n": 0},
}


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message

    def as_json(self) -> str:
        return json.dumps({"error": "validation", "field": self.field, "message": self.message})


def _merge(base: dict, over: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        key = f"{prefix}{k}"
        if k not in out:
            raise ConfigError(key, "unknown key")
        if isinstance(out[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(key, "expected a table")
            out[k] = _merge(out[k], v, key + ".")
        else:
            out[k] = v
    return out


def parse_override(text: str) -> dict:
    """'section.key=value' -> nested dict; the value is parsed as TOML when possible."""
    if "=" not in text:
        raise ConfigError(text, "override must look like section.key=value")
    path, raw = text.split("=", 1)
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    out: dict = {}
    node = out
    parts = path.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


def load(path=None, overrides=()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(str(path), f"invalid TOML: {exc}") from None
        cfg = _merge(cfg, data)
    for o in overrides:
        cfg = _merge(cfg, o)
    return cfg


def _num(cfg, section, key, lo=None, hi=None, lo_open=True, hi_open=True, integer=False):
    v = cfg[section][key] if section else cfg[key]
    field = f"{section}.{key}" if section else key
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(field, f"expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(field, f"expected an integer, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(field, "must be finite")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(field, f"must be {'>' if lo_open else '>='} {lo}, got {v}")
    if hi is not None and (v >= hi if hi_open else v > hi):
        raise ConfigError(field, f"must be {'<' if hi_open else '<='} {hi}, got {v}")
    return v


def validate(cfg: dict, command: str = "simulate") -> dict:
    """Cross-field checks done before any computation."""
    _num(cfg, None, "seed", lo=0, lo_open=False, hi=2**64, integer=True)
    k = cfg["kernel"]
    if k["family"] not in FAMILIES:
        raise ConfigError("kernel.family", f"must be one of {FAMILIES}")
    n = _num(cfg, "grid", "n", lo=8, lo_open=False, integer=True)
    if int(n) & (int(n) - 1):
        raise ConfigError("grid.n", f"must be a power of two, got {n}")
    L = _num(cfg, "grid", "L", lo=0)
    h = 2.0 * L / n
    _num(cfg, "sde", "sigma", lo=0)
    _num(cfg, "sde", "T", lo=0)
    _num(cfg, "sde", "n_steps", lo=1, lo_open=False, integer=True)
    _num(cfg, "sde", "n_save", lo=1, lo_open=False, integer=True)
    _num(cfg, "initial", "var", lo=0)
    beta = _num(cfg, "schedule", "beta", lo=0, hi=0.5)
    a = _num(cfg, "diagnostics", "alpha", lo=0, hi=0.5)
    d = _num(cfg, "diagnostics", "delta", lo=0)
    _num(cfg, "diagnostics", "gamma", lo=0)
    if not a + d < 0.5:
        raise ConfigError("diagnostics.delta", f"alpha + delta = {a + d} must be < 1/2")
    M = _num(cfg, "diagnostics", "replicas", lo=1, lo_open=False, integer=True)
    Ns = cfg["schedule"]["N_list"]
    if not isinstance(Ns, list) or not Ns or any(isinstance(x, bool) or not isinstance(x, int) or x < 1 for x in Ns):
        raise ConfigError("schedule.N_list", "must be a nonempty list of positive integers")
    dynamics = command in ("simulate", "rate-sweep", "liouville-oracle")
    if dynamics:
        if k["family"] == "coulomb" or (k["family"] == "bessel" and int(k["d"]) != 1):
            raise ConfigError("kernel.family", "particle dynamics run in d = 1 only")
        if k["family"] == "bounded_confidence":
            _num(cfg, "kernel", "R", lo=0, hi=L / 2)
        eps_min = float(max(Ns)) ** (-beta)
        if command == "liouville-oracle":
            eps_min = float(cfg["liouville"]["N"]) ** (-beta)
        if k["family"] in ("bounded_confidence",) or (k["family"] == "bessel" and k["route"] == "mollifier"):
            if eps_min < 4 * h:
                raise ConfigError("grid.n", f"eps(max N) = {eps_min:.4g} is below 4h = {4 * h:.4g}; refine the grid")
        if command == "rate-sweep" and len(Ns) < 4:
            raise ConfigError("schedule.N_list", "rate sweeps need at least 4 N values")
        if command in ("rate-sweep",) and M < 8:
            raise ConfigError("diagnostics.replicas", "at least 8 replicas are needed for standard errors")
    if command == "liouville-oracle":
        if M < 8:
            raise ConfigError("diagnostics.replicas", "at least 8 replicas are needed for standard errors")
        if cfg["liouville"]["N"] != 2:
            raise ConfigError("liouville.N", "only N = 2 Liouville solves are supported")
        cn = _num(cfg, "liouville", "coarse_n", lo=0, lo_open=False, integer=True) or n // 2
        if int(cn) & (int(cn) - 1) or cn < 8:
            raise ConfigError("liouville.coarse_n", f"must be a power of two >= 8, got {cn}")
        eps2 = 2.0 ** (-beta)
        if k["family"] == "bounded_confidence" and eps2 < 8 * L / cn:
            raise ConfigError("liouville.coarse_n", f"eps = {eps2:.4g} is below 4h on the coarse grid; refine it")
    if command == "pde-compare":
        if k["family"] != "bounded_confidence":
            raise ConfigError("kernel.family", "pde-compare uses the bounded-confidence kernel")
        _num(cfg, "kernel", "R", lo=0, hi=L / 2)
        eps = cfg["pde_compare"]["eps_list"]
        if not eps or min(eps) <= 0:
            raise ConfigError("pde_compare.eps_list", "must be a nonempty list of positive values")
        if min(eps) < 4 * h:
            raise ConfigError("grid.n", f"eps = {min(eps)} is below 4h = {4 * h:.4g}; refine the grid")
    if k["family"] == "custom" and (not k["W_file"] or not k["V_file"]):
        raise ConfigError("kernel.W_file", "custom kernels need W_file and V_file")
    if k["family"] in ("coulomb",) and int(k["d"]) not in (2, 3):
        raise ConfigError("kernel.d", "Coulomb kernels need d in {2, 3}")
    if k["family"] == "bessel" and int(k["d"]) not in (1, 2, 3):
        raise ConfigError("kernel.d", "Bessel kernels need d in {1, 2, 3}")
    return cfg


def config_hash(cfg: dict) -> str:
    """Hash of everything that affects results (not the output location or thread count)."""
    c = {k: v for k, v in cfg.items() if k not in ("output_dir",)}
    blob = json.dumps(c, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def header_lines(cfg: dict, command: str) -> list:
    return [f"# chaoslab {__version__} command={command} config_hash={config_hash(cfg)}"]
