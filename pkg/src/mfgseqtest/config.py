"""JSON problem configuration with defaults and dotted ``key=value`` overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, DomainError
from .model import LossModel, Mollifier, SignalModel

REQUIRED = ("c", "T", "prior", "loss", "signal")

DEFAULTS = {
    "mollifier": {"width": 0.5},
    "grid": {"n_space": 1000, "n_time": 1000, "substeps": 8},
    "mc": {"paths": 100_000, "dt": None, "seed": 0},
    "fixed_point": {"damping": 0.5, "tol": 1e-3, "max_iter": 50, "init": "uniform"},
}


def _err(key, message):
    return ConfigError(message, key)


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``a.b.c=value`` strings; values are parsed as JSON when possible."""
    out = copy.deepcopy(raw)
    for item in overrides or ():
        if "=" not in item:
            raise _err(item, f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        node = out
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise _err(key, f"cannot descend into non-object at {p!r}")
            node = nxt
        node[parts[-1]] = _parse_value(text.strip())
    return out


def load_raw(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise _err("config", f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise _err("config", f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise _err("config", "config must be a JSON object")
    return raw


@dataclass(frozen=True)
class Problem:
    """Validated problem description; ``raw`` is the full snapshot with defaults filled in."""

    loss: LossModel
    signal: SignalModel
    mollifier: Mollifier
    c: float
    T: float
    prior: float
    n_space: int
    n_time: int
    substeps: int
    paths: int
    dt: float
    seed: int
    damping: float
    tol: float
    max_iter: int
    init: str
    raw: dict

    def with_seed(self, seed: int) -> "Problem":
        raw = copy.deepcopy(self.raw)
        raw["mc"]["seed"] = int(seed)
        return from_dict(raw)


def _num(raw, key, kind=float):
    node = raw
    for p in key.split("."):
        if not isinstance(node, dict) or p not in node:
            raise _err(key, f"missing required key {key!r}")
        node = node[p]
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        raise _err(key, f"{key!r} must be a number, got {node!r}")
    if kind is int:
        if float(node) != int(node):
            raise _err(key, f"{key!r} must be an integer")
        return int(node)
    return float(node)


def _loss(raw) -> LossModel:
    entry = raw["loss"]
    if not isinstance(entry, dict) or "variant" not in entry:
        raise _err("loss.variant", "loss must be an object with a 'variant'")
    variant = entry["variant"]
    params = entry.get("params") or {}
    if not isinstance(params, dict):
        raise _err("loss.params", "loss.params must be an object")
    try:
        if variant == "cross_entropy":
            return LossModel.cross_entropy()
        if variant == "scaled_quadratic":
            return LossModel.scaled_quadratic(float(params.get("beta", 1.0)))
        if variant == "classic":
            return LossModel.classic(float(params["a1"]), float(params["a2"]))
    except KeyError as exc:
        raise _err(f"loss.params.{exc.args[0]}", f"classic loss needs {exc.args[0]!r}") from exc
    except (DomainError, ValueError) as exc:
        raise _err("loss.params", str(exc)) from exc
    raise _err("loss.variant", f"unknown loss variant {variant!r}")


def from_dict(raw: dict) -> Problem:
    if not isinstance(raw, dict):
        raise _err("config", "config must be a JSON object")
    for key in REQUIRED:
        if key not in raw:
            raise _err(key, f"missing required key {key!r}")
    full = _merge(DEFAULTS, raw)

    c, T, prior = _num(full, "c"), _num(full, "T"), _num(full, "prior")
    if c <= 0:
        raise _err("c", "c must be positive")
    if T <= 0:
        raise _err("T", "T must be positive")
    if not 0.0 < prior < 1.0:
        raise _err("prior", "prior must lie in (0, 1)")
    try:
        signal = SignalModel(_num(full, "signal.lambda0"), _num(full, "signal.lambda1"))
    except (DomainError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise _err("signal", str(exc)) from exc
    width = _num(full, "mollifier.width")
    if not 0.0 < width <= T:
        raise _err("mollifier.width", "mollifier width must lie in (0, T]")

    n_space, n_time = _num(full, "grid.n_space", int), _num(full, "grid.n_time", int)
    substeps = _num(full, "grid.substeps", int)
    if n_space < 2 or n_time < 2 or substeps < 1:
        raise _err("grid", "grid sizes must be at least 2")
    paths = _num(full, "mc.paths", int)
    if paths < 2:
        raise _err("mc.paths", "mc.paths must be at least 2")
    dt = T / n_time if full["mc"].get("dt") is None else _num(full, "mc.dt")
    if not 0.0 < dt <= T / 10.0:
        raise _err("mc.dt", "mc.dt must lie in (0, T/10]")
    if dt > T / n_time * (1 + 1e-9):
        raise _err("mc.dt", "mc.dt must not exceed the time grid spacing")
    seed = _num(full, "mc.seed", int)
    if not 0 <= seed < 2**64:
        raise _err("mc.seed", "seed must be an unsigned 64-bit integer")

    damping = _num(full, "fixed_point.damping")
    if not 0.0 < damping <= 1.0:
        raise _err("fixed_point.damping", "damping must lie in (0, 1]")
    tol = _num(full, "fixed_point.tol")
    if tol <= 0:
        raise _err("fixed_point.tol", "tolerance must be positive")
    max_iter = _num(full, "fixed_point.max_iter", int)
    if max_iter < 1:
        raise _err("fixed_point.max_iter", "max_iter must be at least 1")
    init = full["fixed_point"].get("init", "uniform")
    if init not in ("uniform", "stop_at_0", "stop_at_T"):
        raise _err("fixed_point.init", f"unknown initial measure {init!r}")

    return Problem(_loss(full), signal, Mollifier(width), c, T, prior, n_space, n_time,
                   substeps, paths, dt, seed, damping, tol, max_iter, init, full)


def load(path, overrides=None, seed: int | None = None) -> Problem:
    raw = apply_overrides(load_raw(path), overrides)
    if seed is not None:
        raw = apply_overrides(raw, [f"mc.seed={int(seed)}"])
    return from_dict(raw)
