"""Experiment configuration: JSON files, built-in presets and validation.

Top level keys are ``edges``, ``sampling`` and ``solver``.  Errors carry the
dotted key path (``solver.N``, ``edges[3].length``) or the JSON line/column.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph_model import (EXAMPLE1_LENGTHS, EXAMPLE1_POTENTIALS, GraphError, SpectralSamplingPlan,
                          StarGraph, build_graph, potential_function)
from .inverse import InverseConfig
from .linalg import DEFAULT_SVD_THRESHOLD


class ConfigError(ValueError):
    """Bad configuration; the CLI maps it to exit code 2."""


TOP_KEYS = {"edges", "sampling", "solver", "sweep", "target_edges"}
EDGE_KEYS = {"length", "potential", "grid_size"}
SAMPLING_KEYS = {"strategy", "m", "a", "b", "delta", "alpha_range", "mask"}
SOLVER_KEYS = {"N", "N_c", "M_k", "rho_scan_max", "svd_threshold", "x_points", "smoothing_window",
               "smoothing_degree", "anchored"}


def _example1_edges(grid_size=None):
    out = []
    for L, p in zip(EXAMPLE1_LENGTHS, EXAMPLE1_POTENTIALS):
        e = {"length": L, "potential": copy.deepcopy(p)}
        if grid_size:
            e["grid_size"] = grid_size
        out.append(e)
    return out


PRESETS = {
    "example1-uniform190": {
        "edges": _example1_edges(),
        "sampling": {"strategy": "uniform-segment", "m": 190, "a": [1.0, 0.1], "b": [100.0, 0.1]},
        "solver": {"N": 9, "M_k": 0},
    },
    "example1-log90": {
        "edges": _example1_edges(),
        "sampling": {"strategy": "log-uniform", "m": 90, "delta": 0.1, "alpha_range": [0, 2]},
        "solver": {"N": 9, "M_k": 0},
    },
    "fig2-sweep": {
        "edges": _example1_edges(),
        "sampling": {"strategy": "log-uniform", "m": 30, "delta": 0.1, "alpha_range": [0, 2],
                     "mask": "full"},
        "solver": {"N": 7, "M_k": 0},
        "sweep": "Mk=0..7",
        "target_edges": [8],
    },
}


def preset(name: str) -> dict:
    try:
        return copy.deepcopy(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}") from None


def load(source: str | Path) -> dict:
    """Read a JSON config file, or a preset when ``source`` names one and no such file exists."""
    path = Path(source)
    if not path.exists():
        if str(source) in PRESETS:
            return preset(str(source))
        raise ConfigError(f"config file {source} not found (presets: {', '.join(sorted(PRESETS))})")
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {source}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    return data


def _complex(v, key):
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return complex(v)
    if isinstance(v, (list, tuple)) and len(v) == 2:
        try:
            return complex(float(v[0]), float(v[1]))
        except (TypeError, ValueError):
            pass
    if isinstance(v, str):
        try:
            return complex(v.replace(" ", "").replace("i", "j"))
        except ValueError:
            pass
    raise ConfigError(f"{key}: expected a complex number as [re, im] or \"re+imi\", got {v!r}")


def _number(v, key, kind=float, lo=None, strict=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {v!r}")
    if kind is int and float(v) != int(v):
        raise ConfigError(f"{key}: expected an integer, got {v!r}")
    v = kind(v)
    if not math.isfinite(v):
        raise ConfigError(f"{key}: must be finite")
    if lo is not None and (v <= lo if strict else v < lo):
        raise ConfigError(f"{key}: must be {'>' if strict else '>='} {lo}, got {v}")
    return v


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(extra)}; allowed: {', '.join(sorted(allowed))}")


def require(cfg: dict, *keys: str) -> None:
    for k in keys:
        if k not in cfg:
            raise ConfigError(f"missing required key {k!r}")


def edge_specs(cfg: dict, grid_size: int | None = None) -> list[dict]:
    require(cfg, "edges")
    edges = cfg["edges"]
    if not isinstance(edges, list) or len(edges) < 2:
        raise ConfigError("edges: expected an array of at least 2 edges")
    out = []
    for k, e in enumerate(edges):
        where = f"edges[{k}]"
        _check_keys(e, EDGE_KEYS, where)
        if "length" not in e:
            raise ConfigError(f"{where}: missing key 'length'")
        spec = {"length": _number(e["length"], f"{where}.length")}
        if spec["length"] <= 0:
            raise ConfigError(f"{where}.length: non-positive length {spec['length']}")
        if "potential" in e:
            spec["potential"] = e["potential"]
        gs = grid_size if grid_size is not None else e.get("grid_size")
        if gs is not None:
            spec["grid_size"] = _number(gs, f"{where}.grid_size", int, 2)
        out.append(spec)
    return out


def build(cfg: dict, grid_size: int | None = None) -> StarGraph:
    specs = edge_specs(cfg, grid_size)
    for s in specs:
        s.setdefault("potential", {"kind": "zero"})
    try:
        return build_graph(specs)
    except (GraphError, TypeError, KeyError) as exc:
        raise ConfigError(f"edges: {exc}") from None


def lengths(cfg: dict) -> list[float]:
    return [s["length"] for s in edge_specs(cfg)]


def ground_truth(cfg: dict) -> list | None:
    """Callables q_i(x) when every edge carries a closed-form potential."""
    specs = edge_specs(cfg)
    if not all("potential" in s for s in specs):
        return None
    out = []
    for k, s in enumerate(specs):
        pot = s["potential"]
        if isinstance(pot, dict) and "samples" in pot:
            # samples on a uniform grid: interpolate
            ys = np.asarray(pot["samples"], dtype=float)
            xs = np.linspace(0.0, s["length"], ys.size)
            out.append(lambda x, xs=xs, ys=ys: np.interp(x, xs, ys))
            continue
        try:
            out.append(potential_function(pot))
        except (GraphError, TypeError, KeyError) as exc:
            raise ConfigError(f"edges[{k}].potential: {exc}") from None
    return out


def sampling_plan(cfg: dict, m: int | None = None) -> SpectralSamplingPlan:
    require(cfg, "sampling")
    s = cfg["sampling"]
    _check_keys(s, SAMPLING_KEYS, "sampling")
    kw = {}
    if "strategy" in s:
        kw["strategy"] = s["strategy"]
    mm = m if m is not None else s.get("m")
    if mm is not None:
        kw["m"] = _number(mm, "sampling.m", int, 1)
    for k in ("a", "b"):
        if k in s:
            kw[k] = _complex(s[k], f"sampling.{k}")
    if "delta" in s:
        kw["delta"] = _number(s["delta"], "sampling.delta")
    if "alpha_range" in s:
        ar = s["alpha_range"]
        if not (isinstance(ar, list) and len(ar) == 2):
            raise ConfigError("sampling.alpha_range: expected [lo, hi]")
        kw["alpha_range"] = (_number(ar[0], "sampling.alpha_range[0]"),
                             _number(ar[1], "sampling.alpha_range[1]"))
    try:
        return SpectralSamplingPlan(**kw)
    except GraphError as exc:
        raise ConfigError(f"sampling: {exc}") from None


def mask_policy(cfg: dict, M_k: int) -> str:
    """Explicit ``sampling.mask``, else the smallest mask the chosen M_k can use."""
    mask = cfg.get("sampling", {}).get("mask")
    if mask is None:
        return "diag-plus-successor" if M_k == 0 else "full"
    if mask not in ("full", "diag-plus-successor"):
        raise ConfigError(f"sampling.mask: expected 'full' or 'diag-plus-successor', got {mask!r}")
    return mask


@dataclass
class Overrides:
    N: int | None = None
    N_c: int | None = None
    M_k: int | None = None
    m: int | None = None
    svd_threshold: float | None = None
    threads: int = 1


def solver_config(cfg: dict, ov: Overrides | None = None, M: int | None = None) -> InverseConfig:
    ov = ov or Overrides()
    s = cfg.get("solver", {})
    _check_keys(s, SOLVER_KEYS, "solver")
    base = InverseConfig()
    N = _number(ov.N if ov.N is not None else s.get("N", base.N), "solver.N", int, 0)
    Nc = ov.N_c if ov.N_c is not None else s.get("N_c")
    Nc = None if Nc is None else _number(Nc, "solver.N_c", int, 0)
    M_k = _number(ov.M_k if ov.M_k is not None else s.get("M_k", 0), "solver.M_k", int, 0)
    if M is not None and M_k > M - 2:
        raise ConfigError(f"solver.M_k: must lie in 0..{M - 2} for M = {M}, got {M_k}")
    thr = ov.svd_threshold if ov.svd_threshold is not None else s.get("svd_threshold", DEFAULT_SVD_THRESHOLD)
    thr = _number(thr, "solver.svd_threshold", float, 0.0, strict=True)
    rho_max = s.get("rho_scan_max")
    rho_max = None if rho_max is None else _number(rho_max, "solver.rho_scan_max", float, 0.0, strict=True)
    xp = _number(s.get("x_points", base.x_points), "solver.x_points", int, 9)
    win = _number(s.get("smoothing_window", base.window), "solver.smoothing_window", int, 3)
    deg = _number(s.get("smoothing_degree", base.degree), "solver.smoothing_degree", int, 2)
    if win <= deg:
        raise ConfigError(f"solver.smoothing_window ({win}) must exceed smoothing_degree ({deg})")
    anchored = s.get("anchored", base.anchored)
    if not isinstance(anchored, bool):
        raise ConfigError("solver.anchored: expected true or false")
    threads = _number(ov.threads, "--threads", int, 1)
    return InverseConfig(N=N, N_c=Nc, M_k=M_k, rho_max=rho_max, x_points=xp, svd_threshold=thr,
                         window=win, degree=deg, anchored=anchored, threads=threads)


def parse_sweep(text: str) -> list[int]:
    """``Mk=0..7`` or ``Mk=0,3,7`` into the list of M_k values."""
    key, sep, rng = str(text).partition("=")
    if not sep or key.strip() != "Mk":
        raise ConfigError(f"sweep: expected 'Mk=a..b' or 'Mk=a,b,...', got {text!r}")
    try:
        if ".." in rng:
            lo, hi = (int(t) for t in rng.split(".."))
            vals = list(range(lo, hi + 1))
        else:
            vals = [int(t) for t in rng.split(",")]
    except ValueError:
        raise ConfigError(f"sweep: cannot parse range {rng!r}") from None
    if not vals or min(vals) < 0:
        raise ConfigError(f"sweep: empty or negative range {rng!r}")
    return vals
