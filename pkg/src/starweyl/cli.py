"""starweyl command line: direct, inverse, roundtrip and spectra experiments.

Exit codes: 0 success, 2 configuration or usage error, 3 every edge failed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import config as C
from . import direct, inverse, nsbf, ode
from .direct import DirectError
from .graph_model import GraphError
from .inverse import EdgeFailure, InverseConfig, InverseError, RecoveredPotential, UnderdeterminedError

log = logging.getLogger("starweyl")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FAILED = 3


class Stopwatch:
    """Stage timings whose cumulative column is a running sum."""

    def __init__(self):
        self.stages: list[tuple[str, float]] = []
        self._t = time.perf_counter()

    def lap(self, name: str) -> None:
        now = time.perf_counter()
        self.stages.append((name, now - self._t))
        self._t = now

    def report(self) -> dict:
        rows = []
        total = 0.0
        for name, dt in self.stages:
            total += dt
            rows.append({"stage": name, "seconds": dt, "cumulative": total})
        return {"stages": rows, "total": total}


class Outputs:
    def __init__(self, root: Path):
        self.root = root
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.root / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(p)
        return p

    def manifest(self) -> list[dict]:
        out = []
        for p in self.files:
            data = p.read_bytes()
            out.append({"file": str(p.relative_to(self.root)), "bytes": len(data),
                        "sha256": hashlib.sha256(data).hexdigest()})
        return out


def _num(v):
    """Float for JSON; NaN and infinities become strings."""
    v = float(v)
    return v if np.isfinite(v) else str(v)


# --- writers ----------------------------------------------------------------------


def write_weyl(samples, out: Outputs, name="weyl.csv"):
    with out.path(name).open("w", newline="") as fh:
        direct.write_csv(samples, fh)


def write_edge(rp: RecoveredPotential, out: Outputs, prefix: str = "") -> None:
    i = rp.edge
    with out.path(f"{prefix}spectra_{i}.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "k", "rho", "lambda"])
        for kind, roots in (("mu", rp.spectra.mu), ("nu", rp.spectra.nu)):
            for k, r in enumerate(roots, start=1):
                w.writerow([kind, k, repr(float(r)), repr(float(r * r))])
    with out.path(f"{prefix}g0_{i}.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "g0"])
        for x, g in zip(rp.x, rp.g0):
            w.writerow([repr(float(x)), repr(float(g))])
    with out.path(f"{prefix}q_{i}.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if rp.q_true is None:
            w.writerow(["x", "q_recovered"])
            for x, q in zip(rp.x, rp.q):
                w.writerow([repr(float(x)), repr(float(q))])
        else:
            w.writerow(["x", "q_recovered", "q_true", "abs_err", "rel_err"])
            for row in zip(rp.x, rp.q, rp.q_true, rp.abs_error, rp.rel_error):
                w.writerow([repr(float(v)) for v in row])


def write_endpoint_coeffs(results, lengths, out: Outputs, prefix: str = "") -> None:
    sets = []
    for rp in results:
        if isinstance(rp, RecoveredPotential):
            ep = rp.endpoint
            sets.append(nsbf.NsbfCoeffSet.endpoint(rp.edge, lengths[rp.edge - 1], g=ep.g, s=ep.s[rp.edge]))
    with out.path(f"{prefix}nsbf_endpoint.csv").open("w", newline="") as fh:
        nsbf.write_csv(sets, fh)


def edge_summary(r) -> dict:
    if isinstance(r, EdgeFailure):
        return {"edge": r.edge, "status": "failed", "step": r.step, "message": r.message}
    d = r.diagnostics
    out = {"edge": r.edge, "status": "ok",
           "metrics": {k: _num(v) for k, v in r.error_metrics().items()},
           "diagnostics": {
               "endpoint": {k: _num(v) for k, v in d["endpoint"].items()},
               "spectra": {k: _num(v) for k, v in d["spectra"].items()},
               "t_coeffs": {k: _num(v) for k, v in d["t_coeffs"].items()},
               "interior_flagged": d["interior_flagged"],
           },
           "timings": {k: float(v) for k, v in d["timings"].items()}}
    return out


def print_error_table(results, stream=None, label=""):
    stream = sys.stdout if stream is None else stream
    print(f"{label}edge  status  sup_abs      sup_rel      argmax_x   L2", file=stream)
    for r in results:
        if isinstance(r, EdgeFailure):
            print(f"{label}{r.edge:4d}  FAILED  {r.step}: {r.message}", file=stream)
            continue
        m = r.error_metrics()
        if not m:
            print(f"{label}{r.edge:4d}  ok      (no ground truth)", file=stream)
            continue
        print(f"{label}{r.edge:4d}  ok      {m['sup_abs']:.4e}  {m['sup_rel']:.4e}  "
              f"{m['argmax_x']:.5f}    {m['l2']:.4e}", file=stream)


# --- commands ---------------------------------------------------------------------


def _threads(args) -> int:
    if args.threads is not None:
        t = args.threads
    else:
        env = os.environ.get("STARWEYL_THREADS")
        if env is None or env == "":
            return 1
        try:
            t = int(env)
        except ValueError:
            raise C.ConfigError(f"STARWEYL_THREADS must be a positive integer, got {env!r}") from None
    if t < 1:
        raise C.ConfigError(f"--threads must be >= 1, got {t}")
    return t


def _overrides(args) -> C.Overrides:
    return C.Overrides(N=args.N, N_c=args.Nc, M_k=args.Mk, m=args.m, svd_threshold=args.svd_threshold,
                       threads=_threads(args))


def _load(args) -> dict:
    if not args.config:
        raise C.ConfigError("--config PATH (or a preset name) is required")
    cfg = C.load(args.config)
    extra = sorted(set(cfg) - C.TOP_KEYS)
    if extra:
        raise C.ConfigError(f"unknown top-level key(s) {', '.join(extra)}")
    return cfg


def _target_edges(args, cfg, M) -> list[int]:
    if args.edges:
        try:
            edges = [int(t) for t in args.edges.split(",")]
        except ValueError:
            raise C.ConfigError(f"--edges: expected comma-separated indices, got {args.edges!r}") from None
    else:
        edges = cfg.get("target_edges") or list(range(1, M + 1))
    bad = [e for e in edges if not (isinstance(e, int) and 1 <= e <= M)]
    if bad:
        raise C.ConfigError(f"edge index {bad[0]} outside 1..{M}")
    return edges


def _synthesize(cfg, args, sw: Stopwatch, M_k: int, threads: int):
    graph = C.build(cfg, args.grid_size)
    plan = C.sampling_plan(cfg, args.m)
    sw.lap("build")
    mask = C.mask_policy(cfg, M_k)
    samples = direct.synthesize_weyl_data(graph, plan, mask, threads=threads)
    sw.lap("direct")
    info = {"requested": int(plan.m), "retained": len(samples), "mask": mask,
            "entries_per_sample": int(samples[0].mask.sum()) if samples else 0,
            "max_cond": _num(max((s.cond for s in samples), default=float("nan"))),
            "max_residual": _num(max((s.residual for s in samples), default=float("nan")))}
    zero = all(np.all(e.q == 0) for e in graph.edges)
    if zero and samples:
        dev = 0.0
        for s in samples:
            Z = direct.zero_potential_weyl(graph.lengths, s.rho)
            d = np.abs(s.entries - Z)[s.mask].max() / np.abs(Z[s.mask]).max()
            dev = max(dev, float(d))
        info["self_check"] = {"oracle": "zero-potential closed form", "max_rel_deviation": dev,
                              "pass": dev < 1e-8}
    return graph, samples, info


def _run_inverse(samples, lengths, scfg, q_true, edges, out: Outputs, prefix=""):
    results = inverse.run_inverse_pipeline(samples, lengths, scfg, q_true=q_true, edges=edges)
    for r in results:
        if isinstance(r, RecoveredPotential):
            write_edge(r, out, prefix)
    write_endpoint_coeffs(results, lengths, out, prefix)
    return results


def _solver_echo(scfg) -> dict:
    d = asdict(scfg)
    d["N_c_effective"] = scfg.Nc
    return {k: (None if v is None else v) for k, v in d.items()}


def _write_report(out: Outputs, report: dict) -> None:
    report["manifest"] = out.manifest()
    p = out.root / "report.json"
    p.write_text(json.dumps(report, indent=2, sort_keys=False) + "\n")


def cmd_direct(args) -> int:
    sw = Stopwatch()
    cfg = _load(args)
    C.require(cfg, "edges", "sampling")
    ov = _overrides(args)
    scfg = C.solver_config(cfg, ov, M=len(C.lengths(cfg)))
    out = Outputs(Path(args.out))
    graph, samples, info = _synthesize(cfg, args, sw, scfg.M_k, ov.threads)
    write_weyl(samples, out)
    sw.lap("write")
    _write_report(out, {"command": "direct", "config": cfg, "direct": info, "timings": sw.report()})
    print(f"wrote {len(samples)} samples x {info['entries_per_sample']} entries to {out.root / 'weyl.csv'}")
    if "self_check" in info:
        print(f"zero-potential self-check: max relative deviation {info['self_check']['max_rel_deviation']:.3e}")
    return EXIT_OK


def _finish_inverse(results) -> int:
    ok = [r for r in results if isinstance(r, RecoveredPotential)]
    if not ok:
        print("error: every edge failed", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_inverse(args) -> int:
    sw = Stopwatch()
    cfg = _load(args)
    lengths = C.lengths(cfg)
    M = len(lengths)
    scfg = C.solver_config(cfg, _overrides(args), M=M)
    if not args.weyl:
        raise C.ConfigError("--weyl PATH is required for the inverse command")
    try:
        with open(args.weyl, newline="") as fh:
            samples = direct.read_csv(fh, M)
    except OSError as exc:
        raise C.ConfigError(f"cannot read Weyl CSV: {exc}") from None
    sw.lap("read")
    edges = _target_edges(args, cfg, M)
    out = Outputs(Path(args.out))
    results = _run_inverse(samples, lengths, scfg, C.ground_truth(cfg), edges, out)
    sw.lap("inverse")
    print_error_table(results)
    _write_report(out, {"command": "inverse", "config": cfg, "solver": _solver_echo(scfg),
                        "weyl_csv": str(args.weyl), "samples": len(samples),
                        "edges": [edge_summary(r) for r in results], "timings": sw.report()})
    return _finish_inverse(results)


def cmd_roundtrip(args) -> int:
    sw = Stopwatch()
    cfg = _load(args)
    C.require(cfg, "edges", "sampling")
    ov = _overrides(args)
    lengths = C.lengths(cfg)
    M = len(lengths)
    scfg = C.solver_config(cfg, ov, M=M)
    sweep_text = args.sweep or cfg.get("sweep")
    sweep = C.parse_sweep(sweep_text) if sweep_text else None
    if sweep is not None:
        bad = [k for k in sweep if k > M - 2]
        if bad:
            raise C.ConfigError(f"sweep: M_k = {bad[0]} exceeds M - 2 = {M - 2}")
    edges = _target_edges(args, cfg, M)
    out = Outputs(Path(args.out))
    graph, samples, info = _synthesize(cfg, args, sw, max(sweep) if sweep else scfg.M_k, ov.threads)
    write_weyl(samples, out)
    sw.lap("write-weyl")
    q_true = C.ground_truth(cfg)
    report = {"command": "roundtrip", "config": cfg, "direct": info}
    if sweep is None:
        results = _run_inverse(samples, lengths, scfg, q_true, edges, out)
        sw.lap("inverse")
        print_error_table(results)
        report.update(solver=_solver_echo(scfg), edges=[edge_summary(r) for r in results])
        code = _finish_inverse(results)
    else:
        # the gate must hold for every M_k of the sweep
        for k in sweep:
            m_min = inverse.min_points(M, scfg.N, k)
            if len(samples) < m_min:
                raise UnderdeterminedError(len(samples), m_min, M, scfg.N, k)
        rows = []
        report["sweep"] = []
        any_ok = False
        for k in sweep:
            kcfg = InverseConfig(**{**asdict(scfg), "M_k": k})
            results = _run_inverse(samples, lengths, kcfg, q_true, edges, out, prefix=f"Mk_{k}/")
            sw.lap(f"inverse Mk={k}")
            any_ok |= any(isinstance(r, RecoveredPotential) for r in results)
            report["sweep"].append({"M_k": k, "edges": [edge_summary(r) for r in results]})
            for r in results:
                ok = isinstance(r, RecoveredPotential)
                m = r.error_metrics() if ok else {}
                rows.append([k, r.edge, "ok" if ok else "failed",
                             *(repr(float(m[c])) if m else "" for c in ("sup_abs", "sup_rel", "argmax_x", "l2"))])
        with out.path("sweep.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["M_k", "edge", "status", "sup_abs", "sup_rel", "argmax_x", "l2"])
            w.writerows(rows)
        print("M_k  edge  sup_abs      sup_rel")
        for row in rows:
            if row[3]:
                print(f"{row[0]:3d}  {row[1]:4d}  {float(row[3]):.4e}  {float(row[4]):.4e}")
            else:
                print(f"{row[0]:3d}  {row[1]:4d}  {row[2]}")
        report["solver"] = _solver_echo(scfg)
        code = EXIT_OK if any_ok else EXIT_FAILED
    report["timings"] = sw.report()
    _write_report(out, report)
    return code


def cmd_spectra(args) -> int:
    sw = Stopwatch()
    cfg = _load(args)
    graph = C.build(cfg, args.grid_size)
    if not 1 <= args.edge <= graph.M:
        raise C.ConfigError(f"--edge {args.edge} outside 1..{graph.M}")
    try:
        idx = sorted({int(t) for t in args.n.split(",")})
    except ValueError:
        raise C.ConfigError(f"--n: expected comma-separated indices, got {args.n!r}") from None
    if idx[0] < 1:
        raise C.ConfigError("--n: indices start at 1")
    scfg = C.solver_config(cfg, _overrides(args), M=graph.M)
    e = graph.edge(args.edge)
    L = e.length
    nmax = idx[-1]
    if args.weyl:
        with open(args.weyl, newline="") as fh:
            samples = direct.read_csv(fh, graph.M)
        ep = inverse.recover_endpoint_coeffs(samples, graph.lengths, args.edge, scfg.N, scfg.M_k,
                                             scfg.svd_threshold)
        g_end, s_end, source = ep.g, ep.s[args.edge], "weyl"
    else:
        g_end = nsbf.fit_coefficients(e, scfg.N, "phi", L, rho_max=args.train_rho_max).g[0]
        s_end = nsbf.fit_coefficients(e, scfg.N, "S", L, rho_max=args.train_rho_max).s[0]
        source = "forward-fit"
    sw.lap("coefficients")
    rho_max = (nmax + 1.5) * np.pi / L
    sp = inverse.extract_spectra(g_end, s_end, L, rho_max, edge=args.edge, drop_above=nmax + 1)
    if sp.K_D < nmax or sp.K_N < nmax:
        raise C.ConfigError(f"index {nmax} beyond computed range (K_D = {sp.K_D}, K_N = {sp.K_N})")
    sw.lap("nsbf-zeros")
    mu = ode.eigen_roots(e, "dirichlet", nmax, richardson=False)
    nu = ode.eigen_roots(e, "neumann", nmax, richardson=False)
    sw.lap("oracle")
    out = Outputs(Path(args.out))
    rows = []
    for label, kind, exact, approx in (("Dirichlet-Dirichlet", "dirichlet", mu, sp.mu),
                                       ("Neumann-Dirichlet", "neumann", nu, sp.nu)):
        print(f"{label} eigenvalues, edge {args.edge} (N = {scfg.N}, {source})")
        print(f"{'n':>5}  {'lambda_n':>18}  {'lambda~_n':>18}  {'abs err':>9}")
        for n in idx:
            a, b = exact[n - 1] ** 2, approx[n - 1] ** 2
            print(f"{n:5d}  {a:18.9f}  {b:18.9f}  {abs(a - b):9.2e}")
            rows.append([kind, n, repr(float(a)), repr(float(b)), repr(float(abs(a - b)))])
    with out.path(f"eigen_table_{args.edge}.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "n", "lambda_oracle", "lambda_nsbf", "abs_err"])
        w.writerows(rows)
    sw.lap("write")
    _write_report(out, {"command": "spectra", "config": cfg, "edge": args.edge, "source": source,
                        "N": scfg.N, "grid_size": e.grid_size, "timings": sw.report()})
    return EXIT_OK


# --- argument parsing -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file or preset name "
                        f"({', '.join(sorted(C.PRESETS))})")
    common.add_argument("--out", default="starweyl-out", help="output directory (default: %(default)s)")
    common.add_argument("--N", type=int, help="endpoint truncation order")
    common.add_argument("--Nc", type=int, help="interior truncation order (default: N)")
    common.add_argument("--Mk", type=int, help="number of extra type2 equations per row")
    common.add_argument("--m", type=int, help="number of spectral sample points")
    common.add_argument("--svd-threshold", type=float, dest="svd_threshold", help="relative TSVD cutoff")
    common.add_argument("--threads", type=int, help="worker threads (env STARWEYL_THREADS)")
    common.add_argument("--grid-size", type=int, dest="grid_size", help="potential samples per edge")
    common.add_argument("--edges", help="comma-separated edge indices to recover")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="starweyl", description="Inverse problems on star graphs from Weyl data.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("direct", parents=[common], help="synthesize Weyl-matrix samples")
    pi = sub.add_parser("inverse", parents=[common], help="recover potentials from a Weyl CSV")
    pi.add_argument("--weyl", help="Weyl CSV written by 'direct'")
    pr = sub.add_parser("roundtrip", parents=[common], help="direct then inverse in one run")
    pr.add_argument("--sweep", help="sweep over M_k, e.g. Mk=0..7")
    ps = sub.add_parser("spectra", parents=[common], help="eigenvalue table for one edge")
    ps.add_argument("--edge", type=int, required=True)
    ps.add_argument("--n", default="1,11,51,101", help="eigenvalue indices (default: %(default)s)")
    ps.add_argument("--weyl", help="take endpoint coefficients from this Weyl CSV instead of a forward fit")
    ps.add_argument("--train-rho-max", type=float, default=100.0, dest="train_rho_max",
                    help="upper end of the forward-fit training grid (default: %(default)s)")
    return p


COMMANDS = {"direct": cmd_direct, "inverse": cmd_inverse, "roundtrip": cmd_roundtrip, "spectra": cmd_spectra}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (C.ConfigError, UnderdeterminedError, DirectError, GraphError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InverseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
