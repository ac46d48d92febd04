import time

import numpy as np
import pytest

from starweyl import direct, inverse
from starweyl.graph_model import (EXAMPLE1_POTENTIALS, SpectralSamplingPlan, build_graph, example1_graph,
                                  potential_function)

# lines recorded by the acceptance tests, printed after the run
ACCEPTANCE_LINES: list[str] = []
# wall-clock seconds of the expensive session fixtures
TIMINGS: dict[str, float] = {}


def timed(name, fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    TIMINGS[name] = time.perf_counter() - t0
    return out

THREE_EDGE_EXPRS = ("x", "exp(-x)", "1 + cos(pi*x)")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def ex1_graph():
    return example1_graph()


@pytest.fixture(scope="session")
def ex1_truth():
    return [potential_function(p) for p in EXAMPLE1_POTENTIALS]


@pytest.fixture(scope="session")
def ex1_samples(ex1_graph):
    plan = SpectralSamplingPlan("uniform", 190, 1 + 0.1j, 100 + 0.1j)
    return timed("ex1_direct", direct.synthesize_weyl_data, ex1_graph, plan, "diag-plus-successor")


@pytest.fixture(scope="session")
def ex1_results(ex1_graph, ex1_samples, ex1_truth):
    return timed("ex1_inverse", inverse.run_inverse_pipeline, ex1_samples, ex1_graph.lengths,
                 inverse.InverseConfig(N=9), q_true=ex1_truth)


def three_edge_specs():
    return [{"length": 1.0, "potential": {"kind": "expr", "params": {"expr": e}}} for e in THREE_EDGE_EXPRS]


@pytest.fixture(scope="session")
def three_graph():
    return build_graph(three_edge_specs())


@pytest.fixture(scope="session")
def three_truth():
    return [potential_function(s["potential"]) for s in three_edge_specs()]


@pytest.fixture(scope="session")
def zero3():
    return build_graph([(1.0, {"kind": "zero"})] * 3)


def free_weyl(lengths, rho):
    """Hand-derived Weyl matrix for q = 0.

    Row i: the vertex value u_i is shared by all edges, so M_ij = rho u_i / sin(rho L_j)
    (j != i) and M_ii = rho (u_i - cos(rho L_i)) / sin(rho L_i); Kirchhoff then gives
    u_i = 1 / (sin(rho L_i) * sum_j cot(rho L_j)).
    """
    L = np.asarray(lengths, dtype=float)
    M = L.size
    W = np.empty((M, M), dtype=complex)
    cot_sum = sum(np.cos(rho * Lj) / np.sin(rho * Lj) for Lj in L)
    for i in range(M):
        u = 1.0 / (np.sin(rho * L[i]) * cot_sum)
        for j in range(M):
            if j == i:
                W[i, j] = rho * (u - np.cos(rho * L[i])) / np.sin(rho * L[i])
            else:
                W[i, j] = rho * u / np.sin(rho * L[j])
    return W


def closed_form_samples(lengths, rhos, mask=None):
    """Weyl samples of the zero potential from the closed form."""
    M = len(lengths)
    mask = np.ones((M, M), dtype=bool) if mask is None else mask
    return [direct.WeylSample(complex(r), free_weyl(lengths, r), mask.copy()) for r in rhos]


@pytest.fixture(scope="session")
def three_samples(three_graph):
    plan = SpectralSamplingPlan("log-uniform", 60, delta=0.1, alpha_range=(0.0, 2.0))
    return timed("three_direct", direct.synthesize_weyl_data, three_graph, plan, "diag-plus-successor")


@pytest.fixture(scope="session")
def three_results(three_graph, three_samples, three_truth):
    return timed("three_inverse", inverse.run_inverse_pipeline, three_samples, three_graph.lengths,
                 inverse.InverseConfig(N=9), q_true=three_truth)


@pytest.fixture(scope="session")
def saddle_sweep(ex1_graph, ex1_truth):
    """Edge-8 sup errors for M_k = 0..7 from 30 log-uniform points, N = 7, full Weyl rows."""
    t0 = time.perf_counter()
    plan = SpectralSamplingPlan("log-uniform", 30, delta=0.1, alpha_range=(0.0, 2.0))
    samples = direct.synthesize_weyl_data(ex1_graph, plan, "full")
    out = {}
    for mk in range(8):
        (rp,) = inverse.run_inverse_pipeline(samples, ex1_graph.lengths, inverse.InverseConfig(N=7, M_k=mk),
                                             q_true=ex1_truth, edges=[8])
        out[mk] = rp
    TIMINGS["saddle_sweep"] = time.perf_counter() - t0
    return out


@pytest.fixture(scope="session")
def remainders(ex1_graph):
    """Max |S_N - S| at x = L over real rho in [0, 10] and [0, 300], N = 6, 9, 12, per edge."""
    from starweyl import nsbf, ode
    t0 = time.perf_counter()
    rho = np.linspace(0.0, 300.0, 1201)
    small = rho <= 10
    out = {}
    for e in ex1_graph.edges:
        ref = ode.S(e, rho, e.length)[0]
        for N in (6, 9, 12):
            c = nsbf.fit_coefficients(e, N, "S", e.length)
            err = np.abs(nsbf.eval_truncated(c, "S", rho) - ref)
            out[e.index, N] = (err[small].max(), err.max())
    TIMINGS["remainders"] = time.perf_counter() - t0
    return out
