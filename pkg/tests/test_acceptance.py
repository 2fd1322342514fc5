"""End-to-end exit criteria.

Each test carries ``@pytest.mark.acceptance(criterion=N, title=...)``; the
terminal summary prints one PASS/FAIL line per criterion together with the
measured quantities recorded through ``record_property``.
"""

import numpy as np
import pytest

from helpers import random_mixing, random_problem
from nidslab.algorithms import iterate, make_step_sizes
from nidslab.analysis import NidsMonitor, certify_point, descent_factor, empirical_contraction, theoretical_rho
from nidslab.analysis import sublinear_certificate
from nidslab.harness import heterogeneous_config, lasso_config, run_experiment, sensing_config
from nidslab.netgraph import GRAPH_MODELS, MixingMatrix, generate_graph, laplacian_weights, metropolis_weights
from nidslab.netgraph import validate_mixing
from nidslab.objectives import generate_lasso_problem, generate_sensing_problem, prox_l1
from nidslab.stackmat import max_admissible_c


def acceptance(n, title):
    return pytest.mark.acceptance(criterion=n, title=title)


# -- 1 -------------------------------------------------------------------------


@acceptance(1, "primal and (x,d,z) forms agree")
def test_form_equivalence(record_property):
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        n, p = int(rng.integers(2, 11)), int(rng.integers(1, 6))
        prob = random_problem(rng, n, p, l1=bool(seed % 2))
        mix = random_mixing(rng, n)
        alpha = rng.uniform(0.2, 1.9, n) / prob.lipschitz
        c = float(rng.uniform(0.1, 1.0)) * max_admissible_c(mix, alpha)
        steps = make_step_sizes(prob, mix, alpha, c)
        x0 = rng.standard_normal((n, p))
        for a, b in zip(iterate("nids", prob, steps, x0, 100), iterate("nids_dz", prob, steps, x0, 100)):
            worst = max(worst, float(np.max(np.abs(a.x - b.x))), float(np.max(np.abs(a.z - b.z))))
    record_property("max deviation", f"{worst:.3e}")
    assert worst <= 1e-12


# -- 2 -------------------------------------------------------------------------


def _ratio(cfg):
    cfg.algorithms = [a for a in cfg.algorithms if a.name in ("NIDS", "EXTRA")]
    res = run_experiment(cfg)
    nids, extra = res["NIDS"], res["EXTRA"]
    assert nids.converged and extra.converged
    return nids.iterations, extra.iterations


@acceptance(2, "NIDS needs under half the iterations of EXTRA on sensing")
@pytest.mark.parametrize("topology", ["sparse", "dense"])
def test_sensing_headline(topology, record_property):
    k_nids, k_extra = _ratio(sensing_config(topology))
    record_property(f"{topology} laplacian", f"NIDS {k_nids} / EXTRA {k_extra} = {k_nids / k_extra:.3f}")
    try:
        m_nids, m_extra = _ratio(sensing_config(topology, mixing="metropolis"))
        record_property(f"{topology} metropolis (informational)", f"{m_nids} / {m_extra} = {m_nids / m_extra:.3f}")
    except AssertionError:
        record_property(f"{topology} metropolis (informational)", "did not converge")
    assert k_nids < 0.5 * k_extra


# -- 3 -------------------------------------------------------------------------


@acceptance(3, "adaptive step sizes beat uniform 1/max L")
def test_heterogeneous(record_property):
    res = run_experiment(heterogeneous_config())
    counts = {name: tr.iterations for name, tr in res.items()}
    record_property("iterations", dict(counts))
    assert all(tr.converged for tr in res.values())
    adaptive = counts.pop("NIDS-adaptive")
    assert all(adaptive < k for k in counts.values())


# -- 4 -------------------------------------------------------------------------


@acceptance(4, "LASSO step-size frontier")
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_lasso_frontier(seed, record_property):
    cfg = lasso_config(seed)
    cfg.algorithms = [a for a in cfg.algorithms if a.name in ("NIDS-1", "NIDS-1.9", "PG-EXTRA-1.4")]
    res = run_experiment(cfg)
    record_property(f"seed {seed}", {n: f"{t.status}@{t.iterations}" for n, t in res.items()})
    assert res["PG-EXTRA-1.4"].status == "diverged"
    assert res["NIDS-1.9"].converged and res["NIDS-1"].converged
    assert res["NIDS-1.9"].iterations < res["NIDS-1"].iterations


# -- 5 -------------------------------------------------------------------------


def _contraction(prob, steps, iters=400):
    cert = certify_point(prob.reference_solution, prob, steps)
    mon = NidsMonitor(prob, steps, cert)
    values = [mon.strongly_convex(s) for s in iterate("nids", prob, steps, np.zeros((prob.n, prob.p)), iters)]
    return empirical_contraction(values, theoretical_rho(prob, steps), warmup=0)


@acceptance(5, "linear-rate certificate")
def test_k3_desk_instance(record_property):
    prob = generate_sensing_problem(n=3, m=60, p=5, target_l=1.0, target_mu=0.5, seed=0)
    mix = metropolis_weights(generate_graph(3, "complete"))
    rc = _contraction(prob, make_step_sizes(prob, mix, 1.0, "boundary"))
    record_property("K3 rho", repr(rc.rho))
    record_property("K3 worst contraction", f"{rc.empirical_rho:.4f} over {rc.ratios_used} ratios")
    assert abs(rc.rho - 0.5) <= 1e-12
    assert rc.respects(1e-6)


@acceptance(5, "linear-rate certificate")
@pytest.mark.parametrize("preset", ["uniform_inverse_max_L", "inverse_L"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_closed_form_presets(preset, seed, record_property):
    rng = np.random.default_rng(100 + seed)
    n = 12
    lips = rng.uniform(1.0, 3.0, n)
    prob = generate_sensing_problem(n=n, m=30, p=8, target_l=lips, target_mu=lips * rng.uniform(0.1, 0.5, n), seed=seed)
    mix = laplacian_weights(generate_graph(n, "erdos_renyi", seed=seed, prob=0.3))
    alpha = 1.0 / prob.lipschitz.max() if preset == "uniform_inverse_max_L" else 1.0 / prob.lipschitz
    steps = make_step_sizes(prob, mix, alpha, "boundary")
    rc = _contraction(prob, steps)
    closed = rc.presets[preset]
    record_property(
        f"{preset} seed {seed}", f"worst {rc.empirical_rho:.4f} <= rho {rc.rho:.6f} (closed form {closed:.6f})"
    )
    if preset == "uniform_inverse_max_L":
        assert rc.rho == pytest.approx(closed, abs=1e-12)
    else:
        # the closed form assumes a coupling slightly above c_max
        assert closed - 1e-12 <= rc.rho <= closed + 1e-3
    assert rc.respects(1e-6)


# -- 6 -------------------------------------------------------------------------


@acceptance(6, "sublinear certificates on general convex runs")
@pytest.mark.parametrize("case", ["least_squares", "lasso"])
@pytest.mark.parametrize("seed", [0, 1])
def test_sublinear(case, seed, record_property):
    rng = np.random.default_rng(200 + seed)
    if case == "lasso":
        prob = generate_lasso_problem(n=8, m=3, p=30, seed=seed)
    else:
        prob = random_problem(rng, 8, 6, strongly_convex=False)
    assert np.min(prob.strong_convexity) == 0.0
    mix = random_mixing(rng, prob.n)
    steps = make_step_sizes(prob, mix, rng.uniform(0.5, 1.9, prob.n) / prob.lipschitz, "spectral")
    cert = certify_point(prob.reference_solution, prob, steps)
    mon = NidsMonitor(prob, steps, cert)
    states = iterate("nids", prob, steps, np.zeros((prob.n, prob.p)), 10_000)
    prev = next(states)
    v1 = mon.general(prev)
    deltas = []
    for s in states:
        deltas.append(mon.delta(prev, s))
        prev = s
    rep = sublinear_certificate(deltas, v1, descent_factor(prob, steps), rtol=1e-10)
    record_property(
        f"{case} seed {seed}",
        f"max increase {rep.max_increase:.2e}, worst bound ratio {rep.worst_bound_ratio:.3f}, "
        f"k*Delta final/max {rep.k_delta_final:.2e}/{rep.k_delta_max:.2e}",
    )
    assert rep.monotone and rep.bound_holds and rep.trending_to_zero


# -- 7 -------------------------------------------------------------------------


@acceptance(7, "one-step fundamental inequality")
def test_fundamental_inequality(record_property):
    worst = np.inf
    for seed in range(10):
        rng = np.random.default_rng(300 + seed)
        n, p = int(rng.integers(3, 9)), int(rng.integers(2, 6))
        prob = random_problem(rng, n, p, l1=bool(seed % 2), strongly_convex=seed % 3 != 0)
        mix = random_mixing(rng, n)
        steps = make_step_sizes(prob, mix, rng.uniform(0.3, 1.9, n) / prob.lipschitz, "spectral")
        cert = certify_point(prob.reference_solution, prob, steps)
        assert cert.certified
        mon = NidsMonitor(prob, steps, cert)
        states = list(iterate("nids", prob, steps, rng.standard_normal((n, p)), 300))
        worst = min(worst, min(mon.inequality_gap(a, b) for a, b in zip(states[:-1], states[1:])))
    record_property("min gap", f"{worst:.3e}")
    assert worst >= -1e-8


# -- 8 -------------------------------------------------------------------------


@acceptance(8, "mixing matrix assumptions")
def test_random_graphs(record_property):
    rng = np.random.default_rng(400)
    checked = 0
    for i in range(200):
        n = int(rng.integers(2, 51))
        model = GRAPH_MODELS[i % len(GRAPH_MODELS)]
        prob = min(1.0, float(rng.uniform(1.5, 4.0)) * np.log(n + 1) / n) if model == "erdos_renyi" else None
        g = generate_graph(n, model, seed=int(rng.integers(1 << 30)), prob=prob)
        for mix in (metropolis_weights(g), laplacian_weights(g)):
            rep = validate_mixing(mix)
            assert rep.passed, (n, model, rep.failed())
            checked += 1
    record_property("matrices validated", checked)


@acceptance(8, "mixing matrix assumptions")
def test_adversarial_matrices():
    g = generate_graph(2, "complete")
    assert validate_mixing(MixingMatrix(np.eye(2), g)).failed() == ["null_space"]
    assert validate_mixing(MixingMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]), g)).failed() == ["spectral"]


# -- 9 -------------------------------------------------------------------------


@acceptance(9, "single-agent runs reduce to GD and ISTA")
@pytest.mark.parametrize("kind, l1", [("nids", False), ("nids", True), ("pg_extra", False), ("pg_extra", True)])
def test_single_agent(kind, l1, record_property):
    rng = np.random.default_rng(500)
    prob = random_problem(rng, 1, 4, l1=l1)
    a_mat, y = prob.smooth[0].matrix, prob.smooth[0].target
    lam = prob.nonsmooth[0].weight
    alpha = 1.5 / prob.lipschitz[0]
    steps = make_step_sizes(prob, metropolis_weights(generate_graph(1, "complete")), alpha)
    x = rng.standard_normal(4)
    worst = 0.0
    for state in iterate(kind, prob, steps, x[None, :], 100):
        v = x - alpha * a_mat.T @ (a_mat @ x - y)
        x = prox_l1(v, alpha * lam) if l1 else v
        worst = max(worst, float(np.max(np.abs(state.x[0] - x))))
    record_property(f"{kind} {'ISTA' if l1 else 'GD'}", f"{worst:.3e}")
    assert worst <= 1e-12
