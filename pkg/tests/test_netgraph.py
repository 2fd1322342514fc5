import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nidslab.errors import GraphSamplingError
from nidslab.netgraph import (
    Graph,
    MixingMatrix,
    consensus_power,
    generate_graph,
    graph_from_dict,
    graph_to_dict,
    is_connected,
    laplacian_weights,
    load_graph,
    metropolis_weights,
    save_graph,
    spectral_summary,
    suggest_consensus_steps,
    validate_mixing,
    SpectralSummary,
)


def bfs_components(n, edges):
    """Independent union-find oracle for connectivity."""
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in edges:
        parent[find(i)] = find(j)
    return len({find(i) for i in range(n)})


class TestGraph:
    def test_complete_k3(self):
        assert generate_graph(3, "complete").edges == ((0, 1), (0, 2), (1, 2))

    def test_ring_4(self):
        assert set(generate_graph(4, "ring").edges) == {(0, 1), (1, 2), (2, 3), (0, 3)}

    def test_single_node(self):
        g = generate_graph(1, "ring")
        assert g.n == 1 and g.edges == ()

    def test_erdos_renyi_seeded(self):
        g = generate_graph(40, "erdos_renyi", seed=7, prob=0.12)
        assert g.n == 40
        assert bfs_components(40, g.edges) == 1
        assert generate_graph(40, "erdos_renyi", seed=7, prob=0.12).edges == g.edges

    def test_rejects_self_loop_and_duplicates(self):
        with pytest.raises(ValueError, match="self-loop"):
            Graph(2, ((0, 0), (0, 1)))
        with pytest.raises(ValueError, match="duplicate"):
            Graph(2, ((0, 1), (1, 0)))

    def test_rejects_disconnected(self):
        with pytest.raises(ValueError, match="not connected"):
            Graph(3, ((0, 1),))

    @pytest.mark.parametrize("prob", [0.0, -0.1, 1.5, None])
    def test_invalid_probability(self, prob):
        with pytest.raises(ValueError):
            generate_graph(5, "erdos_renyi", prob=prob)

    def test_retry_budget_exhausted(self):
        with pytest.raises(GraphSamplingError, match="could not sample connected graph"):
            generate_graph(60, "erdos_renyi", seed=0, prob=0.001)

    def test_unknown_model(self):
        with pytest.raises(ValueError, match="unknown graph model"):
            generate_graph(4, "star")

    @given(n=st.integers(1, 12), seed=st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_connectivity_agrees_with_union_find(self, n, seed):
        rng = np.random.default_rng(seed)
        iu, ju = np.triu_indices(n, 1)
        keep = rng.random(iu.size) < 0.3
        edges = list(zip(iu[keep].tolist(), ju[keep].tolist()))
        assert is_connected(n, edges) == (bfs_components(n, edges) == 1)


class TestMetropolis:
    def test_single_agent(self):
        mix = metropolis_weights(generate_graph(1, "complete"))
        np.testing.assert_array_equal(mix.w, [[1.0]])

    def test_k3(self):
        mix = metropolis_weights(generate_graph(3, "complete"))
        np.testing.assert_allclose(mix.w, np.full((3, 3), 1 / 3), atol=1e-15)
        np.testing.assert_allclose(mix.spectrum, [1, 0, 0], atol=1e-15)

    def test_path_2(self):
        mix = metropolis_weights(generate_graph(2, "ring"))
        np.testing.assert_allclose(mix.w, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)
        np.testing.assert_allclose(mix.spectrum, [1, 0], atol=1e-15)

    @given(n=st.integers(2, 50), seed=st.integers(0, 10_000), model=st.sampled_from(["ring", "complete", "er"]))
    @settings(max_examples=60, deadline=None)
    def test_invariants(self, n, seed, model):
        if model == "er":
            g = generate_graph(n, "erdos_renyi", seed=seed, prob=min(1.0, 4.0 / n + 0.1))
        else:
            g = generate_graph(n, model)
        for mix in (metropolis_weights(g), laplacian_weights(g)):
            w = mix.w
            assert np.max(np.abs(w - w.T)) <= 1e-12
            assert np.max(np.abs(w.sum(axis=1) - 1)) <= 1e-12
            assert abs(mix.spectrum[0] - 1) <= 1e-10
            assert mix.spectrum[1] < 1 - 1e-10
            assert mix.spectrum[-1] > -1 + 1e-10
            assert validate_mixing(mix).passed
        wm = metropolis_weights(g).w
        assert np.all(wm >= 0)


class TestLaplacianWeights:
    def test_k2_half(self):
        mix = laplacian_weights(generate_graph(2, "complete"), 0.5)
        np.testing.assert_allclose(mix.w, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)

    def test_k3_third(self):
        mix = laplacian_weights(generate_graph(3, "complete"), 1 / 3)
        np.testing.assert_allclose(mix.w, np.full((3, 3), 1 / 3), atol=1e-15)

    @pytest.mark.parametrize("tau", [0.0, -1.0, 2 / 3, 1.0])
    def test_out_of_range(self, tau):
        # K3 Laplacian has lambda_1 = 3, so the bound is 2/3
        with pytest.raises(ValueError, match="2/lambda_1"):
            laplacian_weights(generate_graph(3, "complete"), tau)

    def test_default_tau(self):
        g = generate_graph(6, "ring")
        lmax = np.linalg.eigvalsh(g.laplacian())[-1]
        np.testing.assert_allclose(laplacian_weights(g).w, np.eye(6) - g.laplacian() / lmax)
        assert laplacian_weights(g).spectrum[-1] == pytest.approx(0.0, abs=1e-12)


class TestValidation:
    def test_metropolis_k3_passes(self):
        rep = validate_mixing(metropolis_weights(generate_graph(3, "complete")))
        assert rep.passed and len(rep.checks) == 4

    def test_identity_fails_null_space(self):
        mix = MixingMatrix(np.eye(2), generate_graph(2, "complete"))
        rep = validate_mixing(mix)
        assert rep.failed() == ["null_space"]

    def test_permutation_fails_spectral(self):
        mix = MixingMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]), generate_graph(2, "complete"))
        rep = validate_mixing(mix)
        assert rep.failed() == ["spectral"]
        assert rep["spectral"].violation > 0

    def test_off_graph_weight_fails_decentralized(self):
        g = generate_graph(4, "ring")
        w = metropolis_weights(g).w.copy()
        w[0, 2] = w[2, 0] = 0.01
        w[0, 0] -= 0.01
        w[2, 2] -= 0.01
        assert "decentralized" in validate_mixing(MixingMatrix(w, g)).failed()

    def test_asymmetric_fails_symmetry(self):
        g = generate_graph(3, "complete")
        w = np.array([[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]])
        assert "symmetry" in validate_mixing(MixingMatrix(w, g)).failed()

    def test_report_serializes(self):
        doc = validate_mixing(metropolis_weights(generate_graph(3, "ring"))).to_dict()
        assert doc["passed"] and {c["name"] for c in doc["checks"]} == {
            "decentralized",
            "symmetry",
            "null_space",
            "spectral",
        }


class TestSpectral:
    def test_k3(self):
        s = spectral_summary(metropolis_weights(generate_graph(3, "complete")))
        assert s.lambda2 == pytest.approx(0, abs=1e-15)
        assert s.lambda_n == pytest.approx(0, abs=1e-15)
        assert s.network_condition == pytest.approx(1.0)

    def test_k2(self):
        s = spectral_summary(metropolis_weights(generate_graph(2, "complete")))
        assert s.lambda2 == pytest.approx(0, abs=1e-15) and s.lambda_n == pytest.approx(0, abs=1e-15)

    def test_single_agent_degenerate(self):
        s = spectral_summary(metropolis_weights(generate_graph(1, "complete")))
        assert s.degenerate and s.network_condition == 1.0

    def test_ring_condition(self):
        s = spectral_summary(metropolis_weights(generate_graph(8, "ring")))
        assert -1 < s.lambda_n <= s.lambda2 < 1
        assert s.network_condition >= 1


class TestConsensusPower:
    def test_t1_unchanged(self):
        mix = metropolis_weights(generate_graph(5, "ring"))
        assert consensus_power(mix, 1) is mix

    def test_k3_idempotent(self):
        mix = metropolis_weights(generate_graph(3, "complete"))
        np.testing.assert_allclose(consensus_power(mix, 2).w, np.full((3, 3), 1 / 3), atol=1e-15)

    @pytest.mark.parametrize("t", [2, 3, 5])
    def test_spectral_mapping(self, t):
        mix = metropolis_weights(generate_graph(12, "erdos_renyi", seed=3, prob=0.3))
        powered = consensus_power(mix, t)
        expected = np.sort(mix.spectrum**t)[::-1]
        np.testing.assert_allclose(powered.spectrum, expected, atol=1e-10)
        rep = validate_mixing(powered)
        assert rep.passed and "waived" in rep["decentralized"].detail

    def test_invalid_t(self):
        mix = metropolis_weights(generate_graph(3, "complete"))
        with pytest.raises(ValueError):
            consensus_power(mix, 0)


class TestSuggestSteps:
    def test_kappa_one(self):
        assert suggest_consensus_steps(SpectralSummary(0.9, -0.2, 0.1, 12.0), 1.0, 10) == 1

    def test_log_rule(self):
        assert math.log(0.5) / math.log(0.9) == pytest.approx(6.58, abs=0.01)
        assert suggest_consensus_steps(SpectralSummary(0.9, -0.2, 0.1, 12.0), 2.0, 20) == 7

    def test_cap(self):
        assert suggest_consensus_steps(SpectralSummary(0.9, -0.2, 0.1, 12.0), 2.0, 3) == 3

    def test_lambda2_zero(self):
        assert suggest_consensus_steps(SpectralSummary(0.0, 0.0, 1.0, 1.0), 5.0, 10) == 1

    def test_network_not_bottleneck(self):
        assert suggest_consensus_steps(SpectralSummary(0.3, -0.2, 0.7, 12 / 7), 100.0, 10) == 1


class TestSerialization:
    def test_round_trip(self, tmp_path):
        g = generate_graph(9, "erdos_renyi", seed=2, prob=0.4)
        mix = metropolis_weights(g)
        path = save_graph(tmp_path / "g.json", g, mix)
        g2, mix2 = load_graph(path)
        assert g2 == g
        np.testing.assert_array_equal(mix2.w, mix.w)

    def test_dict_fields(self):
        g = generate_graph(3, "ring")
        doc = graph_to_dict(g, metropolis_weights(g))
        assert {"n", "edges", "weights", "tolerance_report", "index_base"} <= set(doc)
        assert doc["index_base"] == 0
        assert graph_from_dict({"n": 3, "edges": doc["edges"]})[1] is None
