from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphdlm.errors import ConfigurationError, DisconnectedGraphError, ValidationError
from graphdlm.graph_kernels import (
    DiffusionGrid,
    DistanceTable,
    GraphConfig,
    SensorGraph,
    all_pairs_shortest,
    auto_kappa,
    build_graph,
    build_grid,
    extreme_taus,
    graph_from_csv,
    mix_kernels,
    read_distance_csv,
)
from helpers import random_graph, random_simplex


def _brute_force_shortest(ids, edges):
    """Enumerate every simple path; O(n!) but fine for 3-4 nodes."""
    n = len(ids)
    best = np.full((n, n), np.inf)
    np.fill_diagonal(best, 0.0)
    idx = {s: i for i, s in enumerate(ids)}
    for r in range(2, n + 1):
        for path in itertools.permutations(ids, r):
            total = 0.0
            for a, b in zip(path, path[1:]):
                if (a, b) not in edges:
                    total = np.inf
                    break
                total += edges[(a, b)]
            i, j = idx[path[0]], idx[path[-1]]
            best[i, j] = min(best[i, j], total)
    return np.minimum(best, best.T)


def _graph_with_eigvals(eigvals):
    n = len(eigvals)
    return SensorGraph(np.zeros((n, n)), np.zeros((n, n)), np.asarray(eigvals, float), np.eye(n), 1.0, 1.0)


def _path3():
    D = np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0]], dtype=float)
    return build_graph(D, GraphConfig(kappa=1.5, sigma=1.0))


class TestAllPairsShortest:
    def test_one_way_edge(self):
        t = DistanceTable(("A", "B"), {("A", "B"): 100.0})
        D = all_pairs_shortest(t)
        assert D[0, 1] == 100.0 and D[1, 0] == 100.0

    def test_chain_composes(self):
        t = DistanceTable(("A", "B", "C"), {("A", "B"): 1.0, ("B", "C"): 1.0})
        assert all_pairs_shortest(t)[0, 2] == 2.0

    def test_directed_cycle_matches_brute_force(self):
        ids = ("A", "B", "C")
        edges = {("A", "B"): 1.0, ("B", "C"): 1.0, ("C", "A"): 1.0}
        D = all_pairs_shortest(DistanceTable(ids, edges))
        assert D[0, 2] == 1.0
        np.testing.assert_array_equal(D, _brute_force_shortest(ids, edges))

    def test_random_tables_match_brute_force(self, rng):
        ids = ("a", "b", "c", "d")
        for _ in range(30):
            edges = {
                (a, b): float(rng.integers(1, 20))
                for a in ids for b in ids if a != b and rng.uniform() < 0.4
            }
            D = all_pairs_shortest(DistanceTable(ids, edges))
            np.testing.assert_array_equal(D, _brute_force_shortest(ids, edges))

    def test_unreachable_is_inf(self):
        D = all_pairs_shortest(DistanceTable(("A", "B", "C"), {("A", "B"): 5.0}))
        assert np.isinf(D[0, 2]) and np.isinf(D[2, 1])
        np.testing.assert_array_equal(np.diag(D), 0.0)

    def test_zero_length_edge_is_kept(self):
        D = all_pairs_shortest(DistanceTable(("A", "B", "C"), {("A", "B"): 0.0, ("B", "C"): 3.0}))
        assert D[0, 2] == 3.0

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ConfigurationError, match="duplicate"):
            DistanceTable(("A", "B", "A"), {})

    def test_negative_distance_rejected(self):
        with pytest.raises(ValidationError):
            DistanceTable(("A", "B"), {("A", "B"): -1.0})


class TestReadDistanceCsv:
    def test_parse_and_min_of_duplicates(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("from,to,distance\nA,B,10\nB,C,5\nA,B,7\n")
        t = read_distance_csv(p)
        assert t.sensor_ids == ("A", "B", "C")
        assert t.directed_dist[("A", "B")] == 7.0

    def test_cost_header_and_reference_order(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("from,to,cost\nA,B,10\nB,Z,5\n")
        t = read_distance_csv(p, sensor_ids=["B", "A"])
        assert t.sensor_ids == ("B", "A")
        assert ("B", "Z") not in t.directed_dist

    def test_bad_header(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("src,dst,d\nA,B,1\n")
        with pytest.raises(ConfigurationError, match="header"):
            read_distance_csv(p)

    def test_graph_from_csv(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("from,to,distance\nA,B,1\nB,C,1\n")
        g, grid = graph_from_csv(p, GraphConfig(kappa=1.5, sigma=1.0, K=3))
        assert g.sensor_ids == ("A", "B", "C")
        assert grid.K == 3


class TestBuildGraph:
    def test_two_nodes_closed_form(self):
        sigma = 3.0
        D = np.array([[0.0, sigma], [sigma, 0.0]])
        g = build_graph(D, GraphConfig(kappa=5.0, sigma=sigma))
        e = math.exp(-1)
        np.testing.assert_allclose(g.W, [[0, e], [e, 0]], atol=1e-15)
        np.testing.assert_allclose(g.eigvals, [0, 2 * e], atol=1e-12)

    def test_all_beyond_kappa_disconnected(self):
        D = np.array([[0, 10.0, 12.0], [10.0, 0, 11.0], [12.0, 11.0, 0]])
        with pytest.raises(DisconnectedGraphError, match="disconnected graph"):
            build_graph(D, GraphConfig(kappa=5.0, sigma=1.0))

    def test_path_graph_against_dense_eigensolve(self):
        g = _path3()
        e = math.exp(-1)
        L = np.array([[e, -e, 0], [-e, 2 * e, -e], [0, -e, e]])
        np.testing.assert_allclose(g.L, L, atol=1e-15)
        np.testing.assert_allclose(g.eigvals, np.linalg.eigvalsh(L), atol=1e-12)
        np.testing.assert_allclose(g.eigvals, [0, e, 3 * e], atol=1e-12)

    def test_auto_sigma_is_std_of_retained(self):
        D = np.array([[0, 1.0, 3.0], [1.0, 0, 2.0], [3.0, 2.0, 0]])
        g = build_graph(D, GraphConfig(kappa=2.5, sigma="auto"))
        assert g.sigma == pytest.approx(np.std([1.0, 2.0]))

    def test_auto_kappa_connects_then_doubles(self):
        D = np.array([[0, 1.0, 9.0], [1.0, 0, 4.0], [9.0, 4.0, 0]])
        kappa = auto_kappa(D)
        assert kappa >= 2 * 4.0 - 1e-9
        g = build_graph(D, GraphConfig(sigma=3.0))
        assert g.kappa == pytest.approx(kappa)

    def test_invariants_random(self, rng):
        for n in (4, 8, 15):
            g, _ = random_graph(rng, n)
            np.testing.assert_array_equal(g.W, g.W.T)
            np.testing.assert_array_equal(np.diag(g.W), 0.0)
            np.testing.assert_allclose(g.L.sum(axis=1), 0.0, atol=1e-10)
            assert g.eigvals[0] == 0.0 and np.all(g.eigvals >= 0)
            assert np.all(np.diff(g.eigvals) >= -1e-12)
            np.testing.assert_allclose(g.eigvecs.T @ g.eigvecs, np.eye(n), atol=1e-10)

    def test_asymmetric_matrix_rejected(self):
        with pytest.raises(ValidationError):
            build_graph(np.array([[0, 1.0], [2.0, 0]]), GraphConfig(kappa=3.0, sigma=1.0))

    @pytest.mark.parametrize("kw", [dict(kappa=0.0), dict(sigma=-1.0), dict(epsilon=1.0), dict(K=1)])
    def test_config_validation(self, kw):
        with pytest.raises(ConfigurationError):
            GraphConfig(**kw)


class TestExtremeTaus:
    def test_tau0_scalar_oracle(self):
        tau0, _ = extreme_taus(_graph_with_eigvals([0.0, 1.0]), 0.01)
        assert tau0 == pytest.approx(10.0**-2.0)
        # analytic bound -ln(1 - eps) snapped down to the 0.1-exponent grid
        bound = -math.log(0.99)
        assert tau0 < bound < 10 ** (-2.0 + 0.1)

    def test_tau_inf_scalar_oracle(self):
        _, tau_inf = extreme_taus(_graph_with_eigvals([0.0, 1.0]), 0.01)
        assert tau_inf == pytest.approx(10.0**0.7)
        assert 10 ** 0.6 < math.log(100) < tau_inf

    def test_epsilon_near_one_both_exist(self, rng):
        g, _ = random_graph(rng, 6)
        tau0, tau_inf = extreme_taus(g, 0.999)
        assert tau0 > 0 and tau_inf > 0

    def test_disconnected_rejected(self):
        with pytest.raises(DisconnectedGraphError):
            extreme_taus(_graph_with_eigvals([0.0, 0.0, 1.0]), 0.01)

    def test_no_candidate_reports_spectrum(self):
        with pytest.raises(ConfigurationError, match="lambda_2"):
            extreme_taus(_graph_with_eigvals([0.0, 2e-10, 1.0]), 0.01)


class TestBuildGrid:
    def test_k2_is_endpoints(self, rng):
        g, _ = random_graph(rng, 6)
        grid = build_grid(g, GraphConfig(kappa=0.6, sigma=0.3, K=2))
        t0, ti = extreme_taus(g, 0.01)
        assert grid.taus[0] == t0 and grid.taus[1] == ti

    def test_log_spacing(self, rng):
        g, grid = random_graph(rng, 6, K=5)
        ratios = grid.taus[1:] / grid.taus[:-1]
        np.testing.assert_allclose(ratios, ratios[0], rtol=1e-10)

    def test_short_kernel_near_identity(self, rng):
        g, grid = random_graph(rng, 8)
        assert np.linalg.norm(grid.kernels[0] - np.eye(8), 2) < grid.epsilon

    def test_long_kernel_near_average(self, rng):
        g, grid = random_graph(rng, 8)
        assert np.linalg.norm(grid.kernels[-1] - np.full((8, 8), 1 / 8), 2) < grid.epsilon

    def test_path3_tau10_series_oracle(self):
        g = _path3()
        H = g.heat_kernel(10.0)
        series = sum(np.linalg.matrix_power(-10.0 * g.L, k) / math.factorial(k) for k in range(120))
        np.testing.assert_allclose(H, series, atol=1e-10)
        # with weights e^-1 the slowest mode decays as exp(-10 e^-1); distance to 11^T/3 is exactly that mode
        v2 = np.array([1.0, 0.0, -1.0]) / math.sqrt(2)
        expected = np.full((3, 3), 1 / 3) + math.exp(-10 * math.exp(-1)) * np.outer(v2, v2) \
            + math.exp(-30 * math.exp(-1)) * np.outer([1, -2, 1], [1, -2, 1]) / 6
        np.testing.assert_allclose(H, expected, atol=1e-12)
        assert np.abs(H - 1 / 3).max() < 0.02

    def test_unit_weight_path_tau10_is_average(self):
        D = np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0]], dtype=float)
        g = build_graph(D, GraphConfig(kappa=1.5, sigma=1e6))
        np.testing.assert_allclose(g.heat_kernel(10.0), np.full((3, 3), 1 / 3), atol=1e-3)

    def test_power_series_small_tau(self, rng):
        for _ in range(10):
            g, _ = random_graph(rng, int(rng.integers(3, 11)))
            tau = 5.0 / g.lambda_max * rng.uniform(0.1, 1.0)
            series = sum(np.linalg.matrix_power(-tau * g.L, k) / math.factorial(k) for k in range(51))
            np.testing.assert_allclose(g.heat_kernel(tau), series, atol=1e-8)

    def test_kernel_invariants(self, rng):
        for _ in range(10):
            g, grid = random_graph(rng, int(rng.integers(3, 20)), K=4)
            one = np.ones(g.n)
            for H in grid.kernels:
                np.testing.assert_allclose(H, H.T, atol=1e-12)
                assert H.min() >= -1e-12
                np.testing.assert_allclose(H @ one, one, atol=1e-10)
                np.testing.assert_allclose(one @ H, one, atol=1e-10)

    def test_semigroup(self, rng):
        for _ in range(20):
            g, _ = random_graph(rng, int(rng.integers(3, 21)))
            t1, t2 = rng.uniform(0, 3, size=2) / g.fiedler_value
            lhs = g.heat_kernel(t1) @ g.heat_kernel(t2)
            assert np.linalg.norm(lhs - g.heat_kernel(t1 + t2)) < 1e-8

    def test_subset(self, rng):
        _, grid = random_graph(rng, 5, K=4)
        sub = grid.subset([0, 3])
        np.testing.assert_array_equal(sub.kernels[1], grid.kernels[3])
        assert sub.K == 2


class TestMixKernels:
    def test_one_hot(self, rng):
        _, grid = random_graph(rng, 6, K=4)
        for k in range(4):
            np.testing.assert_array_equal(mix_kernels(grid, np.eye(4)[k]), grid.kernels[k])

    def test_uniform_k2_is_mean(self, rng):
        _, grid = random_graph(rng, 6, K=2)
        np.testing.assert_allclose(mix_kernels(grid, [0.5, 0.5]), grid.kernels.mean(axis=0), atol=1e-15)

    def test_volume_conservation(self, rng):
        for _ in range(100):
            g, grid = random_graph(rng, int(rng.integers(3, 15)), K=3)
            x = rng.normal(size=g.n) * 50
            Hx = mix_kernels(grid, random_simplex(rng, 3)) @ x
            assert abs(Hx.sum() - x.sum()) / np.abs(x).sum() < 1e-10

    @pytest.mark.parametrize("pi", [[0.6, 0.6, -0.2], [0.5, 0.4, 0.0], [0.5, 0.5]])
    def test_simplex_violation(self, rng, pi):
        _, grid = random_graph(rng, 4, K=3)
        with pytest.raises(ValidationError):
            mix_kernels(grid, pi)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 12), tau=st.floats(0.0, 50.0))
def test_heat_kernel_doubly_stochastic_property(seed, n, tau):
    g, _ = random_graph(np.random.default_rng(seed), n)
    H = g.heat_kernel(tau)
    assert H.min() >= -1e-12
    np.testing.assert_allclose(H.sum(axis=0), 1.0, atol=1e-10)
    np.testing.assert_allclose(H.sum(axis=1), 1.0, atol=1e-10)


def test_grid_dataclass_roundtrip():
    grid = DiffusionGrid(np.array([1.0, 2.0]), np.stack([np.eye(2)] * 2))
    assert grid.n == 2 and grid.K == 2
