import io
import json
import math
import sys

import numpy as np
import pytest

from herd.design import (
    ALL_TYPES,
    INVALID_FITNESS,
    CellType,
    ComponentAssignment,
    DesignGrid,
    GridShape,
    parse_types,
    render,
    validate,
)
from herd.embedding import EmbedConfig, EmbeddingTable, embed_tree
from herd.fitness import ExternalEvaluator, FunctionEvaluator, PatternMatch, PlantedNode
from herd.geometry import BallConfig
from herd.hierarchy import ClusterConfig, TreeBuildConfig, build_tree, nested_kmeans
from herd.optimizer import (
    CemConfig,
    CemState,
    EaConfig,
    NearestNode,
    RunAborted,
    RunLog,
    cem_update,
    decode_scores,
    initial_state,
    mutate_granularity,
    mutate_types,
    project_to_design,
    run_c2f_ea,
    run_flat_cem,
    run_herd,
    run_random_search,
    sample_population,
    sigma_at,
)

E, R, S, H, V = ALL_TYPES


def acosh_distance(x, y):
    """Unit-curvature distance from the closed form, independent of the library."""
    num = 2.0 * np.sum((x - y) ** 2, axis=-1)
    den = (1.0 - np.sum(x * x, axis=-1)) * (1.0 - np.sum(y * y, axis=-1))
    return np.arccosh(1.0 + num / den)


class TestSchedule:
    def test_endpoints_exact(self):
        cfg = CemConfig(iterations=60)
        assert sigma_at(0, cfg) == 0.2
        assert sigma_at(60, cfg) == 0.01

    def test_midpoint(self):
        assert sigma_at(30, CemConfig(iterations=60)) == pytest.approx(0.105, abs=1e-15)

    def test_single_iteration(self):
        cfg = CemConfig(iterations=1)
        assert sigma_at(0, cfg) == 0.2 and sigma_at(1, cfg) == 0.01

    def test_config_validation(self):
        with pytest.raises(ValueError):
            CemConfig(pop=3, elite=4)
        with pytest.raises(ValueError):
            CemConfig(sigma_start=0.01, sigma_end=0.2)
        assert CemConfig(pop=10).elite_count == 3
        assert CemConfig(pop=2).elite_count == 1


class TestSampling:
    def test_degenerate_sigma(self):
        state = CemState(np.array([0.3, -0.2]), np.full(2, 1e-12))
        s = sample_population(state, CemConfig(), np.random.default_rng(0))
        assert s.shape == (10, 2)
        assert np.max(np.abs(s - state.mu)) <= 1e-9

    def test_deterministic(self):
        state = initial_state(2, CemConfig())
        a = sample_population(state, CemConfig(), np.random.default_rng(5))
        b = sample_population(state, CemConfig(), np.random.default_rng(5))
        assert np.array_equal(a, b)

    def test_law_of_large_numbers(self):
        state = CemState(np.array([0.3, -0.2]), np.array([0.2, 0.2]))
        s = sample_population(state, CemConfig(pop=100_000), np.random.default_rng(1))
        assert np.all(np.abs(s.mean(axis=0) - state.mu) <= 0.005)
        assert np.all(np.abs(s.std(axis=0) - 0.2) <= 0.005)


class TestCemUpdate:
    def test_single_elite(self):
        samples = np.array([[0.1, 0.0], [0.5, 0.5], [-0.2, 0.3]])
        out = cem_update(initial_state(2, CemConfig(pop=3)), samples, [1.0, 9.0, 2.0], CemConfig(pop=3, elite=1))
        assert np.array_equal(out.mu, [0.5, 0.5]) and out.iteration == 1

    def test_symmetric_pair(self):
        samples = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 5.0]])
        out = cem_update(initial_state(2, CemConfig(pop=3)), samples, [2.0, 2.0, 0.0], CemConfig(pop=3, elite=2))
        assert np.array_equal(out.mu, [0.0, 0.0])

    def test_ties_by_index(self):
        cfg = CemConfig(pop=4, elite=2)
        samples = np.arange(8.0).reshape(4, 2)
        out = cem_update(initial_state(2, cfg), samples, [3, 1, 4, 1], cfg)
        np.testing.assert_array_equal(out.mu, (samples[2] + samples[0]) / 2)
        out = cem_update(initial_state(2, cfg), samples, [1, 5, 1, 1], cfg)
        np.testing.assert_array_equal(out.mu, (samples[1] + samples[0]) / 2)

    def test_sigma_advances(self):
        cfg = CemConfig(pop=2, iterations=4)
        out = cem_update(initial_state(2, cfg), np.zeros((2, 2)), [0, 0], cfg)
        assert np.all(out.sigma == sigma_at(1, cfg))

    def test_hundred_random_score_sets(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(2, 30))
            k = int(rng.integers(1, n + 1))
            cfg = CemConfig(pop=n, elite=k)
            samples = rng.normal(size=(n, 3))
            fitness = rng.integers(0, 5, size=n).astype(float)
            order = sorted(range(n), key=lambda i: (-fitness[i], i))[:k]
            expected = sum(samples[i] for i in order) / k
            out = cem_update(initial_state(3, cfg), samples, list(fitness), cfg)
            np.testing.assert_allclose(out.mu, expected, atol=1e-12)

    def test_permutation_invariant_without_ties(self):
        rng = np.random.default_rng(1)
        cfg = CemConfig(pop=10, elite=3)
        samples = rng.normal(size=(10, 2))
        fitness = rng.permutation(10).astype(float)
        perm = rng.permutation(10)
        a = cem_update(initial_state(2, cfg), samples, list(fitness), cfg)
        b = cem_update(initial_state(2, cfg), samples[perm], list(fitness[perm]), cfg)
        np.testing.assert_allclose(a.mu, b.mu, atol=1e-15)


class TestProjection:
    def test_zero_tangent_picks_origin_adjacent(self):
        table = EmbeddingTable({0: [0, 0], 1: [0.05, 0.0], 2: [0.8, 0.1], 3: [-0.7, 0.2]}, 1.0)
        assert project_to_design(np.zeros(2), table)[0] == 1

    def test_two_candidates(self):
        table = EmbeddingTable({0: [0.0, 0.0], 1: [0.0, 0.0], 2: [0.9, 0.0]}, 1.0)
        node, z = project_to_design(np.array([0.1, 0.0]), table)
        assert node == 1
        assert acosh_distance(z, np.zeros(2)) == pytest.approx(0.2, abs=1e-12)
        assert acosh_distance(z, np.array([0.9, 0.0])) == pytest.approx(2.744, abs=1e-3)

    def test_tie_lower_id(self):
        table = EmbeddingTable({0: [0, 0], 5: [0.3, 0.0], 2: [-0.3, 0.0], 9: [0.0, 0.3]}, 1.0)
        assert project_to_design(np.zeros(2), table)[0] == 2

    def test_root_excluded(self):
        table = EmbeddingTable({0: [0, 0], 1: [0.5, 0.0]}, 1.0)
        assert project_to_design(np.zeros(2), table)[0] == 1
        with pytest.raises(ValueError):
            NearestNode(EmbeddingTable({0: [0, 0]}, 1.0))

    def test_linear_scan_oracle(self):
        tree = build_tree(nested_kmeans(GridShape(), ClusterConfig(seed=0)), TreeBuildConfig(max_nodes=2000, seed=0))
        table = embed_tree(tree, EmbedConfig(tau=1.0))
        index = NearestNode(table)
        rng = np.random.default_rng(0)
        V = rng.normal(scale=1.5, size=(10_000, 2))
        pts = {i: table[i] for i in table.ids if i != 0}
        ids = np.array(sorted(pts))
        P = np.array([pts[i] for i in ids])
        for v in V:
            node, z = project_to_design(v, table, index)
            d = acosh_distance(z[None, :], P)
            assert node == ids[int(np.argmin(d))]


@pytest.fixture(scope="module")
def planted():
    stack = nested_kmeans(GridShape(), ClusterConfig(seed=0))
    tree = build_tree(stack, TreeBuildConfig(max_nodes=2000, seed=0))
    table = embed_tree(tree, EmbedConfig(tau=1.0))
    return tree, table, PlantedNode(tree, table, 500)


class CountingEvaluator(FunctionEvaluator):
    def __init__(self, fn):
        self.seen = []
        super().__init__(lambda d: self.seen.append(d) or fn(d))


class TestRunHerd:
    def test_zero_iterations(self, planted):
        tree, table, ev = planted
        res = run_herd(tree, table, ev, CemConfig(iterations=0))
        d = [np.linalg.norm(table[i]) for i in table.ids if i != 0]
        assert res.best_node_id == int(table.ids[1:][int(np.argmin(d))])
        assert res.log.evaluations == 0 and res.log.records == []

    def test_zero_iterations_coarsest_when_monotone(self, planted):
        tree, _, _ = planted
        table = embed_tree(tree, EmbedConfig(tau=4.0))
        res = run_herd(tree, table, PlantedNode(tree, table, 500), CemConfig(iterations=0))
        assert tree.nodes[res.best_node_id].level == 1

    def test_accounting_and_bounds(self, planted):
        tree, table, ev = planted
        res = run_herd(tree, table, ev, CemConfig(pop=10, iterations=25, seed=3))
        log = res.log
        assert log.evaluations == 250
        assert len(log.records) == 25
        assert all(len(r["samples"]) == 10 for r in log.records)
        assert log.final["evaluations"] == 250
        f = log.final
        assert f["evaluator_calls"] + f["cache_hits"] + f["penalized"] == 250
        for r in log.records:
            assert np.all(np.isfinite(r["mu_after"])) and r["mu_norm"] < 1.0

    def test_same_seed_same_log(self, planted):
        tree, table, ev = planted
        a = run_herd(tree, table, ev, CemConfig(iterations=10, seed=7)).log.to_jsonl()
        b = run_herd(tree, table, ev, CemConfig(iterations=10, seed=7)).log.to_jsonl()
        assert a == b

    def test_invalid_designs_never_evaluated(self, planted):
        tree, table, _ = planted
        ev = CountingEvaluator(lambda d: float(d.cells.count(H)))
        res = run_herd(tree, table, ev, CemConfig(iterations=20, seed=1, cache=False))
        assert all(validate(d).valid for d in ev.seen)
        fits = [s["fitness"] for r in res.log.records for s in r["samples"]]
        assert INVALID_FITNESS in fits

    def test_cache_hits_logged(self, planted):
        tree, table, ev = planted
        res = run_herd(tree, table, ev, CemConfig(iterations=30, seed=2))
        hits = sum(s["cached"] for r in res.log.records for s in r["samples"])
        assert hits == res.log.final["cache_hits"] > 0

    def test_abort_keeps_partial_log(self, planted, monkeypatch):
        tree, table, _ = planted
        monkeypatch.setenv("HERD_EVAL_TIMEOUT_SECS", "0.5")
        sink = io.StringIO()
        cmd = [sys.executable, "-m", "herd.echo_evaluator", "--hang-id", "25"]
        with ExternalEvaluator(cmd) as ev, pytest.raises(RunAborted) as err:
            run_herd(tree, table, ev, CemConfig(iterations=20, seed=0, cache=False), sink=sink)
        assert len(err.value.log.records) >= 1
        lines = [json.loads(x) for x in sink.getvalue().splitlines()]
        assert lines[0]["type"] == "header" and lines[-1]["type"] == "iteration"


class TestFlatCem:
    def test_zero_decodes_empty(self):
        g = decode_scores(np.zeros((25, 5)), GridShape(), ALL_TYPES)
        assert g == DesignGrid.filled(GridShape(), E)

    def test_one_hot(self):
        p = np.zeros((25, 5))
        p[0, int(H)] = 1.0
        assert decode_scores(p, GridShape(), ALL_TYPES).cells[0] == H

    def test_row_shift_invariance(self):
        rng = np.random.default_rng(0)
        p = rng.normal(size=(9, 3))
        shifted = p + rng.normal(size=(9, 1))
        types = parse_types("ERH")
        assert decode_scores(p, GridShape(3, 3), types) == decode_scores(shifted, GridShape(3, 3), types)

    def test_run(self):
        target = DesignGrid(GridShape(3, 3), (H,) * 9)
        stack = nested_kmeans(GridShape(3, 3), ClusterConfig(levels=(1, 3, 9)))
        res = run_flat_cem(PatternMatch(target, stack), CemConfig(pop=10, iterations=20), GridShape(3, 3),
                           parse_types("ERH"))
        assert res.log.evaluations == 200
        assert res.best_design.shape == GridShape(3, 3)


class TestEvolution:
    def stack(self):
        return nested_kmeans(GridShape(3, 3), ClusterConfig(levels=(1, 3, 9)))

    def test_zero_type_probability_is_identity(self):
        a = ComponentAssignment(1, (R, H, E))
        assert mutate_types(a, 0.0, np.random.default_rng(0), ALL_TYPES) == a

    def test_granularity_mutation_structure(self):
        stack = self.stack()
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = ComponentAssignment(0, (R,))
            child = mutate_granularity(a, stack, rng, ALL_TYPES)
            assert child.level == 1
            before, after = render(a, stack), render(child, stack)
            part = stack.levels[1].assignment
            assert len({part[i] for i in range(9) if before.cells[i] != after.cells[i]}) <= 1
        assert mutate_granularity(ComponentAssignment(2, (R,) * 9), stack, rng, ALL_TYPES) is None

    def test_population_and_accounting(self):
        stack = self.stack()
        target = DesignGrid(GridShape(3, 3), (H,) * 9)
        res = run_c2f_ea(stack, PatternMatch(target, stack), EaConfig(generations=5, seed=1), parse_types("ERH"))
        assert all(r["population"] == 64 for r in res.log.records)
        assert res.log.evaluations == 64 * 5
        assert res.best_fitness == max(s["fitness"] for r in res.log.records for s in r["samples"])


class TestRandomSearch:
    def test_budget_one(self):
        res = run_random_search(FunctionEvaluator(lambda d: 1.0), 1, seed=0, shape=GridShape(3, 3))
        assert res.log.evaluations == 1
        assert res.log.records[0]["samples"][0]["design_key"] == res.best_design.key

    def test_same_seed_same_draws(self):
        ev = FunctionEvaluator(lambda d: 0.0)
        a = run_random_search(ev, 50, seed=4, shape=GridShape(3, 3)).log.to_jsonl()
        b = run_random_search(ev, 50, seed=4, shape=GridShape(3, 3)).log.to_jsonl()
        assert a == b

    def test_tree_space(self, planted):
        tree, _, ev = planted
        res = run_random_search(ev, 30, seed=0, tree=tree)
        assert res.best_node_id is not None and res.log.evaluations == 30


class TestRunLog:
    def test_jsonl_roundtrip_and_csv(self, planted):
        tree, table, ev = planted
        log = run_herd(tree, table, ev, CemConfig(iterations=5)).log
        back = RunLog.from_jsonl(log.to_jsonl())
        assert back.to_jsonl() == log.to_jsonl()
        rows = log.to_csv().strip().splitlines()
        assert rows[0] == "iteration,best_fitness,mean_fitness,mu_norm,sigma"
        assert len(rows) == 6

    def test_first_hit(self, planted):
        tree, table, ev = planted
        res = run_herd(tree, table, ev, CemConfig(iterations=20))
        key = res.incumbent.key
        hit = res.log.first_hit(key)
        assert hit is not None and 1 <= hit <= 200
