"""Desk-scale benchmarks: a planted node in the embedding and a fully enumerable 3x3 design space."""
from __future__ import annotations

import csv
import io
import itertools
import statistics
from dataclasses import dataclass, field

import numpy as np

from .design import INVALID_FITNESS, DesignGrid, GridShape, parse_types, validate
from .embedding import EmbedConfig, embed_tree
from .fitness import Evaluator, PatternMatch, PlantedNode
from .hierarchy import ClusterConfig, TreeBuildConfig, build_tree, nested_kmeans
from .optimizer import (
    CemConfig,
    EaConfig,
    RunResult,
    run_c2f_ea,
    run_flat_cem,
    run_herd,
    run_random_search,
)

METHODS = ("herd", "flat_cem", "c2f_ea", "random")


@dataclass
class PlantedSetup:
    tree: object
    table: object
    target_id: int
    evaluator: PlantedNode


def pick_planted_target(tree, seed: int) -> int:
    """A valid node at the deepest level reached, drawn from a seed-specific stream."""
    depth = tree.depth()
    candidates = [n.id for n in tree.nodes if n.level == depth and validate(n.grid).valid]
    if not candidates:
        raise ValueError("the tree has no valid design at its deepest level")
    return int(np.random.default_rng(1000 + seed).choice(candidates))


def planted_setup(seed: int, max_nodes: int = 2000, tau: float = 1.0, tree_seed: int = 0) -> PlantedSetup:
    """Default 5x5 hierarchy with a hidden fine-grained target node."""
    stack = nested_kmeans(GridShape(), ClusterConfig(seed=tree_seed))
    tree = build_tree(stack, TreeBuildConfig(max_nodes=max_nodes, seed=tree_seed))
    table = embed_tree(tree, EmbedConfig(tau=tau))
    target = pick_planted_target(tree, seed)
    return PlantedSetup(tree, table, target, PlantedNode(tree, table, target))


@dataclass(frozen=True)
class BruteForceConfig:
    """3x3 grid, three cell types, pattern-match fitness on levels 1, 3, 9."""

    rows: int = 3
    cols: int = 3
    levels: tuple[int, ...] = (1, 3, 9)
    types: str = "ERH"
    weights: tuple[float, ...] = (1.0, 1.0, 1.0)
    budget: int = 2000
    max_nodes: int = 20000
    max_children: int = 81
    tau: float = 1.0
    pop: int = 20
    elite: int = 1
    tree_seed: int = 0


class BruteForceBenchmark:
    """Shared hierarchy plus per-seed targets; every design of the space is enumerable."""

    def __init__(self, cfg: BruteForceConfig = BruteForceConfig()):
        self.cfg = cfg
        self.shape = GridShape(cfg.rows, cfg.cols)
        self.types = parse_types(cfg.types)
        self.stack = nested_kmeans(self.shape, ClusterConfig(levels=cfg.levels, seed=cfg.tree_seed))
        self.tree = build_tree(
            self.stack,
            TreeBuildConfig(max_nodes=cfg.max_nodes, max_children=cfg.max_children, seed=cfg.tree_seed),
            self.types,
        )
        self.table = embed_tree(self.tree, EmbedConfig(tau=cfg.tau))
        depth = self.tree.depth()
        by_grid = {}
        for n in self.tree.nodes:
            if n.level == depth and validate(n.grid).valid:
                by_grid.setdefault(n.grid.key, n.id)
        self.target_pool = sorted(by_grid.values())

    @property
    def space_size(self) -> int:
        return len(self.types) ** self.shape.size

    def target(self, seed: int) -> DesignGrid:
        rng = np.random.default_rng(500 + seed)
        return self.tree.nodes[int(rng.choice(self.target_pool))].grid

    def evaluator(self, seed: int) -> PatternMatch:
        return PatternMatch(self.target(seed), self.stack, self.cfg.weights)

    def run(self, method: str, seed: int, evaluator: Evaluator | None = None) -> RunResult:
        cfg = self.cfg
        ev = self.evaluator(seed) if evaluator is None else evaluator
        if method == "herd":
            cem = CemConfig(pop=cfg.pop, elite=cfg.elite, iterations=cfg.budget // cfg.pop, seed=seed)
            return run_herd(self.tree, self.table, ev, cem)
        if method == "flat_cem":
            cem = CemConfig(pop=10, iterations=cfg.budget // 10, seed=seed)
            return run_flat_cem(ev, cem, self.shape, self.types)
        if method == "c2f_ea":
            ea = EaConfig(generations=cfg.budget // 64, seed=seed)
            return run_c2f_ea(self.stack, ev, ea, self.types)
        if method == "random":
            return run_random_search(ev, cfg.budget, seed=seed, shape=self.shape, types=self.types)
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def exhaustive_optimum(evaluator: Evaluator, shape: GridShape, types) -> tuple[float, list[str]]:
    """Score every grid over ``types`` (invalid ones at the penalty) and return the argmax set."""
    best = -np.inf
    keys: list[str] = []
    for cells in itertools.product(types, repeat=shape.size):
        d = DesignGrid(shape, cells)
        f = evaluator(d) if validate(d).valid else INVALID_FITNESS
        if f > best:
            best, keys = f, [d.key]
        elif f == best:
            keys.append(d.key)
    return best, keys


def random_success_probability(space: int, budget: int) -> float:
    return 1.0 - (1.0 - 1.0 / space) ** budget


@dataclass
class RunRow:
    method: str
    seed: int
    success: bool
    evals_to_best: int | None
    best_fitness: float


def score_run(method: str, seed: int, result: RunResult, optimum_keys) -> RunRow:
    """Success means the global optimum was evaluated within the budget."""
    found = result.incumbent
    hit = found is not None and found.key in set(optimum_keys)
    evals = result.log.first_hit(found.key) if found is not None else None
    return RunRow(method, seed, hit, evals, float(result.incumbent_fitness))


def compare(bench: BruteForceBenchmark, methods, seeds) -> list[RunRow]:
    rows = []
    for method in methods:
        for seed in seeds:
            target = bench.target(seed)
            rows.append(score_run(method, seed, bench.run(method, seed), [target.key]))
    return rows


def rows_to_csv(rows: list[RunRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "seed", "success", "evals_to_best", "best_fitness"])
    for r in rows:
        w.writerow([r.method, r.seed, int(r.success), "" if r.evals_to_best is None else r.evals_to_best,
                    repr(r.best_fitness)])
    return buf.getvalue()


@dataclass
class MethodSummary:
    method: str
    runs: int
    success_rate: float
    median_evals_to_best: float
    best_fitness: float
    seeds: list[int] = field(default_factory=list)


def summarize(rows: list[RunRow]) -> list[MethodSummary]:
    out = []
    for method in dict.fromkeys(r.method for r in rows):
        mine = [r for r in rows if r.method == method]
        evals = [r.evals_to_best for r in mine if r.evals_to_best is not None]
        out.append(MethodSummary(
            method,
            len(mine),
            sum(r.success for r in mine) / len(mine),
            float(statistics.median(evals)) if evals else float("nan"),
            max(r.best_fitness for r in mine),
            [r.seed for r in mine],
        ))
    return out


def summary_csv(summaries: list[MethodSummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "runs", "success_rate", "median_evals_to_best", "best_fitness"])
    for s in summaries:
        w.writerow([s.method, s.runs, repr(s.success_rate), repr(s.median_evals_to_best), repr(s.best_fitness)])
    return buf.getvalue()
