"""Hyperbolic cross-entropy search over an embedded design tree, plus baselines.

Every optimizer returns a :class:`RunResult` holding a :class:`RunLog` with one
record per iteration (CEM), generation (evolutionary search) or draw (random
search).
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence, TextIO

import numpy as np

from .design import (
    ALL_TYPES,
    INVALID_FITNESS,
    CellType,
    ComponentAssignment,
    DesignGrid,
    GridShape,
    PartitionStack,
    random_grid,
    render,
    validate,
)
from .fitness import CachedEvaluator, Evaluator, EvaluatorError, cached
from .geometry import distance, exp_map


@dataclass(frozen=True)
class CemConfig:
    pop: int = 10
    elite: int | None = None
    iterations: int = 60
    sigma_start: float = 0.2
    sigma_end: float = 0.01
    seed: int = 0
    cache: bool = True
    penalize_invalid: bool = True

    def __post_init__(self):
        if self.pop < 1:
            raise ValueError("population must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if not 0 < self.elite_count <= self.pop:
            raise ValueError(f"elite count must lie in [1, {self.pop}], got {self.elite_count}")
        if not 0 < self.sigma_end <= self.sigma_start:
            raise ValueError("need 0 < sigma_end <= sigma_start")

    @property
    def elite_count(self) -> int:
        return max(1, self.pop // 3) if self.elite is None else self.elite


@dataclass
class CemState:
    mu: np.ndarray
    sigma: np.ndarray
    iteration: int = 0


def sigma_at(t: int, cfg: CemConfig) -> float:
    """Linear decay from sigma_start at t=0 to sigma_end at t=T."""
    T = cfg.iterations
    if T == 0:
        return cfg.sigma_start
    f = min(max(t / T, 0.0), 1.0)
    return cfg.sigma_start * (1.0 - f) + cfg.sigma_end * f


def initial_state(shape, cfg: CemConfig) -> CemState:
    return CemState(np.zeros(shape), np.full(shape, sigma_at(0, cfg)), 0)


def sample_population(state: CemState, cfg: CemConfig, rng) -> np.ndarray:
    """``cfg.pop`` draws from N(mu, diag(sigma^2)); row i is sample i."""
    return rng.normal(state.mu, state.sigma, size=(cfg.pop, *np.shape(state.mu)))


def elite_indices(fitness: Sequence[float], k: int) -> list[int]:
    return sorted(range(len(fitness)), key=lambda i: (-fitness[i], i))[:k]


def cem_update(state: CemState, samples: np.ndarray, fitness: Sequence[float], cfg: CemConfig) -> CemState:
    if len(samples) != len(fitness):
        raise ValueError("one fitness value per sample required")
    elite = elite_indices(fitness, cfg.elite_count)
    mu = np.mean(np.asarray(samples)[elite], axis=0)
    sigma = np.full(np.shape(mu), sigma_at(state.iteration + 1, cfg))
    return CemState(mu, sigma, state.iteration + 1)


class NearestNode:
    """Exhaustive nearest-embedding lookup over concrete (non-root) nodes."""

    def __init__(self, table, exclude: Sequence[int] = ()):
        skip = set(exclude) | {table.root}
        keep = np.array([i not in skip for i in table.ids], dtype=bool)
        self.ids = table.ids[keep]
        self.points = table.points[keep]
        self.c = table.ball.c
        if len(self.ids) == 0:
            raise ValueError("no candidate nodes to project onto")

    def query(self, z) -> int:
        d = distance(np.asarray(z, dtype=np.float64)[None, :], self.points, self.c)
        # ids are ascending, so argmin's first-hit rule breaks ties toward the lower id
        return int(self.ids[int(np.argmin(d))])


def project_to_design(v, table, index: NearestNode | None = None) -> tuple[int, np.ndarray]:
    """Map a tangent vector at the origin into the ball and snap to the nearest node."""
    index = NearestNode(table) if index is None else index
    z = exp_map(np.zeros(table.ball.dim), v, table.ball.c)
    return index.query(z), z


class RunAborted(EvaluatorError):
    def __init__(self, message: str, log: "RunLog"):
        super().__init__(message)
        self.log = log


@dataclass
class RunLog:
    """Append-only run record; optionally mirrored line by line to ``sink``."""

    optimizer: str
    header: dict = field(default_factory=dict)
    records: list[dict] = field(default_factory=list)
    final: dict | None = None
    sink: TextIO | None = None

    def __post_init__(self):
        self._emit({"type": "header", "optimizer": self.optimizer, **self.header})

    def _emit(self, obj: dict) -> None:
        if self.sink is not None:
            self.sink.write(json.dumps(obj) + "\n")
            self.sink.flush()

    def add(self, record: dict) -> None:
        self.records.append(record)
        self._emit({"type": "iteration", **record})

    def finish(self, final: dict) -> None:
        self.final = final
        self._emit({"type": "final", **final})

    @property
    def evaluations(self) -> int:
        return sum(len(r["samples"]) for r in self.records)

    def fitness_trace(self) -> list[float]:
        return [s["fitness"] for r in self.records for s in r["samples"]]

    def first_hit(self, key: str) -> int | None:
        """1-based evaluation index at which ``key`` was first sampled."""
        n = 0
        for r in self.records:
            for s in r["samples"]:
                n += 1
                if s["design_key"] == key:
                    return n
        return None

    def to_jsonl(self) -> str:
        lines = [{"type": "header", "optimizer": self.optimizer, **self.header}]
        lines += [{"type": "iteration", **r} for r in self.records]
        if self.final is not None:
            lines.append({"type": "final", **self.final})
        return "".join(json.dumps(x) + "\n" for x in lines)

    def summary_rows(self) -> list[dict]:
        rows = []
        for r in self.records:
            fits = [s["fitness"] for s in r["samples"]]
            rows.append({
                "iteration": r["iteration"],
                "best_fitness": max(fits),
                "mean_fitness": float(np.mean(fits)),
                "mu_norm": r.get("mu_norm", ""),
                "sigma": r.get("sigma_after", ""),
            })
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, ["iteration", "best_fitness", "mean_fitness", "mu_norm", "sigma"], lineterminator="\n")
        w.writeheader()
        w.writerows(self.summary_rows())
        return buf.getvalue()

    @classmethod
    def from_jsonl(cls, text: str) -> "RunLog":
        log = None
        for line in text.splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            kind = obj.pop("type")
            if kind == "header":
                name = obj.pop("optimizer")
                log = cls(name, obj)
            elif kind == "iteration":
                log.records.append(obj)
            elif kind == "final":
                log.final = obj
        if log is None:
            raise ValueError("run log has no header line")
        return log


@dataclass
class RunResult:
    best_design: DesignGrid
    best_fitness: float
    log: RunLog
    best_node_id: int | None = None
    incumbent: DesignGrid | None = None
    incumbent_fitness: float = -math.inf


class _Scorer:
    """Applies the validity penalty, forwards valid designs, tracks the incumbent."""

    def __init__(self, evaluator: Evaluator, use_cache: bool, penalize: bool):
        self.ev: CachedEvaluator = cached(evaluator, use_cache)
        self.penalize = penalize
        self.best: DesignGrid | None = None
        self.best_fitness = -math.inf
        self.count = 0
        self.penalized = 0  # invalid designs scored without calling the evaluator

    def __call__(self, designs: list[DesignGrid], track: bool = True) -> tuple[list[float], list[bool]]:
        fitness = [INVALID_FITNESS] * len(designs)
        hit = [False] * len(designs)
        todo = [i for i, d in enumerate(designs) if not self.penalize or validate(d).valid]
        if todo:
            batch = [designs[i] for i in todo]
            seen = set(self.ev.store) if self.ev.enabled else set()
            for i, d in zip(todo, batch):
                hit[i] = d.key in seen
                if self.ev.enabled:
                    seen.add(d.key)
            for i, f in zip(todo, self.ev.evaluate(batch)):
                fitness[i] = f
        if track:
            self.count += len(designs)
            self.penalized += len(designs) - len(todo)
            for d, f in zip(designs, fitness):
                if f > self.best_fitness:
                    self.best, self.best_fitness = d, f
        return fitness, hit

    def counters(self) -> dict:
        return {"evaluations": self.count, "evaluator_calls": self.ev.calls, "cache_hits": self.ev.hits,
                "penalized": self.penalized}


def _sample_record(design: DesignGrid, fitness: float, hit: bool, **extra) -> dict:
    rec = {"design_key": design.key, "fitness": fitness, "cached": hit}
    rec.update(extra)
    return rec


def run_herd(tree, table, evaluator: Evaluator, cfg: CemConfig = CemConfig(), sink: TextIO | None = None) -> RunResult:
    """Cross-entropy search in the tangent space at the origin of the embedding.

    Each iteration samples tangent vectors, maps them into the ball, snaps each
    to the nearest embedded design, scores the designs and moves the mean to
    the average of the elite tangent vectors. The answer is the node nearest
    to the final mean.
    """
    c = table.ball.c
    dim = table.ball.dim
    origin = np.zeros(dim)
    rng = np.random.default_rng(cfg.seed)
    index = NearestNode(table, [n.id for n in tree.nodes if n.grid is None])
    scorer = _Scorer(evaluator, cfg.cache, cfg.penalize_invalid)
    state = initial_state(dim, cfg)
    log = RunLog("herd", {"config": asdict(cfg), "mu_init": state.mu.tolist(),
                          "z_mu_init": exp_map(origin, state.mu, c).tolist()}, sink=sink)
    try:
        for t in range(cfg.iterations):
            V = sample_population(state, cfg, rng)
            Z = exp_map(origin, V, c)
            ids = [index.query(z) for z in Z]
            designs = [tree.nodes[i].grid for i in ids]
            fitness, hits = scorer(designs)
            sigma_used = float(state.sigma[0])
            state = cem_update(state, V, fitness, cfg)
            z_mu = exp_map(origin, state.mu, c)
            log.add({
                "iteration": t,
                "sigma": sigma_used,
                "samples": [
                    _sample_record(d, f, h, v=v.tolist(), z_mapped=z.tolist(), node_id=i)
                    for d, f, h, v, z, i in zip(designs, fitness, hits, V, Z, ids)
                ],
                "mu_after": state.mu.tolist(),
                "z_mu_after": z_mu.tolist(),
                "mu_norm": float(np.linalg.norm(z_mu)),
                "sigma_after": float(state.sigma[0]),
            })
        counters = scorer.counters()
        node_id, z_mu = project_to_design(state.mu, table, index)
        design = tree.nodes[node_id].grid
        (fit,), _ = scorer([design], track=False)
    except EvaluatorError as exc:
        raise RunAborted(f"evaluation failed: {exc}", log) from exc
    log.finish({
        "best_node_id": node_id,
        "best_design": design.to_json(),
        "best_fitness": fit,
        "z_mu": z_mu.tolist(),
        "decode_evaluations": 1,
        "incumbent_design": None if scorer.best is None else scorer.best.to_json(),
        "incumbent_fitness": scorer.best_fitness if scorer.best is not None else None,
        **counters,
    })
    return RunResult(design, fit, log, node_id, scorer.best, scorer.best_fitness)


def decode_scores(scores: np.ndarray, shape: GridShape, types: Sequence[CellType]) -> DesignGrid:
    """Per-cell argmax over type scores; ties go to the earliest type."""
    idx = np.argmax(np.asarray(scores).reshape(shape.size, len(types)), axis=1)
    return DesignGrid(shape, tuple(types[i] for i in idx))


def run_flat_cem(evaluator: Evaluator, cfg: CemConfig = CemConfig(), shape: GridShape = GridShape(),
                 types: Sequence[CellType] = ALL_TYPES, sink: TextIO | None = None) -> RunResult:
    """CEM directly over a cells x types score matrix, decoded by per-cell argmax."""
    types = tuple(sorted(set(types)))
    rng = np.random.default_rng(cfg.seed)
    scorer = _Scorer(evaluator, cfg.cache, cfg.penalize_invalid)
    state = initial_state((shape.size, len(types)), cfg)
    log = RunLog("flat_cem", {"config": asdict(cfg), "types": "".join(t.code for t in types),
                              "shape": [shape.rows, shape.cols]}, sink=sink)
    try:
        for t in range(cfg.iterations):
            V = sample_population(state, cfg, rng)
            designs = [decode_scores(v, shape, types) for v in V]
            fitness, hits = scorer(designs)
            sigma_used = float(state.sigma.flat[0])
            state = cem_update(state, V, fitness, cfg)
            log.add({
                "iteration": t,
                "sigma": sigma_used,
                "samples": [_sample_record(d, f, h) for d, f, h in zip(designs, fitness, hits)],
                "mu_after": state.mu.tolist(),
                "mu_norm": float(np.linalg.norm(state.mu)),
                "sigma_after": float(state.sigma.flat[0]),
            })
        counters = scorer.counters()
        design = decode_scores(state.mu, shape, types)
        (fit,), _ = scorer([design], track=False)
    except EvaluatorError as exc:
        raise RunAborted(f"evaluation failed: {exc}", log) from exc
    log.finish({
        "best_node_id": None,
        "best_design": design.to_json(),
        "best_fitness": fit,
        "decode_evaluations": 1,
        "incumbent_design": None if scorer.best is None else scorer.best.to_json(),
        "incumbent_fitness": scorer.best_fitness if scorer.best is not None else None,
        **counters,
    })
    return RunResult(design, fit, log, None, scorer.best, scorer.best_fitness)


@dataclass(frozen=True)
class EaConfig:
    population: int = 64
    generations: int = 30
    eliminate: float = 0.3
    type_mutation_prob: float = 0.1
    type_branch_prob: float = 0.8
    seed: int = 0
    cache: bool = True
    penalize_invalid: bool = True

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be at least 2")
        if not 0.0 <= self.eliminate < 1.0:
            raise ValueError("eliminate must lie in [0, 1)")


def mutate_types(assign: ComponentAssignment, prob: float, rng, types: Sequence[CellType]) -> ComponentAssignment:
    """Re-draw each component's type with probability ``prob``."""
    out = list(assign.types)
    for j in range(len(out)):
        if rng.random() < prob:
            out[j] = types[int(rng.integers(len(types)))]
    return ComponentAssignment(assign.level, tuple(out))


def mutate_granularity(assign: ComponentAssignment, stack: PartitionStack, rng,
                       types: Sequence[CellType]) -> ComponentAssignment | None:
    """Move to the next level and re-draw one sub-component of one component.

    Returns None for designs already at the finest level.
    """
    if assign.level + 1 >= len(stack):
        return None
    fine = list(assign.refine(stack).types)
    comp = int(rng.integers(stack.levels[assign.level].k))
    subs = stack.subcomponents(assign.level, comp)
    sub = subs[int(rng.integers(len(subs)))]
    fine[sub] = types[int(rng.integers(len(types)))]
    return ComponentAssignment(assign.level + 1, tuple(fine))


def run_c2f_ea(stack: PartitionStack, evaluator: Evaluator, cfg: EaConfig = EaConfig(),
               types: Sequence[CellType] = ALL_TYPES, sink: TextIO | None = None) -> RunResult:
    """Evolutionary coarse-to-fine search without the hyperbolic embedding.

    Starts from single-level coarse robots, drops the worst fraction each
    generation and refills by mutating random survivors: usually a per-component
    type change, otherwise a refinement of one component.
    """
    types = tuple(sorted(set(types)))
    filled = [t for t in types if t != CellType.EMPTY] or list(types)
    rng = np.random.default_rng(cfg.seed)
    scorer = _Scorer(evaluator, cfg.cache, cfg.penalize_invalid)
    k0 = stack.levels[0].k
    pop = [
        ComponentAssignment(0, tuple(filled[int(i)] for i in rng.integers(len(filled), size=k0)))
        for _ in range(cfg.population)
    ]
    n_keep = cfg.population - int(cfg.eliminate * cfg.population)
    log = RunLog("c2f_ea", {"config": asdict(cfg), "types": "".join(t.code for t in types)}, sink=sink)
    try:
        for g in range(cfg.generations):
            designs = [render(a, stack) for a in pop]
            fitness, hits = scorer(designs)
            log.add({
                "iteration": g,
                "samples": [
                    _sample_record(d, f, h, level=a.level)
                    for d, f, h, a in zip(designs, fitness, hits, pop)
                ],
                "population": len(pop),
            })
            survivors = [pop[i] for i in elite_indices(fitness, n_keep)]
            children = []
            while len(survivors) + len(children) < cfg.population:
                parent = survivors[int(rng.integers(len(survivors)))]
                child = None
                if rng.random() >= cfg.type_branch_prob:
                    child = mutate_granularity(parent, stack, rng, types)
                if child is None:
                    child = mutate_types(parent, cfg.type_mutation_prob, rng, types)
                children.append(child)
            pop = survivors + children
    except EvaluatorError as exc:
        raise RunAborted(f"evaluation failed: {exc}", log) from exc
    counters = scorer.counters()
    best = scorer.best
    log.finish({
        "best_node_id": None,
        "best_design": None if best is None else best.to_json(),
        "best_fitness": scorer.best_fitness if best is not None else None,
        "decode_evaluations": 0,
        **counters,
    })
    return RunResult(best, scorer.best_fitness, log, None, best, scorer.best_fitness)


def run_random_search(evaluator: Evaluator, budget: int, seed: int = 0, tree=None,
                      shape: GridShape = GridShape(), types: Sequence[CellType] = ALL_TYPES,
                      cache: bool = True, penalize_invalid: bool = True, sink: TextIO | None = None) -> RunResult:
    """Uniform draws (tree nodes if ``tree`` is given, else grids) with best-so-far tracking."""
    if budget < 1:
        raise ValueError("budget must be at least 1")
    types = tuple(sorted(set(types)))
    rng = np.random.default_rng(seed)
    scorer = _Scorer(evaluator, cache, penalize_invalid)
    log = RunLog("random", {"budget": budget, "seed": seed, "space": "tree" if tree is not None else "grid"}, sink=sink)
    if tree is not None:
        candidates = [n.id for n in tree.nodes if n.grid is not None]
        node_ids = [candidates[int(i)] for i in rng.integers(len(candidates), size=budget)]
        draws = [tree.nodes[i].grid for i in node_ids]
    else:
        node_ids = [None] * budget
        draws = [random_grid(shape, rng, types) for _ in range(budget)]
    best_id = None
    try:
        chunk = 100
        for start in range(0, budget, chunk):
            designs = draws[start:start + chunk]
            before = scorer.best_fitness
            fitness, hits = scorer(designs)
            for j, (d, f, h) in enumerate(zip(designs, fitness, hits)):
                t = start + j
                if f > before:
                    before, best_id = f, node_ids[t]
                log.add({"iteration": t, "samples": [_sample_record(d, f, h, node_id=node_ids[t])]})
    except EvaluatorError as exc:
        raise RunAborted(f"evaluation failed: {exc}", log) from exc
    log.finish({
        "best_node_id": best_id,
        "best_design": scorer.best.to_json(),
        "best_fitness": scorer.best_fitness,
        "decode_evaluations": 0,
        **scorer.counters(),
    })
    return RunResult(scorer.best, scorer.best_fitness, log, best_id, scorer.best, scorer.best_fitness)
