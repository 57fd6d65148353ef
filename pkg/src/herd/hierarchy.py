"""Nested granularity levels via iterated weighted K-Means, and the design tree."""
from __future__ import annotations

import json
from collections import Counter, deque
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .design import (
    ALL_TYPES,
    CellType,
    ComponentAssignment,
    DesignGrid,
    GridShape,
    Partition,
    PartitionStack,
    parse_types,
    render,
)


def default_levels(shape: GridShape) -> tuple[int, ...]:
    """Powers of two below the cell count, then the cell count (1,2,4,8,16,25 for 5x5)."""
    levels = []
    k = 1
    while k < shape.size:
        levels.append(k)
        k *= 2
    return tuple(levels) + (shape.size,)


@dataclass(frozen=True)
class ClusterConfig:
    levels: tuple[int, ...] = (1, 2, 4, 8, 16, 25)
    seed: int = 0
    max_iters: int = 100

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(k) for k in self.levels))
        if not self.levels or any(k < 1 for k in self.levels):
            raise ValueError(f"levels must be positive, got {self.levels}")
        if any(a >= b for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError(f"levels must be strictly increasing, got {self.levels}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    objective_history: list[float] = field(default_factory=list)


def _objective(x, w, centers, labels) -> float:
    diff = x - centers[labels]
    return float(np.sum(w * np.sum(diff * diff, axis=1)))


def kmeans_pp_init(x: np.ndarray, w: np.ndarray, k: int, rng) -> np.ndarray:
    """Weighted k-means++ seeding: pick points with probability ~ weight * D^2."""
    n = len(x)
    first = rng.choice(n, p=w / w.sum())
    centers = [x[first]]
    d2 = np.sum((x - x[first]) ** 2, axis=1)
    for _ in range(1, k):
        p = w * d2
        total = p.sum()
        if total <= 0:
            raise ValueError(f"fewer than {k} distinct points")
        idx = rng.choice(n, p=p / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def weighted_kmeans(x, w, k: int, rng, max_iters: int = 100) -> KMeansResult:
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n = len(x)
    if not 1 <= k <= n:
        raise ValueError(f"cannot form {k} clusters from {n} points")
    if k == n:
        return KMeansResult(np.arange(n), x.copy(), [0.0])
    centers = kmeans_pp_init(x, w, k, rng)
    labels = None
    history: list[float] = []
    for _ in range(max_iters):
        d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new = np.argmin(d2, axis=1)
        _repair_empty(x, new, centers, k)
        for j in range(k):
            mask = new == j
            centers[j] = np.average(x[mask], axis=0, weights=w[mask])
        history.append(_objective(x, w, centers, new))
        if labels is not None and np.array_equal(new, labels):
            labels = new
            break
        labels = new
    return KMeansResult(labels, centers, history)


def _repair_empty(x, labels, centers, k) -> None:
    for j in range(k):
        if np.any(labels == j):
            continue
        dist = np.sum((x - centers[labels]) ** 2, axis=1)
        sizes = np.bincount(labels, minlength=k)
        dist[sizes[labels] <= 1] = -1.0
        far = int(np.argmax(dist))
        labels[far] = j
        centers[j] = x[far]


def nested_kmeans(shape: GridShape, cfg: ClusterConfig = ClusterConfig()) -> PartitionStack:
    """Cluster cells fine to coarse, feeding each level's weighted centroids to the next."""
    if cfg.levels[-1] != shape.size:
        raise ValueError(f"finest level must be {shape.size} for a {shape.rows}x{shape.cols} grid")
    rng = np.random.default_rng(cfg.seed)
    pos = np.array([shape.coords(i) for i in range(shape.size)], dtype=np.float64)

    cell_comp = np.arange(shape.size)
    partitions = [Partition(shape.size, tuple(range(shape.size)))]
    for k in reversed(cfg.levels[:-1]):
        m = int(cell_comp.max()) + 1
        if k > m:
            raise ValueError(f"k={k} exceeds the {m} components of the finer level")
        weights = np.bincount(cell_comp, minlength=m).astype(np.float64)
        centroids = np.array([pos[cell_comp == j].mean(axis=0) for j in range(m)])
        res = weighted_kmeans(centroids, weights, k, rng, cfg.max_iters)
        part = Partition(k, tuple(int(res.labels[c]) for c in cell_comp)).canonical()
        partitions.append(part)
        cell_comp = np.array(part.assignment)
    return PartitionStack(shape, tuple(reversed(partitions)))


@dataclass(frozen=True)
class TreeBuildConfig:
    max_nodes: int = 20000
    max_children: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.max_nodes < 1 or self.max_children < 1:
            raise ValueError("max_nodes and max_children must be positive")


@dataclass
class Node:
    id: int
    parent: int | None
    level: int  # 0 is the virtual root; level L uses stack level L - 1
    assignment: ComponentAssignment | None
    grid: DesignGrid | None
    children: list[int] = field(default_factory=list)


class DesignTree:
    """Coarse-to-fine hierarchy of designs under a virtual root at id 0."""

    def __init__(self, stack: PartitionStack, nodes: list[Node], types: Sequence[CellType] = ALL_TYPES):
        self.stack = stack
        self.nodes = nodes
        self.types = tuple(types)
        self.root = 0

    def __len__(self) -> int:
        return len(self.nodes)

    def __getitem__(self, node_id: int) -> Node:
        return self.nodes[node_id]

    def children_map(self) -> dict[int, list[int]]:
        return {n.id: list(n.children) for n in self.nodes}

    def depth(self) -> int:
        return max(n.level for n in self.nodes)

    def level_histogram(self) -> dict[int, int]:
        """Node count keyed by granularity k (0 for the virtual root)."""
        return dict(sorted(Counter(node_granularity(self, n.id) for n in self.nodes).items()))

    def to_json(self) -> dict:
        return {
            "shape": [self.stack.shape.rows, self.stack.shape.cols],
            "levels": self.stack.ks,
            "partitions": [list(p.assignment) for p in self.stack.levels],
            "cell_types": "".join(t.code for t in self.types),
            "nodes": [
                {
                    "id": n.id,
                    "parent": n.parent,
                    "level": n.level,
                    "types": None if n.assignment is None else [t.code for t in n.assignment.types],
                }
                for n in self.nodes
            ],
        }

    def dumps(self, extra: dict | None = None) -> str:
        obj = self.to_json()
        if extra:
            obj.update(extra)
        return json.dumps(obj, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, obj: dict) -> "DesignTree":
        rows, cols = obj["shape"]
        stack = PartitionStack(
            GridShape(rows, cols),
            tuple(Partition(k, tuple(a)) for k, a in zip(obj["levels"], obj["partitions"])),
        )
        nodes: list[Node] = []
        for rec in obj["nodes"]:
            if rec["types"] is None:
                assign, grid = None, None
            else:
                assign = ComponentAssignment(rec["level"] - 1, tuple(CellType.from_code(ch) for ch in rec["types"]))
                grid = render(assign, stack)
            nodes.append(Node(rec["id"], rec["parent"], rec["level"], assign, grid))
        for n in nodes:
            if n.parent is not None:
                nodes[n.parent].children.append(n.id)
        return cls(stack, nodes, parse_types(obj.get("cell_types", "ERSHV")))


def build_tree(
    stack: PartitionStack,
    cfg: TreeBuildConfig = TreeBuildConfig(),
    types: Sequence[CellType] = ALL_TYPES,
) -> DesignTree:
    """Grow the design tree breadth-first until ``cfg.max_nodes`` nodes exist.

    Children of a node re-draw the types of the sub-components of one randomly
    chosen component; every other component keeps its type.
    """
    types = tuple(sorted(set(types)))
    rng = np.random.default_rng(cfg.seed)
    filled = [t for t in types if t != CellType.EMPTY]
    if cfg.max_nodes < len(filled) + 1:
        raise ValueError(f"max_nodes must be at least {len(filled) + 1}")

    nodes = [Node(0, None, 0, None, None)]

    def add(parent: Node, assign: ComponentAssignment, grid: DesignGrid) -> Node:
        node = Node(len(nodes), parent.id, parent.level + 1, assign, grid)
        nodes.append(node)
        parent.children.append(node.id)
        return node

    k0 = stack.levels[0].k
    for t in filled:
        assign = ComponentAssignment(0, (t,) * k0)
        add(nodes[0], assign, render(assign, stack))

    subs = [
        [stack.subcomponents(s, comp) for comp in range(stack.levels[s].k)]
        for s in range(len(stack) - 1)
    ]
    queue = deque(nodes[0].children)
    while queue and len(nodes) < cfg.max_nodes:
        parent = nodes[queue.popleft()]
        s = parent.assignment.level
        if s + 1 >= len(stack):
            continue
        base = list(parent.assignment.refine(stack).types)
        seen: set[tuple] = set()
        for _ in range(10 * cfg.max_children):
            if len(seen) >= cfg.max_children or len(nodes) >= cfg.max_nodes:
                break
            comp = int(rng.integers(len(subs[s])))
            draw = rng.integers(len(types), size=len(subs[s][comp]))
            child = list(base)
            for sub, d in zip(subs[s][comp], draw):
                child[sub] = types[d]
            assign = ComponentAssignment(s + 1, tuple(child))
            grid = render(assign, stack)
            if grid.cells in seen:
                continue
            seen.add(grid.cells)
            queue.append(add(parent, assign, grid).id)
    return DesignTree(stack, nodes, types)


def node_granularity(tree: DesignTree, node_id: int) -> int:
    if not 0 <= node_id < len(tree.nodes):
        raise KeyError(f"unknown node id {node_id}")
    level = tree.nodes[node_id].level
    return 0 if level == 0 else tree.stack.levels[level - 1].k


def changed_component(tree: DesignTree, node_id: int) -> set[int]:
    """Parent-level components whose cells differ between a node and its parent."""
    node = tree.nodes[node_id]
    parent = tree.nodes[node.parent]
    if parent.grid is None:
        return set()
    part = tree.stack.levels[parent.assignment.level]
    return {
        part.assignment[i]
        for i, (a, b) in enumerate(zip(node.grid.cells, parent.grid.cells))
        if a != b
    }


def config_dict(cluster: ClusterConfig, build: TreeBuildConfig) -> dict:
    return {"cluster": asdict(cluster), "build": asdict(build)}
