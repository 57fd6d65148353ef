"""Training-free tree embedding into the Poincaré disk (Sarkar's construction)."""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geometry import BallConfig, distance, reflect_to_origin


@dataclass(frozen=True)
class EmbedConfig:
    tau: float = 1.0
    ball: BallConfig = field(default_factory=BallConfig)

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.ball.dim != 2:
            raise ValueError("the construction is defined for the 2-dimensional disk only")

    @property
    def child_radius(self) -> float:
        """Euclidean radius at which a point sits at distance tau from the origin."""
        sc = math.sqrt(self.ball.c)
        return math.tanh(sc * self.tau / 2.0) / sc


class EmbeddingTable:
    """Node id -> point in the ball; ``ids``/``points`` give an id-ordered array view."""

    def __init__(self, entries: Mapping[int, np.ndarray], tau: float, ball: BallConfig = BallConfig(), root: int = 0,
                 levels: Mapping[int, int] | None = None):
        self.entries = {int(k): np.asarray(v, dtype=np.float64) for k, v in entries.items()}
        self.tau = tau
        self.ball = ball
        self.root = root
        self.levels = dict(levels or {})
        self.ids = np.array(sorted(self.entries), dtype=np.int64)
        self.points = np.array([self.entries[i] for i in self.ids]).reshape(len(self.ids), ball.dim)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, node_id: int) -> np.ndarray:
        return self.entries[node_id]

    def to_json(self) -> dict:
        points = []
        for i in self.ids:
            rec = {"id": int(i), "z": [float(x) for x in self.entries[int(i)]]}
            if int(i) in self.levels:
                rec["level"] = self.levels[int(i)]
            points.append(rec)
        return {"tau": self.tau, "c": self.ball.c, "root": self.root, "points": points}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"))

    @classmethod
    def from_json(cls, obj: dict) -> "EmbeddingTable":
        ball = BallConfig(2, float(obj.get("c", 1.0)))
        entries = {p["id"]: np.array(p["z"]) for p in obj["points"]}
        levels = {p["id"]: p["level"] for p in obj["points"] if "level" in p}
        return cls(entries, float(obj["tau"]), ball, int(obj.get("root", 0)), levels)


def place_children(z_q, z_p, n_children: int, cfg: EmbedConfig = EmbedConfig()) -> list[np.ndarray]:
    """Positions for the children of a node at ``z_q`` whose parent sits at ``z_p``.

    ``z_q`` is moved to the origin by reflection; children go on the circle of
    hyperbolic radius tau, equally spaced over the node's full degree and
    starting one step past the reflected parent's angle, then everything is
    reflected back. The root (``z_p is None``) has degree ``n_children`` and
    reference angle 0.
    """
    if n_children <= 0:
        return []
    c = cfg.ball.c
    z_q = np.asarray(z_q, dtype=np.float64)
    if z_p is None:
        theta = 0.0
        degree = n_children
    else:
        zp = reflect_to_origin(z_q, np.asarray(z_p, dtype=np.float64), c)
        theta = math.atan2(zp[1], zp[0])
        degree = n_children + 1
    r = cfg.child_radius
    angles = theta + 2.0 * np.pi * np.arange(1, n_children + 1) / degree
    local = r * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return list(reflect_to_origin(z_q, local, c))


def embed_structure(root: int, children: Mapping[int, Sequence[int]], cfg: EmbedConfig = EmbedConfig(),
                    levels: Mapping[int, int] | None = None) -> EmbeddingTable:
    """Embed any rooted tree given as an adjacency map, breadth-first in ascending id order."""
    points = {root: np.zeros(2)}
    parent_of: dict[int, int] = {}
    queue = deque([root])
    while queue:
        q = queue.popleft()
        kids = sorted(children.get(q, ()))
        p = parent_of.get(q)
        placed = place_children(points[q], None if p is None else points[p], len(kids), cfg)
        for kid, z in zip(kids, placed):
            points[kid] = z
            parent_of[kid] = q
            queue.append(kid)
    return EmbeddingTable(points, cfg.tau, cfg.ball, root, levels)


def embed_tree(tree, cfg: EmbedConfig = EmbedConfig()) -> EmbeddingTable:
    from .hierarchy import node_granularity

    levels = {n.id: node_granularity(tree, n.id) for n in tree.nodes}
    return embed_structure(tree.root, tree.children_map(), cfg, levels)


@dataclass
class EmbeddingReport:
    max_parent_child_err: float
    norm_monotone: bool
    monotone_violations: int
    edges: int
    min_sibling_separation: float
    all_inside: bool

    def passed(self, tol: float = 1e-9, min_separation: float = 1e-6) -> bool:
        return (
            self.all_inside
            and self.max_parent_child_err <= tol
            and self.norm_monotone
            and self.min_sibling_separation >= min_separation
        )


def check_embedding(table: EmbeddingTable, children: Mapping[int, Sequence[int]], tau: float | None = None) -> EmbeddingReport:
    """Edge lengths against tau, norm growth along edges, and sibling spacing."""
    tau = table.tau if tau is None else tau
    c = table.ball.c
    max_err = 0.0
    violations = 0
    edges = 0
    min_sep = math.inf
    norms = {i: float(np.linalg.norm(z)) for i, z in table.entries.items()}
    for q, kids in children.items():
        if not kids:
            continue
        zq = table[q]
        pts = np.array([table[k] for k in kids])
        d = distance(zq, pts, c)
        max_err = max(max_err, float(np.max(np.abs(d - tau))))
        violations += sum(norms[k] <= norms[q] for k in kids)
        edges += len(kids)
        if len(kids) > 1:
            pair = distance(pts[:, None, :], pts[None, :, :], c)
            iu = np.triu_indices(len(kids), 1)
            min_sep = min(min_sep, float(np.min(pair[iu])))
    inside = bool(np.all(c * np.sum(table.points ** 2, axis=1) < 1.0))
    return EmbeddingReport(max_err, violations == 0, violations, edges, min_sep, inside)
