"""Fitness evaluators: deterministic surrogates, an external JSON-lines process, caching."""
from __future__ import annotations

import json
import math
import os
import queue
import subprocess
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .design import ACTUATORS, CellType, DesignGrid, PartitionStack, coarsen, validate
from .geometry import distance

DEFAULT_TIMEOUT = 300.0
TIMEOUT_ENV = "HERD_EVAL_TIMEOUT_SECS"


class EvaluatorError(RuntimeError):
    """Any failure while obtaining fitness values; aborts an optimizer run."""


class EvaluationFailed(EvaluatorError):
    def __init__(self, request_id: int, message: str):
        super().__init__(f"evaluator reported error for request {request_id}: {message}")
        self.request_id = request_id
        self.message = message


class ProtocolError(EvaluatorError):
    pass


class EvaluatorTimeout(EvaluatorError):
    pass


class ChildExited(EvaluatorError):
    pass


class Evaluator:
    """Maps a batch of designs to fitness values, in order."""

    def evaluate(self, designs: Sequence[DesignGrid]) -> list[float]:
        raise NotImplementedError

    def __call__(self, design: DesignGrid) -> float:
        return self.evaluate([design])[0]

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class FunctionEvaluator(Evaluator):
    def __init__(self, fn: Callable[[DesignGrid], float], name: str = "function"):
        self.fn = fn
        self.name = name

    def evaluate(self, designs):
        return [float(self.fn(d)) for d in designs]


def eval_pattern_match(design: DesignGrid, target: DesignGrid, stack: PartitionStack, weights: Sequence[float]) -> float:
    """Weighted fraction of matching components at each granularity level."""
    if design.shape != target.shape or design.shape != stack.shape:
        raise ValueError("design, target and partition stack must share a grid shape")
    if len(weights) != len(stack):
        raise ValueError(f"need {len(stack)} weights, got {len(weights)}")
    total = 0.0
    for level, (part, w) in enumerate(zip(stack.levels, weights)):
        a = coarsen(design, part, level).types
        b = coarsen(target, part, level).types
        total += w * sum(x == y for x, y in zip(a, b)) / part.k
    return total


def eval_actuator_balance(design: DesignGrid, target_fraction: float) -> float:
    nonempty = [c for c in design.cells if c != CellType.EMPTY]
    if not nonempty:
        return 0.0
    frac = sum(c in ACTUATORS for c in nonempty) / len(nonempty)
    score = 1.0 - abs(frac - target_fraction)
    if validate(design).valid:
        score += 0.5
    return score


def eval_planted_node(node_id: int, target_id: int, table, c: float | None = None) -> float:
    c = table.ball.c if c is None else c
    return 0.0 - distance(table[node_id], table[target_id], c)


class PatternMatch(FunctionEvaluator):
    def __init__(self, target: DesignGrid, stack: PartitionStack, weights: Sequence[float] | None = None):
        self.target = target
        self.stack = stack
        self.weights = tuple(weights) if weights is not None else (1.0,) * len(stack)
        super().__init__(lambda d: eval_pattern_match(d, target, stack, self.weights), "pattern_match")

    @property
    def maximum(self) -> float:
        return float(sum(self.weights))


class ActuatorBalance(FunctionEvaluator):
    def __init__(self, target_fraction: float = 0.4):
        if not 0.0 < target_fraction < 1.0:
            raise ValueError("target_fraction must lie in (0, 1)")
        self.target_fraction = target_fraction
        super().__init__(lambda d: eval_actuator_balance(d, target_fraction), "actuator_balance")


class PlantedNode(Evaluator):
    """Negative hyperbolic distance from a design's tree node to a hidden target node.

    A grid that appears at several nodes scores by its closest node, which keeps
    the evaluator a pure function of the design.
    """

    def __init__(self, tree, table, target_id: int):
        if tree.nodes[target_id].grid is None:
            raise ValueError("the virtual root cannot be a target")
        self.target_id = target_id
        self.target = tree.nodes[target_id].grid
        self._score: dict[tuple, float] = {}
        for node in tree.nodes:
            if node.grid is None:
                continue
            s = eval_planted_node(node.id, target_id, table)
            key = node.grid.cells
            self._score[key] = max(s, self._score.get(key, -math.inf))

    def evaluate(self, designs):
        out = []
        for d in designs:
            try:
                out.append(self._score[d.cells])
            except KeyError:
                raise EvaluatorError(f"design is not part of the hierarchy:\n{d}") from None
        return out


class CachedEvaluator(Evaluator):
    """Memoizes fitness by canonical design text; counts hits and misses."""

    def __init__(self, inner: Evaluator, enabled: bool = True):
        self.inner = inner
        self.enabled = enabled
        self.store: dict[str, float] = {}
        self.hits = 0
        self.misses = 0
        self.calls = 0  # designs forwarded to the inner evaluator

    def evaluate(self, designs):
        if not self.enabled:
            self.misses += len(designs)
            self.calls += len(designs)
            return self.inner.evaluate(designs)
        keys = [d.key for d in designs]
        todo: dict[str, DesignGrid] = {}
        for k, d in zip(keys, designs):
            if k in self.store or k in todo:
                self.hits += 1
            else:
                self.misses += 1
                todo[k] = d
        if todo:
            values = self.inner.evaluate(list(todo.values()))
            self.calls += len(todo)
            self.store.update(zip(todo, values))
        return [self.store[k] for k in keys]

    def close(self):
        self.inner.close()


def cached(evaluator: Evaluator, enabled: bool = True) -> CachedEvaluator:
    return CachedEvaluator(evaluator, enabled)


def resolve_timeout(configured: float | None = None) -> float:
    """The environment variable wins over a configured value, which wins over 300 s."""
    raw = os.environ.get(TIMEOUT_ENV)
    if raw:
        return float(raw)
    return DEFAULT_TIMEOUT if configured is None else float(configured)


class ExternalEvaluator(Evaluator):
    """Talks to a child process over newline-delimited JSON on stdin/stdout.

    Requests are ``{"id": n, "design": {"shape": [r, c], "cells": "..."}}``;
    the child answers ``{"id": n, "fitness": x}`` or ``{"id": n, "error": "..."}``
    in any order. All requests of a batch are written before any response is
    read. If the child exits it is restarted once and the unanswered requests
    are re-sent; a second exit aborts.
    """

    def __init__(self, command: Sequence[str], timeout: float | None = None, restarts: int = 1):
        self.command = list(command)
        self.timeout = resolve_timeout(timeout)
        self.restarts_left = restarts
        self.next_id = 1
        self.proc: subprocess.Popen | None = None
        self._lines: queue.Queue = queue.Queue()

    def _start(self) -> None:
        self.proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=None,
            text=True,
            bufsize=1,
        )
        lines: queue.Queue = queue.Queue()
        self._lines = lines
        proc = self.proc

        def pump():
            for line in proc.stdout:
                lines.put(line)
            lines.put(None)

        threading.Thread(target=pump, daemon=True).start()

    def _send(self, requests: dict[int, DesignGrid]) -> bool:
        try:
            for rid, design in requests.items():
                self.proc.stdin.write(json.dumps({"id": rid, "design": design.to_json()}) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError):
            return False
        return True

    def _restart(self, pending: dict[int, DesignGrid]) -> None:
        if self.restarts_left <= 0:
            raise ChildExited(f"evaluator process exited with requests {sorted(pending)} unanswered")
        self.restarts_left -= 1
        self._kill()
        self._start()
        if not self._send(pending):
            raise ChildExited("evaluator process exited right after restart")

    def evaluate(self, designs):
        if self.proc is None:
            self._start()
        ids = list(range(self.next_id, self.next_id + len(designs)))
        self.next_id += len(designs)
        pending = dict(zip(ids, designs))
        results: dict[int, float] = {}
        if not self._send(pending):
            self._restart(pending)
        while pending:
            try:
                line = self._lines.get(timeout=self.timeout)
            except queue.Empty:
                raise EvaluatorTimeout(
                    f"no response within {self.timeout:g}s; waiting on requests {sorted(pending)}"
                ) from None
            if line is None:
                self._restart(pending)
                continue
            if not line.strip():
                continue
            rid, value = self._parse(line, pending)
            results[rid] = value
            del pending[rid]
        return [results[i] for i in ids]

    @staticmethod
    def _parse(line: str, pending) -> tuple[int, float]:
        text = line.rstrip("\n")
        try:
            obj = json.loads(text)
        except json.JSONDecodeError:
            raise ProtocolError(f"malformed response line: {text!r}") from None
        if not isinstance(obj, dict) or not isinstance(obj.get("id"), int):
            raise ProtocolError(f"response without integer id: {text!r}")
        rid = obj["id"]
        if rid not in pending:
            raise ProtocolError(f"response for unknown or already answered id {rid}: {text!r}")
        if "error" in obj:
            raise EvaluationFailed(rid, str(obj["error"]))
        value = obj.get("fitness")
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ProtocolError(f"response without finite fitness: {text!r}")
        return rid, float(value)

    def _kill(self) -> None:
        if self.proc is None:
            return
        try:
            self.proc.stdin.close()
        except OSError:
            pass
        if self.proc.poll() is None:
            self.proc.kill()
        self.proc.wait()
        self.proc = None

    def close(self) -> None:
        self._kill()


@dataclass
class EvaluatorSpec:
    """Declarative description of an evaluator, as used by the CLI."""

    kind: str
    params: dict = field(default_factory=dict)

    KINDS = ("pattern_match", "actuator_balance", "planted_node", "external")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown evaluator kind {self.kind!r}; choose from {', '.join(self.KINDS)}")
        required = {
            "pattern_match": ("target",),
            "actuator_balance": ("target_fraction",),
            "planted_node": ("target_id",),
            "external": ("command",),
        }[self.kind]
        missing = [k for k in required if k not in self.params]
        if missing:
            raise ValueError(f"{self.kind} evaluator needs {', '.join(missing)}")

    def build(self, stack: PartitionStack | None = None, tree=None, table=None) -> Evaluator:
        p = self.params
        if self.kind == "pattern_match":
            return PatternMatch(p["target"], stack, p.get("weights"))
        if self.kind == "actuator_balance":
            return ActuatorBalance(float(p["target_fraction"]))
        if self.kind == "planted_node":
            return PlantedNode(tree, table, int(p["target_id"]))
        return ExternalEvaluator(p["command"], p.get("timeout"))

