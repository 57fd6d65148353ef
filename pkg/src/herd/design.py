"""Cell-grid robot designs and nested component partitions."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Sequence

INVALID_FITNESS = -1.0e6


class CellType(IntEnum):
    EMPTY = 0
    RIGID = 1
    SOFT = 2
    HORIZONTAL = 3
    VERTICAL = 4

    @property
    def code(self) -> str:
        return "ERSHV"[self]

    @classmethod
    def from_code(cls, ch: str) -> "CellType":
        idx = "ERSHV".find(ch)
        if idx < 0 or len(ch) != 1:
            raise ValueError(f"unknown cell code {ch!r}")
        return cls(idx)


ALL_TYPES: tuple[CellType, ...] = tuple(CellType)
ACTUATORS = frozenset({CellType.HORIZONTAL, CellType.VERTICAL})


def parse_types(codes: str) -> tuple[CellType, ...]:
    """Parse an alphabet such as ``"ERH"`` into sorted, de-duplicated cell types."""
    return tuple(sorted({CellType.from_code(ch) for ch in codes}))


class ParseError(ValueError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {msg}")
        self.line = line
        self.col = col


@dataclass(frozen=True)
class GridShape:
    rows: int = 5
    cols: int = 5

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid shape must be positive, got {self.rows}x{self.cols}")

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def coords(self, index: int) -> tuple[int, int]:
        return divmod(index, self.cols)

    def neighbors(self, index: int) -> Iterable[int]:
        r, c = divmod(index, self.cols)
        if r > 0:
            yield index - self.cols
        if r + 1 < self.rows:
            yield index + self.cols
        if c > 0:
            yield index - 1
        if c + 1 < self.cols:
            yield index + 1


@dataclass(frozen=True)
class DesignGrid:
    shape: GridShape
    cells: tuple[CellType, ...]

    def __post_init__(self):
        if len(self.cells) != self.shape.size:
            raise ValueError(f"expected {self.shape.size} cells, got {len(self.cells)}")
        object.__setattr__(self, "cells", tuple(CellType(c) for c in self.cells))

    @classmethod
    def filled(cls, shape: GridShape, cell: CellType) -> "DesignGrid":
        return cls(shape, (cell,) * shape.size)

    @property
    def key(self) -> str:
        """Canonical text form; used as the fitness-cache key."""
        return serialize(self)

    @property
    def codes(self) -> str:
        return "".join(c.code for c in self.cells)

    def to_json(self) -> dict:
        return {"shape": [self.shape.rows, self.shape.cols], "cells": self.codes}

    @classmethod
    def from_json(cls, obj: dict) -> "DesignGrid":
        rows, cols = obj["shape"]
        shape = GridShape(int(rows), int(cols))
        cells = obj["cells"]
        if len(cells) != shape.size:
            raise ValueError(f"expected {shape.size} cell codes, got {len(cells)}")
        return cls(shape, tuple(CellType.from_code(ch) for ch in cells))

    def __str__(self) -> str:
        return serialize(self)


def serialize(design: DesignGrid) -> str:
    codes = design.codes
    cols = design.shape.cols
    return "\n".join(codes[i:i + cols] for i in range(0, len(codes), cols))


def parse(text: str) -> DesignGrid:
    lines = text.strip("\n").split("\n")
    if not lines or lines == [""]:
        raise ParseError("empty grid", 1, 1)
    width = len(lines[0])
    cells = []
    for i, line in enumerate(lines, start=1):
        if len(line) != width:
            raise ParseError(f"ragged row: expected {width} characters, got {len(line)}", i, min(len(line), width) + 1)
        for j, ch in enumerate(line, start=1):
            try:
                cells.append(CellType.from_code(ch))
            except ValueError:
                raise ParseError(f"bad cell character {ch!r}", i, j) from None
    return DesignGrid(GridShape(len(lines), width), tuple(cells))


@dataclass(frozen=True)
class ValidityReport:
    connected: bool
    has_actuator: bool
    valid: bool


def validate(design: DesignGrid) -> ValidityReport:
    shape = design.shape
    filled = [i for i, c in enumerate(design.cells) if c != CellType.EMPTY]
    has_actuator = any(design.cells[i] in ACTUATORS for i in filled)
    if not filled:
        return ValidityReport(connected=False, has_actuator=False, valid=False)
    seen = {filled[0]}
    stack = [filled[0]]
    while stack:
        i = stack.pop()
        for j in shape.neighbors(i):
            if j not in seen and design.cells[j] != CellType.EMPTY:
                seen.add(j)
                stack.append(j)
    connected = len(seen) == len(filled)
    return ValidityReport(connected, has_actuator, connected and has_actuator)


@dataclass(frozen=True)
class Partition:
    k: int
    assignment: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "assignment", tuple(int(a) for a in self.assignment))
        if self.k < 1:
            raise ValueError("partition needs at least one component")
        used = set(self.assignment)
        if used != set(range(self.k)):
            raise ValueError(f"component ids must cover 0..{self.k - 1} exactly, got {sorted(used)}")

    def members(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.k)]
        for cell, comp in enumerate(self.assignment):
            out[comp].append(cell)
        return out

    def canonical(self) -> "Partition":
        """Relabel components in order of their lowest cell index."""
        relabel: dict[int, int] = {}
        for comp in self.assignment:
            relabel.setdefault(comp, len(relabel))
        return Partition(self.k, tuple(relabel[a] for a in self.assignment))


class NestingError(ValueError):
    pass


def coarse_map(fine: Partition, coarse: Partition) -> list[int]:
    """Map each fine component id to the coarse component containing it.

    Raises NestingError when some fine component straddles two coarse ones.
    """
    parent = [-1] * fine.k
    for f, c in zip(fine.assignment, coarse.assignment):
        if parent[f] == -1:
            parent[f] = c
        elif parent[f] != c:
            raise NestingError(f"fine component {f} spans coarse components {parent[f]} and {c}")
    return parent


@dataclass(frozen=True)
class PartitionStack:
    """Partitions ordered coarse to fine; the last level is one component per cell."""

    shape: GridShape
    levels: tuple[Partition, ...]

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        if not self.levels:
            raise ValueError("empty partition stack")
        ks = [p.k for p in self.levels]
        if any(a >= b for a, b in zip(ks, ks[1:])):
            raise ValueError(f"level sizes must be strictly increasing, got {ks}")
        if ks[-1] != self.shape.size:
            raise ValueError(f"finest level must have {self.shape.size} components, got {ks[-1]}")
        for p in self.levels:
            if len(p.assignment) != self.shape.size:
                raise ValueError("partition does not cover the grid")
        parents = tuple(
            tuple(coarse_map(fine, coarse)) for coarse, fine in zip(self.levels, self.levels[1:])
        )
        object.__setattr__(self, "_parents", parents)

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def ks(self) -> list[int]:
        return [p.k for p in self.levels]

    def parent_of(self, level: int) -> tuple[int, ...]:
        """Coarse component id (at ``level``) of each component at ``level + 1``."""
        return self._parents[level]

    def subcomponents(self, level: int, comp: int) -> list[int]:
        return [f for f, c in enumerate(self._parents[level]) if c == comp]

    def to_json(self) -> dict:
        return {
            "shape": [self.shape.rows, self.shape.cols],
            "levels": [{"k": p.k, "assignment": list(p.assignment)} for p in self.levels],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PartitionStack":
        rows, cols = obj["shape"]
        return cls(GridShape(rows, cols), tuple(Partition(lv["k"], tuple(lv["assignment"])) for lv in obj["levels"]))


@dataclass(frozen=True)
class ComponentAssignment:
    level: int
    types: tuple[CellType, ...]

    def __post_init__(self):
        object.__setattr__(self, "types", tuple(CellType(t) for t in self.types))

    def refine(self, stack: PartitionStack) -> "ComponentAssignment":
        """Same design expressed one level finer: sub-components inherit types."""
        if self.level + 1 >= len(stack):
            raise ValueError("already at the finest level")
        parents = stack.parent_of(self.level)
        return ComponentAssignment(self.level + 1, tuple(self.types[p] for p in parents))


def render(assign: ComponentAssignment, stack: PartitionStack) -> DesignGrid:
    if not 0 <= assign.level < len(stack):
        raise IndexError(f"level {assign.level} out of range for a {len(stack)}-level stack")
    part = stack.levels[assign.level]
    if len(assign.types) != part.k:
        raise ValueError(f"assignment has {len(assign.types)} types for {part.k} components")
    return DesignGrid(stack.shape, tuple(assign.types[comp] for comp in part.assignment))


def coarsen(design: DesignGrid, partition: Partition, level: int = 0) -> ComponentAssignment:
    """Majority type per component; ties go to the lowest CellType."""
    counts = [Counter() for _ in range(partition.k)]
    for cell, comp in zip(design.cells, partition.assignment):
        counts[comp][cell] += 1
    types = tuple(min(cnt, key=lambda t: (-cnt[t], t)) for cnt in counts)
    return ComponentAssignment(level, types)


def random_grid(shape: GridShape, rng, types: Sequence[CellType] = ALL_TYPES) -> DesignGrid:
    idx = rng.integers(0, len(types), size=shape.size)
    return DesignGrid(shape, tuple(types[i] for i in idx))


def dumps_design(design: DesignGrid) -> str:
    return json.dumps(design.to_json())
