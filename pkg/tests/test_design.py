import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from herd.design import (
    ALL_TYPES,
    CellType,
    ComponentAssignment,
    DesignGrid,
    GridShape,
    NestingError,
    ParseError,
    Partition,
    PartitionStack,
    coarsen,
    parse,
    parse_types,
    random_grid,
    render,
    serialize,
    validate,
)

E, R, S, H, V = ALL_TYPES


def grid(text):
    return parse(text)


def test_cell_type_codes():
    assert [t.code for t in CellType] == list("ERSHV")
    assert len(CellType) == 5
    assert CellType.from_code("H") is CellType.HORIZONTAL
    with pytest.raises(ValueError):
        CellType.from_code("X")


def test_parse_types_sorted_and_deduplicated():
    assert parse_types("HRERH") == (E, R, H)


def test_grid_shape_default_and_validation():
    assert GridShape().size == 25
    with pytest.raises(ValueError):
        GridShape(0, 3)


def test_design_length_must_match_shape():
    with pytest.raises(ValueError):
        DesignGrid(GridShape(2, 2), (E, E, E))


def half_split_stack():
    # left three columns (15 cells) vs right two columns (10 cells)
    shape = GridShape()
    k2 = tuple(0 if shape.coords(i)[1] < 3 else 1 for i in range(25))
    return PartitionStack(shape, (Partition(1, (0,) * 25), Partition(2, k2), Partition(25, tuple(range(25)))))


class TestRender:
    def test_single_component(self):
        stack = half_split_stack()
        g = render(ComponentAssignment(0, (S,)), stack)
        assert g == DesignGrid.filled(GridShape(), S)

    def test_finest_level_is_identity(self):
        stack = half_split_stack()
        types = tuple(ALL_TYPES[i % 5] for i in range(25))
        assert render(ComponentAssignment(2, types), stack).cells == types

    def test_two_component_split(self):
        stack = half_split_stack()
        g = render(ComponentAssignment(1, (R, E)), stack)
        assert g.cells.count(R) == 15 and g.cells.count(E) == 10
        for i, c in enumerate(g.cells):
            assert c == (R if i % 5 < 3 else E)

    def test_level_out_of_range(self):
        with pytest.raises(IndexError):
            render(ComponentAssignment(3, (R,)), half_split_stack())

    def test_wrong_type_count(self):
        with pytest.raises(ValueError):
            render(ComponentAssignment(1, (R,)), half_split_stack())


class TestCoarsen:
    def test_uniform_grid(self):
        stack = half_split_stack()
        g = DesignGrid.filled(GridShape(), S)
        assert coarsen(g, stack.levels[1]).types == (S, S)

    def test_majority(self):
        g = grid("RRS")
        assert coarsen(g, Partition(1, (0, 0, 0))).types == (R,)

    def test_tie_breaks_to_lower_type(self):
        assert coarsen(grid("HSSH"), Partition(1, (0, 0, 0, 0))).types == (S,)
        assert coarsen(grid("VE"), Partition(1, (0, 0))).types == (E,)

    def test_render_then_coarsen_is_identity(self):
        stack = half_split_stack()
        rng = np.random.default_rng(0)
        for level, part in enumerate(stack.levels):
            for _ in range(20):
                types = tuple(ALL_TYPES[i] for i in rng.integers(0, 5, size=part.k))
                a = ComponentAssignment(level, types)
                assert coarsen(render(a, stack), part, level) == a


class TestValidate:
    def test_all_empty(self):
        r = validate(DesignGrid.filled(GridShape(), E))
        assert not r.valid and not r.has_actuator

    def test_single_actuator(self):
        cells = [E] * 25
        cells[12] = H
        assert validate(DesignGrid(GridShape(), tuple(cells))).valid

    def test_disconnected_corners(self):
        cells = [E] * 25
        cells[0] = cells[24] = H
        r = validate(DesignGrid(GridShape(), tuple(cells)))
        assert r.has_actuator and not r.connected and not r.valid

    def test_no_actuator(self):
        r = validate(DesignGrid.filled(GridShape(), R))
        assert r.connected and not r.has_actuator and not r.valid

    def test_diagonal_is_not_connected(self):
        assert not validate(grid("HE\nER")).connected

    def test_independent_of_component_labels(self):
        # the same grid rendered through relabeled partitions validates identically
        shape = GridShape(2, 2)
        a = PartitionStack(shape, (Partition(2, (0, 0, 1, 1)), Partition(4, (0, 1, 2, 3))))
        b = PartitionStack(shape, (Partition(2, (1, 1, 0, 0)), Partition(4, (0, 1, 2, 3))))
        ga = render(ComponentAssignment(0, (H, E)), a)
        gb = render(ComponentAssignment(0, (E, H)), b)
        assert ga == gb and validate(ga) == validate(gb)


class TestText:
    def test_serialize(self):
        assert serialize(DesignGrid.filled(GridShape(2, 2), S)) == "SS\nSS"

    def test_parse(self):
        g = parse("HV\nEE")
        assert g.shape == GridShape(2, 2) and g.cells == (H, V, E, E)

    def test_roundtrip_100_random(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            g = random_grid(GridShape(int(rng.integers(1, 7)), int(rng.integers(1, 7))), rng)
            assert parse(serialize(g)) == g

    def test_bad_character_position(self):
        with pytest.raises(ParseError) as err:
            parse("HV\nEX")
        assert (err.value.line, err.value.col) == (2, 2)

    def test_ragged_rows(self):
        with pytest.raises(ParseError) as err:
            parse("HVE\nEE")
        assert err.value.line == 2

    def test_json_form(self):
        g = parse("HV\nEE")
        assert g.to_json() == {"shape": [2, 2], "cells": "HVEE"}
        assert DesignGrid.from_json(g.to_json()) == g


class TestPartitionStack:
    def test_partition_must_cover_ids(self):
        with pytest.raises(ValueError):
            Partition(3, (0, 0, 1))

    def test_canonical_relabel(self):
        assert Partition(3, (2, 2, 0, 1)).canonical().assignment == (0, 0, 1, 2)

    def test_rejects_non_nested(self):
        shape = GridShape(1, 4)
        with pytest.raises(NestingError):
            PartitionStack(shape, (Partition(2, (0, 0, 1, 1)), Partition(3, (0, 1, 1, 2)), Partition(4, (0, 1, 2, 3))))

    def test_rejects_bad_level_order(self):
        shape = GridShape(1, 4)
        with pytest.raises(ValueError):
            PartitionStack(shape, (Partition(2, (0, 0, 1, 1)), Partition(2, (0, 1, 1, 1)), Partition(4, (0, 1, 2, 3))))
        with pytest.raises(ValueError):
            PartitionStack(shape, (Partition(1, (0, 0, 0, 0)), Partition(2, (0, 0, 1, 1))))

    def test_parent_map_and_refine(self):
        stack = half_split_stack()
        assert stack.subcomponents(0, 0) == [0, 1]
        fine = ComponentAssignment(1, (R, H)).refine(stack)
        assert render(fine, stack) == render(ComponentAssignment(1, (R, H)), stack)

    def test_json_roundtrip(self):
        stack = half_split_stack()
        assert PartitionStack.from_json(stack.to_json()) == stack


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from("ERSHV"), min_size=6, max_size=6))
def test_text_roundtrip_property(codes):
    text = "".join(codes[:3]) + "\n" + "".join(codes[3:])
    assert serialize(parse(text)) == text
