import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from carnotlab.carnot_group import euclidean, free_carnot, heisenberg
from carnotlab.errors import ConfigError, DomainError, UnsupportedError
from carnotlab.negligibility_lab import (
    GridSet,
    WordSet,
    class_U_check,
    line_measure,
    line_measures,
    max_line_measure,
    null_decompose,
    positive_line_oracle,
    positive_line_subset,
    rasterize,
    theta_sensitivity,
)

from oracles import scalar_line_count

H = heisenberg()
E1, E2 = euclidean(1), euclidean(2)


def random_grid(group, res):
    return st.lists(st.booleans(), min_size=res**group.dim, max_size=res**group.dim).map(
        lambda bits: GridSet(group, ((-1.0, 1.0),) * group.dim, res,
                             np.array(bits, dtype=bool).reshape((res,) * group.dim)))


def test_line_measure_examples():
    empty = GridSet.empty(E2, 16)
    assert line_measure(empty, [0, 0], 0) == 0
    full = rasterize(E1, "full", 20)
    assert line_measure(full, [0.0], 0) == pytest.approx(2.0, abs=full.widths[0])
    slab = rasterize(H, "slab", 24, half_width=0.5)
    assert line_measure(slab, [0, 0, 0], 0) == pytest.approx(1.0, abs=2 * slab.widths[0])


def test_flow_outside_box_is_zero():
    full = rasterize(E2, "full", 8)
    assert line_measure(full, [0.0, 5.0], 0) == 0.0
    assert line_measure(full, [0.0, 5.0], 0, extent=10.0) == 0.0


def test_line_measure_direction_bounds():
    with pytest.raises(DomainError):
        line_measure(rasterize(H, "full", 4), [0, 0, 0], 2)


def test_supported_groups():
    with pytest.raises(UnsupportedError):
        GridSet.empty(free_carnot(2, 3), 4)
    with pytest.raises(UnsupportedError):
        GridSet.empty(euclidean(4), 4)


@given(random_grid(E2, 6), st.integers(0, 1))
def test_vectorised_matches_scalar_loop_e2(A, i):
    pts = A.all_centers()
    fast = line_measures(A, pts, i)
    for p, v in zip(pts, fast):
        assert v == pytest.approx(scalar_line_count(A.cells, A.bounds, A.resolution, p, i, False), abs=1e-12)


@given(random_grid(H, 4), st.integers(0, 1))
def test_vectorised_matches_scalar_loop_heisenberg(A, i):
    pts = A.all_centers()
    fast = line_measures(A, pts, i)
    for p, v in zip(pts, fast):
        assert v == pytest.approx(scalar_line_count(A.cells, A.bounds, A.resolution, p, i, True), abs=1e-12)


@given(random_grid(E2, 8), st.integers(0, 1), st.sampled_from([0.1, 0.3, 0.6]))
def test_positive_subset_matches_cell_oracle(A, i, theta):
    assert np.array_equal(positive_line_subset(A, i, theta).cells, positive_line_oracle(A, i, theta))


@given(random_grid(E2, 8), st.lists(st.integers(0, 1), min_size=1, max_size=5))
def test_word_sets_monotone(A, word):
    current = WordSet(A, (), A.cells)
    for i in word:
        nxt = positive_line_subset(current, i, 0.3)
        assert not (nxt.cells & ~current.cells).any()
        assert nxt.word == current.word + (i + 1,)
        current = nxt


@given(random_grid(E2, 8), st.integers(1, 3))
def test_decomposition_partitions(A, rounds):
    dec = null_decompose(A, 0.3, rounds)
    parts = [p.cells for p in dec.pieces] + [dec.residual.cells]
    union = np.zeros_like(A.cells)
    for k, a in enumerate(parts):
        for b in parts[k + 1:]:
            assert not (a & b).any()
        union |= a
    assert np.array_equal(union, A.cells)


def test_positive_subset_trivial_cases():
    empty = GridSet.empty(E2, 8)
    assert positive_line_subset(empty, 0, 0.3).count == 0
    full = rasterize(E2, "full", 8)
    assert positive_line_subset(full, 1, 0.3).count == full.count
    with pytest.raises(DomainError):
        positive_line_subset(full, 0, 0.0)


def test_heisenberg_surface_against_oracle():
    plane = rasterize(H, "plane", 16)
    theta = 3 * plane.widths.max()
    for i in (0, 1):
        fast = positive_line_subset(plane, i, theta).cells
        assert np.array_equal(fast, positive_line_oracle(plane, i, theta))
        assert fast.sum() > 0


def test_null_decompose_examples():
    dec = null_decompose(GridSet.empty(E2, 16))
    assert dec.residual_empty and all(p.count == 0 for p in dec.pieces)
    # a horizontal slab one cell thick: lines along direction 1 stay inside it
    A = GridSet.empty(E2, 32)
    cells = A.cells.copy()
    cells[:, 16] = True
    A = A.like(cells)
    dec = null_decompose(A, m_rounds=1)
    assert dec.pieces[0].count == 0
    assert np.array_equal(dec.pieces[1].cells, A.cells)
    assert dec.residual_empty
    full = rasterize(E2, "full", 16)
    dec = null_decompose(full)
    assert not dec.residual_empty
    assert np.array_equal(dec.residual.cells, full.cells)
    assert dec.stabilized_round == 0


def test_class_U_examples():
    assert class_U_check(GridSet.empty(H, 8)).in_class
    point = rasterize(H, "point", 12)
    assert point.count == 1 and class_U_check(point).in_class
    assert not class_U_check(rasterize(H, "full", 8)).in_class
    with pytest.raises(DomainError):
        class_U_check(point, generators=[2])


@pytest.mark.parametrize("shape", ["line", "circle"])
def test_hypersurfaces_in_plane(shape):
    A = rasterize(E2, shape, 64)
    v = class_U_check(A)
    assert v.in_class
    assert all(m <= v.decomposition.theta for m in v.max_piece_measures)


def test_sphere_in_space():
    A = rasterize(euclidean(3), "sphere", 64)
    assert class_U_check(A).decomposition.residual_empty


def test_max_line_measure():
    full = rasterize(E2, "full", 10)
    assert max_line_measure(full, 0) == pytest.approx(2.0)
    assert max_line_measure(GridSet.empty(E2, 10), 1) == 0.0


def test_theta_sensitivity_rows():
    rows = theta_sensitivity(rasterize(E2, "circle", 32), (1, 3))
    assert [r["theta_cells"] for r in rows] == [1, 3]
    assert rows[1]["residual_cells"] == 0


def test_io_roundtrip(tmp_path):
    A = rasterize(H, "dust", 16, seed=3, density=0.6)
    B = GridSet.from_bytes(A.to_bytes())
    assert np.array_equal(A.cells, B.cells) and B.bounds == A.bounds and B.group.label == "heisenberg"
    C = GridSet.from_json(A.to_json())
    assert np.array_equal(A.cells, C.cells)
    with pytest.raises(ConfigError):
        GridSet.from_bytes(b"nonsense")


def test_rasterize_shapes():
    assert rasterize(E2, "empty", 8).count == 0
    assert rasterize(E2, "full", 8).count == 64
    dust = rasterize(E2, "dust", 32, seed=1, density=0.5)
    assert 0 < dust.count < 32 * 32
    assert np.array_equal(dust.cells, rasterize(E2, "dust", 32, seed=1, density=0.5).cells)
    with pytest.raises(ConfigError):
        rasterize(E2, "torus", 8)


def test_grid_set_validation():
    with pytest.raises(DomainError):
        GridSet(E2, ((-1, 1),), 4, np.zeros((4, 4), bool))
    with pytest.raises(DomainError):
        GridSet(E2, ((-1, 1), (-1, 1)), 4, np.zeros((4, 5), bool))
    A = rasterize(E2, "full", 4, bounds=((0, 2), (0, 1)))
    assert A.cell_volume == pytest.approx(0.5 * 0.25)
