"""Exact integer linear algebra: Smith form, solves, chain complexes."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morselab.errors import BoundarySquareNonzero, MorselabError
from morselab.snf import (
    ChainComplexZ,
    HomologyGroup,
    SNFResult,
    smith_normal_form,
    solve_integer,
)
from morselab.snf import eye, matmul


@st.composite
def int_matrices(draw, max_dim=5, max_entry=9):
    r = draw(st.integers(1, max_dim))
    c = draw(st.integers(1, max_dim))
    rows = draw(
        st.lists(
            st.lists(st.integers(-max_entry, max_entry), min_size=c, max_size=c),
            min_size=r,
            max_size=r,
        )
    )
    return rows


@settings(max_examples=150, deadline=None)
@given(int_matrices())
def test_snf_factorization_properties(A):
    res = smith_normal_form(A)
    r, c = res.rows, res.cols
    # D = U A V, exactly
    assert matmul(matmul(res.U, A), res.V) == res.D
    # U, V are unimodular: integer inverses held exactly
    assert matmul(res.U, res.Uinv) == eye(r)
    assert matmul(res.Uinv, res.U) == eye(r)
    assert matmul(res.V, res.Vinv) == eye(c)
    assert matmul(res.Vinv, res.V) == eye(c)
    # diagonal: non-negative, chain divisibility, zeros trail
    d = res.diagonal()
    assert all(x >= 0 for x in d)
    for a, b in zip(d, d[1:]):
        if a == 0:
            assert b == 0
        else:
            assert b % a == 0
    assert res.rank == sum(1 for x in d if x)
    # off-diagonal of D vanishes
    for i in range(r):
        for j in range(c):
            if i != j:
                assert res.D[i][j] == 0


@settings(max_examples=100, deadline=None)
@given(int_matrices(max_dim=4), st.data())
def test_solve_integer_roundtrip(A, data):
    res = smith_normal_form(A)
    c = res.cols
    w = data.draw(st.lists(st.integers(-5, 5), min_size=c, max_size=c))
    y = [sum(A[i][j] * w[j] for j in range(c)) for i in range(res.rows)]
    w2 = solve_integer(res, y)
    y2 = [sum(A[i][j] * w2[j] for j in range(c)) for i in range(res.rows)]
    assert y2 == y


def test_solve_integer_failures():
    res = smith_normal_form([[2, 0], [0, 0]])
    with pytest.raises(MorselabError):
        solve_integer(res, [1, 0])  # 2w = 1 has no integer solution
    with pytest.raises(MorselabError):
        solve_integer(res, [0, 1])  # second equation is 0 = 1


def test_snf_known_diagonal():
    # classic example with nontrivial invariant factors
    A = [[2, 4, 4], [-6, 6, 12], [10, 4, 16]]
    res = smith_normal_form(A)
    assert res.diagonal() == [2, 2, 156]


def test_snf_empty_shapes():
    res = smith_normal_form([], shape=(0, 3))
    assert res.rows == 0 and res.cols == 3 and res.rank == 0
    assert res.V == eye(3)
    with pytest.raises(ValueError):
        smith_normal_form([[1, 2]], shape=(2, 2))


def test_homology_group_labels():
    assert HomologyGroup(0).label() == "0"
    assert HomologyGroup(1).label() == "Z"
    assert HomologyGroup(3).label() == "Z^3"
    assert HomologyGroup(1, (2, 4)).label() == "Z + Z/2 + Z/4"
    assert HomologyGroup(0, (2,)).label() == "Z/2"
    assert HomologyGroup(0).is_trivial()
    assert not HomologyGroup(0, (3,)).is_trivial()


def test_circle_complex():
    # one vertex, one edge glued to itself: boundary is zero
    cx = ChainComplexZ([1, 1], {})
    cx.check_boundary_square()
    assert [g.label() for g in cx.homology()] == ["Z", "Z"]


def test_torus_complex():
    # one vertex, two edges, one face; both boundaries vanish
    cx = ChainComplexZ([1, 2, 1], {1: [[0, 0]], 2: [[0], [0]]})
    cx.check_boundary_square()
    assert [g.label() for g in cx.homology()] == ["Z", "Z^2", "Z"]


def test_klein_bottle_style_torsion():
    # face boundary word a b a b^-1 abelianizes to 2a
    cx = ChainComplexZ([1, 2, 1], {1: [[0, 0]], 2: [[2], [0]]})
    cx.check_boundary_square()
    labels = [g.label() for g in cx.homology()]
    assert labels == ["Z", "Z + Z/2", "0"]
    data = cx.homology_data()[1]
    assert data.group.torsion == (2,)
    # class coordinates: edge a is the torsion generator, b the free one
    free, tors = cx.class_coordinates(1, [1, 0], data)
    assert tors == [1] and free == [0]
    free, tors = cx.class_coordinates(1, [2, 0], data)
    assert tors == [0] and free == [0]  # 2a bounds
    free, tors = cx.class_coordinates(1, [0, 1], data)
    assert tors == [0] and free in ([1], [-1])


def test_projective_plane_style():
    cx = ChainComplexZ([1, 1, 1], {1: [[0]], 2: [[2]]})
    assert [g.label() for g in cx.homology()] == ["Z", "Z/2", "0"]


def test_two_point_interval():
    # interval: two vertices, one edge
    cx = ChainComplexZ([2, 1], {1: [[-1], [1]]})
    cx.check_boundary_square()
    assert [g.label() for g in cx.homology()] == ["Z", "0"]


def test_boundary_square_check_raises():
    # d1 d2 = [[1]] != 0
    cx = ChainComplexZ([1, 1, 1], {1: [[1]], 2: [[1]]})
    with pytest.raises(BoundarySquareNonzero):
        cx.check_boundary_square()


def test_generators_are_cycles_and_span():
    cx = ChainComplexZ([1, 2, 1], {1: [[0, 0]], 2: [[2], [0]]})
    data = cx.homology_data()[1]
    gens = np.array(data.generators, dtype=np.int64)
    assert gens.shape == (2, 2)  # one torsion generator, one free generator
    d2 = np.array([[2], [0]], dtype=np.int64)
    # torsion generator times its divisor lies in the image of d2
    tcol = gens[:, 0] * data.diag[0]
    assert tcol[0] % 2 == 0 and tcol[1] == 0
    # generator classes have the expected coordinates
    free, tors = cx.class_coordinates(1, gens[:, 0].tolist(), data)
    assert tors == [1]
    free, tors = cx.class_coordinates(1, gens[:, 1].tolist(), data)
    assert free in ([1], [-1]) and tors == [0]
    assert d2.shape == (2, 1)


def test_wrong_shape_boundary_rejected():
    with pytest.raises(ValueError):
        ChainComplexZ([2, 2], {1: [[1, 0, 0], [0, 1, 0]]})


def test_nonzero_cycle_trivial_kernel_rejected():
    cx = ChainComplexZ([2, 1], {1: [[-1], [1]]})
    data = cx.homology_data()[1]  # edge kernel is trivial
    with pytest.raises(MorselabError):
        cx.class_coordinates(1, [1], data)
