"""Cubical masks and their homology: spaces, pairs, filtrations, file io."""

import os

import numpy as np
import pytest

from morselab.errors import ConfigError, InvalidState
from morselab.homology import (
    Grid,
    Mask,
    _Complex,
    compare_with_morse,
    openness_report,
    rasterize,
    relative_homology,
    triple_boundary,
)
from morselab.snf import ChainComplexZ


def labels(res):
    return [g.label() for g in res.groups]


@pytest.fixture(scope="module")
def g2():
    return Grid(((-2, 2), (-2, 2)), (40, 40))


@pytest.fixture(scope="module")
def rr(g2):
    pts = g2.centers()
    return (pts**2).sum(axis=1).reshape(g2.shape)


@pytest.fixture(scope="module")
def g3():
    return Grid(((-2, 2),) * 3, (24, 24, 24))


@pytest.fixture(scope="module")
def r3(g3):
    p3 = g3.centers()
    return (p3**2).sum(axis=1).reshape(g3.shape)


@pytest.mark.parametrize("shape", [(17,), (9, 7), (5, 4, 6)])
def test_boundary_square_zero_and_reduction_invariance(shape):
    rng = np.random.default_rng(5)
    box = tuple((0.0, float(n)) for n in shape)
    g = Grid(box, shape)
    for _ in range(3):
        m = Mask(g, rng.random(shape) < 0.45)
        cx = _Complex(g, m, None)
        dims, bnds, _ = cx.core_matrices(10**9)
        ChainComplexZ(dims, bnds).check_boundary_square()
        cx2 = _Complex(g, m, None)
        cx2.reduce()
        dims2, bnds2, _ = cx2.core_matrices(10**9)
        ChainComplexZ(dims2, bnds2).check_boundary_square()
        # reduction preserves homology; pumped components re-enter H_0
        h1 = ChainComplexZ(dims, bnds).homology()
        h2 = ChainComplexZ(dims2, bnds2).homology()
        b1 = [grp.betti for grp in h1]
        b2 = [grp.betti for grp in h2]
        b2[0] += len(cx2.pumped)
        assert b1 == b2
        assert all(p.torsion == q.torsion for p, q in zip(h1, h2))


def test_disk_contractible(g2, rr):
    assert labels(relative_homology(Mask(g2, rr < 2.2))) == ["Z", "0", "0"]


def test_annulus_circle(g2, rr):
    res = relative_homology(Mask(g2, (rr < 3.0) & (rr > 0.7)))
    assert labels(res) == ["Z", "Z", "0"]


def test_two_blobs(g2):
    pts = g2.centers()
    cells = ((pts[:, 0] - 1) ** 2 + pts[:, 1] ** 2 < 0.5).reshape(g2.shape) | (
        (pts[:, 0] + 1) ** 2 + pts[:, 1] ** 2 < 0.5
    ).reshape(g2.shape)
    two = Mask(g2, cells)
    assert labels(relative_homology(two)) == ["Z^2", "0", "0"]
    assert two.n_components() == 2


def test_3d_ball_shell_ring(g3, r3):
    assert labels(relative_homology(Mask(g3, r3 < 2.5))) == ["Z", "0", "0", "0"]
    shell = Mask(g3, (r3 < 2.9) & (r3 > 1.1))
    assert labels(relative_homology(shell)) == ["Z", "0", "Z", "0"]
    p3 = g3.centers()
    ring = Mask(
        g3,
        ((np.sqrt(p3[:, 0] ** 2 + p3[:, 1] ** 2) - 1.2) ** 2 + p3[:, 2] ** 2 < 0.25).reshape(
            g3.shape
        ),
    )
    assert labels(relative_homology(ring)) == ["Z", "Z", "0", "0"]


def test_relative_ball_mod_sphere_1d():
    g1 = Grid(((-2.0, 2.0),), (64,))
    x1 = g1.centers()[:, 0]
    A = Mask(g1, np.abs(x1) < 1.5)
    B = Mask(g1, (np.abs(x1) < 1.5) & (np.abs(x1) > 1.2))
    assert labels(relative_homology(A, B)) == ["0", "Z"]


def test_relative_ball_mod_sphere_2d(g2, rr):
    A = Mask(g2, rr < 2.6)
    B = Mask(g2, (rr < 2.6) & (rr > 1.9))
    assert labels(relative_homology(A, B)) == ["0", "0", "Z"]


def test_relative_ball_mod_sphere_3d(g3, r3):
    A = Mask(g3, r3 < 2.6)
    B = Mask(g3, (r3 < 2.6) & (r3 > 1.9))
    assert labels(relative_homology(A, B)) == ["0", "0", "0", "Z"]


def test_generators_lift_to_cycles(g2, rr):
    res = relative_homology(Mask(g2, (rr < 3.0) & (rr > 0.7)))
    gen = res.generators(1)
    assert len(gen) == 1
    assert res.boundary_chain(1, gen[0]) == {}
    free, tor = res.class_coords(1, gen[0])
    assert free == [1] and tor == []
    twice = {k: 2 * v for k, v in gen[0].items()}
    assert res.class_coords(1, twice)[0] == [2]


def test_1d_filtration_connecting_map():
    gf = Grid(((-2.0, 2.0),), (160,))
    xf = gf.centers()[:, 0]
    f = (xf**2 - 1.0) ** 2
    r0 = relative_homology(Mask(gf, f < 0.5))
    r10 = relative_homology(Mask(gf, f < 1.5), Mask(gf, f < 0.5))
    assert labels(r0) == ["Z^2", "0"]
    assert labels(r10) == ["0", "Z"]
    D1 = triple_boundary(r10, r0, 1)
    assert sorted(D1.ravel().tolist()) == [-1, 1]
    rep = compare_with_morse(
        [r0, r10],
        {1: np.array([[1], [-1]], dtype=np.int64)},
        [2, 1],
    )
    assert rep["connecting"][1] in ([[1], [-1]], [[-1], [1]])
    # one signed relabeling per degree aligns connecting and boundary maps
    assert set(rep["signs"]) == {0, 1}
    assert all(s in (-1, 1) for per_deg in rep["signs"].values() for s in per_deg)


def test_mask_roundtrip(tmp_path, g2, rr):
    annulus = Mask(g2, (rr < 3.0) & (rr > 0.7))
    path = os.path.join(tmp_path, "m.cubmask")
    annulus.save(path)
    back = Mask.load(path)
    assert back.grid == annulus.grid
    assert np.array_equal(back.cells, annulus.cells)


def test_mask_file_format_bytes(tmp_path):
    # tiny fixed mask pins the on-disk layout: ascii header, packed bit rows
    g = Grid(((0.0, 1.0), (0.0, 1.0)), (2, 10))
    cells = np.zeros((2, 10), dtype=bool)
    cells[0, 0] = cells[0, 9] = cells[1, 3] = True
    path = os.path.join(tmp_path, "t.cubmask")
    Mask(g, cells).save(path)
    blob = open(path, "rb").read()
    head, payload = blob.split(b"data\n", 1)
    lines = head.decode("ascii").splitlines()
    assert lines[0] == "cubmask 1"
    assert lines[1] == "dims 2"
    assert lines[2] == "shape 2 10"
    assert lines[3].startswith("box ") and "0x1.0000000000000p+0" in lines[3]
    assert lines[4].startswith("h ")
    # rows pad to 2 bytes each: 10000000 01000000 / 00010000 00000000
    assert payload == bytes([0b10000000, 0b01000000, 0b00010000, 0b00000000])


def test_mask_load_rejects_garbage(tmp_path):
    path = os.path.join(tmp_path, "bad.cubmask")
    with open(path, "wb") as fh:
        fh.write(b"not a mask at all\n")
    with pytest.raises(ConfigError):
        Mask.load(path)
    with open(path, "wb") as fh:
        fh.write(b"cubmask 2\ndims 1\nshape 4\ndata\n\x00")
    with pytest.raises(ConfigError):
        Mask.load(path)


def test_component_containing(g2):
    pts = g2.centers()
    cells = ((pts[:, 0] - 1) ** 2 + pts[:, 1] ** 2 < 0.5).reshape(g2.shape) | (
        (pts[:, 0] + 1) ** 2 + pts[:, 1] ** 2 < 0.5
    ).reshape(g2.shape)
    two = Mask(g2, cells)
    comp = two.component_containing((1.0, 0.0))
    assert comp.count() < two.count()
    assert comp.n_components() == 1
    with pytest.raises(InvalidState):
        two.component_containing((0.0, 0.0))


def test_rasterize_tristate_and_openness(g2):
    def pred(P):
        out = np.zeros(P.shape[0], dtype=np.int8)
        out[(P**2).sum(axis=1) < 1.0] = 1
        out[P[:, 0] > 1.9] = -1
        return out

    rep = rasterize(g2, pred)
    assert rep.mask.count() > 0
    assert rep.n_errors == 40  # rightmost column of the 40x40 grid
    oq = openness_report(rep)
    assert 0 < oq["rim_share"] < 0.5
