import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fraclod.experiments.geometry import five_interfaces_2e7, gamma_vertical_half, rasterize
from fraclod.fracture import FractureError, FractureNetwork, load_fractures, save_fractures, trace_fracture
from fraclod.mesh import barycentric, unit_square_structured


def line_through_square(theta, offset):
    """Chord of the unit square on the line through (0.5,0.5)+offset*n with direction theta."""
    d = np.array([np.cos(theta), np.sin(theta)])
    c = np.array([0.5, 0.5]) + offset * np.array([-d[1], d[0]])
    ts = []
    for axis in (0, 1):
        if abs(d[axis]) > 1e-12:
            for wall in (0.0, 1.0):
                t = (wall - c[axis]) / d[axis]
                p = c + t * d
                if np.all(p >= -1e-12) and np.all(p <= 1 + 1e-12):
                    ts.append(t)
    t0, t1 = min(ts), max(ts)
    return np.clip(c + t0 * d, 0, 1), np.clip(c + t1 * d, 0, 1)


# ---------------------------------------------------------------- networks

def test_network_rejects_degenerate_segment():
    with pytest.raises(FractureError, match="degenerate"):
        FractureNetwork([np.array([[0.2, 0.2], [0.2, 0.2]])])


def test_network_rejects_crossing_without_shared_vertex():
    with pytest.raises(FractureError, match="intersect"):
        FractureNetwork([np.array([[0.0, 0.5], [1.0, 0.5]]), np.array([[0.5, 0.0], [0.5, 1.0]])])


def test_network_intersections_and_tips():
    J = [0.5, 0.5]
    net = FractureNetwork([np.array([[0.0, 0.5], J]), np.array([J, [1.0, 0.5]]), np.array([J, [0.5, 0.8]])])
    assert np.allclose(net.intersection_points, [J])
    assert np.allclose(net.tip_points, [[0.5, 0.8]])


def test_five_interface_topology():
    net = five_interfaces_2e7()
    assert len(net.polylines) == 5
    assert net.intersection_points.shape == (1, 2)
    assert net.tip_points.shape[0] >= 1
    counts = sum(np.any(np.linalg.norm(p - net.intersection_points[0], axis=1) < 1e-12) for p in net.polylines)
    assert counts == 3


@pytest.mark.parametrize("n,aligned", [(16, False), (32, False), (64, True), (128, True)])
def test_five_interface_alignment(n, aligned):
    assert trace_fracture(unit_square_structured(n), five_interfaces_2e7()).union_of_edges == aligned


def test_fracture_file_round_trip(tmp_path):
    net = five_interfaces_2e7()
    save_fractures(net, tmp_path / "n.frac")
    back = load_fractures(tmp_path / "n.frac")
    assert all(np.array_equal(a, b) for a, b in zip(net.polylines, back.polylines))


def test_fracture_file_truncated(tmp_path):
    p = tmp_path / "bad.frac"
    p.write_text("1\n3\n0 0\n1 1\n")
    with pytest.raises(FractureError):
        load_fractures(p)


# ---------------------------------------------------------------- rasterization

@given(st.integers(0, 64), st.integers(0, 64), st.integers(0, 64), st.integers(0, 64))
def test_rasterize_lattice_path(a, b, c, d):
    if (a, b) == (c, d):
        return
    pts = rasterize((a, b), (c, d))
    assert np.array_equal(pts[0], [a, b]) and np.array_equal(pts[-1], [c, d])
    steps = np.diff(pts, axis=0)
    g = np.gcd(np.abs(steps[:, 0]).astype(int), np.abs(steps[:, 1]).astype(int))
    unit = steps / g[:, None]
    allowed = {(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1)}
    assert all(tuple(u) in allowed for u in unit.astype(int))
    # the path never strays more than one lattice diagonal from the chord
    n = np.array([-(d - b), c - a], dtype=float)
    n /= np.linalg.norm(n)
    assert np.max(np.abs((pts - [a, b]) @ n)) <= np.sqrt(2) + 1e-12


def test_rasterized_path_edge_aligned():
    net = FractureNetwork([rasterize((3, 5), (60, 41)) / 64.0])
    tr = trace_fracture(unit_square_structured(64), net)
    assert tr.union_of_edges
    assert tr.total_length == pytest.approx(net.total_length, rel=1e-12)


# ---------------------------------------------------------------- traces

def test_vertical_half_aligned():
    tr = trace_fracture(unit_square_structured(2), gamma_vertical_half())
    assert tr.union_of_edges
    assert tr.total_length == pytest.approx(1.0, rel=1e-14)


def test_horizontal_03_not_aligned():
    m = unit_square_structured(2)
    tr = trace_fracture(m, FractureNetwork([np.array([[0.0, 0.3], [1.0, 0.3]])]))
    assert not tr.union_of_edges
    assert tr.total_length == pytest.approx(1.0, rel=1e-14)
    # oracle: triangles whose interior the line y=0.3 passes through
    y = m.corners[:, :, 1]
    expected = set(np.flatnonzero((y.min(axis=1) < 0.3) & (y.max(axis=1) > 0.3)))
    assert set(tr.tri) == expected
    assert np.bincount(tr.tri, minlength=m.nt)[sorted(expected)].tolist() == [1] * len(expected)


def test_trace_rejects_exit():
    with pytest.raises(FractureError):
        trace_fracture(unit_square_structured(4), FractureNetwork([np.array([[0.5, 0.5], [1.5, 0.5]])],
                                                                  bounds=(0.0, 2.0, 0.0, 1.0)))


@given(st.floats(0, np.pi), st.floats(-0.45, 0.45), st.sampled_from([3, 4, 7, 8]))
def test_trace_length_conservation(theta, offset, n):
    p, q = line_through_square(theta, offset)
    if np.linalg.norm(q - p) < 1e-6:
        return
    net = FractureNetwork([np.array([p, q])])
    m = unit_square_structured(n)
    tr = trace_fracture(m, net)
    assert tr.total_length == pytest.approx(net.total_length, rel=1e-10)
    for pts in (tr.a, tr.b):
        lam = barycentric(m.corners[tr.tri], pts)
        assert lam.min() >= -1e-12 and lam.max() <= 1 + 1e-12


def test_closed_pieces_include_neighbour_on_edge():
    m = unit_square_structured(2)
    tr = trace_fracture(m, gamma_vertical_half())
    for i in range(tr.n):
        assert i in tr.closed_pieces(tr.tri[i])
        if tr.nbr[i] >= 0:
            assert i in tr.closed_pieces(tr.nbr[i])
