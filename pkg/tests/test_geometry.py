import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zdlab.geometry import DegenerateProjection, Disk, HalfPlane, domain_from_dict

DISK = Disk((0.0, 0.0), 0.2)
HP = HalfPlane()


def test_contains_examples():
    assert DISK.contains((0.1, 0.1))
    assert DISK.contains((0.2, 0.0))
    assert not HP.contains((-0.01, 5.0))
    assert HP.contains((0.0, -3.0))


def test_contains_dimension_mismatch():
    with pytest.raises(ValueError):
        DISK.contains((0.1, 0.1, 0.0))


@pytest.mark.parametrize(
    "domain, x, expected",
    [
        (DISK, (0.3, 0.0), (0.2, 0.0)),
        (HP, (-0.1, 0.3), (0.0, 0.3)),
        (DISK, (0.3, 0.4), (0.12, 0.16)),
    ],
)
def test_project_boundary_examples(domain, x, expected):
    np.testing.assert_allclose(domain.project_boundary(x), expected, rtol=0, atol=1e-15)


def test_projection_of_center_is_degenerate():
    with pytest.raises(DegenerateProjection, match="degenerate projection"):
        DISK.project_boundary((0.0, 0.0))
    with pytest.raises(DegenerateProjection):
        Disk((0.3, -0.1), 1.0).project_boundary((0.3, -0.1))


@pytest.mark.parametrize(
    "domain, b, n",
    [
        (HP, (0.0, 7.0), (-1.0, 0.0)),
        (DISK, (0.2, 0.0), (1.0, 0.0)),
        (DISK, (0.0, -0.2), (0.0, -1.0)),
    ],
)
def test_outward_normal_examples(domain, b, n):
    np.testing.assert_array_equal(domain.outward_normal(b), n)


def test_outward_normal_rejects_interior_point():
    with pytest.raises(ValueError, match="not on the boundary"):
        DISK.outward_normal((0.1, 0.0))
    with pytest.raises(ValueError):
        HP.outward_normal((0.5, 0.0))


@pytest.mark.parametrize(
    "domain, x, expected",
    [
        (HP, (-0.1, 0.3), (0.1, 0.3)),
        (DISK, (0.15, 0.0), (0.15, 0.0)),
        (DISK, (0.25, 0.0), (0.15, 0.0)),
    ],
)
def test_reflect_examples(domain, x, expected):
    np.testing.assert_allclose(domain.reflect(x), expected, rtol=0, atol=1e-15)


def test_reflect_fourth_mirror_lands_inside():
    # each mirror image lowers |x| by 2r: 1.5, 1.1, 0.7, 0.3, 0.1
    np.testing.assert_allclose(DISK.reflect((0.9, 1.2)), (-0.06, -0.08), atol=1e-15)


def test_reflect_falls_back_to_projection():
    # |x| = 2.0: after four mirrors |x| = 0.4, still outside
    x = np.array([1.2, 1.6])
    out = DISK.reflect(x)
    assert DISK.contains(out)
    np.testing.assert_allclose(out, DISK.project_boundary(x), atol=1e-15)


def test_reflect_second_mirror_lands_inside():
    # |x| = 0.65: first image at (-0.25, 0), outside; mirroring that gives (-0.15, 0)
    x = np.array([0.65, 0.0])
    np.testing.assert_allclose(DISK.reflect(x), (-0.15, 0.0), atol=1e-15)


def test_clamp():
    np.testing.assert_array_equal(HP.clamp((-0.04, 0.0)), (0.0, 0.0))
    np.testing.assert_array_equal(DISK.clamp((0.05, 0.05)), (0.05, 0.05))


def test_disk_radius_must_be_positive():
    with pytest.raises(ValueError):
        Disk((0.0, 0.0), 0.0)


def test_domain_dict_round_trip():
    for dom in (HP, DISK, Disk((1.0, 2.0), 3.0), HalfPlane(offset=0.5, axis=1)):
        assert domain_from_dict(dom.to_dict()) == dom
    assert domain_from_dict({"kind": "disk", "center": [0, 0], "radius": 0.2}) == DISK
    assert domain_from_dict("half_plane") == HP
    with pytest.raises(ValueError):
        domain_from_dict({"kind": "disk", "radius": 0.2, "color": "red"})
    with pytest.raises(ValueError):
        domain_from_dict({"kind": "square"})


def test_contains_box():
    assert HP.contains_box((0.0, -0.125), (0.25, 0.125))
    assert DISK.contains_box((-0.05, 0.0), (0.05, 0.1))
    assert not DISK.contains_box((0.0, 0.0), (0.2, 0.2))
    assert not HP.contains_box((-0.1, 0.0), (0.1, 0.1))


coord = st.floats(-2.0, 2.0, allow_nan=False)
points = st.tuples(coord, coord)


def _boundary_samples(domain, rng, n=1000):
    if isinstance(domain, Disk):
        th = rng.uniform(0, 2 * math.pi, n)
        return np.column_stack([domain.radius * np.cos(th), domain.radius * np.sin(th)])
    return np.column_stack([np.zeros(n), rng.uniform(-5, 5, n)])


@pytest.mark.parametrize("domain", [HP, DISK], ids=["half_plane", "disk"])
def test_projection_optimality(domain):
    rng = np.random.default_rng(1)
    zs = _boundary_samples(domain, rng)
    checked = 0
    while checked < 200:
        x = rng.uniform(-1, 1, 2)
        if domain.contains(x):
            continue
        d = np.linalg.norm(x - domain.project_boundary(x))
        assert np.all(d <= np.linalg.norm(zs - x, axis=1) + 1e-12)
        checked += 1


@settings(max_examples=300, deadline=None)
@given(points)
def test_reflect_identity_on_domain_and_always_inside(x):
    for domain in (HP, DISK):
        out = domain.reflect(x)
        if domain.contains(x):
            assert tuple(out) == x
        assert domain.contains(out)


@settings(max_examples=300, deadline=None)
@given(points)
def test_projection_lands_in_domain(x):
    assume_ok = not (x[0] == 0.0 and x[1] == 0.0)
    for domain in (HP, DISK):
        if domain is DISK and not assume_ok:
            continue
        p = domain.project_boundary(x)
        assert domain.contains(p)
        assert domain.distance_to_boundary(p) <= domain.tol_bdry


@settings(max_examples=300, deadline=None)
@given(st.floats(-1.0, -1e-9), coord)
def test_half_plane_mirror_isometry(x1, x2):
    x = np.array([x1, x2])
    px = HP.project_boundary(x)
    assert abs(np.linalg.norm(HP.reflect(x) - px) - np.linalg.norm(x - px)) <= 1e-12


def test_convexity_inequality():
    rng = np.random.default_rng(2)
    for domain in (HP, DISK):
        for _ in range(2000):
            b = _boundary_samples(domain, rng, 1)[0]
            if isinstance(domain, Disk):
                y = rng.uniform(-0.2, 0.2, 2)
                if not domain.contains(y):
                    continue
            else:
                y = np.array([rng.uniform(0, 5), rng.uniform(-5, 5)])
            assert np.dot(b - y, domain.outward_normal(b)) >= -1e-12


@pytest.mark.parametrize("x, expected", [((0.0, 1e-300), (0.0, 0.2)), ((3e200, -4e200), (0.12, -0.16))])
def test_projection_extreme_offsets(x, expected):
    np.testing.assert_allclose(DISK.project_boundary(x), expected, rtol=0, atol=1e-15)
