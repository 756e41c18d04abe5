import numpy as np
import pytest

from masscons.errors import ConfigurationError, DomainError
from masscons.geometry import BoxDomain, FaceLabel, Topography, classify, grid_centers

BOX = BoxDomain(-2, 2, -2, 2, 0, 2)


def hill():
    def height(x, y):
        return 0.5 * np.exp(-(np.asarray(x) ** 2 + np.asarray(y) ** 2))

    def grad(x, y):
        bump = 0.5 * np.exp(-(np.asarray(x) ** 2 + np.asarray(y) ** 2))
        return np.stack([-2.0 * np.asarray(x) * bump, -2.0 * np.asarray(y) * bump], axis=-1)

    return Topography(height=height, grad=grad)


def test_box_validation():
    with pytest.raises(ConfigurationError):
        BoxDomain(1, 1, 0, 1, 0, 1)
    with pytest.raises(ConfigurationError):
        BoxDomain(0, 1, 0, 1, 2, -2)


@pytest.mark.parametrize("n,interior", [(3, 1), (5, 27), (8, 216)])
def test_grid_counts(n, interior):
    nodes = grid_centers(BOX, n)
    assert len(nodes) == n**3
    assert len(nodes.interior) == interior
    assert len(nodes.interior) + len(nodes.boundary) == n**3


def test_grid_rejects_small_n():
    with pytest.raises(ConfigurationError):
        grid_centers(BOX, 1)


def test_grid_ordering_z_major():
    nodes = grid_centers(BOX, 3)
    np.testing.assert_array_equal(nodes.points[0], [-2, -2, 0])
    np.testing.assert_array_equal(nodes.points[1], [0, -2, 0])  # x fastest
    np.testing.assert_array_equal(nodes.points[3], [-2, 0, 0])  # then y
    np.testing.assert_array_equal(nodes.points[9], [-2, -2, 1])  # then z


def test_grid_deterministic():
    a = grid_centers(BOX, 5)
    b = grid_centers(BOX, 5)
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.labels, b.labels)
    assert np.array_equal(a.normals, b.normals, equal_nan=True)


def test_classify_examples():
    label, normal = classify(np.array([0.0, 0.0, 0.0]), BOX)
    assert label is FaceLabel.BOTTOM
    np.testing.assert_array_equal(normal, [0, 0, -1])

    label, normal = classify(np.array([2.0, 0.0, 1.0]), BOX)
    assert label is FaceLabel.XMAX
    np.testing.assert_array_equal(normal, [1, 0, 0])

    # corner resolves to the top face under the fixed priority
    label, normal = classify(np.array([2.0, 2.0, 2.0]), BOX)
    assert label is FaceLabel.TOP
    np.testing.assert_array_equal(normal, [0, 0, 1])

    label, normal = classify(np.array([0.3, -0.7, 1.1]), BOX)
    assert label is FaceLabel.INTERIOR
    assert normal is None


def test_classify_outside_raises():
    with pytest.raises(DomainError):
        classify(np.array([0.0, 0.0, -0.1]), BOX)
    with pytest.raises(DomainError):
        classify(np.array([2.5, 0.0, 1.0]), BOX)
    # below the terrain but inside the box
    with pytest.raises(DomainError):
        classify(np.array([0.0, 0.0, 0.1]), BOX, topo=hill())


def test_normals_point_outward():
    for topo in (None, hill()):
        nodes = grid_centers(BOX, 6, topo=topo)
        step = 1e-6 * BOX.diameter()
        for i in nodes.boundary:
            outside = nodes.points[i] + step * nodes.normals[i]
            with pytest.raises(DomainError):
                classify(outside, BOX, topo=topo)
        norms = np.linalg.norm(nodes.normals[nodes.boundary], axis=1)
        assert np.abs(norms - 1).max() <= 1e-12
        assert np.all(np.isnan(nodes.normals[nodes.interior]))


def test_terrain_following_grid():
    topo = hill()
    nodes = grid_centers(BOX, 5, topo=topo)
    assert len(nodes) == 125
    bottom = nodes.points[nodes.labels == FaceLabel.BOTTOM]
    np.testing.assert_allclose(
        bottom[:, 2], topo.height(bottom[:, 0], bottom[:, 1]), rtol=0, atol=1e-14
    )
    # terrain normal is the exact surface normal (dzb/dx, dzb/dy, -1), normalized
    i = nodes.boundary[0]
    assert nodes.labels[i] == FaceLabel.BOTTOM
    x, y = nodes.points[i, 0], nodes.points[i, 1]
    g = topo.grad(x, y)
    expected = np.array([g[0], g[1], -1.0])
    expected /= np.linalg.norm(expected)
    np.testing.assert_allclose(nodes.normals[i], expected, rtol=0, atol=1e-12)
    # interior count is preserved by the vertical stretch
    assert len(nodes.interior) == 27


def test_terrain_must_stay_below_top():
    tall = Topography(height=lambda x, y: np.full(np.shape(x), 2.5))
    with pytest.raises(DomainError):
        grid_centers(BOX, 4, topo=tall)
