import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from shapes import box, capsule, humanoid, humanoid_set, uv_sphere


def enclosed_volume(mesh):
    """Signed volume; positive when every triangle faces outward."""
    tri = mesh.vertices[mesh.triangles]
    return float(np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0)


@pytest.mark.unit
class TestPrimitives:
    """Test suite for the procedural primitives"""

    def test_box(self):
        """Test box topology, orientation and volume"""
        mesh = box(size=(1.0, 2.0, 3.0))
        assert len(mesh.vertices) == 8
        assert mesh.triangle_count == 12
        assert mesh.is_watertight
        assert enclosed_volume(mesh) == pytest.approx(6.0)

    def test_sphere(self):
        """Test that sphere vertices lie on the sphere and faces point outward"""
        mesh = uv_sphere(0.3, center=(1.0, 0.0, 2.0), segments=24, rings=12)
        np.testing.assert_allclose(np.linalg.norm(mesh.vertices - [1.0, 0.0, 2.0], axis=1), 0.3, atol=1e-12)
        assert mesh.is_watertight
        exact = 4.0 / 3.0 * np.pi * 0.3 ** 3
        assert 0.9 * exact < enclosed_volume(mesh.translated([-1.0, 0.0, -2.0])) < exact
        np.testing.assert_allclose(mesh.centroid, [1.0, 0.0, 2.0], atol=1e-12)

    def test_sphere_poles_on_z_axis(self):
        """Test that the poles are the extreme vertices along z"""
        mesh = uv_sphere(1.0)
        lo, hi = mesh.bounds
        assert lo[2] == pytest.approx(-1.0)
        assert hi[2] == pytest.approx(1.0)
        assert np.sum(np.all(np.isclose(mesh.vertices, [0, 0, -1.0]), axis=1)) == 1

    def test_capsule(self):
        """Test capsule extent along an arbitrary axis"""
        p0, p1 = np.array([0.0, 1.0, 0.0]), np.array([0.3, 0.6, 0.1])
        mesh = capsule(p0, p1, 0.05)
        assert mesh.is_watertight
        axis = (p1 - p0) / np.linalg.norm(p1 - p0)
        along = (mesh.vertices - p0) @ axis
        assert along.min() == pytest.approx(-0.05)
        assert along.max() == pytest.approx(np.linalg.norm(p1 - p0) + 0.05)
        radial = np.linalg.norm((mesh.vertices - p0) - along[:, None] * axis, axis=1)
        assert radial.max() == pytest.approx(0.05)
        assert enclosed_volume(mesh.translated(-p0)) > 0

    def test_capsule_needs_length(self):
        """Test that a capsule with coincident end points is refused"""
        with pytest.raises(ValueError):
            capsule((0, 0, 0), (0, 0, 0), 0.1)


@pytest.mark.unit
class TestHumanoids:
    """Test suite for the bundled articulated meshes"""

    def test_size_and_closure(self):
        """Test that a humanoid is a closed human-sized surface"""
        mesh = humanoid(0)
        lo, hi = mesh.bounds
        assert 1.7 < hi[1] - lo[1] < 1.9
        assert lo[1] >= 0.0
        assert mesh.is_watertight

    def test_seed_determinism(self):
        """Test that the same seed produces the same pose"""
        np.testing.assert_array_equal(humanoid(5).vertices, humanoid(5).vertices)
        assert not np.array_equal(humanoid(5).vertices, humanoid(6).vertices)

    def test_set_alternates_forward_arm(self):
        """Test that every second mesh reaches in front of the torso"""
        meshes = humanoid_set(10, seed=0)
        assert len(meshes) == 10
        front = [float(m.bounds[0][2]) for m in meshes]
        for index, z in enumerate(front):
            if index % 2:
                assert z < -0.4
            else:
                assert z > -0.25
