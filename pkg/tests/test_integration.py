#!/usr/bin/env python3
"""
Integration tests for the mould pipeline
Encode a placed mesh, save and reload the pair, decode it and score it
"""

import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from config import CameraConfig
from geometry import HIDDEN, VISIBLE, Camera
from mesh_io import read_point_cloud_ply, write_point_cloud_ply
from metrics import chamfer, depth_accuracy, point_errors, sample_surface
from mould import MouldPair, decode, encode
from shapes import humanoid


def rotation_y(degrees):
    angle = np.radians(degrees)
    c, s = np.cos(angle), np.sin(angle)
    pose = np.eye(4)
    pose[:3, :3] = [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
    return pose


@pytest.mark.integration
class TestMouldPipeline:
    """Test suite for the full encode, persist, decode and evaluate cycle"""

    def setup_method(self):
        """Set up a humanoid in front of the default camera"""
        self.temp_dir = Path(tempfile.mkdtemp())
        self.config = CameraConfig()
        self.mesh = self.config.place(humanoid(0))

    def teardown_method(self):
        """Clean up after each test"""
        if self.temp_dir.exists():
            shutil.rmtree(self.temp_dir)

    def test_encode_save_load_decode(self):
        """Test that a reloaded pair decodes to the same cloud as the original"""
        pair = encode(self.mesh, self.config.camera(), 1.5, 64, workers=2)
        assert pair.check_invariants() == []
        pair.save(self.temp_dir / "subject")
        loaded = MouldPair.load(self.temp_dir / "subject")

        original, reloaded = decode(pair), decode(loaded)
        assert len(original) == len(reloaded) == 2 * int(pair.foreground.sum())
        # PFM stores float32 depths.
        np.testing.assert_allclose(reloaded.points, original.points, atol=1e-5)
        np.testing.assert_array_equal(reloaded.provenance, original.provenance)

        cloud_path = self.temp_dir / "subject.ply"
        write_point_cloud_ply(cloud_path, reloaded)
        from_disk = read_point_cloud_ply(cloud_path)
        assert int(np.sum(from_disk.provenance == VISIBLE)) == int(np.sum(from_disk.provenance == HIDDEN))
        np.testing.assert_allclose(from_disk.points, reloaded.points, atol=1e-5)

    def test_decoded_points_lie_on_surface(self):
        """Test that decoded points are close to the surface they were cast against"""
        pair = encode(self.mesh, self.config.camera(), 1.5, 64)
        cloud = decode(pair)
        truth = sample_surface(self.mesh, 60000, seed=0)
        assert np.median(point_errors(cloud.points, truth.points)) < 0.01
        assert chamfer(cloud, truth) < 0.05

    def test_self_evaluation(self):
        """Test that a reloaded pair scores 100% against the original"""
        pair = encode(self.mesh, self.config.camera(), 1.5, 32)
        pair.save(self.temp_dir / "gt")
        accuracy = depth_accuracy(pair, MouldPair.load(self.temp_dir / "gt"), 0.03)
        assert accuracy.to_dict() == {"overall": 100.0, "visible": 100.0, "hidden": 100.0}

    def test_rotated_camera_matches_moved_subject(self):
        """Test that moving camera and subject together leaves the pair unchanged"""
        pose = rotation_y(30.0)
        pose[:3, 3] = [0.2, -0.1, 0.5]
        reference = encode(self.mesh, self.config.camera(), 1.5, 32)

        moved = self.mesh.transformed(np.linalg.inv(pose))
        camera = Camera(320, 240, 32.0, 60.0, pose)
        rotated = encode(moved, camera, 1.5, 32)

        assert rotated.z_orig == pytest.approx(reference.z_orig, abs=1e-9)
        same = np.isclose(rotated.z_vis, reference.z_vis, atol=1e-6) & np.isclose(rotated.z_hid, reference.z_hid, atol=1e-6)
        assert same.mean() > 0.99

    def test_rotated_camera_placement(self):
        """Test that a configured pose still puts the subject on the optical axis"""
        pose = rotation_y(-45.0)
        pose[:3, 3] = [1.0, 0.0, -2.0]
        config = CameraConfig(pose=pose)
        mesh = config.place(humanoid(3))
        pair = encode(mesh, config.camera(), 1.5, 32)
        assert pair.z_orig == pytest.approx(config.subject_distance_m, abs=1e-9)
        assert pair.warnings == ()
        assert pair.foreground.any()
