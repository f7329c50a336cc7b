import json
import logging
import shutil
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from config import CameraConfig
from geometry import HIDDEN, VISIBLE, Camera, Mesh, build_bvh, cast_rays
from mesh_io import FileFormatError, write_pfm
from metrics import chamfer, representable_mask, sample_surface
from mould import (EMPTY_FRAME, NOT_WATERTIGHT, RANGE_VIOLATION, EncodeError, MouldPair, decode, encode,
                   foreground_mask)
from shapes import box, humanoid, uv_sphere


def square_pair(z_vis, z_hid, z_orig=8.0, L=1.5):
    n = len(z_vis)
    return MouldPair(np.array(z_vis, dtype=float), np.array(z_hid, dtype=float), z_orig, L,
                     Camera(n, n, 1.0, 60.0))


@pytest.mark.unit
class TestMouldPair:
    """Test suite for the mould pair container and its invariants"""

    def test_valid_pair(self):
        """Test a hand-built pair with one foreground pixel"""
        pair = square_pair([[1.5, -0.2], [1.5, 1.5]], [[1.5, 0.3], [1.5, 1.5]])
        assert pair.check_invariants() == []
        assert pair.resolution == 2
        assert pair.dimensionality == 8
        np.testing.assert_array_equal(pair.foreground, [[False, True], [False, False]])

    def test_arrays_read_only(self):
        """Test that depth maps cannot be modified after construction"""
        pair = square_pair(np.full((3, 3), 1.5), np.full((3, 3), 1.5))
        with pytest.raises(ValueError):
            pair.z_vis[0, 0] = 0.0

    @pytest.mark.parametrize("z_vis,z_hid", [
        (np.zeros((2, 3)), np.zeros((2, 3))),
        (np.zeros((2, 2)), np.zeros((3, 3))),
        (np.zeros(4), np.zeros(4)),
    ])
    def test_shape_validation(self, z_vis, z_hid):
        """Test that maps must be square and of equal size"""
        with pytest.raises(ValueError):
            MouldPair(z_vis, z_hid, 8.0, 1.5, Camera(2, 2, 1.0, 60.0))

    def test_camera_must_match_maps(self):
        """Test that the camera frame size must equal the map size"""
        with pytest.raises(ValueError, match="Camera"):
            MouldPair(np.zeros((2, 2)), np.zeros((2, 2)), 8.0, 1.5, Camera(3, 3, 1.0, 60.0))

    @pytest.mark.parametrize("z_vis,z_hid,problem", [
        ([[0.1, 1.5], [1.5, 1.5]], [[1.5, 1.5], [1.5, 1.5]], "masks differ"),
        ([[0.3, 1.5], [1.5, 1.5]], [[0.1, 1.5], [1.5, 1.5]], "exceeds z_hid"),
        ([[np.nan, 1.5], [1.5, 1.5]], [[0.1, 1.5], [1.5, 1.5]], "non-finite"),
        ([[-9.0, 1.5], [1.5, 1.5]], [[0.1, 1.5], [1.5, 1.5]], "outside"),
        ([[0.1, 1.5], [1.5, 1.5]], [[2.0, 1.5], [1.5, 1.5]], "outside"),
    ])
    def test_invariant_violations(self, z_vis, z_hid, problem):
        """Test that each broken invariant is reported"""
        problems = square_pair(z_vis, z_hid).check_invariants()
        assert any(problem in p for p in problems)


@pytest.mark.unit
class TestForegroundMask:
    """Test suite for thresholding centered depths"""

    def setup_method(self):
        """Set up a pair with one pixel just below the background"""
        self.pair = square_pair([[-0.1, 1.495], [1.5, 1.5]], [[0.1, 1.495], [1.5, 1.5]])

    def test_epsilon_threshold(self):
        """Test that pixels within epsilon of L count as background"""
        np.testing.assert_array_equal(foreground_mask(self.pair), [[True, False], [False, False]])
        np.testing.assert_array_equal(foreground_mask(self.pair, 0.001), [[True, True], [False, False]])

    def test_hidden_channel(self):
        """Test that the hidden channel is thresholded on its own values"""
        np.testing.assert_array_equal(foreground_mask(self.pair, channel="hidden"), [[True, False], [False, False]])

    @pytest.mark.parametrize("epsilon", [0.0, -0.01, 1.5, 2.0])
    def test_invalid_epsilon(self, epsilon):
        """Test that epsilon must lie strictly between 0 and L"""
        with pytest.raises(ValueError, match="Epsilon"):
            foreground_mask(self.pair, epsilon)

    def test_invalid_channel(self):
        """Test that only the two mould channels are accepted"""
        with pytest.raises(ValueError, match="Channel"):
            foreground_mask(self.pair, channel="depth")


@pytest.mark.unit
class TestEncode:
    """Test suite for encoding meshes into mould pairs"""

    def setup_method(self):
        """Set up the default camera and a sphere at the subject distance"""
        self.camera = CameraConfig().camera()
        self.sphere = uv_sphere(0.3, center=(0.0, 0.0, 8.0), segments=48, rings=24)

    def test_sphere_pair(self):
        """Test the structure of an encoded sphere"""
        pair = encode(self.sphere, self.camera, 1.5, 65)
        assert pair.resolution == 65
        assert pair.check_invariants() == []
        assert pair.warnings == ()
        assert pair.z_orig == pytest.approx(8.0, abs=1e-9)
        fg = pair.foreground
        assert np.all(pair.z_vis[~fg] == 1.5)
        assert np.all(pair.z_hid[~fg] == 1.5)
        assert np.all(pair.z_vis[fg] <= pair.z_hid[fg])
        assert 0.5 < fg.mean() < 0.85

    def test_axis_pixel_hits_poles(self):
        """Test that the middle pixel of an odd crop reaches both poles"""
        pair = encode(self.sphere, self.camera, 1.5, 33)
        assert pair.z_vis[16, 16] == pytest.approx(-0.3, abs=1e-9)
        assert pair.z_hid[16, 16] == pytest.approx(0.3, abs=1e-9)

    @pytest.mark.parametrize("frame", [False, True])
    def test_unit_cube_faces(self, frame):
        """Test that the principal pixel of a unit cube 8 m away reads -0.5 and +0.5"""
        cube = box(center=(0.0, 0.0, 8.0))
        camera = Camera(33, 33, 32.0, 60.0) if not frame else self.camera
        pair = encode(cube, camera, 1.5, 33, frame=frame)
        assert pair.check_invariants() == []
        assert pair.z_orig == pytest.approx(8.0, abs=1e-12)
        assert pair.z_vis[16, 16] == pytest.approx(-0.5, abs=1e-9)
        assert pair.z_hid[16, 16] == pytest.approx(0.5, abs=1e-9)

    def test_crop_camera(self):
        """Test that the pair carries the square crop camera it was cast with"""
        pair = encode(self.sphere, self.camera, 1.5, 32)
        assert (pair.camera.width, pair.camera.height) == (32, 32)
        assert pair.camera.focal_length == self.camera.focal_length
        # The crop is much narrower than the 320 px frame around a 0.6 m subject.
        assert pair.camera.sensor_width < self.camera.sensor_width / 2

    def test_unframed_needs_square_camera(self):
        """Test encoding with the camera as given"""
        square = Camera(16, 16, 8.0, 60.0)
        pair = encode(self.sphere, square, 1.5, 16, frame=False)
        assert pair.camera is square
        with pytest.raises(ValueError, match="Unframed"):
            encode(self.sphere, self.camera, 1.5, 16, frame=False)

    def test_open_mesh_warns(self):
        """Test that a mesh with boundary edges is flagged"""
        tri = Mesh([[-0.5, -0.5, 8.0], [0.5, -0.5, 8.0], [0.0, 0.5, 8.0]], [[0, 1, 2]])
        pair = encode(tri, self.camera, 1.5, 17)
        assert NOT_WATERTIGHT in pair.warnings
        fg = pair.foreground
        # One sheet: first and last hit coincide.
        np.testing.assert_array_equal(pair.z_vis[fg], pair.z_hid[fg])

    def test_out_of_view(self):
        """Test that a subject outside the frame gives an all-background pair"""
        far_off = uv_sphere(0.3, center=(50.0, 0.0, 8.0))
        pair = encode(far_off, self.camera, 1.5, 16)
        assert EMPTY_FRAME in pair.warnings
        assert not pair.foreground.any()
        assert decode(pair).is_empty

    def test_range_violation(self):
        """Test that subjects deeper than L are flagged and fail the range check"""
        big = uv_sphere(2.0, center=(0.0, 0.0, 8.0), segments=16, rings=8)
        pair = encode(big, self.camera, 1.5, 17)
        assert RANGE_VIOLATION in pair.warnings
        assert any("outside" in p for p in pair.check_invariants())

    def test_behind_camera(self):
        """Test that a mesh crossing the camera plane is refused"""
        with pytest.raises(EncodeError):
            encode(uv_sphere(0.3, center=(0.0, 0.0, 0.1)), self.camera)

    @pytest.mark.parametrize("kwargs", [
        {'background_distance': 0.0},
        {'background_distance': -1.0},
        {'resolution': 0},
    ])
    def test_invalid_arguments(self, kwargs):
        """Test that bad encoding parameters are rejected"""
        with pytest.raises(ValueError):
            encode(self.sphere, self.camera, **kwargs)

    def test_empty_mesh(self):
        """Test that an empty mesh cannot be encoded"""
        with pytest.raises(ValueError, match="empty"):
            encode(Mesh(np.zeros((0, 3)), np.zeros((0, 3))), self.camera)

    def test_camera_pose(self):
        """Test that encoding through a moved camera matches moving the subject"""
        pose = np.eye(4)
        pose[:3, 3] = [0.0, 0.0, 3.0]
        moved = Camera(320, 240, 32.0, 60.0, pose)
        subject = uv_sphere(0.3, center=(0.0, 0.0, 5.0), segments=48, rings=24)
        a = encode(subject, moved, 1.5, 33)
        b = encode(self.sphere, self.camera, 1.5, 33)
        np.testing.assert_allclose(a.z_vis, b.z_vis, atol=1e-9)
        np.testing.assert_array_equal(a.camera.pose, pose)


@pytest.mark.unit
class TestDecode:
    """Test suite for decoding pairs into labelled point clouds"""

    def setup_method(self):
        """Set up an encoded sphere"""
        self.camera = CameraConfig().camera()
        self.sphere = uv_sphere(0.3, center=(0.0, 0.0, 8.0), segments=48, rings=24)
        self.pair = encode(self.sphere, CameraConfig().camera(), 1.5, 64)

    def test_provenance_order(self):
        """Test that visible points come first and both halves cover the mask"""
        cloud = decode(self.pair)
        count = int(self.pair.foreground.sum())
        assert len(cloud) == 2 * count
        np.testing.assert_array_equal(cloud.provenance[:count], VISIBLE)
        np.testing.assert_array_equal(cloud.provenance[count:], HIDDEN)

    def test_points_on_surface(self):
        """Test that every decoded point is a first or last hit on its own ray"""
        cloud = decode(self.pair)
        assert representable_mask(self.sphere, cloud, tolerance=1e-6).all()
        radius = np.linalg.norm(cloud.points - [0.0, 0.0, 8.0], axis=1)
        assert radius.max() <= 0.3 + 1e-9
        assert radius.min() >= 0.985 * 0.3

    def test_normal_orientation(self):
        """Test that visible normals face the camera and hidden normals face away"""
        cloud = decode(self.pair)
        facing = np.einsum("ij,ij->i", cloud.normals, cloud.points)
        assert np.all(facing[cloud.provenance == VISIBLE] <= 0)
        assert np.all(facing[cloud.provenance == HIDDEN] >= 0)
        outward = (cloud.points - [0.0, 0.0, 8.0]) / 0.3
        alignment = np.einsum("ij,ij->i", cloud.normals, outward)
        assert np.median(alignment) > 0.99

    def test_epsilon_override(self):
        """Test that a larger epsilon than the whole foreground leaves nothing"""
        shallow = square_pair([[1.45, 1.5], [1.5, 1.5]], [[1.45, 1.5], [1.5, 1.5]])
        assert len(decode(shallow)) == 2
        assert decode(shallow, epsilon=0.1).is_empty

    @pytest.mark.integration
    def test_sphere_round_trip_within_pixel_footprint(self):
        """Test round-trip Chamfer on a sphere at N=256 against one pixel footprint at 8 m"""
        pair = encode(self.sphere, CameraConfig().camera(), 1.5, 256)
        cloud = decode(pair)
        truth = sample_surface(self.sphere, 30000, seed=0)
        # About 4.2 mm for the default camera at 8 m, with 20% slack.
        assert chamfer(truth, cloud) <= 1.2 * 0.0042

    def test_convex_subject_fully_encoded(self):
        """Test that no ray crosses a convex subject more than twice and every sample is kept"""
        pair = encode(self.sphere, self.camera, 1.5, 64)
        directions = pair.camera.ray_directions().reshape(-1, 3)
        result = cast_rays(build_bvh(self.sphere), self.sphere, np.zeros(3), directions)
        assert result.hit_count.max() == 2
        assert np.all(representable_mask(self.sphere, sample_surface(self.sphere, 5000, seed=1)))

    @pytest.mark.slow
    def test_sphere_error_falls_with_resolution(self):
        """Test that round-trip Chamfer on a convex subject drops at every resolution step"""
        truth = sample_surface(self.sphere, 100000, seed=0)
        errors = [chamfer(truth, decode(encode(self.sphere, self.camera, 1.5, n, workers=4)))
                  for n in (16, 32, 64, 128, 256)]
        assert all(b < a for a, b in zip(errors, errors[1:]))


@pytest.mark.unit
class TestPersistence:
    """Test suite for saving and loading mould pairs"""

    def setup_method(self):
        """Set up a scratch directory and an encoded humanoid"""
        self.temp_dir = Path(tempfile.mkdtemp())
        config = CameraConfig()
        self.pair = encode(config.place(humanoid(0)), config.camera(), 1.3, 32)

    def teardown_method(self):
        """Clean up after each test"""
        if self.temp_dir.exists():
            shutil.rmtree(self.temp_dir)

    def test_files_written(self):
        """Test the three files and the sidecar content"""
        paths = self.pair.save(self.temp_dir / "subject")
        assert [p.name for p in paths] == ["subject.vis.pfm", "subject.hid.pfm", "subject.mould.json"]
        with open(paths[2]) as f:
            meta = json.load(f)
        assert meta["L"] == 1.3
        assert meta["resolution"] == 32
        assert meta["z_orig"] == self.pair.z_orig
        assert len(meta["camera_pose"]) == 4

    def test_reload(self):
        """Test that a reloaded pair keeps its values and an exact background"""
        self.pair.save(self.temp_dir / "subject")
        loaded = MouldPair.load(self.temp_dir / "subject")
        np.testing.assert_allclose(loaded.z_vis, self.pair.z_vis, atol=1e-6)
        np.testing.assert_allclose(loaded.z_hid, self.pair.z_hid, atol=1e-6)
        np.testing.assert_array_equal(loaded.foreground, self.pair.foreground)
        assert np.all(loaded.z_vis[~loaded.foreground] == 1.3)
        assert loaded.check_invariants() == []
        assert loaded.camera.principal_point == pytest.approx(self.pair.camera.principal_point)
        assert loaded.camera.sensor_width == self.pair.camera.sensor_width

    def test_epsilon_kept(self):
        """Test that a per-pair epsilon survives the sidecar"""
        replace(self.pair, epsilon=0.02).save(self.temp_dir / "subject")
        assert MouldPair.load(self.temp_dir / "subject").epsilon == 0.02

    def test_missing_file(self):
        """Test that a missing half raises FileNotFoundError"""
        self.pair.save(self.temp_dir / "subject")
        (self.temp_dir / "subject.hid.pfm").unlink()
        with pytest.raises(FileNotFoundError):
            MouldPair.load(self.temp_dir / "subject")

    def test_malformed_sidecar(self):
        """Test that a sidecar missing required keys raises FileFormatError"""
        self.pair.save(self.temp_dir / "subject")
        sidecar = self.temp_dir / "subject.mould.json"
        meta = json.loads(sidecar.read_text())
        del meta["L"]
        sidecar.write_text(json.dumps(meta))
        with pytest.raises(FileFormatError):
            MouldPair.load(self.temp_dir / "subject")

    def test_size_mismatch(self):
        """Test that maps of the wrong size raise FileFormatError"""
        self.pair.save(self.temp_dir / "subject")
        write_pfm(self.temp_dir / "subject.vis.pfm", np.zeros((8, 8)))
        with pytest.raises(FileFormatError, match="sidecar"):
            MouldPair.load(self.temp_dir / "subject")

    def test_missing_principal_point_warns(self, caplog):
        """Test that a sidecar without a principal point loads centred with a warning"""
        self.pair.save(self.temp_dir / "subject")
        sidecar = self.temp_dir / "subject.mould.json"
        meta = json.loads(sidecar.read_text())
        del meta["principal_point_px"]
        sidecar.write_text(json.dumps(meta))
        with caplog.at_level(logging.WARNING, logger="mould"):
            loaded = MouldPair.load(self.temp_dir / "subject")
        assert "principal_point_px" in caplog.text
        assert loaded.camera.principal_point == (16.0, 16.0)

    def test_principal_point_present_is_silent(self, caplog):
        """Test that a complete sidecar loads without warnings"""
        self.pair.save(self.temp_dir / "subject")
        with caplog.at_level(logging.WARNING, logger="mould"):
            MouldPair.load(self.temp_dir / "subject")
        assert "principal_point_px" not in caplog.text


@pytest.mark.slow
class TestRandomizedInvariants:
    """Invariant checks over many randomized encodes"""

    def test_hundred_random_encodes(self):
        """Test every pair invariant on 100 randomized subjects, poses and resolutions"""
        rng = np.random.default_rng(2024)
        shapes = [
            lambda seed: humanoid(seed, arm_forward=bool(seed % 2)),
            lambda seed: uv_sphere(0.2 + 0.3 * np.random.default_rng(seed).random(), segments=24, rings=12),
            lambda seed: box(size=0.2 + 0.8 * np.random.default_rng(seed).random(3)),
        ]
        for run in range(100):
            angle = rng.uniform(0, 2 * np.pi)
            pose = np.eye(4)
            pose[:3, :3] = [[np.cos(angle), 0, np.sin(angle)], [0, 1, 0], [-np.sin(angle), 0, np.cos(angle)]]
            pose[:3, 3] = rng.uniform(-1.0, 1.0, 3)
            camera = Camera(320, 240, 32.0, 60.0, pose)
            mesh = camera.place_subject(shapes[run % 3](run), rng.uniform(6.0, 10.0))
            pair = encode(mesh, camera, 1.5, int(rng.integers(8, 25)))
            assert pair.check_invariants() == [], f"run {run}"
            assert pair.foreground.any(), f"run {run}"
