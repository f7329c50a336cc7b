import argparse
import shutil
import sys
import tempfile
from pathlib import Path
from unittest.mock import patch

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from mesh_io import read_point_cloud_ply, write_mesh
from mould import MouldPair
from mouldkit import main, positive_float, positive_int, representation_list
from shapes import uv_sphere


def run_cli(*argv):
    """Run the CLI with logging and signal handlers stubbed out."""
    with patch('sys.argv', ['mouldkit.py', *argv]):
        with patch('mouldkit.setup_logging'):
            with patch('mouldkit.install_signal_handlers'):
                return main()


@pytest.mark.cli
class TestArgumentValidators:
    """Test suite for the argparse type validators"""

    @pytest.mark.parametrize("value,expected", [("1", 1), ("256", 256)])
    def test_positive_int(self, value, expected):
        """Test accepted integers"""
        assert positive_int(value) == expected

    @pytest.mark.parametrize("value", ["0", "-1", "abc", "1.5"])
    def test_positive_int_rejects(self, value):
        """Test that zero, negatives and non-integers are rejected"""
        with pytest.raises(argparse.ArgumentTypeError):
            positive_int(value)

    @pytest.mark.parametrize("value", ["0", "-1", "abc", "nan", "inf"])
    def test_positive_float_rejects(self, value):
        """Test that non-positive and non-finite numbers are rejected"""
        with pytest.raises(argparse.ArgumentTypeError):
            positive_float(value)

    def test_positive_float(self):
        """Test an accepted float"""
        assert positive_float("0.01") == 0.01

    def test_representation_list(self):
        """Test parsing and rejecting representation lists"""
        assert representation_list("mould, voxel") == ["mould", "voxel"]
        assert representation_list("voxel") == ["voxel"]
        for value in ("mesh", "", "mould,mesh"):
            with pytest.raises(argparse.ArgumentTypeError):
                representation_list(value)


@pytest.mark.cli
class TestCLIArgumentValidation:
    """Test suite for CLI argument validation"""

    @pytest.mark.parametrize("argv", [
        ['encode'],
        ['encode', '--mesh', 'subject.obj'],
        ['decode', '--mould', 'out/subject'],
        ['eval', '--gt', 'a'],
        ['sweep'],
        ['render-gt', '--mesh-dir', 'frames'],
        ['shapes'],
        ['encode', '--mesh', 'a.obj', '--out', 'b', '--n', '0'],
        ['sweep', '--out', 'a.csv', '--representations', 'mesh'],
        ['eval', '--gt', 'a', '--pred', 'b', '--tau', 'nan'],
    ])
    def test_invalid_arguments_exit(self, argv):
        """Test that argparse exits on missing or invalid arguments"""
        with pytest.raises(SystemExit) as exc:
            run_cli(*argv)
        assert exc.value.code == 2

    def test_help_command(self, capsys):
        """Test that the help command prints every subcommand"""
        assert run_cli('help') == 0
        output = capsys.readouterr().out
        for command in ('encode', 'decode', 'eval', 'sweep', 'render-gt', 'loss', 'shapes'):
            assert command in output

    def test_no_command(self, capsys):
        """Test that running without a command prints usage"""
        assert run_cli() == 0
        assert "usage" in capsys.readouterr().out


@pytest.mark.cli
class TestCommands:
    """Test suite running each command against files in a temp directory"""

    def setup_method(self):
        """Set up a sphere mesh on disk"""
        self.temp_dir = Path(tempfile.mkdtemp())
        self.mesh_path = self.temp_dir / "meshes" / "sphere.ply"
        write_mesh(self.mesh_path, uv_sphere(0.3, segments=16, rings=8))
        self.stem = self.temp_dir / "out" / "sphere"

    def teardown_method(self):
        """Clean up after each test"""
        if self.temp_dir.exists():
            shutil.rmtree(self.temp_dir)

    def encode(self, *extra):
        return run_cli('encode', '--mesh', str(self.mesh_path), '--out', str(self.stem), '--n', '16', *extra)

    def test_encode_writes_pair(self):
        """Test that encode writes both maps and the sidecar"""
        assert self.encode('--epsilon', '0.02') == 0
        pair = MouldPair.load(self.stem)
        assert pair.resolution == 16
        assert pair.epsilon == 0.02
        assert pair.z_orig == pytest.approx(8.0, abs=1e-9)
        assert pair.foreground.any()

    def test_encode_missing_mesh(self):
        """Test that a missing mesh is a usage error"""
        assert run_cli('encode', '--mesh', str(self.temp_dir / "absent.obj"), '--out', str(self.stem)) == 2

    def test_encode_epsilon_beyond_background(self):
        """Test that epsilon must stay below the background distance"""
        assert self.encode('--epsilon', '2.0', '--bg-distance', '1.5') == 2
        assert not self.stem.with_name("sphere.vis.pfm").exists()

    def test_encode_behind_camera(self):
        """Test that a mesh behind the camera is refused when kept in place"""
        write_mesh(self.mesh_path, uv_sphere(0.3, center=(0.0, 0.0, -5.0)))
        assert self.encode('--keep-position') == 2

    def test_decode(self):
        """Test decoding to a binary and an ASCII PLY"""
        self.encode()
        for extra in ([], ['--ascii']):
            out = self.temp_dir / f"cloud{len(extra)}.ply"
            assert run_cli('decode', '--mould', str(self.stem), '--out', str(out), *extra) == 0
            cloud = read_point_cloud_ply(out)
            assert len(cloud) == 2 * int(MouldPair.load(self.stem).foreground.sum())
            assert len(cloud.hidden) == len(cloud.visible)

    def test_decode_epsilon_beyond_background(self):
        """Test that a decode threshold at or above L is a usage error"""
        self.encode()
        assert run_cli('decode', '--mould', str(self.stem), '--out', str(self.temp_dir / "c.ply"), '--epsilon', '1.5') == 2

    def test_eval_self_is_perfect(self, capsys):
        """Test that a pair scores 100% against itself"""
        self.encode()
        capsys.readouterr()
        assert run_cli('eval', '--gt', str(self.stem), '--pred', str(self.stem), '--tau', '50', '--tau', '30') == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines == [
            "tau_mm,overall,visible,hidden",
            "30,100.00,100.00,100.00",
            "50,100.00,100.00,100.00",
        ]

    def test_eval_quantized(self, capsys):
        """Test that snapping the prediction to depth classes only costs accuracy below half a bin"""
        self.encode()
        capsys.readouterr()
        assert run_cli('eval', '--gt', str(self.stem), '--pred', str(self.stem), '--quantize', '19',
                       '--tau', '1', '--tau', '30') == 0
        rows = [line.split(',') for line in capsys.readouterr().out.strip().splitlines()[1:]]
        assert float(rows[0][1]) < 100.0
        assert rows[1] == ["30", "100.00", "100.00", "100.00"]

    def test_eval_camera_mismatch(self):
        """Test that pairs framed by different cameras are a usage error"""
        self.encode()
        other = self.temp_dir / "out" / "other"
        run_cli('encode', '--mesh', str(self.mesh_path), '--out', str(other), '--n', '16', '--distance', '6')
        assert run_cli('eval', '--gt', str(self.stem), '--pred', str(other)) == 2

    def test_eval_missing_pair(self):
        """Test that a missing prediction is a usage error"""
        self.encode()
        assert run_cli('eval', '--gt', str(self.stem), '--pred', str(self.temp_dir / "absent")) == 2

    def test_loss(self, capsys):
        """Test loss values between identical pairs"""
        self.encode()
        capsys.readouterr()
        assert run_cli('loss', '--gt', str(self.stem), '--pred', str(self.stem), '--gan', '-1.0') == 0
        assert capsys.readouterr().out.strip().splitlines() == [
            "loss,value", "l1,0.0", "l2,0.0", "gan,-1.0", "combined,-1.0",
        ]

    def test_loss_needs_both_score_sets(self):
        """Test that real scores without fake scores are refused"""
        self.encode()
        assert run_cli('loss', '--gt', str(self.stem), '--pred', str(self.stem), '--real', '0.5') == 2

    def test_shapes(self):
        """Test writing the bundled humanoids"""
        out = self.temp_dir / "humanoids"
        assert run_cli('shapes', '--out', str(out), '--count', '2') == 0
        assert sorted(p.name for p in out.iterdir()) == ["humanoid_000.ply", "humanoid_001.ply"]

    def test_small_sweep(self):
        """Test a one-mesh sweep with one resolution per representation"""
        out = self.temp_dir / "results" / "sweep.csv"
        assert run_cli('sweep', '--mesh-dir', str(self.mesh_path.parent), '--out', str(out),
                       '--n', '8', '--voxel-n', '4', '--samples', '500') == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "representation,N,D,chamfer_m,encode_ms"
        assert [line.split(',')[:3] for line in lines[1:]] == [["voxel", "4", "64"], ["mould", "8", "128"]]

    def test_sweep_single_representation(self):
        """Test that --representations drops the other rows"""
        out = self.temp_dir / "sweep.csv"
        assert run_cli('sweep', '--mesh-dir', str(self.mesh_path.parent), '--out', str(out),
                       '--n', '8', '--voxel-n', '4', '--samples', '500', '--representations', 'voxel') == 0
        assert len(out.read_text().splitlines()) == 2

    def test_render_gt_empty_directory(self):
        """Test that an empty sequence directory is a usage error"""
        empty = self.temp_dir / "empty"
        empty.mkdir()
        assert run_cli('render-gt', '--mesh-dir', str(empty), '--out', str(self.temp_dir / "gt")) == 2

    def test_render_gt(self):
        """Test rendering a one-frame sequence"""
        out = self.temp_dir / "gt"
        assert run_cli('render-gt', '--mesh-dir', str(self.mesh_path.parent), '--out', str(out), '--n', '16') == 0
        assert MouldPair.load(out / "sphere").check_invariants() == []
