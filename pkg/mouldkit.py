#!/usr/bin/env python3
"""
mouldkit
Encode meshes into visible/hidden depth-map pairs, decode them to point clouds and
measure their fidelity against a voxel baseline.
"""

import argparse
import csv
import logging
import math
import sys
import threading
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from rich.console import Console

from config import (DEFAULT_BACKGROUND_DISTANCE, DEFAULT_EPSILON, DEFAULT_LAMBDA, DEFAULT_MOULD_RESOLUTIONS, DEFAULT_RESOLUTION,
                    DEFAULT_SAMPLES, DEFAULT_SEQUENCE_FRAMES, DEFAULT_TAUS_MM, CameraConfig, log_dir, worker_count)
from groundtruth import SequenceRenderer, mesh_files
from losses import DepthBatch, DiscriminatorScores, combined_objective, gan_loss, l1_loss, l2_loss
from mesh_io import load_mesh, write_mesh, write_point_cloud_ply
from metrics import (DEPTH_BIN_WIDTH, dequantize_depth, depth_accuracy_curve, matched_voxel_resolution,
                     quantize_depth)
from mould import EncodeError, MouldPair, decode, encode
from shapes import humanoid_set
from sweep import MOULD, REPRESENTATIONS, VOXEL, SweepRunner
from utils import install_signal_handlers, setup_logging

SCRIPT_DIR = Path(__file__).parent
LOG_FILE_NAME = "mouldkit.log"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

console = Console()
err_console = Console(stderr=True)
logger = logging.getLogger(__name__)

# Set by the signal handler; long-running commands stop at the next task boundary.
shutdown_event = threading.Event()


def positive_int(value):
    """Validate a strictly positive integer argument"""
    try:
        number = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{value} is not a valid integer")
    if number < 1:
        raise argparse.ArgumentTypeError(f"{value} must be at least 1")
    return number


def positive_float(value):
    """Validate a strictly positive, finite float argument"""
    try:
        number = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{value} is not a valid number")
    if not (number > 0 and math.isfinite(number)):
        raise argparse.ArgumentTypeError(f"{value} must be a positive number")
    return number


def representation_list(value):
    """Validate a comma-separated list of representations"""
    names = [name.strip() for name in value.split(',') if name.strip()]
    unknown = [name for name in names if name not in REPRESENTATIONS]
    if not names or unknown:
        raise argparse.ArgumentTypeError(
            f"Representations must be a comma-separated subset of {', '.join(REPRESENTATIONS)}"
        )
    return names


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--debug', action='store_true', help='Enable debug logging')
    common.add_argument('--log-file', type=Path, help='Log file (default: logs/mouldkit.log)')

    camera = argparse.ArgumentParser(add_help=False)
    camera.add_argument('--camera-json', type=Path, help='Camera config JSON (default: 320x240, 32 mm sensor, 60 mm lens)')
    camera.add_argument('--bg-distance', type=positive_float, default=DEFAULT_BACKGROUND_DISTANCE,
                        help=f'Background distance L in meters (default: {DEFAULT_BACKGROUND_DISTANCE})')

    parser = argparse.ArgumentParser(description="Mould depth-map codec and evaluation toolkit")
    subparsers = parser.add_subparsers(dest='command')

    encode_parser = subparsers.add_parser('encode', parents=[common, camera], help='Encode a mesh into a mould pair')
    encode_parser.add_argument('--mesh', type=Path, required=True, help='Input .obj or .ply mesh')
    encode_parser.add_argument('--out', type=Path, required=True, help='Output stem for .vis.pfm/.hid.pfm/.mould.json')
    encode_parser.add_argument('--n', type=positive_int, default=DEFAULT_RESOLUTION,
                               help=f'Depth map resolution N (default: {DEFAULT_RESOLUTION})')
    encode_parser.add_argument('--epsilon', type=positive_float, help='Surface threshold stored in the sidecar (default: 0.01)')
    encode_parser.add_argument('--distance', type=positive_float,
                               help='Subject distance in meters (default: from camera config, 8 m)')
    encode_parser.add_argument('--keep-position', action='store_true',
                               help='Encode the mesh where it is instead of centring it in front of the camera')

    decode_parser = subparsers.add_parser('decode', parents=[common], help='Decode a mould pair into a PLY point cloud')
    decode_parser.add_argument('--mould', type=Path, required=True, help='Stem of the mould pair')
    decode_parser.add_argument('--out', type=Path, required=True, help='Output .ply file')
    decode_parser.add_argument('--epsilon', type=positive_float, help='Surface threshold (default: sidecar value)')
    decode_parser.add_argument('--ascii', action='store_true', help='Write an ASCII PLY instead of binary')

    eval_parser = subparsers.add_parser('eval', parents=[common], help='Depth accuracy of a predicted pair')
    eval_parser.add_argument('--gt', type=Path, required=True, help='Stem of the ground-truth pair')
    eval_parser.add_argument('--pred', type=Path, required=True, help='Stem of the predicted pair')
    eval_parser.add_argument('--tau', type=positive_float, action='append',
                             help='Threshold in millimeters, repeatable (default: 30 and 50)')
    eval_parser.add_argument('--epsilon', type=positive_float, help='Surface threshold (default: ground-truth sidecar)')
    eval_parser.add_argument('--quantize', type=positive_int, metavar='BINS',
                             help='Snap the prediction to BINS depth classes plus background before scoring')
    eval_parser.add_argument('--bin-mm', type=positive_float, default=DEPTH_BIN_WIDTH * 1000.0,
                             help='Depth class width in millimeters (default: 45)')

    sweep_parser = subparsers.add_parser('sweep', parents=[common, camera], help='Mould vs voxel error sweep')
    sweep_parser.add_argument('--mesh-dir', type=Path, help='Directory of .obj/.ply meshes (default: bundled humanoids)')
    sweep_parser.add_argument('--out', type=Path, required=True, help='Output CSV file')
    sweep_parser.add_argument('--n', type=positive_int, action='append',
                              help='Mould resolution, repeatable (default: 32 64 128 256)')
    sweep_parser.add_argument('--voxel-n', type=positive_int, action='append',
                              help='Voxel resolution, repeatable (default: matched to each mould N)')
    sweep_parser.add_argument('--representations', type=representation_list, default=list(REPRESENTATIONS),
                              help='Comma-separated representations (default: mould,voxel)')
    sweep_parser.add_argument('--samples', type=positive_int, default=DEFAULT_SAMPLES,
                              help=f'Ground-truth surface samples per mesh (default: {DEFAULT_SAMPLES})')
    sweep_parser.add_argument('--seed', type=int, default=0, help='Sampling seed (default: 0)')
    sweep_parser.add_argument('--vertices-only', action='store_true', help='Use mesh vertices as ground truth')
    sweep_parser.add_argument('--squared', action='store_true', help='Use squared nearest-neighbour distances')
    sweep_parser.add_argument('--timings', action='store_true', help='Fill the encode_ms column')
    sweep_parser.add_argument('--floor', action='store_true', help='Also measure the two-hit encoding floor')

    render_parser = subparsers.add_parser('render-gt', parents=[common, camera], help='Ground truth for a mesh sequence')
    render_parser.add_argument('--mesh-dir', type=Path, required=True, help='Directory of per-frame meshes')
    render_parser.add_argument('--out', type=Path, required=True, help='Output directory')
    render_parser.add_argument('--seed', type=int, default=0, help='Subject distance seed (default: 0)')
    render_parser.add_argument('--n', type=positive_int, default=DEFAULT_RESOLUTION,
                               help=f'Depth map resolution N (default: {DEFAULT_RESOLUTION})')
    render_parser.add_argument('--epsilon', type=positive_float, help='Surface threshold stored in the sidecars')
    render_parser.add_argument('--max-frames', type=positive_int, default=DEFAULT_SEQUENCE_FRAMES,
                               help=f'Frames per sequence (default: {DEFAULT_SEQUENCE_FRAMES})')

    loss_parser = subparsers.add_parser('loss', parents=[common], help='Reconstruction losses between two pairs')
    loss_parser.add_argument('--gt', type=Path, required=True, help='Stem of the ground-truth pair')
    loss_parser.add_argument('--pred', type=Path, required=True, help='Stem of the predicted pair')
    loss_parser.add_argument('--gan', type=float, help='Adversarial loss value to combine with L1')
    loss_parser.add_argument('--real', type=float, action='append', help='Discriminator score on real data, repeatable')
    loss_parser.add_argument('--fake', type=float, action='append', help='Discriminator score on generated data, repeatable')
    loss_parser.add_argument('--lambda', dest='lam', type=float, default=DEFAULT_LAMBDA,
                             help=f'Weight of the L1 term (default: {DEFAULT_LAMBDA:g})')

    shapes_parser = subparsers.add_parser('shapes', parents=[common], help='Write the bundled humanoid meshes')
    shapes_parser.add_argument('--out', type=Path, required=True, help='Output directory')
    shapes_parser.add_argument('--count', type=positive_int, default=10, help='Number of meshes (default: 10)')
    shapes_parser.add_argument('--seed', type=int, default=0, help='Pose seed (default: 0)')

    subparsers.add_parser('help', help='Show detailed help information')
    return parser


def camera_config(args) -> CameraConfig:
    if getattr(args, 'camera_json', None):
        return CameraConfig.load(args.camera_json)
    return CameraConfig()


def report_problems(pair: MouldPair, stem) -> int:
    problems = pair.check_invariants()
    if problems:
        for problem in problems:
            err_console.print(f"[red]❌ {stem}: {problem}[/red]")
        logger.error(f"{stem} violates mould invariants: {problems}")
        return EXIT_FAILURE
    return EXIT_OK


def cmd_encode(args) -> int:
    config = camera_config(args)
    mesh = load_mesh(args.mesh)
    if not args.keep_position:
        mesh = config.place(mesh, args.distance)
    pair = encode(mesh, config.camera(), args.bg_distance, args.n, workers=worker_count())
    if args.epsilon is not None:
        if not args.epsilon < args.bg_distance:
            raise ValueError(f"Epsilon must lie in (0, L={args.bg_distance}), got {args.epsilon}")
        pair = replace(pair, epsilon=args.epsilon)
    pair.save(args.out)
    for warning in pair.warnings:
        err_console.print(f"[yellow]⚠️  {warning.replace('_', ' ')}[/yellow]")
    console.print(f"[green]✓ Encoded {args.mesh.name} at N={args.n} "
                  f"(z_orig {pair.z_orig:.4f} m, {int(pair.foreground.sum())} foreground pixels)[/green]")
    return report_problems(pair, args.out)


def cmd_decode(args) -> int:
    pair = MouldPair.load(args.mould)
    cloud = decode(pair, args.epsilon)
    write_point_cloud_ply(args.out, cloud, binary=not args.ascii)
    if cloud.is_empty:
        err_console.print("[yellow]⚠️  Pair has no foreground pixels; wrote an empty point cloud[/yellow]")
    else:
        console.print(f"[green]✓ Wrote {len(cloud)} points ({len(cloud.visible)} visible, "
                      f"{len(cloud.hidden)} hidden) to {args.out}[/green]")
    return EXIT_OK


def cmd_eval(args) -> int:
    gt = MouldPair.load(args.gt)
    pred = MouldPair.load(args.pred)
    if args.quantize:
        width = args.bin_mm / 1000.0
        pred = dequantize_depth(quantize_depth(pred, args.quantize, width), pred, args.quantize, width)
        logger.info(f"Scoring {args.pred} snapped to {args.quantize} depth classes of {args.bin_mm:g} mm")
    taus_mm = args.tau or list(DEFAULT_TAUS_MM)
    curve = depth_accuracy_curve(gt, pred, [tau / 1000.0 for tau in taus_mm], args.epsilon)

    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(['tau_mm', 'overall', 'visible', 'hidden'])
    for (tau, accuracy) in curve:
        writer.writerow([f"{tau * 1000:g}", f"{accuracy.overall:.2f}",
                         f"{accuracy.visible:.2f}", f"{accuracy.hidden:.2f}"])
    return EXIT_OK


def load_meshes(mesh_dir: Optional[Path], seed: int) -> List:
    if mesh_dir is None:
        return humanoid_set(seed=seed)
    paths = mesh_files(mesh_dir)
    if not paths:
        raise ValueError(f"No .obj or .ply meshes in {mesh_dir}")
    return [load_mesh(path) for path in paths]


def cmd_sweep(args) -> int:
    config = camera_config(args)
    ns_mould = args.n or list(DEFAULT_MOULD_RESOLUTIONS)
    ns_voxel = args.voxel_n or sorted({matched_voxel_resolution(n) for n in ns_mould})
    if MOULD not in args.representations:
        ns_mould = []
    if VOXEL not in args.representations:
        ns_voxel = []

    runner = SweepRunner(
        config.camera(),
        background_distance=args.bg_distance,
        samples=args.samples,
        seed=args.seed,
        subject_distance=config.subject_distance_m,
        vertices_only=args.vertices_only,
        squared=args.squared,
        max_workers=worker_count(),
        shutdown_event=shutdown_event,
        show_progress=True,
    )
    report = runner.run(load_meshes(args.mesh_dir, args.seed), ns_mould, ns_voxel, floor=args.floor)
    report.write_csv(args.out, timings=args.timings)
    console.print(report.render_table())
    console.print(f"[green]✓ Sweep report written to {args.out}[/green]")
    return EXIT_OK


def cmd_render_gt(args) -> int:
    renderer = SequenceRenderer(
        camera_config(args),
        resolution=args.n,
        background_distance=args.bg_distance,
        epsilon=args.epsilon if args.epsilon is not None else DEFAULT_EPSILON,
        max_frames=args.max_frames,
        max_workers=worker_count(),
        shutdown_event=shutdown_event,
        show_progress=True,
    )
    summary = renderer.render(args.mesh_dir, args.out, args.seed)
    for name, reason in summary.skipped:
        err_console.print(f"[yellow]⚠️  Skipped {name}: {reason}[/yellow]")
    if not summary.written:
        err_console.print("[red]❌ No frame could be rendered[/red]")
        return EXIT_USAGE
    console.print(f"[green]✓ Rendered {len(summary.written)} frames at {summary.subject_distance:.3f} m[/green]")
    if summary.invalid:
        err_console.print(f"[red]❌ {len(summary.invalid)} frames violate mould invariants[/red]")
        return EXIT_FAILURE
    return EXIT_OK


def cmd_loss(args) -> int:
    gt = DepthBatch.from_pairs([MouldPair.load(args.gt)])
    pred = DepthBatch.from_pairs([MouldPair.load(args.pred)])
    l1 = l1_loss(gt, pred)
    rows = [('l1', l1), ('l2', l2_loss(gt, pred))]

    gan = args.gan
    if gan is None and (args.real or args.fake):
        if not (args.real and args.fake):
            raise ValueError("--real and --fake must both be given")
        gan = gan_loss(DiscriminatorScores(args.real, args.fake))
    if gan is not None:
        rows += [('gan', gan), ('combined', combined_objective(gan, l1, args.lam))]

    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(['loss', 'value'])
    for name, value in rows:
        writer.writerow([name, repr(float(value))])
    return EXIT_OK


def cmd_shapes(args) -> int:
    args.out.mkdir(parents=True, exist_ok=True)
    for index, mesh in enumerate(humanoid_set(args.count, args.seed)):
        write_mesh(args.out / f"humanoid_{index:03d}.ply", mesh)
    console.print(f"[green]✓ Wrote {args.count} meshes to {args.out}[/green]")
    return EXIT_OK


COMMANDS = {
    'encode': cmd_encode,
    'decode': cmd_decode,
    'eval': cmd_eval,
    'sweep': cmd_sweep,
    'render-gt': cmd_render_gt,
    'loss': cmd_loss,
    'shapes': cmd_shapes,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == 'help':
        show_help()
        return EXIT_OK
    if args.command is None:
        parser.print_help()
        return EXIT_OK

    log_file = args.log_file or log_dir(SCRIPT_DIR) / LOG_FILE_NAME
    setup_logging(args.debug, log_file)
    install_signal_handlers(shutdown_event)
    logger.info(f"Running {args.command}")

    try:
        return COMMANDS[args.command](args)
    except (FileNotFoundError, ValueError, EncodeError) as e:
        err_console.print(f"[red]❌ {e}[/red]")
        logger.error(f"{args.command} failed: {e}")
        return EXIT_USAGE
    except Exception as e:
        err_console.print(f"[red]❌ Unexpected error: {e}[/red]")
        logger.exception(f"{args.command} failed unexpectedly")
        return EXIT_FAILURE


def show_help():
    console.print("[bold]mouldkit - Command Line Interface[/bold]")
    console.print("\n[bold]Usage:[/bold] python3 mouldkit.py <command> [options]")

    console.print("\n[bold]Commands:[/bold]")

    console.print("\n  [cyan]encode[/cyan] - Encode a mesh into a visible/hidden depth-map pair")
    console.print("    [bold]Required:[/bold]")
    console.print("      --mesh PATH               Input .obj or .ply mesh")
    console.print("      --out STEM                Writes STEM.vis.pfm, STEM.hid.pfm, STEM.mould.json")
    console.print("    [bold]Optional:[/bold]")
    console.print("      --n N                     Resolution (default: 128)")
    console.print("      --bg-distance L           Background distance in meters (default: 1.5)")
    console.print("      --epsilon E               Surface threshold in meters (default: 0.01)")
    console.print("      --distance D              Subject distance in meters (default: 8)")
    console.print("      --keep-position           Do not move the mesh in front of the camera")
    console.print("      --camera-json PATH        Camera config")

    console.print("\n  [cyan]decode[/cyan] - Decode a pair into a PLY point cloud with provenance")
    console.print("      --mould STEM --out PATH   [--epsilon E] [--ascii]")

    console.print("\n  [cyan]eval[/cyan] - Depth accuracy as CSV (tau_mm,overall,visible,hidden)")
    console.print("      --gt STEM --pred STEM     [--tau MM ...] [--epsilon E]")
    console.print("      --quantize BINS           Snap the prediction to depth classes first [--bin-mm MM]")

    console.print("\n  [cyan]sweep[/cyan] - Mould vs voxel Chamfer error at matched dimensionality")
    console.print("      --out CSV                 [--mesh-dir DIR] [--n N ...] [--voxel-n N ...]")
    console.print("      [--representations mould,voxel] [--samples K] [--seed S] [--vertices-only]")
    console.print("      [--squared] [--timings] [--floor]")

    console.print("\n  [cyan]render-gt[/cyan] - Ground-truth pairs for a sequence of frame meshes")
    console.print("      --mesh-dir DIR --out DIR  [--seed S] [--n N] [--max-frames K]")

    console.print("\n  [cyan]loss[/cyan] - L1/L2 between two pairs, plus the combined objective")
    console.print("      --gt STEM --pred STEM     [--gan G | --real P ... --fake P ...] [--lambda W]")

    console.print("\n  [cyan]shapes[/cyan] - Write the bundled humanoid test meshes")
    console.print("      --out DIR                 [--count K] [--seed S]")

    console.print("  [cyan]help[/cyan] - Show this help message")

    console.print("\n[bold]Global options:[/bold] --debug, --log-file PATH")
    console.print("[bold]Environment:[/bold] MOULDKIT_THREADS caps worker threads, MOULDKIT_LOG_DIR moves the log")

    console.print("\n[bold]Examples:[/bold]")
    console.print("  python3 mouldkit.py encode --mesh subject.obj --out out/subject --n 256")
    console.print("  python3 mouldkit.py decode --mould out/subject --out out/subject.ply")
    console.print("  python3 mouldkit.py eval --gt out/subject --pred out/predicted --tau 30 --tau 50")
    console.print("  python3 mouldkit.py sweep --out results/sweep.csv --timings")


if __name__ == "__main__":
    sys.exit(main())
