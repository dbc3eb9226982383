"""Command-line entry point.

Subcommands: ``synth`` (generate labeled synthetic sequences), ``sample``
(redundancy-aware frame selection), ``featurize`` (reflectivity histogram
features), ``pseudo`` (entropy-split pseudo-labels for one frame),
``cost`` (parameter and multiply-add accounting) and ``train-toy`` (the
staged semi-supervised loop on synthetic data).

Exit codes: 0 on success, 2 on validation problems (bad flags, missing or
malformed inputs), 3 on internal errors. ``LIM3D_THREADS`` overrides the
``--threads`` flag. Outputs of featurize/pseudo/train-toy carry a
provenance block (tool version, config hash, seed); bulk binary outputs
get it as a ``.meta.json`` sidecar.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import Lim3dError
from .network import MiniSegNet, mini_backbone_topology, topology_cost, LayerSpec
from .pointcloud import (SceneSpec, frame_path, image_path, label_path,
                         list_sequence_frames, load_frame, load_labels,
                         project_range_image, range_to_grayscale, read_pgm,
                         save_frame, save_labels, synth_sequence, write_pgm)
from .pseudolabel import VoxelPredictions, entropy_partition, crb_select
from .reflectivity import ReflecConfig, coarse_histograms, normalize_reflectivity, reflectivity
from .sampling import StrfdConfig, calibrate_beta, plan, save_plan
from .training import ToyPipelineConfig, run_toy_pipeline
from .voxel import CylGridSpec, voxelize

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INTERNAL = 3

UNRELIABLE_LABEL = 0xFFFFFFFF  # sentinel for voxels without a reliable label


def _threads(args) -> int:
    env = os.environ.get("LIM3D_THREADS")
    if env is not None:
        return max(1, int(env))
    if args.threads is not None:
        return max(1, args.threads)
    return os.cpu_count() or 1


_HASH_EXCLUDED = {"func", "report", "out", "save_model", "out_dir"}


def _provenance(args, extra: dict | None = None) -> dict:
    payload = {k: v for k, v in sorted(vars(args).items()) if k not in _HASH_EXCLUDED}
    if extra:
        payload.update(extra)
    digest = hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()
    return {
        "tool": "lim3d",
        "version": __version__,
        "seed": getattr(args, "seed", None),
        "config_hash": digest[:16],
    }


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = SceneSpec(
        n_points=args.n_points,
        segment_length=args.segment_length,
        segment_speeds=tuple(float(s) for s in args.speeds.split(",")),
        image_width=args.width,
        image_height=args.height,
    )
    root = Path(args.out_dir)
    for s in range(args.sequences):
        seq = f"{s:02d}"
        frames = synth_sequence(spec, args.frames, args.seed + 1000 * s, sequence_id=s)
        max_range = max(float(ri.values.max()) for _, ri in frames) or 1.0
        for t, (pc, ri) in enumerate(frames):
            for p in (frame_path(root, seq, t), label_path(root, seq, t), image_path(root, seq, t)):
                p.parent.mkdir(parents=True, exist_ok=True)
            save_frame(frame_path(root, seq, t), pc)
            save_labels(label_path(root, seq, t), pc.labels.astype(np.uint32))
            write_pgm(image_path(root, seq, t), range_to_grayscale(ri, max_range))
    print(f"wrote {args.sequences} sequence(s) x {args.frames} frame(s) under {root}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------


def _load_sequence_images(root: Path, seq: str, source: str,
                          width: int, height: int) -> list[np.ndarray]:
    frames = list_sequence_frames(root, seq)
    if not frames:
        raise Lim3dError(f"no frames under {root}/sequences/{seq}/velodyne")
    if source == "gray":
        return [read_pgm(image_path(root, seq, t)).astype(np.float64) for t in frames]
    images = []
    for t in frames:
        pc = load_frame(frame_path(root, seq, t), frame_id=t)
        images.append(project_range_image(pc, width=width, height=height).values.astype(np.float64))
    peak = max((float(im.max()) for im in images), default=0.0) or 1.0
    return [np.round(np.clip(im / peak, 0, 1) * 255.0) for im in images]


def cmd_sample(args) -> int:
    root = Path(args.seq_dir)
    seq_root = root / "sequences"
    if not seq_root.is_dir():
        print(f"error: sequence directory not found: {seq_root}", file=sys.stderr)
        return EXIT_VALIDATION
    if (args.beta is None) == (args.target_fraction is None):
        print("error: pass exactly one of --beta or --target-fraction", file=sys.stderr)
        return EXIT_VALIDATION
    names = sorted(p.name for p in seq_root.iterdir() if p.is_dir())
    sequences = [
        _load_sequence_images(root, name, args.source, args.width, args.height)
        for name in names
    ]
    cfg = StrfdConfig(subset_size=args.subset_size,
                      beta=args.beta if args.beta is not None else 0.0,
                      redundancy_source="grayscale_image" if args.source == "gray" else "range_image")
    threads = _threads(args)
    if args.target_fraction is not None:
        beta, result = calibrate_beta(sequences, cfg, args.target_fraction, n_threads=threads)
        print(f"calibrated beta = {beta:.6f}")
    else:
        result = plan(sequences, cfg, n_threads=threads)
    save_plan(args.out, result, keys={i: n for i, n in enumerate(names)})
    print(f"selected {result.total()} of {sum(len(s) for s in sequences)} frames -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# featurize
# ---------------------------------------------------------------------------


def _reflec_config(path: str | None) -> ReflecConfig:
    if path is None:
        return ReflecConfig()
    with open(path) as f:
        raw = json.load(f)
    return ReflecConfig(n_bins=int(raw.get("n_bins", 10)),
                        bin_grids=tuple(tuple(int(v) for v in g) for g in raw["bin_grids"]))


def cmd_featurize(args) -> int:
    cfg = _reflec_config(args.config)
    pc = load_frame(args.infile)
    feats = coarse_histograms(pc, normalize_reflectivity(reflectivity(pc)), cfg)
    feats.astype("<f4").tofile(args.out)
    _write_json(args.out + ".meta.json", {
        "provenance": _provenance(args),
        "n_points": len(pc),
        "channels_added": cfg.feature_dim,
        "layout": "little-endian float32, per point, histogram scales concatenated",
    })
    print(f"wrote {len(pc)} x {cfg.feature_dim} features -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# pseudo
# ---------------------------------------------------------------------------


def _grid_from_args(args) -> CylGridSpec:
    return CylGridSpec(n_rho=args.n_rho, n_phi=args.n_phi, n_z=args.n_z,
                       rho_max=args.rho_max, z_range=(args.z_min, args.z_max))


def cmd_pseudo(args) -> int:
    pc = load_frame(args.infile)
    grid = _grid_from_args(args)
    if args.model is not None:
        # The weight file records the featurization and topology it was
        # trained with; rebuild both before voxelizing.
        saved = np.load(args.model)
        n_bins = int(saved["reflec_bins"])
        if n_bins > 0:
            rcfg = ReflecConfig(n_bins=n_bins,
                                bin_grids=tuple(tuple(int(v) for v in g)
                                                for g in saved["reflec_grids"]))
            from .reflectivity import augment
            pc = augment(pc, coarse_histograms(
                pc, normalize_reflectivity(reflectivity(pc)), rcfg))
        svt = voxelize(pc, grid)
        net = MiniSegNet(int(saved["in_channels"]), int(saved["n_classes"]),
                         tuple(int(w) for w in saved["widths"]),
                         int(saved["kernel_size"]), seed=args.seed)
        net.load_flat(saved["flat"])
    else:
        svt = voxelize(pc, grid)
        net = MiniSegNet(svt.channels, args.n_classes, seed=args.seed)
    probs, emb = net.predict(svt)
    vp = VoxelPredictions(probs=probs, embeddings=emb,
                          radii=grid.voxel_centers(svt.coords)[:, 0])

    if args.percentile == 0.0:
        # Degenerate lower boundary: nothing is unreliable.
        from .pseudolabel import PseudoLabelSet, shannon_entropy
        argmax = probs.argmax(axis=1)
        pls = PseudoLabelSet(reliable={int(i): int(argmax[i]) for i in range(len(probs))},
                             unreliable=frozenset(), entropy=shannon_entropy(probs))
    else:
        pls = entropy_partition(vp, percentile=args.percentile)
        if args.per_class_keep < 1.0:
            pls = crb_select(pls, vp, args.per_class_keep)

    # Map voxel labels back to points through each point's voxel id.
    labels = np.full(len(pc), UNRELIABLE_LABEL, dtype=np.uint32)
    keys = svt.keys()
    if len(pc) and len(keys):
        xyz = pc.xyz.astype(np.float64)
        rho = np.hypot(xyz[:, 0], xyz[:, 1])
        phi = np.arctan2(xyz[:, 1], xyz[:, 0])
        inside = (rho < grid.rho_max) & (xyz[:, 2] >= args.z_min) & (xyz[:, 2] < args.z_max)
        i_rho = np.minimum(np.floor(rho / grid.rho_max * grid.n_rho).astype(np.int64), grid.n_rho - 1)
        i_phi = np.floor((phi + np.pi) / (2 * np.pi) * grid.n_phi).astype(np.int64) % grid.n_phi
        i_z = np.minimum(np.floor((xyz[:, 2] - args.z_min) / (args.z_max - args.z_min)
                                  * grid.n_z).astype(np.int64), grid.n_z - 1)
        pkeys = (i_rho * grid.n_phi + i_phi) * grid.n_z + i_z
        pos = np.minimum(np.searchsorted(keys, pkeys), len(keys) - 1)
        hit = inside & (keys[pos] == pkeys)
        for i in np.flatnonzero(hit):
            vox = int(pos[i])
            if vox in pls.reliable:
                labels[i] = pls.reliable[vox]
    save_labels(args.out, labels)

    argmax = probs.argmax(axis=1)
    counts: dict[str, dict[str, int]] = {}
    for c in range(args.n_classes):
        counts[str(c)] = {
            "reliable": sum(1 for v in pls.reliable.values() if v == c),
            "unreliable": sum(1 for i in pls.unreliable if argmax[i] == c),
        }
    _write_json(args.out + ".meta.json", {
        "provenance": _provenance(args),
        "n_points": len(pc),
        "n_voxels": svt.n_active,
        "reliable_voxels": len(pls.reliable),
        "unreliable_voxels": len(pls.unreliable),
        "per_class": counts,
        "unreliable_sentinel": UNRELIABLE_LABEL,
    })
    print(f"{len(pls.reliable)} reliable / {len(pls.unreliable)} unreliable voxels -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# cost
# ---------------------------------------------------------------------------


def _topology_from_file(path: str) -> tuple[LayerSpec, ...]:
    with open(path) as f:
        raw = json.load(f)
    layers = []
    for item in raw["layers"]:
        layers.append(LayerSpec(
            kind=item["kind"],
            in_channels=int(item["in"]),
            out_channels=int(item["out"]),
            kernel_size=int(item.get("kernel_size", 3 if item["kind"] != "pointwise" else 1)),
            bias=bool(item.get("bias", True)),
        ))
    return tuple(layers)


def cmd_cost(args) -> int:
    if (args.topology is None) == (not args.mini_backbone):
        print("error: pass exactly one of --topology or --mini-backbone", file=sys.stderr)
        return EXIT_VALIDATION
    if args.mini_backbone:
        layers = mini_backbone_topology(args.in_channels, args.n_classes)
    else:
        layers = _topology_from_file(args.topology)
    rows, totals = topology_cost(layers, args.active_sites)
    payload = {
        "active_sites": args.active_sites,
        "per_layer": rows,
        "trainable_params": totals.trainable_params,
        "mult_adds": totals.mult_adds,
    }
    if args.out:
        _write_json(args.out, payload)
        print(f"params={totals.trainable_params} mult_adds={totals.mult_adds} -> {args.out}")
    else:
        print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# train-toy
# ---------------------------------------------------------------------------


def cmd_train_toy(args) -> int:
    stages = tuple(int(s) for s in args.stages.split(","))
    overrides = {}
    if args.steps is not None:
        overrides.update(steps_stage1=args.steps, steps_stage3=args.steps)
    cfg = ToyPipelineConfig(
        labeled_fraction=args.labeled_fraction,
        stages=stages,
        seed=args.seed,
        use_bank=not args.no_bank,
        literal_gate=args.literal_gate,
        frames_per_sequence=args.frames,
        **overrides,
    )
    report = run_toy_pipeline(cfg, save_model=args.save_model)
    report["provenance"] = _provenance(args)
    _write_json(args.report, report)
    print(f"miou={report['metrics']['miou']} -> {args.report}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lim3d", description=__doc__.split("\n\n")[0])
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: machine parallelism; env LIM3D_THREADS wins)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--sequences", type=int, default=1)
    p.add_argument("--frames", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-points", type=int, default=600)
    p.add_argument("--segment-length", type=int, default=8)
    p.add_argument("--speeds", default="0,1")
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=32)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sample", help="select diverse frames from sequences")
    p.add_argument("--seq-dir", required=True)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--target-fraction", type=float, default=None)
    p.add_argument("--subset-size", type=int, default=10)
    p.add_argument("--source", choices=("gray", "range"), default="gray")
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("featurize", help="append reflectivity histogram features")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--config", default=None, help="JSON with n_bins and bin_grids")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("pseudo", help="emit entropy-split pseudo-labels for a frame")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--model", default=None, help="npz with a 'flat' parameter vector")
    p.add_argument("--n-classes", type=int, default=3)
    p.add_argument("--percentile", type=float, default=80.0)
    p.add_argument("--per-class-keep", type=float, default=1.0)
    p.add_argument("--n-rho", type=int, default=10)
    p.add_argument("--n-phi", type=int, default=16)
    p.add_argument("--n-z", type=int, default=6)
    p.add_argument("--rho-max", type=float, default=20.0)
    p.add_argument("--z-min", type=float, default=-1.0)
    p.add_argument("--z-max", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pseudo)

    p = sub.add_parser("cost", help="parameter and multiply-add accounting")
    p.add_argument("--topology", default=None, help="JSON topology file")
    p.add_argument("--mini-backbone", action="store_true")
    p.add_argument("--in-channels", type=int, default=34)
    p.add_argument("--n-classes", type=int, default=3)
    p.add_argument("--active-sites", type=int, default=1000)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("train-toy", help="staged semi-supervised run on synthetic data")
    p.add_argument("--labeled-fraction", type=float, default=1.0)
    p.add_argument("--stages", default="1,2,3")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=None,
                   help="override both training stages' step counts")
    p.add_argument("--frames", type=int, default=24)
    p.add_argument("--no-bank", action="store_true")
    p.add_argument("--literal-gate", action="store_true")
    p.add_argument("--save-model", default=None)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_train_toy)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (Lim3dError, FileNotFoundError, NotADirectoryError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
