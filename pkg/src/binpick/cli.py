"""Command line: scene generation, labeling, fusion, evaluation, utilities.

Subcommands: scene-gen, labels, fuse, eval, ps, loss-check.
Exit codes: 0 success, 1 usage error, 2 validation failure, 3 I/O error.
Every command is deterministic given its inputs and --seed, independent of
--threads.
"""

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunConfig
from .evaluate import aggregate_metrics, run_episode
from .geometry import normalize
from .oracle import generate_labels, recheck_collisions, recheck_labels, save_labels
from .power_spherical import PowerSpherical, ps_log_pdf, ps_sample
from .predictor import FilePredictor, OraclePredictor
from .scene import load_scene, make_scene, save_scene
from .volumetric import (
    fuse_depth,
    load_depth,
    load_intrinsics,
    save_grid,
    tsdf_normals,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_IO = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _scene_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def cmd_scene_gen(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        seed = _scene_seed(cfg.master_seed, i)
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, cfg.max_objects + 1))
        scene = make_scene(seed, n, cfg.shape_pool, cfg.bin, scene_id=i)
        save_scene(out / f"scene_{i:04d}.json", scene)
    print(f"wrote {args.count} scene files to {out}")
    return EXIT_OK


def _scene_paths(spec: str) -> list[Path]:
    p = Path(spec)
    if p.is_dir():
        return sorted(p.glob("scene_*.json"))
    if p.exists():
        return [p]
    raise FileNotFoundError(f"no scene file or directory at {spec}")


def cmd_labels(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    total_grasps = 0
    total_objects = 0
    for path in _scene_paths(args.scenes):
        scene = load_scene(path)
        label_set = generate_labels(scene, cfg.oracle, seed=cfg.master_seed)
        if args.recheck:
            rq = recheck_labels(scene, label_set)
            rc = recheck_collisions(scene, label_set)
            if rq["failed"] or rc["failed"]:
                print(f"recheck FAILED for {path.name}: {rq} {rc}", file=sys.stderr)
                return EXIT_VALIDATION
        save_labels(out / (path.stem + "_labels.jsonl"), label_set)
        total_grasps += len(label_set.labels)
        total_objects += len(scene.objects)
    density = total_grasps / total_objects if total_objects else 0.0
    print(f"labeled {total_objects} objects, {total_grasps} grasps "
          f"({density:.1f} grasps/object)")
    return EXIT_OK


def cmd_fuse(args, cfg: RunConfig) -> int:
    depth = load_depth(args.depth)
    intr, cam_pose = load_intrinsics(args.intrinsics)
    spec = cfg.grid_spec()
    tsdf = fuse_depth(depth, intr, cam_pose, spec, trunc=cfg.trunc)
    normals = tsdf_normals(tsdf)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_grid(out.with_name(out.name + "_tsdf"), tsdf)
    save_grid(out.with_name(out.name + "_normals"), normals)
    print(f"wrote {out.name}_tsdf and {out.name}_normals "
          f"({int(normals.mask.sum())} surface voxels)")
    return EXIT_OK


def _run_one_episode(path: Path, args, cfg: RunConfig):
    scene = load_scene(path)
    spec = cfg.grid_spec()
    if args.predictor == "oracle":
        predictor = OraclePredictor(scene, cfg.oracle, spec, seed=cfg.master_seed)
    elif args.predictor.startswith("file:"):
        base = Path(args.predictor[5:])
        pred_path = base / (path.stem + "_pred.jsonl") if base.is_dir() else base
        predictor = FilePredictor(pred_path, spec)
    else:
        raise _UsageError(f"unknown predictor {args.predictor!r}")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.master_seed, scene.scene_id]))
    result = run_episode(
        scene,
        predictor,
        cfg.gripper,
        spec,
        camera_height=cfg.camera_height,
        q_threshold=cfg.q_threshold,
        sigma_threshold=cfg.sigma_threshold,
        max_approaches=cfg.max_approaches,
        noise=cfg.noise_enabled,
        rng=rng,
        probe_spacing=cfg.oracle.probe_spacing,
    )
    return scene.scene_id, result


def cmd_eval(args, cfg: RunConfig) -> int:
    paths = _scene_paths(args.scenes)
    if not paths:
        raise ValueError("no scenes to evaluate")
    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            rows = list(pool.map(lambda p: _run_one_episode(p, args, cfg), paths))
    else:
        rows = [_run_one_episode(p, args, cfg) for p in paths]
    rows.sort(key=lambda r: r[0])
    results = [r for _, r in rows]
    metrics = aggregate_metrics(results)
    hist: dict[str, int] = {}
    for r in results:
        hist[r.termination.value] = hist.get(r.termination.value, 0) + 1

    report = {
        "preset": cfg.preset,
        "predictor": args.predictor,
        "master_seed": cfg.master_seed,
        "scenes": [dict(scene_id=sid, **res.to_dict()) for sid, res in rows],
        "SR": metrics["SR"],
        "CR": metrics["CR"],
        "termination_histogram": dict(sorted(hist.items())),
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    with open(out / "report.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["scenario", "SR", "CR"])
        writer.writerow([cfg.preset, report["SR"], report["CR"]])
    print(f"SR={metrics['SR']} CR={metrics['CR']} over {len(results)} scenes")
    return EXIT_OK


def cmd_ps(args, cfg: RunConfig) -> int:
    mu = normalize(np.asarray([float(x) for x in args.mu.split(",")]))
    d = PowerSpherical(mu, args.kappa)
    if args.action == "sample":
        rng = np.random.default_rng(cfg.master_seed)
        if args.n > 0:
            for x in np.atleast_2d(ps_sample(d, rng, args.n)):
                print(f"{x[0]},{x[1]},{x[2]}")
        return EXIT_OK
    if args.action == "pdf":
        rng = np.random.default_rng(cfg.master_seed)
        pts = np.atleast_2d(ps_sample(PowerSpherical(mu, 1e-9), rng, max(args.n, 1)))
        for x in pts:
            print(f"{x[0]},{x[1]},{x[2]},{np.exp(ps_log_pdf(x, d))}")
        return EXIT_OK
    if args.action == "check":
        # polar quadrature of the density (it depends only on the polar angle)
        nodes, weights = np.polynomial.legendre.leggauss(512)
        pdf = np.exp(
            np.array([ps_log_pdf(np.array([0.0, np.sqrt(1 - s * s), s]), d) for s in nodes])
        )
        integral = float(2.0 * np.pi * (weights * pdf).sum())
        print(f"kappa={args.kappa} integral={integral:.9f}")
        return EXIT_OK if abs(integral - 1.0) <= 1e-6 else EXIT_VALIDATION
    raise _UsageError(f"unknown ps action {args.action!r}")


def cmd_loss_check(args, cfg: RunConfig) -> int:
    from .losses import loss_check

    report = loss_check(n_instances=args.instances, seed=cfg.master_seed)
    text = json.dumps(report, sort_keys=True, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK if report["passed"] else EXIT_VALIDATION


def build_parser() -> _Parser:
    parser = _Parser(prog="binpick", description=__doc__)
    parser.add_argument("--config", help="JSON config overriding RunConfig defaults")
    parser.add_argument("--seed", type=int, default=None, help="master seed")
    parser.add_argument("--preset", choices=["easy", "medium", "challenging"], default=None)
    parser.add_argument("--noise", choices=["on", "off"], default=None)
    parser.add_argument("--threads", type=int, default=1)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scene-gen", help="generate scene files")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("labels", help="generate grasp labels for scenes")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--recheck", action="store_true", help="independently re-verify labels")

    p = sub.add_parser("fuse", help="fuse a depth image into TSDF + normal grids")
    p.add_argument("--depth", required=True)
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--out", required=True, help="output path prefix")

    p = sub.add_parser("eval", help="run clearing episodes and report SR/CR")
    p.add_argument("--scenes", required=True)
    p.add_argument("--predictor", default="oracle", help="oracle or file:<path>")
    p.add_argument("--out", required=True)

    p = sub.add_parser("ps", help="power-spherical utilities")
    p.add_argument("action", choices=["sample", "pdf", "check"])
    p.add_argument("--mu", default="0,0,1")
    p.add_argument("--kappa", type=float, default=25.0)
    p.add_argument("-n", type=int, default=10)

    p = sub.add_parser("loss-check", help="finite-difference gradient report")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--out", default=None)

    return parser


COMMANDS = {
    "scene-gen": cmd_scene_gen,
    "labels": cmd_labels,
    "fuse": cmd_fuse,
    "eval": cmd_eval,
    "ps": cmd_ps,
    "loss-check": cmd_loss_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        noise = None if args.noise is None else args.noise == "on"
        cfg = RunConfig.from_json(
            args.config, master_seed=args.seed, preset=args.preset, noise=noise
        )
        return COMMANDS[args.command](args, cfg)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, PermissionError, IsADirectoryError, OSError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
