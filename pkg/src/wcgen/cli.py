"""Command-line front end.

Machine-readable JSON goes to stdout, progress and diagnostics to stderr.
Exit codes: 0 success, 1 usage or load error, 2 partial generation
failure, 3 backend unreachable, 4 validation thresholds exceeded.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .errors import (
    InvalidArgumentError,
    LoadError,
    NotFoundError,
    PipelineStepError,
    TransportError,
    WcgenError,
)
from .geometry import RelativePose, intrinsics_from_fov, pitch_matrix, yaw_matrix
from .panorama import assemble_equirect, seam_error, trajectory_consistency
from .pipeline import PipelineConfig, run_trajectories
from .trajwarp import forward_warp, overlap_fraction
from .viewwarp import rotation_warp
from .backend import MockService, mock_suite, remote_suite, protocol
from .backend.mocks import MOCK_GENERATORS
from . import dataio

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARTIAL = 2
EXIT_UNREACHABLE = 3
EXIT_THRESHOLD = 4

DEFAULT_SEED = 0
BACKEND_URL_ENV = "WCGEN_BACKEND_URL"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _resolve_suite(spec: str | None, depth_constant: float):
    if spec is None:
        url = os.environ.get(BACKEND_URL_ENV)
        if url:
            spec = f"remote:{url}"
        else:
            spec = "mock:fill-nearest"
    if spec.startswith("mock:"):
        name = spec[len("mock:"):]
        if name not in MOCK_GENERATORS:
            raise UsageError(f"unknown mock backend {name!r}; choose from {sorted(MOCK_GENERATORS)}")
        return mock_suite(name, depth_constant)
    if spec.startswith("remote:"):
        return remote_suite(spec[len("remote:"):])
    raise UsageError(f"backend must be mock:<name> or remote:<url>, got {spec!r}")


def _load_config(args) -> PipelineConfig:
    base: dict = {}
    if getattr(args, "config", None):
        body = dataio._read_json(Path(args.config))
        known = set(PipelineConfig.__dataclass_fields__)
        unknown = set(body) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        base.update(body)
    overrides = {
        "run_seed": getattr(args, "seed", None),
        "min_overlap": getattr(args, "min_overlap", None),
        "strength_forward": getattr(args, "strength_forward", None),
        "blur_sigma": getattr(args, "blur_sigma", None),
        "workers": getattr(args, "workers", None),
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(**base)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_generate(args) -> int:
    scene = dataio.load_scene(args.scene)
    manifests = [dataio.load_trajectory_manifest(p) for p in args.traj]
    trajectories = [dataio.trajectory_from_manifest(m, scene) for m in manifests]
    cfg = _load_config(args)
    suite = _resolve_suite(args.backend, args.depth_constant)
    out_dir = Path(args.out)

    viewpoints = scene.viewpoints()
    started = time.perf_counter()
    results = run_trajectories(trajectories, viewpoints, suite, cfg, scene.scene_id)
    summary = []
    exit_code = EXIT_OK
    for traj, result in zip(trajectories, results):
        t0 = time.perf_counter()
        if isinstance(result, PipelineStepError):
            gen = result.partial
            status = "failed"
            code = EXIT_UNREACHABLE if isinstance(result.cause, TransportError) else EXIT_PARTIAL
            exit_code = max(exit_code, code)
        else:
            gen = result
            status = gen.status
        manifest_path = dataio.write_dataset(gen, out_dir) if gen is not None else None
        wall = time.perf_counter() - t0
        fallbacks = gen.fallback_count() if gen is not None else 0
        _log(
            f"trajectory {traj.id}: {status}, {len(traj.viewpoint_ids)} viewpoints, "
            f"{fallbacks} fallbacks, {wall:.2f}s"
        )
        summary.append(
            {
                "id": traj.id,
                "status": status,
                "viewpoints": len(traj.viewpoint_ids),
                "fallbacks": fallbacks,
                "output": str(manifest_path) if manifest_path else None,
            }
        )
    _log(f"total wall time {time.perf_counter() - started:.2f}s")
    _emit({"trajectories": summary})
    return exit_code


def _rotation_from_args(args) -> np.ndarray:
    return yaw_matrix(args.yaw) @ pitch_matrix(args.pitch)


def cmd_warp(args) -> int:
    img = protocol.decode_image_png(Path(args.image).read_bytes())
    k = intrinsics_from_fov(img.width, img.height, args.fov)
    if args.mode == "forward":
        if not args.depth:
            raise UsageError("forward warp requires --depth")
        depth = protocol.decode_depth_png(Path(args.depth).read_bytes(), args.depth_scale)
        translation = np.asarray([float(x) for x in args.translation.split(",")], dtype=np.float64)
        if translation.shape != (3,):
            raise UsageError("--translation must be x,y,z")
        rel = RelativePose(_rotation_from_args(args), translation)
        g = forward_warp(img, depth, k, rel)
    else:
        g = rotation_warp(img, k, _rotation_from_args(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    guidance_path = out / "guidance.png"
    mask_path = out / "mask.png"
    guidance_path.write_bytes(protocol.encode_image_png(g.color))
    mask_path.write_bytes(protocol.encode_mask_png(g.validity.astype(np.float32)))
    _emit(
        {
            "overlap": overlap_fraction(g),
            "guidance": str(guidance_path),
            "mask": str(mask_path),
        }
    )
    return EXIT_OK


def _parse_thresholds(text: str | None) -> dict:
    out = {"max-seam": 2 / 255, "max-traj": 3 / 255, "min-coverage": 0.5}
    if text:
        for part in text.split(","):
            if not part:
                continue
            try:
                key, value = part.split("=", 1)
                out[key.strip()] = float(value)
            except ValueError:
                raise UsageError(f"bad threshold entry {part!r}; expected key=value")
            if key.strip() not in ("max-seam", "max-traj", "min-coverage"):
                raise UsageError(f"unknown threshold {key.strip()!r}")
    return out


def cmd_validate(args) -> int:
    scene = dataio.load_scene(args.scene)
    if not scene.positions:
        raise LoadError("scene has no viewpoints")
    thresholds = _parse_thresholds(args.thresholds)
    report: dict = {"scene_id": scene.scene_id, "viewpoints": [], "violations": []}

    for vp_id in scene.viewpoint_ids():
        vp = scene.viewpoint(vp_id)
        seams = seam_error(vp.views, scene.intrinsics, scene.grid)
        entry = {
            "id": vp_id,
            "max_seam_error": seams.max_error,
            "mean_seam_error": seams.mean_error,
        }
        if seams.max_error > thresholds["max-seam"]:
            worst = max(seams.edges, key=lambda e: e.error)
            report["violations"].append(
                {
                    "kind": "seam",
                    "viewpoint": vp_id,
                    "edge": [worst.target, worst.source],
                    "error": worst.error,
                }
            )
        report["viewpoints"].append(entry)

    if args.traj:
        manifest = dataio.load_trajectory_manifest(args.traj)
        traj = dataio.trajectory_from_manifest(manifest, scene)
        steps = []
        for t in range(1, traj.length):
            prev = scene.viewpoint(traj.viewpoint_ids[t - 1])
            cur = scene.viewpoint(traj.viewpoint_ids[t])
            r_prev = traj.reference_indices[t - 1]
            r_cur = traj.reference_indices[t]
            res = trajectory_consistency(
                prev.views[r_prev],
                prev.depths[r_prev],
                cur.views[r_cur],
                scene.intrinsics,
                traj.relative_poses[t - 1],
            )
            steps.append(
                {"step": t, "error": res.mean_abs_error, "coverage": res.valid_fraction}
            )
            if res.mean_abs_error > thresholds["max-traj"] or res.valid_fraction < thresholds["min-coverage"]:
                report["violations"].append(
                    {
                        "kind": "trajectory",
                        "step": t,
                        "error": res.mean_abs_error,
                        "coverage": res.valid_fraction,
                    }
                )
        report["trajectory"] = {"id": traj.id, "steps": steps}

    _emit(report)
    return EXIT_THRESHOLD if report["violations"] else EXIT_OK


def cmd_synth(args) -> int:
    if args.spec:
        spec = dataio.SyntheticSceneSpec.from_json(dataio._read_json(Path(args.spec)))
    else:
        spec = dataio.SyntheticSceneSpec()
    scene = dataio.synth_scene(spec, args.seed)
    manifest = dataio.save_scene(scene, args.out)
    _emit({"scene": str(manifest), "viewpoints": scene.viewpoint_ids()})
    return EXIT_OK


def cmd_assemble(args) -> int:
    scene = dataio.load_scene(args.scene)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for vp_id in scene.viewpoint_ids():
        vp = scene.viewpoint(vp_id)
        pano = assemble_equirect(vp.views, scene.intrinsics, scene.grid, args.width, args.height)
        path = out / f"{vp_id}_pano.png"
        path.write_bytes(protocol.encode_image_png(pano))
        written.append(str(path))
        _log(f"assembled {vp_id} -> {path}")
    _emit({"panoramas": written})
    return EXIT_OK


def cmd_serve_mock(args) -> int:
    suite = _resolve_suite(args.backend, args.depth_constant)
    service = MockService(suite, host=args.host, port=args.port, verbose=args.verbose)
    _log(f"serving {args.backend} on {service.base_url} (ctrl-c to stop)")
    _emit({"url": service.base_url})
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        pass
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="wcgen", description="World-consistent view synthesis toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="run the two-stage generation over trajectories")
    p.add_argument("--scene", required=True)
    p.add_argument("--traj", required=True, nargs="+")
    p.add_argument("--backend", default=None, help="mock:<name> or remote:<url>")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--min-overlap", dest="min_overlap", type=float, default=None)
    p.add_argument("--strength-forward", dest="strength_forward", type=float, default=None)
    p.add_argument("--blur-sigma", dest="blur_sigma", type=float, default=None)
    p.add_argument("--depth-constant", dest="depth_constant", type=float, default=3.0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("warp", help="warp one image to a new pose or orientation")
    p.add_argument("--mode", choices=("forward", "rotate"), required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--depth", default=None)
    p.add_argument("--depth-scale", dest="depth_scale", type=int, default=4000)
    p.add_argument("--fov", type=float, default=60.0)
    p.add_argument("--yaw", type=float, default=0.0)
    p.add_argument("--pitch", type=float, default=0.0)
    p.add_argument("--translation", default="0,0,0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("validate", help="measure seam and trajectory consistency")
    p.add_argument("--scene", required=True)
    p.add_argument("--traj", default=None)
    p.add_argument("--thresholds", default=None, help="comma list: max-seam=, max-traj=, min-coverage=")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("synth", help="render a synthetic scene")
    p.add_argument("--spec", default=None)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("assemble", help="assemble equirectangular panoramas")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=2048)
    p.add_argument("--height", type=int, default=1024)
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("serve-mock", help="host a mock backend over the wire protocol")
    p.add_argument("--backend", default="mock:fill-nearest")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8711)
    p.add_argument("--depth-constant", dest="depth_constant", type=float, default=3.0)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_serve_mock)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        _log(f"usage error: {exc}")
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (LoadError, NotFoundError, InvalidArgumentError) as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE
    except TransportError as exc:
        _log(f"backend unreachable: {exc}")
        return EXIT_UNREACHABLE
    except PipelineStepError as exc:
        _log(f"generation failed at {exc.stage} step {exc.step}: {exc.cause}")
        return EXIT_PARTIAL
    except WcgenError as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
