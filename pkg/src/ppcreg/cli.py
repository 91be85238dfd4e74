"""Command-line harness: phantom generation, DRR rendering, registration
runs, pose sampling, and the single-update evaluation experiment."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import figures, io_formats
from .correspondence import MatchParams
from .errors import PpcRegError
from .geometry import ProjectionGeometry, RigidTransform
from .pipeline import (
    RegistrationConfig,
    register,
    run_single_update_experiment,
    sample_initial_transform,
    view_pose,
)
from .projector import image_gradient, render_drr
from .volume import CannyParams, PRESET_NAMES, Volume, make_phantom, preset_spec


class ConfigError(PpcRegError):
    """Bad experiment configuration: reported as a usage error (exit 2)."""


@dataclass(frozen=True)
class ViewSpec:
    axis: tuple[float, float, float] = (0.0, 1.0, 0.0)
    angle_deg: float = 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    phantom_preset: str = "vertebra"
    phantom_seed: int = 7
    geometry: ProjectionGeometry = field(
        default_factory=lambda: ProjectionGeometry(
            sdd=1000.0,
            detector_size=(256, 256),
            pixel_spacing=(1.5, 1.5),
            principal_point=(128.0, 128.0),
        )
    )
    depth: float = 600.0
    views: tuple[ViewSpec, ...] = (
        ViewSpec((0.0, 1.0, 0.0), 0.0),
        ViewSpec((0.0, 1.0, 0.0), 20.0),
        ViewSpec((1.0, 0.0, 0.0), -15.0),
    )
    count: int = 200
    mtre_range: tuple[float, float] = (0.0, 45.0)
    seed: int = 20210
    registration: RegistrationConfig = field(
        default_factory=lambda: RegistrationConfig(
            matching=MatchParams(search_radius=50, min_score=0.5),
            weighting="score_irls",
            canny=CannyParams(max_points=3000),
            drr_step=1.0,
        )
    )


def _build_config(d: dict) -> ExperimentConfig:
    try:
        kwargs = {}
        if "phantom" in d:
            p = d["phantom"]
            kwargs["phantom_preset"] = p.get("preset", "vertebra")
            kwargs["phantom_seed"] = int(p.get("seed", 7))
        if "geometry" in d:
            g = d["geometry"]
            kwargs["geometry"] = ProjectionGeometry(
                sdd=float(g["sdd"]),
                detector_size=tuple(int(x) for x in g["detector_size"]),
                pixel_spacing=tuple(float(x) for x in g["pixel_spacing"]),
                principal_point=tuple(float(x) for x in g["principal_point"]),
            )
        if "depth" in d:
            kwargs["depth"] = float(d["depth"])
        if "views" in d:
            kwargs["views"] = tuple(
                ViewSpec(tuple(float(a) for a in v["axis"]), float(v["angle_deg"]))
                for v in d["views"]
            )
        if "sampling" in d:
            s = d["sampling"]
            kwargs["count"] = int(s.get("count", 200))
            if "mtre_range" in s:
                lo, hi = (float(x) for x in s["mtre_range"])
                if not (0 <= lo <= hi):
                    raise ConfigError(f"bad mtre_range [{lo}, {hi}]")
                kwargs["mtre_range"] = (lo, hi)
            kwargs["seed"] = int(s.get("seed", 20210))
        if "registration" in d:
            r = dict(d["registration"])
            if "matching" in r:
                r["matching"] = MatchParams(**r["matching"])
            if "canny" in r:
                canny = dict(r["canny"])
                if canny.get("max_points") is not None:
                    canny["max_points"] = int(canny["max_points"])
                r["canny"] = CannyParams(**canny)
            kwargs["registration"] = RegistrationConfig(**r)
        return ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        return _build_config(json.loads(p.read_text()))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {p} is not valid JSON: {exc}") from exc


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    reg = cfg.registration
    if getattr(args, "matcher", None):
        reg = replace(reg, matcher=args.matcher)
    if getattr(args, "weights", None):
        reg = replace(reg, weighting=args.weights)
    if getattr(args, "max_iterations", None):
        reg = replace(reg, max_iterations=args.max_iterations)
    cfg = replace(cfg, registration=reg)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "count", None) is not None:
        cfg = replace(cfg, count=args.count)
    return cfg


def _load_volume_arg(path: str) -> Volume:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"volume file not found: {p}")
    return io_formats.load_volume(p)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_phantom(args) -> int:
    if args.preset not in PRESET_NAMES:
        print(
            f"error: unknown preset {args.preset!r}; choose from {', '.join(PRESET_NAMES)}",
            file=sys.stderr,
        )
        return 2
    vol = make_phantom(preset_spec(args.preset), seed=args.seed)
    io_formats.save_volume(vol, args.out)
    print(f"wrote {args.out} ({vol.dims[0]}x{vol.dims[1]}x{vol.dims[2]} voxels)")
    return 0


def cmd_render(args) -> int:
    cfg = load_config(args.config)
    vol = _load_volume_arg(args.volume)
    if args.pose:
        pose = io_formats.load_pose(args.pose)
    else:
        view = cfg.views[args.view % len(cfg.views)]
        pose = view_pose(vol, cfg.depth, view.axis, view.angle_deg)
    img = render_drr(vol, pose, cfg.geometry, cfg.registration.drr_step)
    io_formats.export_image_pgm(img, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_register(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    reg = cfg.registration
    vol = _load_volume_arg(args.volume)
    out = _out_dir(args)

    t_gt = io_formats.load_pose(args.t_gt) if args.t_gt else None
    if args.t_init:
        t_init = io_formats.load_pose(args.t_init)
    elif t_gt is not None and args.init_mtre is not None:
        from .volume import extract_surface_points

        surface = extract_surface_points(vol, reg.canny)
        rng = np.random.default_rng(cfg.seed)
        t_init = sample_initial_transform(t_gt, surface, args.init_mtre, rng).t_init
    else:
        raise ConfigError("provide --t-init, or --t-gt with --init-mtre")

    grad_flr = None
    fluoro_img = None
    if reg.matcher == "image":
        if args.fluoro:
            fluoro_img = io_formats.import_image_pgm(args.fluoro)
        elif t_gt is not None:
            fluoro_img = render_drr(vol, t_gt, cfg.geometry, reg.drr_step)
        else:
            raise ConfigError("image matching needs --fluoro or --t-gt")
        grad_flr = image_gradient(fluoro_img)
    elif t_gt is None:
        raise ConfigError("oracle matching needs --t-gt")

    report = register(vol, cfg.geometry, t_init, reg, grad_flr=grad_flr, t_gt=t_gt)
    io_formats.save_report(report, out / "report.json")
    io_formats.save_pose(report.final_pose, out / "final_pose.json")
    if fluoro_img is not None:
        from .projector import Image2D

        drr = render_drr(vol, report.final_pose, cfg.geometry, reg.drr_step)
        overlay = Image2D(_normalized(fluoro_img.data) + _normalized(drr.data))
        io_formats.export_image_pgm(overlay, out / "overlay.pgm")
    if report.mtre_trace:
        figures.save_convergence_plot(report.mtre_trace, out / "convergence.png")
        print(
            f"converged={report.converged} iterations={report.n_iterations} "
            f"final mTRE={report.mtre_trace[-1]:.4f} mm"
        )
    else:
        print(f"converged={report.converged} iterations={report.n_iterations}")
    return 0


def _normalized(a: np.ndarray) -> np.ndarray:
    lo, hi = float(a.min()), float(a.max())
    return (a - lo) / (hi - lo) if hi > lo else np.zeros_like(a)


def cmd_eval_update(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = _out_dir(args)
    vol = make_phantom(preset_spec(cfg.phantom_preset), seed=cfg.phantom_seed)
    poses = [view_pose(vol, cfg.depth, v.axis, v.angle_deg) for v in cfg.views]
    summary, records = run_single_update_experiment(
        vol,
        cfg.geometry,
        poses,
        cfg.registration,
        cfg.count,
        cfg.mtre_range,
        cfg.seed,
    )
    name = f"{cfg.phantom_preset}-{cfg.registration.matcher}"
    io_formats.export_results_csv(
        summary, records, out / "eval_summary.csv", out / "eval_samples.csv", name=name
    )
    figures.save_error_scatter(records, out / "error_scatter.png")
    print(
        f"{name}: n={summary.n_samples} "
        f"p50={summary.p50:.2f} p75={summary.p75:.2f} p95={summary.p95:.2f} "
        f"mTRE={summary.mtre_mean:.2f}+-{summary.mtre_std:.2f} mm "
        f"RF={summary.rf_mean:.3f}+-{summary.rf_std:.3f}"
    )
    return 0


def cmd_sample_poses(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    vol = make_phantom(preset_spec(cfg.phantom_preset), seed=cfg.phantom_seed)
    from .volume import extract_surface_points

    surface = extract_surface_points(vol, cfg.registration.canny)
    poses = [view_pose(vol, cfg.depth, v.axis, v.angle_deg) for v in cfg.views]
    entries = []
    for i in range(cfg.count):
        seed = cfg.seed + 1_000_003 * i
        rng = np.random.default_rng(seed)
        view_id = i % len(poses)
        target = rng.uniform(cfg.mtre_range[0], cfg.mtre_range[1])
        sample = sample_initial_transform(
            poses[view_id], surface, target, rng, view_id=view_id, seed=seed
        )
        entries.append(
            {
                "sample_id": i,
                "view_id": view_id,
                "seed": seed,
                "target_mtre_mm": target,
                "t_gt": _pose_dict(sample.t_gt),
                "t_init": _pose_dict(sample.t_init),
            }
        )
    Path(args.out).write_text(json.dumps(entries, indent=2) + "\n")
    print(f"wrote {len(entries)} pose pairs to {args.out}")
    return 0


def _pose_dict(t: RigidTransform) -> dict:
    return {
        "frame": io_formats.POSE_FRAME_TAG,
        "rotation": np.asarray(t.rotation).tolist(),
        "translation": np.asarray(t.translation).tolist(),
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ppcreg",
        description="Single-view 2D/3D rigid registration via point-to-plane correspondences",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate and save a phantom volume")
    p.add_argument("--preset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("render", help="render a DRR to a 16-bit PGM")
    p.add_argument("--volume", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--pose", help="pose file; defaults to the configured view")
    p.add_argument("--view", type=int, default=0)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("register", help="run iterative registration")
    p.add_argument("--volume", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--t-init", dest="t_init")
    p.add_argument("--t-gt", dest="t_gt")
    p.add_argument("--init-mtre", dest="init_mtre", type=float,
                   help="sample t_init at this mTRE from --t-gt")
    p.add_argument("--fluoro", help="PGM fluoro image; default renders at --t-gt")
    p.add_argument("--matcher", choices=["image", "oracle"])
    p.add_argument("--weights", choices=["uniform", "score", "score_irls"])
    p.add_argument("--max-iterations", dest="max_iterations", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("eval-update", help="single-update evaluation experiment")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--matcher", choices=["image", "oracle"])
    p.add_argument("--weights", choices=["uniform", "score", "score_irls"])
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval_update)

    p = sub.add_parser("sample-poses", help="emit (t_gt, t_init) pose pairs")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_sample_poses)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PpcRegError as exc:
        print(f"error: {exc.__class__.__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
