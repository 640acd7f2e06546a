"""The ``tagflow`` command-line interface.

Subcommands cover the full workflow: ``phantom`` (synthetic tagged pairs
with known motion), ``harp`` (harmonic-phase extraction of one tagged
volume), ``register`` (velocity-field estimation for a processed pair),
``evaluate`` (metrics report, histogram CSV, and figures), ``pipeline``
(all stages end to end from one config), and ``export-slices`` (grayscale
slice images of any stored volume).

Conventions:

* Heavy imports (numpy, matplotlib) happen inside command handlers so the
  ``--threads`` cap can be placed in the BLAS/OpenMP environment first.
* Configs are JSON objects; unknown keys are rejected with the offending
  field path so hyperparameter typos cannot pass silently.
* Any failure prints a single machine-readable JSON line to stderr and
  exits with status 1.
* Commands write only beneath their ``--out`` / ``output_dir`` target.
* Trio files are named by tag axis: ``sin_x.vvol`` .. ``cos_z.vvol`` with
  per-axis ``magnitude_x.vvol`` etc., or one combined ``magnitude.vvol``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

logger = logging.getLogger(__name__)

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)

_AXES = ("x", "y", "z")
# Grid axis -> trio channel key used by the harp/objective modules.
_KEY_BY_AXIS = {"x": "av", "y": "sh", "z": "sv"}
_UNIT_DIRECTION = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}

_DET_ERROR_CLIP = 1.0  # determinant errors |det - 1| are clipped here for AUC


# ---------------------------------------------------------------------------
# config parsing


def _load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValueError(f"cannot read config {path}: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ValueError(f"{path}: config root must be a JSON object")
    return obj


def _expect_object(obj, where: str) -> dict:
    if not isinstance(obj, dict):
        raise ValueError(f"{where}: expected a JSON object")
    return obj


def _reject_unknown(obj: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ValueError(f"{where}: unknown key '{unknown[0]}' "
                         f"(allowed: {', '.join(sorted(allowed))})")


def _triple(value, where: str, cast) -> tuple:
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise ValueError(f"{where}: expected a list of 3 values")
    return tuple(cast(v) for v in value)


def build_phantom_config(obj: dict, where: str = "phantom",
                         seed_override: int | None = None):
    from .grid import Geometry
    from .phantom import Ellipsoid, PhantomConfig

    _expect_object(obj, where)
    allowed = {"dims", "spacing", "tag_wavelength", "tissue_ellipsoid",
               "velocity_amplitude", "velocity_bandlimit", "fading_factor",
               "noise_sigma", "seed"}
    _reject_unknown(obj, allowed, where)

    dims = _triple(obj.get("dims", [32, 32, 32]), f"{where}.dims", int)
    spacing = _triple(obj.get("spacing", [1.0, 1.0, 1.0]), f"{where}.spacing", float)

    ellipsoid = None
    e = obj.get("tissue_ellipsoid")
    if e is not None:
        _expect_object(e, f"{where}.tissue_ellipsoid")
        _reject_unknown(e, {"center", "semi_axes"}, f"{where}.tissue_ellipsoid")
        if "center" not in e or "semi_axes" not in e:
            raise ValueError(f"{where}.tissue_ellipsoid: needs 'center' and 'semi_axes'")
        try:
            ellipsoid = Ellipsoid(
                _triple(e["center"], f"{where}.tissue_ellipsoid.center", float),
                _triple(e["semi_axes"], f"{where}.tissue_ellipsoid.semi_axes", float))
        except ValueError as exc:
            raise ValueError(f"{where}.tissue_ellipsoid: {exc}") from exc

    kwargs = {k: obj[k] for k in ("tag_wavelength", "velocity_amplitude",
                                  "velocity_bandlimit", "fading_factor",
                                  "noise_sigma", "seed") if k in obj}
    if seed_override is not None:
        kwargs["seed"] = seed_override
    try:
        return PhantomConfig(geometry=Geometry(dims, spacing),
                             tissue_ellipsoid=ellipsoid, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{where}: {exc}") from exc


def build_registration_config(obj: dict, where: str = "registration"):
    from .objective import LossWeights
    from .optim import RegistrationConfig

    _expect_object(obj, where)
    allowed = {"weights", "n_steps", "learning_rate", "max_iters", "adam_beta1",
               "adam_beta2", "adam_eps", "init", "coarse_to_fine", "stop_tol"}
    _reject_unknown(obj, allowed, where)

    weights_obj = _expect_object(obj.get("weights", {}), f"{where}.weights")
    _reject_unknown(weights_obj,
                    {"lambda_smooth", "beta_incompress", "epsilon", "det_penalty"},
                    f"{where}.weights")
    try:
        weights = LossWeights(**weights_obj)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{where}.weights: {exc}") from exc

    kwargs = {k: obj[k] for k in allowed if k in obj and k != "weights"}
    try:
        return RegistrationConfig(weights=weights, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class HarpSettings:
    """Harmonic-phase stage parameters of a pipeline run."""

    wavelength: float
    directions: dict[str, tuple[float, float, float]]
    sigma_f: float | None = None
    target_spacing: float | None = None


@dataclass(frozen=True)
class PipelineSettings:
    """Validated pipeline configuration (sub-configs carry their own checks)."""

    phantom: "object"
    harp: HarpSettings
    registration: "object"
    n_bins: int
    output_dir: Path


def build_pipeline_config(obj: dict, seed_override: int | None = None) -> PipelineSettings:
    _expect_object(obj, "pipeline")
    allowed = {"phantom", "harp", "registration", "evaluation", "output_dir"}
    _reject_unknown(obj, allowed, "pipeline")
    if "output_dir" not in obj:
        raise ValueError("pipeline: missing required key 'output_dir'")

    phantom = build_phantom_config(obj.get("phantom", {}), "pipeline.phantom",
                                   seed_override)

    harp_obj = _expect_object(obj.get("harp", {}), "pipeline.harp")
    _reject_unknown(harp_obj, {"wavelength", "directions", "sigma_f", "target_spacing"},
                    "pipeline.harp")
    directions = dict(_UNIT_DIRECTION)
    if "directions" in harp_obj:
        d = _expect_object(harp_obj["directions"], "pipeline.harp.directions")
        _reject_unknown(d, set(_AXES), "pipeline.harp.directions")
        for axis, vec in d.items():
            directions[axis] = _triple(vec, f"pipeline.harp.directions.{axis}", float)
    harp = HarpSettings(
        wavelength=float(harp_obj.get("wavelength", phantom.tag_wavelength)),
        directions=directions,
        sigma_f=None if harp_obj.get("sigma_f") is None else float(harp_obj["sigma_f"]),
        target_spacing=(None if harp_obj.get("target_spacing") is None
                        else float(harp_obj["target_spacing"])))

    registration = build_registration_config(obj.get("registration", {}),
                                             "pipeline.registration")

    eval_obj = _expect_object(obj.get("evaluation", {}), "pipeline.evaluation")
    _reject_unknown(eval_obj, {"n_bins"}, "pipeline.evaluation")
    n_bins = int(eval_obj.get("n_bins", 100))

    return PipelineSettings(phantom=phantom, harp=harp, registration=registration,
                            n_bins=n_bins, output_dir=Path(obj["output_dir"]))


def _phantom_snapshot(config) -> dict:
    e = config.tissue_ellipsoid
    return {
        "dims": list(config.geometry.dims),
        "spacing": list(config.geometry.spacing),
        "tag_wavelength": config.tag_wavelength,
        "tissue_ellipsoid": None if e is None else
            {"center": list(e.center), "semi_axes": list(e.semi_axes)},
        "velocity_amplitude": config.velocity_amplitude,
        "velocity_bandlimit": config.velocity_bandlimit,
        "fading_factor": config.fading_factor,
        "noise_sigma": config.noise_sigma,
        "seed": config.seed,
    }


def _registration_snapshot(config) -> dict:
    w = config.weights
    return {
        "weights": {"lambda_smooth": w.lambda_smooth,
                    "beta_incompress": w.beta_incompress,
                    "epsilon": w.epsilon,
                    "det_penalty": w.det_penalty},
        "n_steps": config.n_steps,
        "learning_rate": config.learning_rate,
        "max_iters": config.max_iters,
        "adam_beta1": config.adam_beta1,
        "adam_beta2": config.adam_beta2,
        "adam_eps": config.adam_eps,
        "init": config.init,
        "coarse_to_fine": config.coarse_to_fine,
        "stop_tol": config.stop_tol,
    }


# ---------------------------------------------------------------------------
# small IO helpers


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _with_payloads(paths) -> list[Path]:
    """Expand VVOL header paths with their .raw payload siblings."""
    expanded = []
    for p in paths:
        expanded.append(Path(p))
        raw = Path(p).with_suffix(".raw")
        if Path(p).suffix == ".vvol" and raw.exists():
            expanded.append(raw)
    return sorted(set(expanded))


def _hash_files(paths, root: Path) -> dict:
    return {str(p.relative_to(root)): {"sha256": _sha256(p), "bytes": p.stat().st_size}
            for p in _with_payloads(paths)}


def _load_scalar(path, f64: bool):
    from .grid import ScalarVolume
    from .vvol import read_scalar_vvol

    vol = read_scalar_vvol(path)
    if f64:
        vol = ScalarVolume(vol.geometry, vol.values.astype("float64"))
    return vol


def _load_vector(path, f64: bool):
    from .grid import VectorField
    from .vvol import read_vector_vvol

    field = read_vector_vvol(path)
    if f64:
        field = VectorField(field.geometry, field.vectors.astype("float64"))
    return field


def _load_trio(directory: Path, f64: bool):
    """Read sin_x..cos_z from a directory into a trio."""
    from .harp import SinCosTrio

    sin = {}
    cos = {}
    for axis in _AXES:
        key = _KEY_BY_AXIS[axis]
        sin[key] = _load_scalar(directory / f"sin_{axis}.vvol", f64)
        cos[key] = _load_scalar(directory / f"cos_{axis}.vvol", f64)
    return SinCosTrio(sin[_KEY_BY_AXIS["x"]].geometry, sin, cos)


def _load_magnitude(directory: Path, f64: bool):
    """Combined magnitude: magnitude.vvol, or the mean of magnitude_x/y/z."""
    from .harp import combine_magnitude

    combined = directory / "magnitude.vvol"
    if combined.exists():
        return _load_scalar(combined, f64)
    per_axis = [directory / f"magnitude_{axis}.vvol" for axis in _AXES]
    missing = [p.name for p in per_axis if not p.exists()]
    if missing:
        raise ValueError(f"{directory}: no magnitude.vvol and missing {missing}")
    mags = [_load_scalar(p, f64) for p in per_axis]
    return combine_magnitude(*mags)


def _write_loss_csv(path: Path, history) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iter", "sim", "smooth", "incompress", "total"])
        for i, h in enumerate(history):
            writer.writerow([i, repr(h.sim), repr(h.smooth),
                             repr(h.incompress), repr(h.total)])
    return path


def _read_loss_csv(path: Path):
    from .objective import LossBreakdown

    history = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            history.append(LossBreakdown(sim=float(row["sim"]),
                                         smooth=float(row["smooth"]),
                                         incompress=float(row["incompress"]),
                                         total=float(row["total"])))
    return history


def _write_histogram_csv(path: Path, histogram) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    edges = histogram.bin_edges
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["bin_left", "bin_right", "weight"])
        for i, count in enumerate(histogram.counts):
            writer.writerow([repr(float(edges[i])), repr(float(edges[i + 1])),
                             repr(float(count))])
    return path


# ---------------------------------------------------------------------------
# stage implementations (shared between single commands and the pipeline)


def _run_phantom(config, out: Path) -> list[Path]:
    from .phantom import make_phantom_pair
    from .vvol import write_vvol

    pair = make_phantom_pair(config)
    written = []
    for axis in _AXES:
        key = _KEY_BY_AXIS[axis]
        written.append(write_vvol(out / f"fixed_{axis}.vvol", pair.fixed[key]))
        written.append(write_vvol(out / f"moving_{axis}.vvol", pair.moving[key]))
    written.append(write_vvol(out / "truth_velocity.vvol", pair.truth_velocity))
    written.append(write_vvol(out / "truth_displacement.vvol", pair.truth_displacement))
    written.append(write_vvol(out / "tissue_mask.vvol", pair.tissue_mask))
    return written


def _run_harp_volume(vol, axis: str, direction, wavelength: float,
                     sigma_f: float | None, target_spacing: float | None,
                     out: Path) -> list[Path]:
    from .harp import harp_filter, resample_isotropic, sincos_transform
    from .vvol import write_vvol

    if target_spacing is not None:
        vol = resample_isotropic(vol, target_spacing)
    harp = harp_filter(vol, direction, wavelength, sigma_f)
    sin, cos = sincos_transform(harp.phase)
    return [write_vvol(out / f"magnitude_{axis}.vvol", harp.magnitude),
            write_vvol(out / f"phase_{axis}.vvol", harp.phase),
            write_vvol(out / f"sin_{axis}.vvol", sin),
            write_vvol(out / f"cos_{axis}.vvol", cos)]


def _run_register(fixed_dir: Path, moving_dir: Path, config, out: Path,
                  f64: bool):
    from .grid import jacobian_determinant
    from .optim import register_pair
    from .vvol import write_vvol

    fixed = _load_trio(fixed_dir, f64)
    moving = _load_trio(moving_dir, f64)
    i_mag = _load_magnitude(fixed_dir, f64)
    result = register_pair(fixed, moving, i_mag, config)

    files = [write_vvol(out / "velocity.vvol", result.velocity),
             write_vvol(out / "displacement.vvol", result.displacement),
             write_vvol(out / "jacobian_determinant.vvol",
                        jacobian_determinant(result.displacement)),
             _write_loss_csv(out / "loss_history.csv", result.loss_history)]
    info = {
        "command": "register",
        "created_utc": _utc_now(),
        "config": _registration_snapshot(config),
        "fixed_dir": str(fixed_dir.resolve()),
        "moving_dir": str(moving_dir.resolve()),
        "iterations_run": result.iterations_run,
        "wall_time_seconds": result.wall_time_seconds,
        "best_total_loss": min(h.total for h in result.loss_history),
        "final_loss": result.loss_history[-1].as_dict(),
        "files": _hash_files(files, out),
    }
    files.append(_write_json(out / "result.json", info))
    return result, files


def _run_evaluate(result_dir: Path, truth_dir: Path | None, out_path: Path,
                  n_bins: int, f64: bool):
    """Compute the metrics report plus histogram CSV and figures."""
    from .grid import ScalarVolume
    from .metrics import build_metrics_report
    from .report import render_metric_figures

    info_path = result_dir / "result.json"
    if not info_path.exists():
        raise ValueError(f"{result_dir}: not a registration result directory "
                         f"(missing result.json)")
    info = json.loads(info_path.read_text())
    fixed_dir = Path(info["fixed_dir"])
    moving_dir = Path(info["moving_dir"])

    fixed = _load_trio(fixed_dir, f64)
    moving = _load_trio(moving_dir, f64)
    i_mag = _load_magnitude(fixed_dir, f64)
    disp = _load_vector(result_dir / "displacement.vvol", f64)

    truth = truth_mask = None
    if truth_dir is not None:
        truth = _load_vector(truth_dir / "truth_displacement.vvol", f64)
        mask_path = truth_dir / "tissue_mask.vvol"
        if mask_path.exists():
            truth_mask = _load_scalar(mask_path, f64)

    report = build_metrics_report(fixed, moving, disp, i_mag, truth=truth,
                                  truth_mask=truth_mask, n_bins=n_bins)

    payload = report.as_dict()
    payload["det_auc_settings"] = {"n_bins": n_bins, "error_clip": _DET_ERROR_CLIP}
    _write_json(out_path, payload)
    out_dir = out_path.parent
    _write_histogram_csv(out_dir / "histogram.csv", report.histogram)

    history = None
    loss_path = result_dir / "loss_history.csv"
    if loss_path.exists():
        history = _read_loss_csv(loss_path)

    det_path = result_dir / "jacobian_determinant.vvol"
    if det_path.exists():
        det_map = _load_scalar(det_path, f64)
    else:
        from .grid import jacobian_determinant
        det_map = jacobian_determinant(disp)
    mag = (disp.vectors.astype("float64") ** 2).sum(axis=-1) ** 0.5
    panels = {
        "jacobian determinant": det_map,
        "displacement magnitude": ScalarVolume(disp.geometry, mag),
        "magnitude weight": i_mag,
    }
    render_metric_figures(report, out_dir, history=history, panels=panels)
    return report


# ---------------------------------------------------------------------------
# commands


def cmd_phantom(args) -> int:
    config = build_phantom_config(_load_config(args.config), "phantom", args.seed)
    out = Path(args.out)
    files = _run_phantom(config, out)
    _write_json(out / "manifest.json", {
        "command": "phantom",
        "created_utc": _utc_now(),
        "seed": config.seed,
        "config": _phantom_snapshot(config),
        "files": _hash_files(files, out),
    })
    return 0


def cmd_harp(args) -> int:
    vol = _load_scalar(args.infile, args.f64)
    _run_harp_volume(vol, args.dir, _UNIT_DIRECTION[args.dir], args.wavelength,
                     args.sigma_f, args.target_spacing, Path(args.out))
    return 0


def cmd_register(args) -> int:
    obj = _load_config(args.config) if args.config else {}
    config = build_registration_config(obj, "registration")
    _run_register(Path(args.fixed_dir), Path(args.moving_dir), config,
                  Path(args.out), args.f64)
    return 0


def cmd_evaluate(args) -> int:
    truth_dir = Path(args.truth_dir) if args.truth_dir else None
    _run_evaluate(Path(args.result_dir), truth_dir, Path(args.out),
                  args.n_bins, args.f64)
    return 0


def cmd_pipeline(args) -> int:
    from . import __version__
    from .harp import resample_isotropic, resample_isotropic_field
    from .vvol import write_vvol

    settings = build_pipeline_config(_load_config(args.config), args.seed)
    out = settings.output_dir
    out.mkdir(parents=True, exist_ok=True)
    stage_seconds: dict[str, float] = {}

    t0 = time.perf_counter()
    _run_phantom(settings.phantom, out / "phantom")
    stage_seconds["phantom"] = time.perf_counter() - t0

    # Each later stage reloads its inputs from the files the previous stage
    # wrote, so the pipeline exercises exactly the same contracts as the
    # individual commands chained by hand.
    t0 = time.perf_counter()
    harp = settings.harp
    for side in ("fixed", "moving"):
        for axis in _AXES:
            vol = _load_scalar(out / "phantom" / f"{side}_{axis}.vvol", args.f64)
            _run_harp_volume(vol, axis, harp.directions[axis], harp.wavelength,
                             harp.sigma_f, harp.target_spacing,
                             out / "harp" / side)
    truth_dir = out / "phantom"
    if harp.target_spacing is not None:
        # Bring the ground truth onto the working grid so evaluation can
        # compare displacements voxel for voxel.
        truth_dir = out / "harp" / "truth"
        truth = _load_vector(out / "phantom" / "truth_displacement.vvol", args.f64)
        mask = _load_scalar(out / "phantom" / "tissue_mask.vvol", args.f64)
        write_vvol(truth_dir / "truth_displacement.vvol",
                   resample_isotropic_field(truth, harp.target_spacing))
        write_vvol(truth_dir / "tissue_mask.vvol",
                   resample_isotropic(mask, harp.target_spacing))
    stage_seconds["harp"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    _run_register(out / "harp" / "fixed", out / "harp" / "moving",
                  settings.registration, out / "register", args.f64)
    stage_seconds["register"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    _run_evaluate(out / "register", truth_dir, out / "evaluate" / "report.json",
                  settings.n_bins, args.f64)
    stage_seconds["evaluate"] = time.perf_counter() - t0

    artifacts = [p for p in sorted(out.rglob("*"))
                 if p.is_file() and p != out / "manifest.json"]
    _write_json(out / "manifest.json", {
        "command": "pipeline",
        "tool": "tagflow",
        "version": __version__,
        "created_utc": _utc_now(),
        "seed": settings.phantom.seed,
        "config": {
            "phantom": _phantom_snapshot(settings.phantom),
            "harp": {"wavelength": harp.wavelength,
                     "directions": {a: list(v) for a, v in harp.directions.items()},
                     "sigma_f": harp.sigma_f,
                     "target_spacing": harp.target_spacing},
            "registration": _registration_snapshot(settings.registration),
            "evaluation": {"n_bins": settings.n_bins},
            "output_dir": str(out),
        },
        "stage_seconds": stage_seconds,
        "files": _hash_files(artifacts, out),
    })
    return 0


def cmd_export_slices(args) -> int:
    from .report import export_slices
    from .vvol import read_vvol

    volume = read_vvol(args.infile)
    try:
        indices = [int(tok) for tok in args.indices.split(",") if tok.strip()]
    except ValueError as exc:
        raise ValueError(f"--indices must be comma-separated integers: {exc}") from exc
    export_slices(volume, _AXES.index(args.axis), indices, Path(args.out),
                  source=Path(args.infile).name)
    return 0


# ---------------------------------------------------------------------------
# entry point


def _apply_thread_cap(cli_value: int | None) -> None:
    value = cli_value if cli_value is not None else os.environ.get("TAGFLOW_THREADS")
    if value is None:
        return
    n = int(value)
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    for var in _THREAD_ENV_VARS:
        os.environ[var] = str(n)
    if "numpy" in sys.modules:
        logger.warning("numpy was already imported; the --threads cap may not "
                       "apply to this process")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tagflow",
        description="Dense 3D motion estimation from multi-orientation "
                    "tagged volumes.")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS/OpenMP threads (fallback: TAGFLOW_THREADS)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the synthetic-data seed (u64)")
    parser.add_argument("--f64", action="store_true",
                        help="promote loaded volumes to float64 (test-precision mode)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom",
                       help="generate a synthetic tagged pair with known motion")
    p.add_argument("--config", required=True, help="phantom config JSON")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("harp",
                       help="extract magnitude/phase/sin/cos from one tagged volume")
    p.add_argument("--in", dest="infile", required=True, help="tagged volume (.vvol)")
    p.add_argument("--dir", choices=_AXES, required=True, help="tag axis")
    p.add_argument("--wavelength", type=float, required=True,
                   help="tag period in voxels")
    p.add_argument("--sigma-f", type=float, default=None,
                   help="bandpass width in cycles/voxel (default 1/(2*wavelength))")
    p.add_argument("--target-spacing", type=float, default=None,
                   help="resample to this isotropic spacing before filtering")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("register",
                       help="estimate the velocity warping moving onto fixed")
    p.add_argument("--fixed-dir", required=True,
                   help="directory with sin_*/cos_*/magnitude* volumes")
    p.add_argument("--moving-dir", required=True)
    p.add_argument("--config", default=None, help="registration config JSON")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("evaluate",
                       help="score a registration result and render figures")
    p.add_argument("--result-dir", required=True, help="register output directory")
    p.add_argument("--truth-dir", default=None,
                   help="directory with truth_displacement/tissue_mask volumes")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--n-bins", type=int, default=100,
                   help="determinant-error histogram bins")

    p = sub.add_parser("pipeline",
                       help="phantom + harp + register + evaluate from one config")
    p.add_argument("--config", required=True, help="pipeline config JSON")

    p = sub.add_parser("export-slices",
                       help="write grayscale slice images of a stored volume")
    p.add_argument("--in", dest="infile", required=True, help="volume (.vvol)")
    p.add_argument("--axis", choices=_AXES, required=True, help="slicing axis")
    p.add_argument("--indices", required=True,
                   help="comma-separated slice indices, e.g. 4,8,12")
    p.add_argument("--out", required=True, help="output directory")

    return parser


_DISPATCH = {
    "phantom": cmd_phantom,
    "harp": cmd_harp,
    "register": cmd_register,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
    "export-slices": cmd_export_slices,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        _apply_thread_cap(args.threads)
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ValueError(f"--seed must fit in an unsigned 64-bit integer, "
                             f"got {args.seed}")
        return _DISPATCH[args.command](args)
    except Exception as exc:
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
