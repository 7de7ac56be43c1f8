"""Command-line entry point: ``rgbdgaze <command> ...``.

Exit codes: 0 success, 1 verification failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import GazeError

log = logging.getLogger("rgbdgaze")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _monitor(arg):
    from .geometry import MonitorSpec
    if arg is None:
        return None
    p = Path(arg)
    if p.exists():
        d = json.loads(p.read_text())
        return MonitorSpec.from_dict(d.get("monitor", d))
    try:
        w, h, W, H = (float(v) for v in arg.split(","))
    except ValueError as exc:
        raise UsageError(f"--monitor expects a JSON file or 'w,h,W,H', got {arg!r}") from exc
    return MonitorSpec(w, h, W, H)


def _write_json(path, obj):
    text = json.dumps(obj, indent=2)
    if path in (None, "-"):
        print(text)
    else:
        Path(path).write_text(text)


# commands --------------------------------------------------------------------

def cmd_calibrate_extrinsics(args, cfg):
    from .mirrorcal import load_observations, solve_extrinsics
    from .errors import NoConvergence
    K, board, m, obs = load_observations(args.observations)
    m = _monitor(args.monitor) or m
    if m is None:
        raise UsageError("monitor geometry missing: pass --monitor or include it in the file")
    try:
        fit = solve_extrinsics(obs, K, board, m, max_iter=args.max_iter)
    except NoConvergence as exc:
        fit = exc.result
        fit.extrinsics.save(args.output, converged=False, **fit.diagnostics())
        log.error("solver did not converge (rms %.4g px)", fit.rms_px)
        return EXIT_FAIL
    fit.extrinsics.save(args.output, converged=True, **fit.diagnostics())
    log.info("extrinsics written to %s (rms %.3g px)", args.output, fit.rms_px)
    return EXIT_OK


def cmd_calibrate_subject(args, cfg):
    from .pipeline import read_rows
    from .subjectcal import estimate_bias_ls, estimate_offset_only
    rows = [r for r in read_rows(args.replay) if not r.get("error")]
    if not rows:
        raise UsageError(f"{args.replay}: no usable rows")
    pred = np.array([[r["raw_pitch"], r["raw_yaw"]] for r in rows])
    truth = np.array([[r["gaze_pitch"], r["gaze_yaw"]] for r in rows])
    if args.n_cal and args.n_cal < len(rows):
        idx = np.sort(np.random.default_rng(args.seed).choice(len(rows), args.n_cal, replace=False))
        pred, truth = pred[idx], truth[idx]
    est = estimate_offset_only if args.method == "offset" else estimate_bias_ls
    fit = est(pred, truth, subject_id=args.subject or Path(args.replay).stem)
    fit.save(args.output)
    log.info("bias written to %s (flags: %s)", args.output, ",".join(fit.flags) or "none")
    return EXIT_OK


def cmd_depth_prep(args, cfg):
    from PIL import Image
    from .dataset.schema import read_subject
    from .depthproc import (AugmentSpec, augment_missing, compute_valid_mask,
                            filter_target_set, histogram_equalize)
    data = read_subject(args.subject, ["face_depth", "face_landmarks"])
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dc = cfg.depth
    report = filter_target_set(
        ((i, d, lm) for i, (d, lm) in enumerate(zip(data["face_depth"], data["face_landmarks"]))),
        dc.eye_filter)
    report.write_csv(out / "eye_filter.csv")
    valid_frac = []
    for d in data["face_depth"]:
        eq = histogram_equalize(d)
        valid_frac.append(float(compute_valid_mask(eq, dc.missing_value, dc.missing_tol,
                                                   dc.erode_radius).mean()))
    rng = np.random.default_rng(args.seed)
    for i in range(min(args.augment, len(data["face_depth"]))):
        aug, _ = augment_missing(data["face_depth"][i], AugmentSpec(), rng=rng)
        Image.fromarray(aug.astype(np.uint16)).save(out / f"aug_{i:05d}.png")
    _write_json(out / "summary.json", {
        "samples": len(data["face_depth"]), "kept": len(report.kept),
        "kept_fraction": len(report.kept) / max(len(data["face_depth"]), 1),
        "mean_valid_fraction": float(np.mean(valid_frac)) if valid_frac else None,
        "augmented": min(args.augment, len(data["face_depth"])),
    })
    return EXIT_OK


def cmd_grad_check(args, cfg):
    from .fusion import (HyperParams, finite_diff_grad, fusion_backward, init_fusion_params,
                         init_mlp_params, max_relative_error, mlp_backward)
    variants = ["PreLN", "PostLN", "B2T", "MLP"] if args.variant == "all" else [args.variant]
    rng = np.random.default_rng(args.seed)
    X = rng.normal(size=(args.batch, args.tokens - 1, args.d_model))
    Y = rng.normal(scale=0.3, size=(args.batch, 2))
    ok = True
    results = {}
    for v in variants:
        hp = HyperParams(d_model=args.d_model, d_ff=2 * args.d_model, n_heads=args.heads,
                         n_layers=args.layers, n_tokens=args.tokens,
                         variant="B2T" if v == "MLP" else v)
        if v == "MLP":
            params, back = init_mlp_params(hp, args.seed), mlp_backward
        else:
            params, back = init_fusion_params(hp, args.seed), fusion_backward
        _, grads = back(X, Y, params, hp)
        num = finite_diff_grad(lambda p: back(X, Y, p, hp)[0], params, args.eps)
        err, where = max_relative_error(grads, num)
        passed = err < args.tol
        ok &= passed
        results[v] = {"max_rel_error": err, "worst_tensor": where, "pass": passed}
        print(f"{v:7s} max_rel_error={err:.3e} ({where}) {'PASS' if passed else 'FAIL'}")
    if args.output:
        _write_json(args.output, results)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_fit_toy(args, cfg):
    from .fusion import (FitConfig, HyperParams, fit_toy, planted_linear_problem, save_params,
                         write_trace_csv)
    hp = HyperParams(d_model=args.d_model, d_ff=2 * args.d_model, n_heads=args.heads,
                     n_layers=args.layers, n_tokens=args.tokens, variant=args.variant,
                     dropout_attn=0.0, dropout_ff=0.0)
    X, Y = planted_linear_problem(args.samples, hp, args.seed + 1000)
    fc = FitConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, seed=args.seed,
                   model="mlp" if args.mlp else "transformer")
    res = fit_toy(X, Y, hp, fc)
    save_params(args.output, res.params, {"hyper": hp.to_dict(), "final_mse": res.final_mse})
    if args.loss_csv:
        write_trace_csv(res.trace, args.loss_csv)
    print(f"final_mse={res.final_mse!r}")
    return EXIT_OK


def cmd_init_model(args, cfg):
    from .fusion import save_params
    from .pipeline import init_replay_model
    hp = cfg.hyper
    save_params(args.output, init_replay_model(hp, args.seed), {"hyper": hp.to_dict()})
    return EXIT_OK


def _load_model(path, cfg):
    from .fusion import HyperParams, load_params
    from .pipeline import ModelPredictor
    if not Path(path).exists():
        raise UsageError(f"model file not found: {path}")
    params, meta = load_params(path)
    hp = HyperParams(**meta["hyper"]) if "hyper" in meta else cfg.hyper
    return ModelPredictor(params, hp)


def cmd_replay(args, cfg):
    from .pipeline import FilterSpec, StubPredictor, replay
    from .subjectcal import BiasFit
    if args.stub:
        predictor = StubPredictor(offset=np.radians([args.stub_offset_deg, 0.0]),
                                  noise=np.radians(args.stub_noise_deg), seed=args.seed)
    else:
        params_path = args.params or cfg.paths.parameters
        if params_path is None:
            raise UsageError("replay needs --params or --stub")
        predictor = _load_model(params_path, cfg)
    bias = None
    if args.bias:
        if not Path(args.bias).exists():
            raise UsageError(f"bias file not found: {args.bias}")
        bias = BiasFit.load(args.bias)
    f = cfg.filters
    filters = FilterSpec(args.filter_landmarks or f.landmarks, args.filter_angles or f.angles,
                         args.filter_point or f.point, f.q, f.r, f.dt)
    res = replay(args.subject, predictor, bias, filters)
    res.write_csv(args.output)
    n_ok = int(res.ok.sum())
    if n_ok:
        e, d = res.summary()
        log.info("%d rows, mean error %.6g deg / %.6g mm", len(res.rows), e, d)
    else:
        log.warning("%d rows, none produced a valid prediction", len(res.rows))
    return EXIT_OK


def cmd_eval(args, cfg):
    from .dataset.metrics import error_heatmap
    from .pipeline import read_rows, summarize
    rows = read_rows(args.replay)
    if not rows:
        raise UsageError(f"{args.replay}: no rows")
    try:
        summary = summarize(rows)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.heatmap:
        good = [r for r in rows if not r.get("error")]
        pts = np.array([[r["point_x"], r["point_y"]] for r in good])
        hm = error_heatmap([r[args.heatmap_metric] for r in good], pts,
                           bins=(args.bins[0], args.bins[1]))
        hm.write_csv(args.heatmap)
        summary["heatmap_empty_cells"] = int(hm.empty.sum())
    _write_json(args.output, summary)
    return EXIT_OK


def cmd_protocol(args, cfg):
    from .dataset.protocol import gen_phase1_targets, gen_phase2_targets, gen_phase3_path
    m = _monitor(args.monitor)
    if args.phase == 1:
        pts, grid = gen_phase1_targets(m, args.seed)
        out = {"phase": 1, "points": pts.tolist(), "on_grid": grid.tolist()}
    elif args.phase == 2:
        out = {"phase": 2, "points": gen_phase2_targets(m, args.seed).tolist()}
    else:
        path, acc = gen_phase3_path(m, args.seed)
        t = np.arange(0.0, path.duration_s, 1.0 / args.fps)
        out = {"phase": 3, "center_mm": list(path.center_mm), "radius_mm": path.radius_mm,
               "duration_s": path.duration_s, "penalty_threshold_mm": acc.threshold,
               "penalty_limit_mm": acc.limit, "points": path.sample(t).tolist()}
    out["monitor"] = m.to_dict()
    _write_json(args.output, out)
    return EXIT_OK


def cmd_normalize(args, cfg):
    from PIL import Image
    from .normalization import GenericFaceModel, normalize
    from .pnp import Intrinsics
    img = np.asarray(Image.open(args.image))
    lm = np.asarray(json.loads(Path(args.landmarks).read_text()), dtype=float)
    K = Intrinsics.from_dict(json.loads(Path(args.intrinsics).read_text()))
    model_path = args.face_model or cfg.paths.face_model
    model = GenericFaceModel.load(model_path) if model_path else GenericFaceModel.default()
    res, patches = normalize(img, lm, K, model, cfg.norm)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("face", "right_eye", "left_eye"):
        Image.fromarray(patches[name]).save(out / f"{name}.png")
    _write_json(out / "normalization.json", {
        "R": res.R.tolist(), "scale": res.scale, "warp": res.warp.tolist(),
        "center": res.center.tolist(), "landmarks": res.landmarks.tolist(),
        "head_rot_norm": res.head_rotation.tolist(), "eye_clamped": list(patches["eye_clamped"]),
    })
    return EXIT_OK


def cmd_make_synthetic(args, cfg):
    from .dataset.schema import write_subject
    from .synthetic import make_subject
    d = make_subject(args.samples, args.seed, args.sessions, images=args.images)
    write_subject(args.output, d)
    return EXIT_OK


def cmd_validate(args, cfg):
    from .dataset.schema import read_subject, validate
    problems = validate(read_subject(args.subject))
    for p in problems:
        print(p)
    print(f"{len(problems)} violation(s)")
    return EXIT_OK if not problems else EXIT_FAIL


# parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rgbdgaze", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="JSON configuration file")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate-extrinsics", help="mirror-based extrinsic calibration")
    p.add_argument("observations")
    p.add_argument("-o", "--output", default="extrinsics.json")
    p.add_argument("--monitor")
    p.add_argument("--max-iter", type=int, default=200)
    p.set_defaults(func=cmd_calibrate_extrinsics)

    p = sub.add_parser("calibrate-subject", help="fit subject bias from replay rows")
    p.add_argument("replay")
    p.add_argument("-o", "--output", default="bias.json")
    p.add_argument("--method", choices=["ls", "offset"], default="ls")
    p.add_argument("--n-cal", type=int, default=0, help="random subset size (0 = all rows)")
    p.add_argument("--subject")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_calibrate_subject)

    p = sub.add_parser("depth-prep", help="equalize, mask, eye-filter and augment depth maps")
    p.add_argument("subject")
    p.add_argument("--out-dir", default="depth_prep")
    p.add_argument("--augment", type=int, default=0, help="number of augmented copies")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_depth_prep)

    p = sub.add_parser("grad-check", help="finite-difference check of the fusion backward pass")
    p.add_argument("--variant", choices=["all", "PreLN", "PostLN", "B2T", "MLP"], default="all")
    p.add_argument("--d-model", type=int, default=16)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--tokens", type=int, default=5)
    p.add_argument("--batch", type=int, default=3)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("fit-toy", help="train a toy fusion model on a planted linear mapping")
    p.add_argument("-o", "--output", default="params.bin")
    p.add_argument("--loss-csv")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--d-model", type=int, default=16)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--tokens", type=int, default=5)
    p.add_argument("--variant", default="B2T", choices=["PreLN", "PostLN", "B2T"])
    p.add_argument("--mlp", action="store_true", help="train the MLP substitute instead")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fit_toy)

    p = sub.add_parser("init-model", help="write randomly initialized replay parameters")
    p.add_argument("-o", "--output", default="model.bin")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_init_model)

    p = sub.add_parser("replay", help="run stored samples through the pipeline")
    p.add_argument("subject")
    p.add_argument("-o", "--output", default="replay.csv")
    p.add_argument("--params")
    p.add_argument("--stub", action="store_true")
    p.add_argument("--stub-offset-deg", type=float, default=0.0, help="pitch offset of the stub")
    p.add_argument("--stub-noise-deg", type=float, default=0.0)
    p.add_argument("--bias")
    for stage in ("landmarks", "angles", "point"):
        p.add_argument(f"--filter-{stage}", choices=["kalman", "avg3", "none"])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("eval", help="summarize a replay CSV")
    p.add_argument("replay")
    p.add_argument("-o", "--output", default="-")
    p.add_argument("--heatmap")
    p.add_argument("--heatmap-metric", choices=["d_mm", "e_deg"], default="d_mm")
    p.add_argument("--bins", type=int, nargs=2, default=(8, 6))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("protocol", help="generate collection targets")
    p.add_argument("--phase", type=int, choices=[1, 2, 3], required=True)
    p.add_argument("--monitor", default="3840,2160,597,336")
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_protocol)

    p = sub.add_parser("normalize", help="normalize one image given 5 landmarks")
    p.add_argument("image")
    p.add_argument("--landmarks", required=True)
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--face-model")
    p.add_argument("--out-dir", default="normalized")
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("make-synthetic", help="write a synthetic subject file")
    p.add_argument("-o", "--output", default="p900.h5")
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--sessions", type=int, default=1)
    p.add_argument("--images", choices=["zeros", "noise"], default="zeros")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_synthetic)

    p = sub.add_parser("validate", help="check a subject file against the schema")
    p.add_argument("subject")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        cfg = cfgmod.load_config(args.config)
        return args.func(args, cfg)
    except (UsageError, GazeError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
