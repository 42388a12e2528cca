"""Command-line front end: ``ste-rsr {synth,bench,fundamental,screen}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import io as _io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io as fio
from .epipolar import decompose_pose, direction_errors, estimate_f, maa, rotation_error
from .estimators import DEFAULT_GAMMAS, METHODS, fit_subspace
from .nview import screen
from .synth import HaystackConfig, gen_epipolar, gen_haystack, gen_nview


class UsageError(Exception):
    pass


def trial_seed(master: int, index: int) -> int:
    """Independent per-trial seed derived from (master seed, trial index)."""
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1)[0])


def _parse_grid(text: str) -> list[float]:
    """'0.1,0.2' or 'start:stop:step' (inclusive stop)."""
    text = str(text).strip()
    try:
        if ":" in text:
            a, b, s = (float(v) for v in text.split(":"))
            n = int(round((b - a) / s))
            return [round(a + k * s, 12) for k in range(n + 1)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse grid {text!r}") from None


def _parse_methods(text) -> list[str]:
    items = text if isinstance(text, list) else str(text).split(",")
    methods = [m.strip().lower() for m in items if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise UsageError(f"unknown method(s) {bad or text!r}; choose from {', '.join(METHODS)}")
    return methods


def _gamma_grid(args) -> tuple[float, ...]:
    if args.gamma_grid is None:
        return DEFAULT_GAMMAS
    grid = _parse_grid(args.gamma_grid)
    if not grid or any(not 0 < g <= 1 for g in grid):
        raise UsageError("gamma grid values must lie in (0, 1]")
    return tuple(grid)


def _config_of(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func", "config")}


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.format is None:
        args.format = "csv" if args.kind == "epipolar" else "json"
    if args.kind == "haystack":
        for name in ("D", "d", "N"):
            if getattr(args, name) is None:
                raise UsageError(f"synth haystack requires --{name}")
        n_out = int(round(args.outlier_frac * args.N))
        scene = gen_haystack(HaystackConfig(args.D, args.d, args.N - n_out, n_out, seed=args.seed))
        if args.format == "csv":
            fio.write_scene_csv(scene, args.out)
        else:
            fio.dump_json({"kind": "haystack", "config": _config_of(args), **fio.scene_to_dict(scene)}, args.out)
    elif args.kind == "epipolar":
        n = args.N if args.N is not None else 400
        corr = gen_epipolar(n, args.outlier_frac, seed=args.seed)
        if args.format == "json":
            fio.dump_json({
                "kind": "epipolar",
                "config": _config_of(args),
                "pts_a": corr.pts_a[:2].T.tolist(),
                "pts_b": corr.pts_b[:2].T.tolist(),
                "inlier_mask": corr.inlier_mask.astype(int).tolist(),
                "pose": fio.pose_to_dict(corr.R, corr.t, corr.K),
            }, args.out)
        else:
            fio.write_correspondences_csv(corr, args.out)
            pose_path = args.pose_out
            if pose_path is None and args.out not in (None, "-"):
                pose_path = str(Path(args.out).with_suffix(".pose.json"))
            if pose_path:
                fio.dump_json(fio.pose_to_dict(corr.R, corr.t, corr.K), pose_path)
    else:  # nview
        n = args.N if args.N is not None else 30
        sc = gen_nview(n, args.corrupt, args.observed_frac, seed=args.seed)
        fio.dump_json({
            "kind": "nview",
            "n": n,
            "corrupted": sc.corrupted.tolist(),
            "blocks": fio.blocks_to_list(sc.essential),
        }, args.out)
    return 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

BENCH_FIELDS = ["kind", "method", "outlier_frac", "trial", "seed", "error", "metric", "iterations", "time_s"]


def _run_trial(task: dict) -> list[dict]:
    kind, frac, trial, seed = task["kind"], task["frac"], task["trial"], task["seed"]
    rows = []
    if kind == "haystack":
        D, d, N = task["D"], task["d"], task["N"]
        n_out = int(round(frac * N))
        scene = gen_haystack(HaystackConfig(D, d, N - n_out, n_out, seed=seed))
        for m in task["methods"]:
            t0 = time.perf_counter()
            res = fit_subspace(scene.data, d, m, gamma=task["gamma"], gammas=task["gammas"],
                               max_iters=task["max_iters"], tol=task["tol"],
                               inlier_threshold=task["threshold"], seed=seed, truth=scene.truth)
            dt = time.perf_counter() - t0
            rows.append(dict(kind=kind, method=m, outlier_frac=frac, trial=trial, seed=seed,
                             error=res.angles[-1], metric="angle_rad", iterations=res.iterations, time_s=dt))
    else:
        corr = gen_epipolar(task["N"], frac, seed=seed)
        for m in task["methods"]:
            t0 = time.perf_counter()
            est = estimate_f(corr, m, gamma=task["gamma"], gammas=task["gammas"],
                             max_iters=task["max_iters"], seed=seed)
            dt = time.perf_counter() - t0
            pose = decompose_pose(est.F, corr.pts_a, corr.pts_b, corr.K, mask=est.inlier_mask)
            rows.append(dict(kind=kind, method=m, outlier_frac=frac, trial=trial, seed=seed,
                             error=rotation_error(pose.R, corr.R), metric="rotation_error_deg",
                             iterations=est.extra.get("iterations", 0), time_s=dt))
    return rows


def _workers(requested: int) -> int:
    cap = os.environ.get("STE_RSR_THREADS")
    n = max(1, requested)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise UsageError("STE_RSR_THREADS must be an integer") from None
    return n


def bench_rows(args) -> list[dict]:
    methods = _parse_methods(args.method)
    fracs = _parse_grid(args.fractions)
    if any(not 0 <= f < 1 for f in fracs):
        raise UsageError("outlier fractions must lie in [0, 1)")
    if args.kind == "haystack" and (args.D is None or args.d is None):
        raise UsageError("bench haystack requires --D and --d")
    common = dict(kind=args.kind, methods=methods, D=args.D, d=args.d,
                  N=args.N if args.N is not None else 400, gamma=args.gamma, gammas=_gamma_grid(args),
                  max_iters=args.max_iters, tol=args.tol, threshold=args.inlier_threshold)
    tasks = []
    for fi, frac in enumerate(fracs):
        for s in range(args.seeds):
            idx = fi * args.seeds + s
            tasks.append(dict(common, frac=frac, trial=s, seed=trial_seed(args.seed, idx)))
    workers = _workers(args.workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(_run_trial, tasks))
    else:
        chunks = [_run_trial(t) for t in tasks]
    rows = [r for chunk in chunks for r in chunk]
    if args.no_timing:
        for r in rows:
            r["time_s"] = 0.0
    return rows


def summarize(rows: list[dict]) -> list[dict]:
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["method"], r["outlier_frac"]), []).append(r)
    out = []
    for (m, f), rs in groups.items():
        err = np.array([r["error"] for r in rs])
        item = {"method": m, "outlier_frac": f, "trials": len(rs), "mean_error": float(err.mean()),
                "median_error": float(np.median(err)), "mean_time_s": float(np.mean([r["time_s"] for r in rs]))}
        if rs[0]["metric"] == "rotation_error_deg":
            item["maa_10deg"] = maa(err)
        out.append(item)
    return out


def cmd_bench(args) -> int:
    rows = bench_rows(args)
    if args.format == "json":
        fio.dump_json({"config": _config_of(args), "rows": rows, "summary": summarize(rows)}, args.out)
        return 0
    buf = _io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BENCH_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    if args.out in (None, "-"):
        sys.stdout.write(buf.getvalue())
    else:
        Path(args.out).write_text(buf.getvalue())
    return 0


# ---------------------------------------------------------------------------
# fundamental / screen
# ---------------------------------------------------------------------------

def cmd_fundamental(args) -> int:
    if args.input is None:
        raise UsageError("fundamental requires --input")
    pose = fio.read_pose_json(args.pose) if args.pose else None
    corr = fio.read_correspondences_csv(args.input, pose)
    method = _parse_methods(args.method)[0]
    est = estimate_f(corr, method, gamma=args.gamma, gammas=_gamma_grid(args),
                     max_iters=args.max_iters, seed=args.seed)
    F = est.F
    K = corr.K
    out = {
        "method": method,
        "F": F.ravel().tolist(),
        "det": float(np.linalg.det(F)),
        "n_inliers": int(est.inlier_mask.sum()),
        "sampson_median_px": float(np.median(est.sampson)),
        "inlier_threshold_px": 0.75,
        "config": _config_of(args),
    }
    if "gamma" in est.extra:
        out["gamma"] = est.extra["gamma"]
    p = decompose_pose(F, corr.pts_a, corr.pts_b, K, mask=est.inlier_mask)
    out["pose"] = {**fio.pose_to_dict(p.R, p.t), "front_fraction": p.front_fraction, "ambiguous": p.ambiguous}
    if corr.has_truth:
        e_R = rotation_error(p.R, corr.R)
        e_T = float(direction_errors([p.t], [corr.t], align=False)[0][0])
        out.update(e_R_deg=e_R, e_T_deg=e_T, maa_10deg=maa([e_R]))
    fio.dump_json(out, args.out)
    return 0


def cmd_screen(args) -> int:
    if args.input is None:
        raise UsageError("screen requires --input")
    E = fio.read_blocks_json(args.input)
    method = _parse_methods(args.method)[0]
    rep = screen(E, method=method, outlier_frac=args.outlier_frac if args.outlier_frac is not None else 0.2,
                 completion=args.completion, gamma=args.gamma if args.gamma is not None else 1 / 3)
    fio.dump_json({**rep.to_dict(), "config": _config_of(args)}, args.out)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, outlier_default=0.0):
    p.add_argument("--config", help="JSON file with default values for any flag")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-", help="output path ('-' for stdout)")
    p.add_argument("--format", choices=["csv", "json"], default="json")
    p.add_argument("--outlier-frac", type=float, default=outlier_default)


def _estimator_flags(p: argparse.ArgumentParser, method_default: str):
    p.add_argument("--method", default=method_default, help=f"one of {', '.join(METHODS)} (bench: comma list)")
    p.add_argument("--gamma", type=float, default=None, help="fixed STE gamma; omit to tune over --gamma-grid")
    p.add_argument("--gamma-grid", default=None, help="comma list or start:stop:step")
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--tol", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ste-rsr", description="Robust subspace recovery toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("kind", choices=["haystack", "epipolar", "nview"])
    _common(p)
    p.set_defaults(format=None)
    p.add_argument("--D", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--N", "--n", dest="N", type=int)
    p.add_argument("--corrupt", type=int, default=0, help="nview: number of corrupted cameras")
    p.add_argument("--observed-frac", type=float, default=1.0, help="nview: fraction of observed blocks")
    p.add_argument("--pose-out", default=None, help="epipolar CSV: ground-truth pose path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="sweep estimators over outlier fractions and seeds")
    p.add_argument("kind", choices=["haystack", "epipolar"])
    _common(p)
    _estimator_flags(p, "ste,tme,fms,sfms,ransac")
    p.set_defaults(format="csv")
    p.add_argument("--D", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--N", "--n", dest="N", type=int)
    p.add_argument("--fractions", default=None, help="outlier fractions (default: --outlier-frac)")
    p.add_argument("--seeds", type=int, default=10, help="trials per fraction")
    p.add_argument("--inlier-threshold", type=float, default=0.05, help="subspace RANSAC distance threshold")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-timing", action="store_true", help="write zero times so reruns are byte-identical")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("fundamental", help="estimate F from a correspondence CSV")
    _common(p)
    _estimator_flags(p, "ste")
    p.add_argument("--input", help="correspondence CSV (x1,y1,x2,y2[,is_inlier])")
    p.add_argument("--pose", help="ground-truth pose JSON for error reporting")
    p.set_defaults(func=cmd_fundamental)

    p = sub.add_parser("screen", help="flag outlying cameras of an n-view essential matrix")
    _common(p, outlier_default=None)
    _estimator_flags(p, "ste")
    p.add_argument("--input", help="block JSON")
    p.add_argument("--completion", choices=["zero", "svt"], default="zero")
    p.set_defaults(func=cmd_screen)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        cfg = json.loads(Path(known.config).read_text())
    except (OSError, json.JSONDecodeError) as e:
        parser.error(f"cannot read config {known.config}: {e}")
    if not isinstance(cfg, dict):
        parser.error("config file must hold a JSON object")
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    for action in parser._subparsers._group_actions:
        for sp in action.choices.values():
            sp.set_defaults(**cfg)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    _apply_config(parser, argv)
    args = parser.parse_args(argv)
    if getattr(args, "fractions", "unset") is None:
        args.fractions = str(args.outlier_frac)
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"ste-rsr: error: {e}", file=sys.stderr)
        return 2
    except (fio.FormatError, ValueError, RuntimeError, OSError) as e:
        print(f"ste-rsr: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
