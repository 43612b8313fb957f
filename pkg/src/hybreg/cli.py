"""Command-line entry point: generate, register, evaluate, benchmark, ablate.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
All flags are validated, and every input is loaded, before any output is
written.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .datagen import RotLevel, Shape, generate_dataset, pair_seed
from .errors import CloudParseError, HybregError, InvalidArgumentError, UnsupportedFormatError
from .geometry import Mapping, PointCloud, RigidTransform
from .metrics import aggregate, evaluate_pair, PairEvaluation
from .objective import ObjectiveConfig
from .solver import Combination, Optimizer, Parameterization, SolverConfig, register

log = logging.getLogger("hybreg")

THREADS_ENV = "HYBREG_THREADS"
ABLATION_CONFIGS = ("full", "no-projected", "clamp", "no-strategies", "euler", "sixd")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- argument definitions ------------------------------------------------------------

def _prune(text: str) -> tuple:
    if text.strip().lower() in ("", "none"):
        return ()
    out = []
    for item in text.split(","):
        a, sep, b = item.partition(":")
        if not sep:
            raise argparse.ArgumentTypeError(f"prune entries are ITER:KEEP, got {item!r}")
        out.append((int(a), int(b)))
    return tuple(out)


def _opt_int(text: str):
    return None if text.lower() == "none" else int(text)


def _ratio(text: str) -> tuple:
    a, sep, b = text.partition(":")
    try:
        r = (int(a), int(b))
    except ValueError:
        r = None
    if not sep or r is None or min(r) < 0 or sum(r) == 0:
        raise argparse.ArgumentTypeError(f"ratio must be A:B with non-negative integers, got {text!r}")
    return r


def _add_objective(p):
    g = p.add_argument_group("objective")
    d = ObjectiveConfig()
    g.add_argument("--alpha", type=float, default=d.alpha, help="trim fraction in (0, 1]")
    g.add_argument("--beta", type=float, default=d.beta, help="projected-term weight")
    g.add_argument("--mapping", choices=[m.value for m in Mapping], default=d.mapping.value)
    g.add_argument("--d-max", type=float, default=d.d_max, help="translation bound")


def _add_solver(p):
    g = p.add_argument_group("solver")
    d = SolverConfig.desk()
    g.add_argument("--preset", choices=("desk", "full"), default="desk",
                   help="desk: 32 directions x 16 angles; full: 64 x 64")
    g.add_argument("--n-directions", type=int, default=None)
    g.add_argument("--n-angles", type=int, default=None)
    g.add_argument("--combination", choices=[c.value for c in Combination], default=d.combination.value)
    g.add_argument("--loss-threshold", type=float, default=None,
                   help="absolute escalation threshold (default: derived per pair)")
    g.add_argument("--threshold-factor", type=float, default=d.threshold_factor)
    g.add_argument("--threshold-perturb-deg", type=float, default=d.threshold_perturb_deg)
    g.add_argument("--no-escalate", action="store_true", help="run only the first angle interval")
    g.add_argument("--max-iters", type=int, default=d.max_iters)
    g.add_argument("--step-size", type=float, default=d.step_size)
    g.add_argument("--optimizer", choices=[o.value for o in Optimizer], default=d.optimizer.value)
    g.add_argument("--parameterization", choices=[k.value for k in Parameterization],
                   default=d.parameterization.value)
    g.add_argument("--screen-points", type=_opt_int, default=d.screen_points, help="int or 'none'")
    g.add_argument("--prune", type=_prune, default=d.prune, help="ITER:KEEP,... or 'none'")
    g.add_argument("--refine-top", type=_opt_int, default=d.refine_top, help="int or 'none'")
    g.add_argument("--refine-iters", type=int, default=d.refine_iters)
    g.add_argument("--refine-step", type=float, default=d.refine_step)
    g.add_argument("--refine-points", type=_opt_int, default=d.refine_points, help="int or 'none'")
    g.add_argument("--polish-iters", type=int, default=d.polish_iters,
                   help="full-cloud iterations on the winning start")
    g.add_argument("--polish-step", type=float, default=d.polish_step)
    g.add_argument("--tol", type=float, default=d.tol)
    g.add_argument("--patience", type=int, default=d.patience)
    g.add_argument("--gtol", type=float, default=d.gtol)
    g.add_argument("--max-halvings", type=int, default=d.max_halvings)
    g.add_argument("--adam-beta1", type=float, default=d.adam_beta1)
    g.add_argument("--adam-beta2", type=float, default=d.adam_beta2)
    g.add_argument("--adam-eps", type=float, default=d.adam_eps)


def _add_run(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker processes (default: ${THREADS_ENV} or CPU count)")
    p.add_argument("--no-timing", action="store_true",
                   help="write wall_time as 0 so outputs are byte-reproducible")


def _add_generate(p, default_level="mixed"):
    g = p.add_argument_group("data generation")
    g.add_argument("--n-pairs", type=int, default=20)
    g.add_argument("--shape", choices=[s.value for s in Shape], action="append", default=None,
                   help="repeatable; pairs cycle through the given shapes (default composite)")
    g.add_argument("--n-points", type=int, default=2048)
    g.add_argument("--rot-level", choices=("mixed", "restricted", "unrestricted"), default=default_level)
    g.add_argument("--ratio", type=_ratio, default=(4, 1), help="restricted:unrestricted for mixed")
    g.add_argument("--min-overlap", type=float, default=0.5)
    g.add_argument("--keep-fraction", type=float, default=0.6)
    g.add_argument("--overlap-eps", type=float, default=0.05)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--copy-target", action="store_true",
                   help="target is an exact rigid copy of the source")
    g.add_argument("--format", choices=("xyz", "ply"), default="xyz")
    g.add_argument("--gen-seed", type=int, default=None, help="data seed (default: --seed)")


def _add_eval(p):
    g = p.add_argument_group("evaluation")
    g.add_argument("--fscore-fraction", type=float, default=0.01)
    g.add_argument("--recall-rot-deg", type=float, default=5.0)
    g.add_argument("--recall-trans", type=float, default=0.05)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hybreg", description="Multi-start rigid registration of partial point clouds.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic pair manifest and clouds")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    _add_generate(p)

    p = sub.add_parser("register", help="register a manifest or a single pair")
    p.add_argument("--manifest")
    p.add_argument("--source")
    p.add_argument("--target")
    p.add_argument("--out", required=True, help="predictions JSON path")
    _add_objective(p)
    _add_solver(p)
    _add_run(p)

    p = sub.add_parser("evaluate", help="score predictions against manifest ground truth")
    p.add_argument("--manifest", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True, help="report JSON path (CSV written alongside)")
    _add_eval(p)

    p = sub.add_parser("benchmark", help="generate, register and evaluate in one pass")
    p.add_argument("--out", required=True, help="output directory")
    _add_generate(p)
    _add_objective(p)
    _add_solver(p)
    _add_run(p)
    _add_eval(p)

    p = sub.add_parser("ablate", help="run the factor grid and write one summary row per configuration")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--manifest", help="existing manifest (default: generate in memory)")
    p.add_argument("--configs", default=",".join(ABLATION_CONFIGS),
                   help=f"comma-separated subset of {','.join(ABLATION_CONFIGS)}")
    _add_generate(p, default_level="unrestricted")
    _add_objective(p)
    _add_solver(p)
    _add_run(p)
    _add_eval(p)
    return parser


# -- config plumbing -------------------------------------------------------------------

def objective_config(a) -> ObjectiveConfig:
    return ObjectiveConfig(alpha=a.alpha, beta=a.beta, mapping=Mapping(a.mapping), d_max=a.d_max)


def solver_config(a) -> SolverConfig:
    base = SolverConfig.desk() if a.preset == "desk" else SolverConfig()
    changes = dict(
        combination=Combination(a.combination), loss_threshold=a.loss_threshold,
        threshold_factor=a.threshold_factor, threshold_perturb_deg=a.threshold_perturb_deg,
        escalate=not a.no_escalate, max_iters=a.max_iters, step_size=a.step_size,
        optimizer=Optimizer(a.optimizer), parameterization=Parameterization(a.parameterization),
        seed=a.seed, screen_points=a.screen_points, prune=a.prune, refine_top=a.refine_top,
        refine_iters=a.refine_iters, refine_step=a.refine_step, refine_points=a.refine_points,
        polish_iters=a.polish_iters, polish_step=a.polish_step, tol=a.tol, patience=a.patience,
        gtol=a.gtol, max_halvings=a.max_halvings,
        adam_beta1=a.adam_beta1, adam_beta2=a.adam_beta2, adam_eps=a.adam_eps,
    )
    if a.n_directions is not None:
        changes["n_directions"] = a.n_directions
    if a.n_angles is not None:
        changes["n_angles"] = a.n_angles
    return base.replace(**changes)


def thread_count(a) -> int:
    if getattr(a, "threads", None) is not None:
        n = a.threads
    elif os.environ.get(THREADS_ENV):
        try:
            n = int(os.environ[THREADS_ENV])
        except ValueError:
            raise InvalidArgumentError(f"{THREADS_ENV} must be an integer") from None
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise InvalidArgumentError("thread count must be positive")
    return n


def config_snapshot(obj: ObjectiveConfig, solver: SolverConfig) -> dict:
    return {"objective": dataclasses.asdict(obj), "solver": dataclasses.asdict(solver)}


def _dataset_kwargs(a) -> dict:
    if a.n_pairs < 1:
        raise InvalidArgumentError("--n-pairs must be positive")
    if a.rot_level == "mixed":
        levels = None
    else:
        levels = [RotLevel(a.rot_level)] * a.n_pairs
    seed = a.seed if a.gen_seed is None else a.gen_seed
    shapes = tuple(Shape(s) for s in (a.shape or ["composite"]))
    kw = dict(n_pairs=a.n_pairs, seed=seed, ratio=a.ratio, shapes=shapes, levels=levels,
              copy_target=a.copy_target, n_points=a.n_points, min_overlap=a.min_overlap,
              keep_fraction=a.keep_fraction, overlap_eps=a.overlap_eps, noise=a.noise,
              d_max=getattr(a, "d_max", 0.5))
    # validate PairSpec fields before any work
    from .datagen import PairSpec

    PairSpec(shape=shapes[0], n_points=a.n_points, min_overlap=a.min_overlap,
             keep_fraction=a.keep_fraction, overlap_eps=a.overlap_eps, d_max=kw["d_max"])
    if a.noise < 0:
        raise InvalidArgumentError("--noise must be non-negative")
    return kw


# -- work items -------------------------------------------------------------------------

@dataclasses.dataclass
class Job:
    id: str
    source: np.ndarray
    target: np.ndarray
    center: np.ndarray
    scale: float


def _register_job(args) -> dict:
    job, obj, solver, timing = args
    src = io.apply_normalization(PointCloud(job.source), job.center, job.scale)
    tgt = io.apply_normalization(PointCloud(job.target), job.center, job.scale)
    t0 = time.perf_counter()
    res = register(src, tgt, obj, solver)
    raw = io.denormalize_transform(res.transform, job.center, job.scale)
    return {
        "id": job.id,
        "rotation": raw.R.reshape(-1).tolist(),
        "translation": raw.T.tolist(),
        "final_loss": res.final_loss,
        "loss_threshold": res.loss_threshold,
        "restarts_used": res.restarts_used,
        "intervals_visited": res.intervals_visited,
        "failed_starts": res.failed_starts,
        "wall_time": time.perf_counter() - t0 if timing else 0.0,
    }


def per_pair_solver(solver: SolverConfig, index: int) -> SolverConfig:
    """Seed derived from (run seed, pair index), independent of scheduling."""
    return solver.replace(seed=pair_seed(solver.seed, index))


def run_jobs(jobs: list, obj: ObjectiveConfig, solver: SolverConfig, threads: int,
             timing: bool = True) -> list:
    work = [(job, obj, per_pair_solver(solver, k), timing) for k, job in enumerate(jobs)]
    if threads <= 1 or len(work) <= 1:
        return [_register_job(w) for w in work]
    with ProcessPoolExecutor(max_workers=min(threads, len(work))) as ex:
        return list(ex.map(_register_job, work))


def _jobs_from_manifest(manifest: io.PairManifest) -> list:
    jobs = []
    for p in manifest.pairs:
        s = io.read_cloud(manifest.resolve(p.source_path))
        t = io.read_cloud(manifest.resolve(p.target_path))
        jobs.append(Job(p.id, s.points, t.points, np.asarray(manifest.center), manifest.scale))
    return jobs


def _jobs_from_pairs(pairs, ids) -> list:
    return [Job(i, p.source.points, p.target.points, np.zeros(3), 1.0) for i, p in zip(ids, pairs)]


def pair_ids(n: int) -> list:
    width = max(4, len(str(n - 1)))
    return [f"pair{str(k).zfill(width)}" for k in range(n)]


def evaluate_records(manifest_pairs, sources, predictions: dict, center, scale, a) -> list:
    """Per-pair report records in the manifest's normalized frame."""
    out = []
    for mp, src in zip(manifest_pairs, sources):
        if mp.id not in predictions:
            raise InvalidArgumentError(f"no prediction for pair {mp.id!r}")
        if mp.gt is None:
            raise InvalidArgumentError(f"pair {mp.id!r} has no ground truth")
        pred, rec = predictions[mp.id]
        gt_n = io.normalize_transform(mp.gt, center, scale)
        pred_n = io.normalize_transform(pred, center, scale)
        ev = evaluate_pair(pred_n, gt_n, io.apply_normalization(src, center, scale), a.fscore_fraction)
        row = {"id": mp.id, **ev.as_dict(), "restarts_used": int(rec.get("restarts_used", 0)),
               "wall_time": float(rec.get("wall_time", 0.0)),
               "intervals_visited": int(rec.get("intervals_visited", 0)),
               "final_loss": rec.get("final_loss"), "rot_level": mp.rot_level, "overlap": mp.overlap}
        out.append(row)
    return out


def summarize(records: list, a) -> dict:
    def evals(rows):
        return [PairEvaluation(*(float(r[f]) for f in ("rot_error_deg", "trans_error", "mse", "cd",
                                                        "fscore"))) for r in rows]

    summary = aggregate(evals(records), a.recall_rot_deg, a.recall_trans).as_dict()
    by_level = {}
    for level in sorted({r["rot_level"] for r in records if r.get("rot_level")}):
        rows = [r for r in records if r.get("rot_level") == level]
        by_level[level] = aggregate(evals(rows), a.recall_rot_deg, a.recall_trans).as_dict()
    summary["by_rot_level"] = by_level
    return summary


def _timing(records: list) -> dict:
    return {"total_register_s": float(sum(r["wall_time"] for r in records))}


# -- subcommands ---------------------------------------------------------------------

def _write_dataset(pairs, out: Path, fmt: str) -> io.PairManifest:
    cloud_dir = out / "clouds"
    cloud_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for pid, p in zip(pair_ids(len(pairs)), pairs):
        sp = f"clouds/{pid}_source.{fmt}"
        tp = f"clouds/{pid}_target.{fmt}"
        io.write_cloud(p.source, out / sp)
        io.write_cloud(p.target, out / tp)
        entries.append(io.ManifestPair(pid, sp, tp, p.gt, p.rot_level.value, float(p.overlap)))
    manifest = io.PairManifest(tuple(entries), np.zeros(3), 1.0, root=out)
    io.write_manifest(manifest, out / "manifest.json")
    return manifest


def cmd_generate(a) -> int:
    kw = _dataset_kwargs(a)
    out = Path(a.out)
    pairs = generate_dataset(**kw)
    _write_dataset(pairs, out, a.format)
    print(f"wrote {len(pairs)} pairs to {out / 'manifest.json'}")
    return 0


def cmd_register(a) -> int:
    obj, solver, threads = objective_config(a), solver_config(a), thread_count(a)
    if a.manifest and (a.source or a.target):
        raise UsageError("use either --manifest or --source/--target")
    if a.manifest:
        manifest = io.read_manifest(a.manifest)
        jobs = _jobs_from_manifest(manifest)
    elif a.source and a.target:
        s, t = io.read_cloud(a.source), io.read_cloud(a.target)
        _, _, center, scale = io.normalize_pair(s, t)
        jobs = [Job("pair", s.points, t.points, center, scale)]
    else:
        raise UsageError("register needs --manifest or both --source and --target")
    records = run_jobs(jobs, obj, solver, threads, not a.no_timing)
    io.write_predictions(records, a.out, config_snapshot(obj, solver))
    print(f"wrote {len(records)} predictions to {a.out}")
    return 0


def cmd_evaluate(a) -> int:
    manifest = io.read_manifest(a.manifest)
    preds = io.read_predictions(a.predictions)
    sources = [io.read_cloud(manifest.resolve(p.source_path)) for p in manifest.pairs]
    records = evaluate_records(manifest.pairs, sources, preds, manifest.center, manifest.scale, a)
    report = io.RunReport({"predictions": str(a.predictions)}, records, summarize(records, a),
                          _timing(records))
    io.write_report(report, a.out)
    _print_summary(report.summary)
    return 0


def cmd_benchmark(a) -> int:
    obj, solver, threads = objective_config(a), solver_config(a), thread_count(a)
    kw = _dataset_kwargs(a)
    out = Path(a.out)
    pairs = generate_dataset(**kw)
    manifest = _write_dataset(pairs, out, a.format)
    jobs = _jobs_from_pairs(pairs, [p.id for p in manifest.pairs])
    records = run_jobs(jobs, obj, solver, threads, not a.no_timing)
    config = config_snapshot(obj, solver)
    io.write_predictions(records, out / "predictions.json", config)
    preds = {r["id"]: (RigidTransform(np.reshape(r["rotation"], (3, 3)), r["translation"]), r)
             for r in records}
    rows = evaluate_records(manifest.pairs, [p.source for p in pairs], preds, np.zeros(3), 1.0, a)
    config["dataset"] = {k: v for k, v in kw.items() if k != "levels"}
    report = io.RunReport(config, rows, summarize(rows, a), _timing(rows))
    io.write_report(report, out / "report.json")
    _print_summary(report.summary)
    return 0


def ablation_variants(obj: ObjectiveConfig, solver: SolverConfig, names) -> list:
    table = {
        "full": (obj, solver),
        "no-projected": (dataclasses.replace(obj, beta=0.0), solver),
        "clamp": (dataclasses.replace(obj, mapping=Mapping.CLAMP), solver),
        "no-strategies": (obj, solver.replace(escalate=False)),
        "euler": (obj, solver.replace(parameterization=Parameterization.EULER)),
        "sixd": (obj, solver.replace(parameterization=Parameterization.SIXD)),
    }
    return [(n, *table[n]) for n in names]


def run_ablation(jobs, manifest_pairs, sources, obj, solver, names, threads, a, timing=True) -> list:
    rows = []
    for name, o, s in ablation_variants(obj, solver, names):
        log.info("ablation config %s", name)
        records = run_jobs(jobs, o, s, threads, timing)
        preds = {r["id"]: (RigidTransform(np.reshape(r["rotation"], (3, 3)), r["translation"]), r)
                 for r in records}
        evals = evaluate_records(manifest_pairs, sources, preds, np.zeros(3), 1.0, a)
        summ = summarize(evals, a)
        rows.append({
            "config": name,
            "count": summ["count"],
            "mean_rot_error_deg": summ["mean"]["rot_error_deg"],
            "median_rot_error_deg": summ["median"]["rot_error_deg"],
            "mean_trans_error": summ["mean"]["trans_error"],
            "median_trans_error": summ["median"]["trans_error"],
            "mean_mse": summ["mean"]["mse"],
            "recall": summ["recall"],
            "wall_time": float(sum(r["wall_time"] for r in records)),
        })
    return rows


def cmd_ablate(a) -> int:
    obj, solver, threads = objective_config(a), solver_config(a), thread_count(a)
    names = [n.strip() for n in a.configs.split(",") if n.strip()]
    bad = [n for n in names if n not in ABLATION_CONFIGS]
    if bad or not names:
        raise UsageError(f"unknown ablation config(s): {','.join(bad) or '(none)'}")
    if a.manifest:
        manifest = io.read_manifest(a.manifest)
        if any(p.gt is None for p in manifest.pairs):
            raise InvalidArgumentError("ablation needs ground truth for every pair")
        jobs = _jobs_from_manifest(manifest)
        mpairs = manifest.pairs
        sources = [PointCloud(j.source) for j in jobs]
        center, scale = np.asarray(manifest.center), manifest.scale
        if not (np.all(center == 0) and scale == 1.0):
            sources = [io.apply_normalization(s, center, scale) for s in sources]
            jobs = [Job(j.id, s.points, io.apply_normalization(PointCloud(j.target), center, scale).points,
                        np.zeros(3), 1.0) for j, s in zip(jobs, sources)]
            mpairs = [dataclasses.replace(p, gt=io.normalize_transform(p.gt, center, scale))
                      for p in mpairs]
    else:
        kw = _dataset_kwargs(a)
        pairs = generate_dataset(**kw)
        ids = pair_ids(len(pairs))
        jobs = _jobs_from_pairs(pairs, ids)
        mpairs = [io.ManifestPair(i, "", "", p.gt, p.rot_level.value, float(p.overlap))
                  for i, p in zip(ids, pairs)]
        sources = [p.source for p in pairs]
    rows = run_ablation(jobs, mpairs, sources, obj, solver, names, threads, a, not a.no_timing)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    io._write_json({"config": config_snapshot(obj, solver), "rows": rows}, out / "ablation.json")
    with open(out / "ablation.csv", "w", encoding="utf-8", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    for r in rows:
        print(f"{r['config']:>14}  mean rot {r['mean_rot_error_deg']:8.3f}  median rot "
              f"{r['median_rot_error_deg']:8.3f}  mean trans {r['mean_trans_error']:.4f}  "
              f"recall {r['recall']:.3f}")
    return 0


def _print_summary(s: dict) -> None:
    print(f"pairs {s['count']}  median rot {s['median']['rot_error_deg']:.3f} deg  "
          f"median trans {s['median']['trans_error']:.4f}  mean mse {s['mean']['mse']:.4f}  "
          f"recall {s['recall']:.3f}")


COMMANDS = {"generate": cmd_generate, "register": cmd_register, "evaluate": cmd_evaluate,
            "benchmark": cmd_benchmark, "ablate": cmd_ablate}


def _validate(a) -> None:
    """Build every config once so bad values fail before any work starts."""
    if hasattr(a, "alpha"):
        objective_config(a)
    if hasattr(a, "preset"):
        solver_config(a)
        thread_count(a)
    if hasattr(a, "n_pairs") and a.command in ("generate", "benchmark") or (
            a.command == "ablate" and not a.manifest):
        _dataset_kwargs(a)
    if hasattr(a, "fscore_fraction"):
        if not a.fscore_fraction > 0 or a.recall_rot_deg < 0 or a.recall_trans < 0:
            raise InvalidArgumentError("evaluation thresholds must be positive")


def run(argv=None) -> int:
    try:
        try:
            a = build_parser().parse_args(argv)
        except SystemExit as e:  # --help
            return int(e.code or 0)
        logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        _validate(a)
    except UsageError as e:
        print(f"hybreg: error: {e}", file=sys.stderr)
        return 2
    except (InvalidArgumentError, ValueError) as e:
        print(f"hybreg: error: {_one_line(e)}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[a.command](a)
    except UsageError as e:
        print(f"hybreg: error: {e}", file=sys.stderr)
        return 2
    except (InvalidArgumentError, CloudParseError, UnsupportedFormatError) as e:
        print(f"hybreg: error: {_one_line(e)}", file=sys.stderr)
        return 2
    except (HybregError, OSError, RuntimeError) as e:
        print(f"hybreg: failed: {_one_line(e)}", file=sys.stderr)
        return 1


def _one_line(e: Exception) -> str:
    return " ".join(str(e).split())


def main() -> None:
    sys.exit(run())
