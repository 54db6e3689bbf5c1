"""Command-line entry point: ``fformation {gen,run,eval,metrics,check-gradients}``.

Exit codes: 0 success, 1 config error, 2 data error, 3 run failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUN = 0, 1, 2, 3

log = logging.getLogger("fformation")


class DataError(Exception):
    pass


class RunFailure(Exception):
    pass


def _pin_threads():
    # only effective before NumPy loads BLAS, which is why imports below are lazy
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = "1"


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    import numpy as np

    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_config(args):
    """Resolve the run config; a report JSON stands in for its embedded config."""
    from . import config

    if args.config is None:
        cfg, cells = config.from_dict({}), None
    else:
        path = Path(args.config)
        cells = None
        if path.suffix == ".json" and path.exists():
            with open(path, encoding="utf-8") as fh:
                try:
                    doc = json.load(fh)
                except json.JSONDecodeError as exc:
                    raise config.ConfigError(f"{path}: invalid JSON ({exc})") from exc
            if isinstance(doc, dict) and "run_config" in doc:
                cfg = config.from_dict(doc["run_config"], str(path))
                cell = doc.get("cell")
                cells = [(float(cell["window_s"]), cell["input_combo"])] if cell else None
            else:
                cfg = config.from_dict(doc, str(path))
        else:
            cfg = config.load_config(path)
    raw = cfg.raw
    if getattr(args, "seed_base", None) is not None:
        raw["seed_base"] = args.seed_base
    if getattr(args, "jobs", None) is not None:
        raw["jobs"] = args.jobs
    if getattr(args, "strict_determinism", False):
        raw["strict_determinism"] = True
    if getattr(args, "out", None) is not None:
        if args.command == "gen":
            raw["data"] = args.out
        else:
            raw["output_dir"] = args.out
    return cfg.validate(), cells


# --- gen --------------------------------------------------------------------------

def cmd_gen(args) -> int:
    from . import sampling, synth

    cfg, _ = _load_config(args)
    root = Path(cfg["data"])
    try:
        root.mkdir(parents=True, exist_ok=True)
        probe = root / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise DataError(f"{root}: output directory is not writable ({exc.strerror})") from exc
    n_sessions = int(cfg["synth"]["n_sessions"])
    files, sessions = {}, []
    for i in range(n_sessions):
        sc = cfg.synth_config(i)
        sess = synth.generate(sc)
        out = sess.export(root / sc.name)
        sessions.append(sess)
        for f in sorted(out.iterdir()):
            files[str(f.relative_to(root))] = _sha256(f)
    _write_json(root / "manifest.json", {"synth": cfg["synth"], "files": files})
    window = sampling.WindowSpec(cfg.windows[0], cfg["overlap"])
    ds = sampling.build_dataset([s.to_session() for s in sessions], window,
                                sampling.InputCombo.PROXIMITY, sampling.Task(cfg["task"]),
                                cfg["membership_threshold"], cfg["speaking_threshold"])
    n_groups = sum(len(s.annotations.fformation_intervals) for s in sessions)
    print(f"wrote {n_sessions} session(s) to {root}")
    print(f"participants: {sessions[0].config.n_participants} per session; groups formed: {n_groups}")
    names = sampling.Task(cfg["task"]).class_names
    balance = ", ".join(f"{n}={c}" for n, c in zip(names, ds.label_counts))
    print(f"class balance at {cfg.windows[0]:g}s windows: {balance}")
    return EXIT_OK


# --- run --------------------------------------------------------------------------

def _environment(train_cfg) -> dict:
    import numpy as np

    from .neuralnet import backend

    name = train_cfg.backend if train_cfg.backend != "auto" else backend.default_name()
    return {"backend": name, "numpy": np.__version__, "python": platform.python_version(),
            "machine": platform.machine()}


def cmd_run(args) -> int:
    from . import experiment, ingestion, sampling

    cfg, cells = _load_config(args)
    if cfg["strict_determinism"]:
        _pin_threads()
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    sessions = ingestion.load_sessions(cfg["data"])
    exp_cfg = cfg.experiment_config()
    env = _environment(exp_cfg.train)
    if cfg["strict_determinism"]:
        # a re-run must take the same arithmetic path, so the resolved backend is echoed
        exp_cfg.train.backend = env["backend"]
        cfg.raw["train"]["backend"] = env["backend"]
    task = sampling.Task(cfg["task"])
    todo = cells or [(w, c) for w in cfg.windows for c in cfg.combos]
    summary = {"task": task.value, "cells": [], "run_config": cfg.to_dict(), "environment": env}
    partial = False
    for window_s, combo in todo:
        spec = sampling.WindowSpec(window_s, cfg["overlap"])
        ds = sampling.build_dataset(sessions, spec, combo, task, cfg["membership_threshold"],
                                    cfg["speaking_threshold"])
        tag = f"{task.value}_{combo}_{window_s:g}s"
        log.info("cell %s: %d samples, labels %s", tag, len(ds), ds.label_counts)
        t0 = time.perf_counter()
        ckpt = out / "checkpoints" / tag if args.checkpoints else None
        if ckpt is not None:
            ckpt.mkdir(parents=True, exist_ok=True)
        report = experiment.run_repetitions(ds, exp_cfg, jobs=cfg["jobs"], checkpoint_dir=ckpt)
        doc = report.to_dict()
        doc["cell"] = {"window_s": window_s, "input_combo": combo, "task": task.value}
        doc["run_config"] = cfg.to_dict()
        doc["environment"] = env
        doc["timings"] = {"wall_s": time.perf_counter() - t0,
                          "per_run_s": [r.get("wall_s") for r in report.runs]}
        _write_json(out / f"report_{tag}.json", doc)
        agg = doc["aggregate"]
        row = {"window_s": window_s, "input_combo": combo, "partial": report.partial,
               "failed": report.failed}
        if task is sampling.Task.BINARY:
            row.update(mean_auc=agg["mean_auc"], std_auc=agg["std_auc"],
                       p_vs_chance=(agg["auc_vs_chance"] or {}).get("pvalue"))
            print(f"{tag}: AUC {agg['mean_auc']:.4f} +/- {agg['std_auc']:.4f} over {agg['n_ok']} runs")
        else:
            row.update(diagonal=agg["diagonal"], normalized_confusion=agg["normalized_confusion"])
            diag = " ".join(f"{d:.3f}" for d in agg["diagonal"])
            print(f"{tag}: confusion diagonal {diag}")
        summary["cells"].append(row)
        partial |= report.partial
    _write_json(out / "summary.json", summary)
    _write_summary_table(out / "summary.tsv", summary, task)
    if partial:
        print("some repetitions failed; reports are flagged partial", file=sys.stderr)
        return EXIT_RUN
    return EXIT_OK


def _write_summary_table(path: Path, summary: dict, task) -> None:
    """Window size down the rows, one column per input combination."""
    from .sampling import Task

    cells = summary["cells"]
    combos = sorted({c["input_combo"] for c in cells})
    windows = sorted({c["window_s"] for c in cells})
    lookup = {(c["window_s"], c["input_combo"]): c for c in cells}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("window_s\t" + "\t".join(combos) + "\n")
        for w in windows:
            vals = []
            for c in combos:
                cell = lookup.get((w, c))
                if cell is None:
                    vals.append("")
                elif task is Task.BINARY:
                    vals.append(f"{cell['mean_auc']:.4f}")
                else:
                    vals.append(" ".join(f"{d:.3f}" for d in cell["diagonal"]))
            fh.write(f"{w:g}\t" + "\t".join(vals) + "\n")


# --- eval / metrics -----------------------------------------------------------------

def _load_eval_dataset(args, meta):
    from . import ingestion, sampling

    path = Path(args.data)
    if path.suffix == ".npz":
        return sampling.load_dataset(path)
    window = args.window if args.window is not None else meta.get("window_s")
    if window is None:
        raise DataError("no window size: pass --window or use a checkpoint that records one")
    combo = args.combo or meta.get("input_combo")
    task = args.task or meta.get("task", "binary")
    spec = sampling.WindowSpec(float(window), float(meta.get("overlap", 0.5)))
    return sampling.build_dataset(ingestion.load_sessions(path), spec, combo, task)


def cmd_eval(args) -> int:
    from . import experiment
    from .neuralnet import load_checkpoint

    params, _, meta = load_checkpoint(args.checkpoint)
    extra = meta.get("extra", {})
    ds = _load_eval_dataset(args, extra)
    if ds.combo.n_channels != params.n_channels:
        trained = extra.get("input_combo", "unknown")
        raise DataError(
            f"channel mismatch: checkpoint expects {params.n_channels} input channels "
            f"(trained on {trained}), dataset has {ds.combo.n_channels} ({ds.combo.value})")
    if ds.n_classes != params.n_classes:
        raise DataError(f"class mismatch: checkpoint predicts {params.n_classes} classes, "
                        f"dataset task {ds.task.value} has {ds.n_classes}")
    result = experiment.evaluate(params, ds.data, ds.labels, ds.task, experiment.TrainConfig(
        backend=args.backend))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    k = ds.n_classes
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("sample_id,true,pred_class," + ",".join(f"score_{c}" for c in range(k)) + "\n")
        for i in range(len(ds)):
            a, b = ds.pairs[i]
            scores = ",".join(repr(float(x)) for x in result["probs"][i])
            fh.write(f"{a}|{b}|{int(ds.window_index[i])},{int(ds.labels[i])},"
                     f"{int(result['preds'][i])},{scores}\n")
    summary = _metrics_summary(result["probs"], result["labels"], k)
    _write_json(out.with_suffix(".metrics.json"), summary)
    print(json.dumps(summary, indent=2, default=_json_default))
    return EXIT_OK


def _metrics_summary(probs, labels, k) -> dict:
    import numpy as np

    from . import metrics

    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    preds = probs.argmax(axis=1)
    cm = metrics.ConfusionMatrix(k).update(preds, labels)
    norm, empty = cm.normalized()
    out = {"n": int(len(labels)), "confusion": cm.tolist(), "normalized_confusion": norm.tolist(),
           "empty_rows": empty, "accuracy": float(np.mean(preds == labels)) if len(labels) else None}
    if k == 2:
        try:
            out["auc"] = metrics.roc_auc(probs[:, 1], labels).auc
        except metrics.MetricError:
            out["auc"] = None
    return out


def read_predictions(path):
    """Parse a predictions CSV into ``(labels, scores)``."""
    import csv

    import numpy as np

    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: predictions file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:3] != ["sample_id", "true", "pred_class"] or len(header) < 5:
            raise DataError(f"{path}: expected header sample_id,true,pred_class,score_0,...")
        labels, scores = [], []
        for row_no, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise DataError(f"{path}: row {row_no}: expected {len(header)} fields")
            try:
                labels.append(int(row[1]))
                scores.append([float(x) for x in row[3:]])
            except ValueError as exc:
                raise DataError(f"{path}: row {row_no}: {exc}") from exc
    return np.array(labels, dtype=np.int64), np.array(scores, dtype=np.float64).reshape(-1, len(header) - 3)


def cmd_metrics(args) -> int:
    labels, scores = read_predictions(args.predictions)
    summary = _metrics_summary(scores, labels, scores.shape[1])
    if args.out:
        _write_json(Path(args.out), summary)
    print(json.dumps(summary, indent=2, default=_json_default))
    return EXIT_OK


# --- check-gradients -------------------------------------------------------------------

def cmd_check_gradients(args) -> int:
    from .neuralnet import gradient_suite

    t0 = time.perf_counter()
    res = gradient_suite(args.seeds, tuple(args.classes), backend=args.backend)
    for r in res["runs"]:
        print(f"seed {r['seed']:2d} classes {r['n_classes']}: max relative error {r['max_rel_error']:.3e}")
    print(f"max relative error: {res['worst']:.3e} ({time.perf_counter() - t0:.1f}s)")
    return EXIT_OK if res["worst"] < args.tolerance else EXIT_RUN


# --- entry point ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fformation", description=__doc__.splitlines()[0])
    p.add_argument("--print-defaults", action="store_true", help="print the default config and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    g = sub.add_parser("gen", help="write synthetic sessions")
    g.add_argument("--config")
    g.add_argument("--out", help="directory for the sessions (overrides `data`)")

    r = sub.add_parser("run", help="run the window x input-combination sweep")
    r.add_argument("--config", help="YAML config, or a report JSON to re-run its cell")
    r.add_argument("--out", help="report directory (overrides `output_dir`)")
    r.add_argument("--jobs", type=int)
    r.add_argument("--seed-base", type=int)
    r.add_argument("--strict-determinism", action="store_true")
    r.add_argument("--checkpoints", action="store_true", help="save each run's selected model")

    e = sub.add_parser("eval", help="score a dataset with a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="session directory or saved dataset (.npz)")
    e.add_argument("--out", required=True, help="predictions CSV")
    e.add_argument("--window", type=float)
    e.add_argument("--combo", choices=["acceleration", "proximity", "fusion"])
    e.add_argument("--task", choices=["binary", "joint4"])
    e.add_argument("--backend", default="auto")

    m = sub.add_parser("metrics", help="recompute metrics from a predictions CSV")
    m.add_argument("--predictions", required=True)
    m.add_argument("--out")

    c = sub.add_parser("check-gradients", help="finite-difference gradient check")
    c.add_argument("--seeds", type=int, default=10)
    c.add_argument("--classes", type=int, nargs="+", default=[2, 4])
    c.add_argument("--backend", default=None)
    c.add_argument("--tolerance", type=float, default=1e-4)
    return p


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "eval": cmd_eval, "metrics": cmd_metrics,
            "check-gradients": cmd_check_gradients}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.print_defaults:
        from .config import DEFAULTS_YAML

        print(DEFAULTS_YAML, end="")
        return EXIT_OK
    if args.command is None:
        build_parser().print_usage(sys.stderr)
        return EXIT_CONFIG
    if args.command == "run":
        _pin_if_strict(args)
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:
        code = _exit_code(exc)
        if code is None:
            raise
        kind = {EXIT_CONFIG: "config error", EXIT_DATA: "data error", EXIT_RUN: "run failed"}[code]
        print(f"{kind}: {exc}", file=sys.stderr)
        return code


def _pin_if_strict(args):
    """Strict mode from the flag or the config file, checked before NumPy is imported."""
    if args.strict_determinism:
        _pin_threads()
        return
    from .config import ConfigError

    try:
        cfg, _ = _load_config(args)
    except ConfigError:
        return  # reported properly once the command runs
    if cfg["strict_determinism"]:
        _pin_threads()


def _exit_code(exc):
    from .config import ConfigError
    from .experiment import SplitError, TrainingDiverged
    from .ingestion import IngestionError
    from .neuralnet.checkpoint import CheckpointError
    from .sampling import SamplingError
    from .synth import SynthConfigError

    if isinstance(exc, (ConfigError, SynthConfigError)):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, IngestionError, SamplingError, CheckpointError)):
        return EXIT_DATA
    if isinstance(exc, (RunFailure, SplitError, TrainingDiverged)):
        return EXIT_RUN
    return None


if __name__ == "__main__":
    sys.exit(main())
