"""Repeated pair-disjoint train/validation/test experiments."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .neuralnet import (AdamState, adam_step, class_weights, evaluate_loss, init_params,
                        loss_and_grads, predict_logits, save_checkpoint, softmax)
from .neuralnet.model import NonFiniteError
from .sampling import Dataset, Task

logger = logging.getLogger(__name__)

DEFAULT_RATIOS = (0.8, 0.1, 0.1)


class SplitError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    hidden_size: int = 16
    n_layers: int = 3
    head_size: int = 8
    relu_on_logits: bool = False
    dtype: str = "float32"
    backend: str = "auto"
    eval_batch_size: int = 256
    clip_norm: float | None = None  # rescale gradients whose global L2 norm exceeds this


@dataclass
class ExperimentConfig:
    ratios: tuple = DEFAULT_RATIOS
    repetitions: int = 20
    seed_base: int = 0
    participant_disjoint: bool = False
    max_split_retries: int = 50
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ratios"] = list(self.ratios)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        d = dict(d)
        train = TrainConfig(**d.pop("train", {}))
        if "ratios" in d:
            d["ratios"] = tuple(d["ratios"])
        return cls(train=train, **d)


# --- splitting ----------------------------------------------------------------

def largest_remainder(n: int, ratios) -> list:
    """Integer counts summing to ``n``, ties in the remainder going to earlier subsets."""
    ratios = np.asarray(ratios, dtype=np.float64)
    if np.any(ratios < 0) or not math.isclose(ratios.sum(), 1.0, abs_tol=1e-9):
        raise SplitError("split ratios must be non-negative and sum to 1")
    exact = ratios * n
    counts = np.floor(exact + 1e-9).astype(int)
    remainder = exact - counts
    order = sorted(range(len(ratios)), key=lambda i: (-round(remainder[i], 9), i))
    for i in order[: n - counts.sum()]:
        counts[i] += 1
    return counts.tolist()


@dataclass(frozen=True)
class SplitPlan:
    train_pairs: tuple
    val_pairs: tuple
    test_pairs: tuple
    ratios: tuple
    seed: int
    attempts: int = 1

    @property
    def subsets(self) -> dict:
        return {"train": self.train_pairs, "val": self.val_pairs, "test": self.test_pairs}

    def route(self, dataset: Dataset) -> dict:
        """Sample indices of ``dataset`` for each subset."""
        lookup = {}
        for name, pairs in self.subsets.items():
            for p in pairs:
                lookup[p] = name
        out = {name: [] for name in self.subsets}
        for i, p in enumerate(dataset.pairs):
            if p in lookup:
                out[lookup[p]].append(i)
        return {k: np.array(v, dtype=np.int64) for k, v in out.items()}

    def to_dict(self) -> dict:
        return {"train_pairs": [list(p) for p in self.train_pairs],
                "val_pairs": [list(p) for p in self.val_pairs],
                "test_pairs": [list(p) for p in self.test_pairs],
                "ratios": list(self.ratios), "seed": self.seed, "attempts": self.attempts}


def _acceptable(subsets, class_counts, n_classes):
    if class_counts is None:
        return True, ""
    for name, pairs in subsets.items():
        total = np.zeros(n_classes, dtype=np.int64)
        for p in pairs:
            total += class_counts.get(p, 0)
        if total[1:].sum() == 0:
            return False, f"{name} subset has no positive samples"
        if name == "train" and np.any(total == 0):
            return False, "training subset is missing a class"
    return True, ""


def split_pairs(all_pairs, ratios=DEFAULT_RATIOS, seed: int = 0, class_counts=None,
                max_retries: int = 50, participant_disjoint: bool = False) -> SplitPlan:
    """Random partition of pairs into train/val/test.

    A pure function of ``(sorted(all_pairs), ratios, seed)``. ``class_counts``
    maps a pair to its per-class sample counts (class 0 is the negative
    class); a draw leaving a subset without positives, or the training subset
    without some class, is redrawn up to ``max_retries`` times.

    With ``participant_disjoint`` participants rather than pairs are split,
    and pairs whose members land in different subsets are dropped.
    """
    pairs = sorted(set(tuple(p) for p in all_pairs))
    if len(pairs) < 10:
        raise SplitError(f"need at least 10 pairs to split, got {len(pairs)}")
    n_classes = None
    if class_counts is not None:
        class_counts = {tuple(k): np.asarray(v, dtype=np.int64) for k, v in class_counts.items()}
        n_classes = len(next(iter(class_counts.values())))
    rng = np.random.default_rng(seed)
    reason = ""
    for attempt in range(1, max_retries + 1):
        if participant_disjoint:
            people = sorted({m for p in pairs for m in p})
            counts = largest_remainder(len(people), ratios)
            perm = [people[i] for i in rng.permutation(len(people))]
            bounds = np.cumsum([0] + counts)
            where = {}
            for s in range(3):
                for person in perm[bounds[s]:bounds[s + 1]]:
                    where[person] = s
            parts = [[], [], []]
            for p in pairs:
                if where[p[0]] == where[p[1]]:
                    parts[where[p[0]]].append(p)
        else:
            counts = largest_remainder(len(pairs), ratios)
            perm = [pairs[i] for i in rng.permutation(len(pairs))]
            bounds = np.cumsum([0] + counts)
            parts = [perm[bounds[s]:bounds[s + 1]] for s in range(3)]
        subsets = dict(zip(("train", "val", "test"), (tuple(sorted(p)) for p in parts)))
        if any(len(v) == 0 for v in subsets.values()):
            reason = "empty subset"
            ok = False
        else:
            ok, reason = _acceptable(subsets, class_counts, n_classes)
        if ok:
            return SplitPlan(subsets["train"], subsets["val"], subsets["test"], tuple(ratios), seed, attempt)
        logger.warning("split seed %s attempt %d rejected: %s", seed, attempt, reason)
    raise SplitError(f"no acceptable split after {max_retries} attempts ({reason})")


def pair_class_counts(dataset: Dataset) -> dict:
    out = {}
    for p, y in zip(dataset.pairs, dataset.labels):
        out.setdefault(p, np.zeros(dataset.n_classes, dtype=np.int64))[y] += 1
    return out


# --- training -----------------------------------------------------------------

@dataclass
class TrainRun:
    seed: int
    train_losses: list
    val_losses: list
    selected_epoch: int
    params: object
    optimizer: object
    weights: list
    wall_s: float = 0.0
    test: dict = field(default_factory=dict)

    @property
    def selected_val_loss(self) -> float:
        return self.val_losses[self.selected_epoch - 1]


def select_epoch(val_losses) -> int:
    """1-based epoch with the lowest validation loss; the earliest wins ties."""
    return int(np.argmin(np.asarray(val_losses, dtype=np.float64))) + 1


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``; returns the norm."""
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def _seed_streams(seed):
    split, init, shuffle = np.random.SeedSequence(seed).spawn(3)
    return (int(split.generate_state(1)[0]), np.random.default_rng(init), np.random.default_rng(shuffle))


def fit(X_train, y_train, n_classes, config: TrainConfig, seed: int = 0, X_val=None, y_val=None,
        weights=None, n_channels=None) -> TrainRun:
    """Minibatch Adam for ``config.epochs`` epochs, keeping the best-validation model.

    Without a validation set the training loss of each epoch stands in for it.
    Class weights default to inverse training-label frequency.
    """
    t0 = time.perf_counter()
    dtype = np.dtype(config.dtype)
    _, init_rng, shuffle_rng = _seed_streams(seed)
    X_train = np.ascontiguousarray(X_train, dtype=dtype)
    y_train = np.asarray(y_train, dtype=np.int64)
    if len(X_train) == 0:
        raise ValueError("empty training set")
    if weights is None:
        weights = class_weights(np.bincount(y_train, minlength=n_classes))
    weights = np.asarray(weights, dtype=np.float64)
    params = init_params(n_channels or X_train.shape[2], n_classes, init_rng, config.hidden_size,
                         config.n_layers, config.head_size, dtype, config.relu_on_logits)
    state = AdamState.for_params(params, lr=config.learning_rate, beta1=config.beta1,
                                 beta2=config.beta2, epsilon=config.epsilon)
    has_val = X_val is not None and len(X_val) > 0
    if has_val:
        X_val = np.ascontiguousarray(X_val, dtype=dtype)
    best = (math.inf, None, None)
    train_losses, val_losses = [], []
    n = len(X_train)
    for epoch in range(1, config.epochs + 1):
        perm = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = np.sort(perm[start:start + config.batch_size])
            try:
                loss, grads = loss_and_grads(X_train[idx], y_train[idx], params, weights, config.backend)
            except NonFiniteError as exc:
                raise TrainingDiverged(f"epoch {epoch}, batch at {start}: {exc}") from exc
            if not math.isfinite(loss):
                raise TrainingDiverged(f"epoch {epoch}, batch at {start}: loss {loss}")
            if config.clip_norm is not None:
                clip_gradients(grads, config.clip_norm)
            adam_step(params, grads, state)
            total += loss * len(idx)
        train_losses.append(total / n)
        if has_val:
            try:
                val_loss, _ = evaluate_loss(X_val, y_val, params, weights, config.backend,
                                            config.eval_batch_size)
            except NonFiniteError as exc:
                raise TrainingDiverged(f"epoch {epoch} validation: {exc}") from exc
        else:
            val_loss = train_losses[-1]
        if not math.isfinite(val_loss):
            raise TrainingDiverged(f"epoch {epoch}: validation loss {val_loss}")
        val_losses.append(val_loss)
        if val_loss < best[0]:
            best = (val_loss, params.copy(), state.copy())
        logger.debug("epoch %d train %.5f val %.5f", epoch, train_losses[-1], val_loss)
    selected = select_epoch(val_losses)
    return TrainRun(seed, train_losses, val_losses, selected, best[1], best[2], weights.tolist(),
                    time.perf_counter() - t0)


def evaluate(params, X, labels, task: Task, config: TrainConfig) -> dict:
    logits = predict_logits(np.asarray(X, dtype=params.dtype), params, config.backend,
                            config.eval_batch_size)
    probs = softmax(logits)
    preds = probs.argmax(axis=1)
    labels = np.asarray(labels, dtype=np.int64)
    out = {"n": int(len(labels)), "probs": probs, "preds": preds, "labels": labels}
    if task is Task.BINARY:
        try:
            out["auc"] = metrics.roc_auc(probs[:, 1], labels).auc
        except metrics.MetricError:
            out["auc"] = float("nan")
    cm = metrics.ConfusionMatrix(task.n_classes).update(preds, labels)
    out["confusion"] = cm.counts
    return out


def train_model(dataset: Dataset, plan: SplitPlan, config: TrainConfig, seed: int = 0) -> TrainRun:
    """Train on the plan's training pairs, select by validation loss, score the test pairs.

    Class weights come from the training subset only.
    """
    routes = plan.route(dataset)
    for name in ("train", "val"):
        if len(routes[name]) == 0:
            raise SplitError(f"{name} subset has no samples")
    labels = dataset.labels
    tr, va, te = routes["train"], routes["val"], routes["test"]
    weights = class_weights(np.bincount(labels[tr], minlength=dataset.n_classes))
    run = fit(dataset.data[tr], labels[tr], dataset.n_classes, config, seed,
              dataset.data[va], labels[va], weights)
    run.test = evaluate(run.params, dataset.data[te], labels[te], dataset.task, config)
    return run


# --- repetitions ----------------------------------------------------------------

@dataclass
class RepetitionReport:
    task: Task
    n_classes: int
    config: dict
    runs: list
    dataset: dict = field(default_factory=dict)

    @property
    def ok_runs(self) -> list:
        return [r for r in self.runs if r["status"] == "ok"]

    @property
    def failed(self) -> list:
        return [r["index"] for r in self.runs if r["status"] != "ok"]

    @property
    def partial(self) -> bool:
        return bool(self.failed)

    @property
    def aucs(self) -> list:
        return [r["auc"] for r in self.ok_runs if "auc" in r]

    @property
    def mean_auc(self) -> float:
        return float(np.mean(self.aucs)) if self.aucs else float("nan")

    @property
    def std_auc(self) -> float:
        return float(np.std(self.aucs, ddof=1)) if len(self.aucs) > 1 else float("nan")

    def auc_vs_chance(self):
        try:
            return metrics.one_sample_t_test(self.aucs, 0.5, "greater")
        except metrics.MetricError:
            return None

    @property
    def accumulated_confusion(self) -> np.ndarray:
        total = np.zeros((self.n_classes, self.n_classes), dtype=np.int64)
        for r in self.ok_runs:
            total += np.asarray(r["confusion"], dtype=np.int64)
        return total

    @property
    def normalized_confusion(self) -> np.ndarray:
        return metrics.normalize(self.accumulated_confusion)[0]

    def metrics_view(self) -> dict:
        """Everything that must reproduce exactly under a re-run (no timings)."""
        keep = ("index", "seed", "status", "selected_epoch", "train_losses", "val_losses", "auc",
                "confusion", "n_train", "n_val", "n_test", "split")
        return {"runs": [{k: r[k] for k in keep if k in r} for r in self.runs],
                "aggregate": self.aggregate()}

    def aggregate(self) -> dict:
        agg = {"n_ok": len(self.ok_runs), "failed": self.failed, "partial": self.partial}
        if self.task is Task.BINARY:
            agg["mean_auc"] = self.mean_auc
            agg["std_auc"] = self.std_auc
            tt = self.auc_vs_chance()
            # AUCs are tested against the constant 0.5 of a random classifier
            agg["auc_vs_chance"] = tt.to_dict() if tt else None
        cm = self.accumulated_confusion
        norm, empty = metrics.normalize(cm)
        agg["accumulated_confusion"] = cm.tolist()
        agg["normalized_confusion"] = norm.tolist()
        agg["empty_rows"] = empty
        agg["diagonal"] = np.diag(norm).tolist()
        return agg

    def to_dict(self) -> dict:
        return {"task": self.task.value, "n_classes": self.n_classes, "config": self.config,
                "dataset": self.dataset, "runs": self.runs, "aggregate": self.aggregate()}

    @classmethod
    def from_dict(cls, d: dict) -> RepetitionReport:
        return cls(Task(d["task"]), d["n_classes"], d["config"], d["runs"], d.get("dataset", {}))


_WORKER_DATASET = None


def _init_worker(dataset):
    global _WORKER_DATASET
    _WORKER_DATASET = dataset


def run_one(dataset: Dataset, config: ExperimentConfig, index: int, checkpoint_dir=None) -> dict:
    seed = config.seed_base + index
    split_seed, _, _ = _seed_streams(seed)
    entry = {"index": index, "seed": seed, "status": "ok"}
    t0 = time.perf_counter()
    try:
        plan = split_pairs(dataset.unique_pairs, config.ratios, split_seed, pair_class_counts(dataset),
                           config.max_split_retries, config.participant_disjoint)
        run = train_model(dataset, plan, config.train, seed)
    except (SplitError, TrainingDiverged, ValueError) as exc:
        logger.error("repetition %d failed: %s", index, exc)
        entry.update(status="failed", error=str(exc), wall_s=time.perf_counter() - t0)
        return entry
    routes = plan.route(dataset)
    entry.update(
        selected_epoch=run.selected_epoch,
        train_losses=run.train_losses,
        val_losses=run.val_losses,
        class_weights=run.weights,
        confusion=run.test["confusion"].tolist(),
        n_train=len(routes["train"]), n_val=len(routes["val"]), n_test=len(routes["test"]),
        split={"seed": split_seed, "attempts": plan.attempts,
               "n_pairs": [len(plan.train_pairs), len(plan.val_pairs), len(plan.test_pairs)],
               "test_pairs": [list(p) for p in plan.test_pairs]},
        wall_s=time.perf_counter() - t0,
    )
    if dataset.task is Task.BINARY:
        entry["auc"] = run.test["auc"]
        if not math.isfinite(entry["auc"]):
            entry.update(status="failed", error="test subset lacks one class; AUC undefined")
    if checkpoint_dir is not None:
        path = Path(checkpoint_dir) / f"rep{index:02d}.npz"
        save_checkpoint(path, run.params, run.optimizer, seed,
                        {"selected_epoch": run.selected_epoch, "task": dataset.task.value,
                         "input_combo": dataset.combo.value, "window_s": dataset.window_spec.length_s,
                         "overlap": dataset.window_spec.overlap_frac, "class_weights": run.weights})
        entry["checkpoint"] = str(path)
    return entry


def _run_in_worker(config, index, checkpoint_dir):
    return run_one(_WORKER_DATASET, config, index, checkpoint_dir)


def run_repetitions(dataset: Dataset, config: ExperimentConfig, n: int | None = None, jobs: int = 1,
                    checkpoint_dir=None) -> RepetitionReport:
    """``n`` independent split/train/evaluate cycles, repetition ``i`` seeded with ``seed_base + i``.

    Binary runs contribute an AUC each; confusion counts are summed over runs
    and normalized once. Concurrent execution returns the same report as
    sequential execution.
    """
    n = config.repetitions if n is None else n
    if n < 2:
        raise ValueError("need at least 2 repetitions")
    if jobs > 1:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(dataset,)) as pool:
            futures = [pool.submit(_run_in_worker, config, i, checkpoint_dir) for i in range(n)]
            runs = [f.result() for f in futures]
    else:
        runs = [run_one(dataset, config, i, checkpoint_dir) for i in range(n)]
    cfg = config.to_dict()
    cfg["repetitions"] = n
    return RepetitionReport(dataset.task, dataset.n_classes, cfg, runs, dataset.manifest())
