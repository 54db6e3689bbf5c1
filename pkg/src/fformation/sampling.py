"""Pairwise sliding-window samples with membership and role labels."""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .ingestion import ACCEL_RATE_HZ, NO_GROUP, IngestionError, Session

MEMBERSHIP_THRESHOLD = 0.66
SPEAKING_THRESHOLD = 0.30

_TOL = 1e-9


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class WindowSpec:
    length_s: float
    overlap_frac: float = 0.5
    rate_hz: float = ACCEL_RATE_HZ

    def __post_init__(self):
        if self.length_s <= 0:
            raise SamplingError("window length must be positive")
        if not 0 <= self.overlap_frac < 1:
            raise SamplingError("overlap fraction must lie in [0, 1)")
        frames = self.length_s * self.rate_hz
        if abs(frames - round(frames)) > _TOL:
            raise SamplingError(f"{self.length_s}s at {self.rate_hz} Hz is not a whole number of frames")
        stride = round(frames) * (1 - self.overlap_frac)
        if abs(stride - round(stride)) > _TOL or round(stride) < 1:
            raise SamplingError(f"stride of {stride} frames is not a positive integer")

    @property
    def frames_per_window(self) -> int:
        return int(round(self.length_s * self.rate_hz))

    @property
    def stride_frames(self) -> int:
        return int(round(self.frames_per_window * (1 - self.overlap_frac)))


class InputCombo(str, enum.Enum):
    ACCELERATION = "acceleration"
    PROXIMITY = "proximity"
    FUSION = "fusion"

    @property
    def channels(self) -> tuple:
        # 0-2: first participant x,y,z; 3-5: second participant x,y,z; 6: pair proximity
        return {
            InputCombo.ACCELERATION: (0, 1, 2, 3, 4, 5),
            InputCombo.PROXIMITY: (6,),
            InputCombo.FUSION: (0, 1, 2, 3, 4, 5, 6),
        }[self]

    @property
    def n_channels(self) -> int:
        return len(self.channels)


class Task(str, enum.Enum):
    BINARY = "binary"
    JOINT4 = "joint4"

    @property
    def n_classes(self) -> int:
        return 2 if self is Task.BINARY else 4

    @property
    def class_names(self) -> tuple:
        if self is Task.BINARY:
            return ("negative", "positive")
        return tuple(r.name.lower() for r in Role)


class Role(enum.IntEnum):
    NO_INTERACTION = 0
    SPEAKER_SPEAKER = 1
    SPEAKER_LISTENER = 2
    LISTENER_LISTENER = 3


def enumerate_windows(duration_s: float, spec: WindowSpec) -> list:
    """``(start_frame, end_frame)`` pairs, half-open, never running past the session."""
    n_frames = int(round(duration_s * spec.rate_hz))
    size, stride = spec.frames_per_window, spec.stride_frames
    if n_frames < size:
        return []
    count = (n_frames - size) // stride + 1
    return [(i * stride, i * stride + size) for i in range(count)]


def build_pair_sample(accel_a, accel_b, proximity, window, combo: InputCombo):
    """Frame matrix for one pair in one window, or None if acceleration has a gap.

    ``accel_a``/``accel_b`` are (n_frames, 3) arrays on the session grid with
    NaN marking gaps; ``proximity`` is the pair's upsampled binary channel.
    """
    lo, hi = window
    a = accel_a[lo:hi]
    b = accel_b[lo:hi]
    if len(a) != hi - lo or len(b) != hi - lo or np.isnan(a).any() or np.isnan(b).any():
        return None
    full = np.empty((hi - lo, 7), dtype=np.float64)
    full[:, 0:3] = a
    full[:, 3:6] = b
    full[:, 6] = proximity[lo:hi]
    return full[:, list(combo.channels)]


def membership_fraction(membership_a, membership_b, window) -> float:
    lo, hi = window
    a, b = membership_a[lo:hi], membership_b[lo:hi]
    return np.count_nonzero((a == b) & (a != NO_GROUP)) / (hi - lo)


def label_membership(membership_a, membership_b, window, threshold: float = MEMBERSHIP_THRESHOLD) -> int:
    """1 if the pair shares a group for at least ``threshold`` of the window frames."""
    return int(membership_fraction(membership_a, membership_b, window) >= threshold)


def label_roles(speaking_a, speaking_b, window, membership_label: int,
                threshold: float = SPEAKING_THRESHOLD) -> Role:
    if not membership_label:
        return Role.NO_INTERACTION
    lo, hi = window
    n = hi - lo
    a = np.count_nonzero(speaking_a[lo:hi]) / n >= threshold
    b = np.count_nonzero(speaking_b[lo:hi]) / n >= threshold
    if a and b:
        return Role.SPEAKER_SPEAKER
    if a or b:
        return Role.SPEAKER_LISTENER
    return Role.LISTENER_LISTENER


@dataclass(frozen=True)
class PairSample:
    pair: tuple
    window_index: int
    data: np.ndarray
    membership_label: int
    role_label: Role


@dataclass
class Dataset:
    """Samples of one (window, input combination, task) configuration.

    Stored column-wise: ``data`` is (n, frames, channels), ``labels`` holds
    the task label (membership for binary, role class for joint4).
    """

    data: np.ndarray
    pairs: list
    window_index: np.ndarray
    membership: np.ndarray
    roles: np.ndarray
    window_spec: WindowSpec
    combo: InputCombo
    task: Task
    membership_threshold: float = MEMBERSHIP_THRESHOLD
    speaking_threshold: float = SPEAKING_THRESHOLD
    skipped: int = 0
    segments: list = field(default_factory=list)

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i) -> PairSample:
        return PairSample(self.pairs[i], int(self.window_index[i]), self.data[i],
                          int(self.membership[i]), Role(int(self.roles[i])))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def labels(self) -> np.ndarray:
        return self.membership if self.task is Task.BINARY else self.roles

    @property
    def n_classes(self) -> int:
        return self.task.n_classes

    @property
    def label_counts(self) -> list:
        return np.bincount(self.labels, minlength=self.n_classes).tolist()

    @property
    def unique_pairs(self) -> list:
        return sorted(set(self.pairs))

    def subset(self, index) -> Dataset:
        index = np.asarray(index, dtype=np.int64)
        return Dataset(
            self.data[index], [self.pairs[i] for i in index], self.window_index[index],
            self.membership[index], self.roles[index], self.window_spec, self.combo, self.task,
            self.membership_threshold, self.speaking_threshold, 0, list(self.segments),
        )

    def indices_for_pairs(self, pairs) -> np.ndarray:
        wanted = set(pairs)
        return np.array([i for i, p in enumerate(self.pairs) if p in wanted], dtype=np.int64)

    def manifest(self) -> dict:
        return {
            "window_spec": asdict(self.window_spec),
            "input_combo": self.combo.value,
            "task": self.task.value,
            "membership_threshold": self.membership_threshold,
            "speaking_threshold": self.speaking_threshold,
            "skipped": self.skipped,
            "n_samples": len(self),
            "label_counts": self.label_counts,
            "class_names": list(self.task.class_names),
            "segments": self.segments,
        }


def canonical_pair(a: str, b: str) -> tuple:
    return (a, b) if a <= b else (b, a)


def build_dataset(sessions, spec: WindowSpec, combo: InputCombo, task: Task = Task.BINARY,
                  membership_threshold: float = MEMBERSHIP_THRESHOLD,
                  speaking_threshold: float = SPEAKING_THRESHOLD,
                  dtype=np.float32) -> Dataset:
    """One sample per unordered pair per window, per session segment.

    Windows never span two segments. Window indices run on across segments so
    ``(pair, window_index)`` stays unique. Pairs are keyed by ascending id,
    which also fixes which participant fills channels 0-2.
    """
    if isinstance(sessions, Session):
        sessions = [sessions]
    combo, task = InputCombo(combo), Task(task)
    data, pairs, widx, member, roles = [], [], [], [], []
    skipped = 0
    offset = 0
    segments = []
    for session in sessions:
        ids = session.participants
        if len(ids) < 2:
            raise SamplingError(f"session {session.name}: need at least 2 participants")
        windows = enumerate_windows(session.duration_s, spec)
        accel = session.aligned_accel()
        rast = session.rasters()
        for a, b in combinations(ids, 2):
            prox = session.pair_proximity_frames(a, b)
            for w, window in enumerate(windows):
                sample = build_pair_sample(accel[a], accel[b], prox, window, combo)
                if sample is None:
                    skipped += 1
                    continue
                m = label_membership(rast.membership[a], rast.membership[b], window, membership_threshold)
                r = label_roles(rast.speaking[a], rast.speaking[b], window, m, speaking_threshold)
                data.append(sample.astype(dtype))
                pairs.append((a, b))
                widx.append(offset + w)
                member.append(m)
                roles.append(int(r))
        segments.append({"name": session.name, "duration_s": session.duration_s,
                         "first_window": offset, "n_windows": len(windows)})
        offset += len(windows)

    order = sorted(range(len(pairs)), key=lambda i: (pairs[i], widx[i]))
    frames = spec.frames_per_window
    stacked = (np.stack([data[i] for i in order]) if order
               else np.zeros((0, frames, combo.n_channels), dtype=dtype))
    return Dataset(
        stacked,
        [pairs[i] for i in order],
        np.array([widx[i] for i in order], dtype=np.int64),
        np.array([member[i] for i in order], dtype=np.int64),
        np.array([roles[i] for i in order], dtype=np.int64),
        spec, combo, task, membership_threshold, speaking_threshold, skipped, segments,
    )


def save_dataset(dataset: Dataset, path) -> Path:
    """Write ``<path>.npz`` (arrays) and ``<path>.manifest.json``; returns the npz path."""
    path = Path(path)
    if path.suffix == ".npz":
        path = path.with_suffix("")
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = dataset.manifest()
    np.savez_compressed(
        path.with_suffix(".npz"),
        data=dataset.data,
        pairs=np.array(dataset.pairs, dtype=str).reshape(-1, 2),
        window_index=dataset.window_index,
        membership=dataset.membership,
        roles=dataset.roles,
        manifest=np.array(json.dumps(manifest, sort_keys=True)),
    )
    with open(path.with_suffix(".manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path.with_suffix(".npz")


def load_dataset(path) -> Dataset:
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(".npz")
    if not path.exists():
        raise IngestionError(f"{path}: dataset not found")
    with np.load(path, allow_pickle=False) as z:
        manifest = json.loads(str(z["manifest"]))
        spec = WindowSpec(**manifest["window_spec"])
        return Dataset(
            z["data"], [tuple(p) for p in z["pairs"].tolist()], z["window_index"], z["membership"],
            z["roles"], spec, InputCombo(manifest["input_combo"]), Task(manifest["task"]),
            manifest["membership_threshold"], manifest["speaking_threshold"],
            manifest["skipped"], manifest.get("segments", []),
        )
