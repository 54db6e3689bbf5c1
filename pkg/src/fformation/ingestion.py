"""Loading and aligning wearable sensor streams and interval annotations.

Every stream ends up on a shared 20 Hz frame grid: frame ``f`` covers the
instant ``f / rate_hz`` seconds of the session clock. Acceleration is read at
its native rate and placed on the grid by nearest frame; frames that receive
no reading are gaps (NaN). Binary proximity arrives at 1 Hz and is held for
the 20 frames of each second.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

logger = logging.getLogger(__name__)

ACCEL_RATE_HZ = 20.0
PROXIMITY_RATE_HZ = 1.0
NO_GROUP = -1

_GRID_TOL = 1e-9


class IngestionError(ValueError):
    """Raised when an input file or stream violates its format or invariants."""


@dataclass(frozen=True)
class AccelStream:
    participant_id: str
    times: np.ndarray
    samples: np.ndarray
    rate_hz: float = ACCEL_RATE_HZ
    t0: float = 0.0
    offset_s: float = 0.0

    def __post_init__(self):
        if self.rate_hz <= 0:
            raise IngestionError(f"{self.participant_id}: rate_hz must be positive")
        samples = np.asarray(self.samples, dtype=np.float64)
        times = np.asarray(self.times, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[1] != 3 or len(samples) == 0:
            raise IngestionError(f"{self.participant_id}: samples must be a non-empty (n, 3) array")
        if times.shape != (len(samples),):
            raise IngestionError(f"{self.participant_id}: one timestamp per sample required")
        if np.any(np.diff(times) <= 0):
            raise IngestionError(f"{self.participant_id}: timestamps must be strictly increasing")
        samples.setflags(write=False)
        times.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "times", times)

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.rate_hz

    def on_timeline(self, timeline: UniformTimeline) -> np.ndarray:
        """Place readings on the frame grid; frames without a reading are NaN."""
        out = np.full((timeline.n_frames, 3), np.nan)
        frames = np.rint((self.times + self.offset_s) * timeline.rate_hz).astype(np.int64)
        keep = (frames >= 0) & (frames < timeline.n_frames)
        frames, values = frames[keep], self.samples[keep]
        # first reading wins when two land on the same frame
        uniq, first = np.unique(frames, return_index=True)
        out[uniq] = values[first]
        return out


@dataclass(frozen=True)
class ProximityStream:
    """Detections made by one badge, keyed by whole session second."""

    detector_id: str
    detections: Mapping[int, frozenset]
    n_seconds: int
    rate_hz: float = PROXIMITY_RATE_HZ

    def __post_init__(self):
        for second, ids in self.detections.items():
            if self.detector_id in ids:
                raise IngestionError(f"{self.detector_id} detects itself at second {second}")
            if not 0 <= second < self.n_seconds:
                raise IngestionError(
                    f"{self.detector_id}: detection at second {second} outside [0, {self.n_seconds})"
                )

    def detected(self, other: str) -> np.ndarray:
        out = np.zeros(self.n_seconds, dtype=np.uint8)
        for second, ids in self.detections.items():
            if other in ids:
                out[second] = 1
        return out


@dataclass(frozen=True)
class ProximityEvents:
    """All proximity streams of one session file."""

    streams: Mapping[str, ProximityStream]
    n_seconds: int
    dropped_self: int = 0

    def stream(self, detector_id: str) -> ProximityStream:
        if detector_id in self.streams:
            return self.streams[detector_id]
        return ProximityStream(detector_id, {}, self.n_seconds)

    @property
    def n_detections(self) -> int:
        return sum(len(ids) for s in self.streams.values() for ids in s.detections.values())


@dataclass(frozen=True)
class FormationInterval:
    start: float
    end: float
    group: str
    members: frozenset


@dataclass(frozen=True)
class AnnotationTrack:
    """Ground truth: F-formation intervals and per-participant speaking spans.

    Speaking spans are merged on construction so that they never overlap.
    Construction fails if a participant is in two groups at the same instant.
    """

    fformation_intervals: tuple = ()
    speaking_intervals: Mapping[str, tuple] = field(default_factory=dict)

    def __post_init__(self):
        intervals = tuple(self.fformation_intervals)
        for iv in intervals:
            if not iv.end > iv.start:
                raise IngestionError(f"group {iv.group}: interval end must exceed start")
        per_person = defaultdict(list)
        for iv in intervals:
            for m in iv.members:
                per_person[m].append((iv.start, iv.end, iv.group))
        for person, spans in per_person.items():
            spans.sort()
            for (s0, e0, g0), (s1, e1, g1) in zip(spans, spans[1:]):
                if s1 < e0 and g0 != g1:
                    raise IngestionError(
                        f"{person} is in groups {g0} and {g1} at the same time ({s1:g}s)"
                    )
        merged = {}
        for person, spans in self.speaking_intervals.items():
            merged[person] = _merge_spans(spans, person)
        object.__setattr__(self, "fformation_intervals", intervals)
        object.__setattr__(self, "speaking_intervals", merged)

    @property
    def participants(self) -> set:
        ids = set(self.speaking_intervals)
        for iv in self.fformation_intervals:
            ids.update(iv.members)
        return ids


def _merge_spans(spans, person):
    out = []
    for start, end in sorted((float(s), float(e)) for s, e in spans):
        if not end > start:
            raise IngestionError(f"{person}: speaking interval end must exceed start")
        if out and start <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], end))
        else:
            out.append((start, end))
    return tuple(out)


@dataclass(frozen=True)
class UniformTimeline:
    n_frames: int
    rate_hz: float = ACCEL_RATE_HZ

    @classmethod
    def from_duration(cls, duration_s: float, rate_hz: float = ACCEL_RATE_HZ) -> UniformTimeline:
        return cls(int(round(duration_s * rate_hz)), rate_hz)

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.rate_hz

    def time_of(self, frame):
        return np.asarray(frame) / self.rate_hz

    def first_frame_at_or_after(self, t: float) -> int:
        """Smallest frame whose time is >= t, treating grid-aligned t exactly."""
        x = t * self.rate_hz
        nearest = round(x)
        if abs(x - nearest) < _GRID_TOL:
            return int(nearest)
        return int(math.ceil(x))

    def frame_range(self, start: float, end: float) -> tuple[int, int]:
        """Frames inside the half-open interval [start, end), clipped to the grid."""
        lo = min(max(self.first_frame_at_or_after(start), 0), self.n_frames)
        hi = min(max(self.first_frame_at_or_after(end), 0), self.n_frames)
        return lo, hi


@dataclass
class Rasters:
    """Per-frame ground truth for every participant.

    ``membership[p]`` holds an integer group code per frame (``NO_GROUP`` when
    the participant is in no F-formation); ``group_names[code]`` recovers the
    annotated id. ``speaking[p]`` is a boolean per frame.
    """

    timeline: UniformTimeline
    membership: dict
    speaking: dict
    group_names: list


def evaluate_annotations(track: AnnotationTrack, timeline: UniformTimeline,
                         participants: Iterable[str] | None = None) -> Rasters:
    ids = sorted(set(participants) if participants is not None else track.participants)
    membership = {p: np.full(timeline.n_frames, NO_GROUP, dtype=np.int32) for p in ids}
    speaking = {p: np.zeros(timeline.n_frames, dtype=bool) for p in ids}
    names = sorted({iv.group for iv in track.fformation_intervals})
    codes = {g: i for i, g in enumerate(names)}

    for iv in track.fformation_intervals:
        lo, hi = timeline.frame_range(iv.start, iv.end)
        code = codes[iv.group]
        for m in iv.members:
            if m not in membership:
                continue
            seg = membership[m][lo:hi]
            clash = (seg != NO_GROUP) & (seg != code)
            if clash.any():
                frame = lo + int(np.argmax(clash))
                raise IngestionError(
                    f"{m} carries groups {names[seg[clash][0]]} and {iv.group} at frame {frame}"
                )
            seg[:] = code
    for person, spans in track.speaking_intervals.items():
        if person not in speaking:
            continue
        for start, end in spans:
            lo, hi = timeline.frame_range(start, end)
            speaking[person][lo:hi] = True
    return Rasters(timeline, membership, speaking, names)


def pair_proximity(a: ProximityStream, b: ProximityStream, ids: tuple[str, str] | None = None) -> np.ndarray:
    """Symmetrized 1 Hz proximity: 1 where either badge detected the other."""
    if a.n_seconds != b.n_seconds:
        raise IngestionError(
            f"proximity spans differ: {a.detector_id} has {a.n_seconds}s, {b.detector_id} has {b.n_seconds}s"
        )
    id_a, id_b = ids if ids is not None else (a.detector_id, b.detector_id)
    return a.detected(id_b) | b.detected(id_a)


def upsample_proximity(seq, factor: int = int(ACCEL_RATE_HZ / PROXIMITY_RATE_HZ)) -> np.ndarray:
    """Zero-order hold from 1 Hz to the frame grid."""
    seq = np.asarray(seq)
    if seq.size == 0:
        raise IngestionError("cannot upsample an empty proximity sequence")
    return np.repeat(seq, factor)


# --- file formats -----------------------------------------------------------

ACCEL_HEADER = ["t", "x", "y", "z"]
PROXIMITY_HEADER = ["t", "detector", "detected"]
ANNOTATION_HEADER = ["kind", "start", "end", "subject", "group"]


def _read_rows(path, header):
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: missing header {','.join(header)}") from None
        if [h.strip() for h in first] != header:
            raise IngestionError(f"{path}: expected header {','.join(header)}, got {','.join(first)}")
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            yield row_no, [c.strip() for c in row]


def participant_from_accel_path(path) -> str:
    name = Path(path).name
    suffix = "_accel.csv"
    if not name.endswith(suffix):
        raise IngestionError(f"{path}: acceleration files are named <participant_id>{suffix}")
    return name[: -len(suffix)]


def load_accel_stream(path, participant_id: str | None = None, rate_hz: float = ACCEL_RATE_HZ,
                      offset_s: float = 0.0) -> AccelStream:
    """Read a ``t,x,y,z`` CSV. Row numbers in errors count data rows from 1."""
    pid = participant_id if participant_id is not None else participant_from_accel_path(path)
    times, values = [], []
    for row_no, row in _read_rows(path, ACCEL_HEADER):
        if len(row) != 4 or any(c == "" for c in row):
            raise IngestionError(f"{path}: row {row_no}: expected 4 fields t,x,y,z, got {len(row)}")
        try:
            t, x, y, z = (float(c) for c in row)
        except ValueError:
            raise IngestionError(f"{path}: row {row_no}: non-numeric value") from None
        if not all(math.isfinite(v) for v in (t, x, y, z)):
            raise IngestionError(f"{path}: row {row_no}: non-finite value")
        if times and t <= times[-1]:
            raise IngestionError(f"{path}: row {row_no}: timestamp {t} does not follow {times[-1]}")
        times.append(t)
        values.append((x, y, z))
    if not values:
        raise IngestionError(f"{path}: no acceleration samples")
    return AccelStream(pid, np.array(times), np.array(values), rate_hz, times[0], offset_s)


def load_proximity_events(path, participants: Iterable[str] | None = None, strict: bool = False,
                          n_seconds: int | None = None) -> ProximityEvents:
    """Read a ``t,detector,detected`` CSV and group detections per whole second.

    Self-detections raise in strict mode and are otherwise dropped and counted.
    With ``participants`` given, any other id is rejected.
    """
    known = set(participants) if participants is not None else None
    grouped = defaultdict(lambda: defaultdict(set))
    dropped = 0
    last_t = -1
    for row_no, row in _read_rows(path, PROXIMITY_HEADER):
        if len(row) != 3 or any(c == "" for c in row):
            raise IngestionError(f"{path}: row {row_no}: expected 3 fields t,detector,detected")
        try:
            t = int(row[0])
        except ValueError:
            raise IngestionError(f"{path}: row {row_no}: t must be an integer second") from None
        if t < 0:
            raise IngestionError(f"{path}: row {row_no}: negative second {t}")
        detector, detected = row[1], row[2]
        if known is not None:
            for pid in (detector, detected):
                if pid not in known:
                    raise IngestionError(f"{path}: row {row_no}: unknown participant {pid!r}")
        if detector == detected:
            if strict:
                raise IngestionError(f"{path}: row {row_no}: {detector} detects itself")
            dropped += 1
            continue
        grouped[detector][t].add(detected)
        last_t = max(last_t, t)
    if dropped:
        logger.warning("%s: dropped %d self-detection rows", path, dropped)
    span = n_seconds if n_seconds is not None else last_t + 1
    if last_t >= span:
        raise IngestionError(f"{path}: detection at second {last_t} beyond session span {span}s")
    streams = {
        det: ProximityStream(det, {s: frozenset(ids) for s, ids in sorted(per.items())}, span)
        for det, per in sorted(grouped.items())
    }
    return ProximityEvents(streams, span, dropped)


def load_annotations(path) -> AnnotationTrack:
    formations, speaking = [], defaultdict(list)
    for row_no, row in _read_rows(path, ANNOTATION_HEADER):
        if len(row) != 5:
            raise IngestionError(f"{path}: row {row_no}: expected 5 fields")
        kind, start, end, subject, group = row
        try:
            start, end = float(start), float(end)
        except ValueError:
            raise IngestionError(f"{path}: row {row_no}: non-numeric interval bound") from None
        if not end > start:
            raise IngestionError(f"{path}: row {row_no}: end must exceed start")
        if kind == "fformation":
            members = frozenset(m for m in subject.split(";") if m)
            if not members or not group:
                raise IngestionError(f"{path}: row {row_no}: fformation rows need members and a group")
            formations.append(FormationInterval(start, end, group, members))
        elif kind == "speaking":
            if not subject or ";" in subject:
                raise IngestionError(f"{path}: row {row_no}: speaking rows name one participant")
            speaking[subject].append((start, end))
        else:
            raise IngestionError(f"{path}: row {row_no}: unknown kind {kind!r}")
    return AnnotationTrack(tuple(formations), dict(speaking))


def write_accel_csv(path, stream: AccelStream, decimals: int = 5):
    fmt = f"{{:.{decimals}f}}"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(ACCEL_HEADER) + "\n")
        for t, (x, y, z) in zip(stream.times, stream.samples):
            fh.write(f"{t:.2f},{fmt.format(x)},{fmt.format(y)},{fmt.format(z)}\n")


def write_proximity_csv(path, events: ProximityEvents):
    rows = []
    for det, stream in events.streams.items():
        for second, ids in stream.detections.items():
            rows.extend((second, det, other) for other in ids)
    rows.sort()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(PROXIMITY_HEADER) + "\n")
        for second, det, other in rows:
            fh.write(f"{second},{det},{other}\n")


def write_annotations_csv(path, track: AnnotationTrack):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(ANNOTATION_HEADER) + "\n")
        for iv in sorted(track.fformation_intervals, key=lambda i: (i.start, i.group)):
            fh.write(f"fformation,{iv.start:g},{iv.end:g},{';'.join(sorted(iv.members))},{iv.group}\n")
        for person in sorted(track.speaking_intervals):
            for start, end in track.speaking_intervals[person]:
                fh.write(f"speaking,{start:g},{end:g},{person},\n")


# --- sessions ---------------------------------------------------------------

@dataclass
class Session:
    """One continuously annotated recording segment on a shared clock."""

    name: str
    duration_s: float
    accel: dict
    proximity: ProximityEvents
    annotations: AnnotationTrack

    def __post_init__(self):
        if len(self.accel) < 1:
            raise IngestionError(f"session {self.name}: no participants")
        if self.proximity.n_seconds < int(math.ceil(self.duration_s - _GRID_TOL)):
            self.proximity = ProximityEvents(
                {k: ProximityStream(k, s.detections, int(math.ceil(self.duration_s)))
                 for k, s in self.proximity.streams.items()},
                int(math.ceil(self.duration_s)),
                self.proximity.dropped_self,
            )

    @property
    def participants(self) -> list:
        return sorted(self.accel)

    @property
    def timeline(self) -> UniformTimeline:
        return UniformTimeline.from_duration(self.duration_s)

    def aligned_accel(self) -> dict:
        tl = self.timeline
        return {p: s.on_timeline(tl) for p, s in self.accel.items()}

    def rasters(self) -> Rasters:
        return evaluate_annotations(self.annotations, self.timeline, self.participants)

    def pair_proximity_frames(self, a: str, b: str) -> np.ndarray:
        """Symmetrized proximity for a pair, held on the frame grid."""
        seq = pair_proximity(self.proximity.stream(a), self.proximity.stream(b), (a, b))
        frames = upsample_proximity(seq)
        n = self.timeline.n_frames
        if len(frames) < n:
            frames = np.concatenate([frames, np.zeros(n - len(frames), dtype=frames.dtype)])
        return frames[:n]


SESSION_MANIFEST = "session.json"
PROXIMITY_FILE = "proximity.csv"
ANNOTATION_FILE = "annotations.csv"


def load_session(directory, strict: bool = False) -> Session:
    """Load every ``*_accel.csv`` plus ``proximity.csv`` and ``annotations.csv``.

    ``session.json`` (optional) may give ``name``, ``duration_s`` and per
    participant clock offsets under ``offsets``.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise IngestionError(f"{directory}: not a directory")
    manifest = {}
    if (directory / SESSION_MANIFEST).exists():
        with open(directory / SESSION_MANIFEST, encoding="utf-8") as fh:
            manifest = json.load(fh)
    offsets = manifest.get("offsets", {})
    accel = {}
    for path in sorted(directory.glob("*_accel.csv")):
        pid = participant_from_accel_path(path)
        accel[pid] = load_accel_stream(path, pid, offset_s=float(offsets.get(pid, 0.0)))
    if not accel:
        raise IngestionError(f"{directory}: no *_accel.csv files")
    if "duration_s" in manifest:
        duration = float(manifest["duration_s"])
    else:
        duration = max(s.times[-1] + s.offset_s + 1.0 / s.rate_hz for s in accel.values())
        duration = math.floor(duration + _GRID_TOL)
    n_seconds = int(math.ceil(duration - _GRID_TOL))
    proximity = load_proximity_events(directory / PROXIMITY_FILE, accel.keys(), strict, n_seconds)
    annotations = load_annotations(directory / ANNOTATION_FILE)
    name = manifest.get("name", directory.name)
    return Session(name, duration, accel, proximity, annotations)


def session_dirs(root) -> list:
    """A session directory itself, or its immediate session subdirectories."""
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"{root}: data directory not found")
    if any(root.glob("*_accel.csv")):
        return [root]
    found = sorted(p for p in root.iterdir() if p.is_dir() and any(p.glob("*_accel.csv")))
    if not found:
        raise IngestionError(f"{root}: no session directories found")
    return found


def load_sessions(root, strict: bool = False) -> list:
    return [load_session(d, strict) for d in session_dirs(root)]


def ensure_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IngestionError(f"{path}: cannot create output directory ({exc})") from exc
    if not os.access(path, os.W_OK):
        raise IngestionError(f"{path}: output directory is not writable")
    return path
