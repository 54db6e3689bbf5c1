"""Synthetic mingling sessions with planted groups, speaking turns and sensor noise.

Acceleration for participant ``i`` at frame ``t`` is

    noise * N(0, 1) + energy(role) * N(0, 1) + gain * s_g(t) * d_i

where ``s_g`` is a sinusoid with a random-walk phase shared by every member
of ``i``'s current group (participants outside a group get a private one),
``d_i`` is a fixed per-participant direction and ``energy`` is larger while
speaking. Proximity is drawn per second and pair: co-grouped pairs are
detected with ``p_tp``, all others with ``p_fp``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .ingestion import (ACCEL_RATE_HZ, ANNOTATION_FILE, PROXIMITY_FILE, SESSION_MANIFEST, AccelStream,
                        AnnotationTrack, FormationInterval, ProximityEvents, ProximityStream, Session,
                        ensure_dir, write_accel_csv, write_annotations_csv, write_proximity_csv)

LATENT_FILE = "latent.json"
DECIMALS = 5
TURN_GRID_S = 0.5


class SynthConfigError(ValueError):
    pass


@dataclass
class SynthConfig:
    seed: int
    n_participants: int = 12
    session_s: float = 600.0
    # relative weights for group sizes 2, 3, ..., 7
    group_size_weights: list = field(default_factory=lambda: [0.35, 0.30, 0.20, 0.10, 0.03, 0.02])
    alone_prob: float = 0.15
    mean_group_lifetime_s: float = 120.0
    min_group_lifetime_s: float = 20.0
    turn_s: tuple = (4.0, 10.0)
    overlap_prob: float = 0.1
    p_tp: float = 0.9
    p_fp: float = 0.05
    accel_noise: float = 0.5
    speaker_energy: float = 1.0
    listener_energy: float = 0.2
    coordination_gain: float = 1.0
    coordination_hz: tuple = (0.2, 0.8)
    phase_drift: float = 0.05
    name: str = "synth"
    max_window_s: float = 30.0

    def __post_init__(self):
        self.turn_s = tuple(self.turn_s)
        self.coordination_hz = tuple(self.coordination_hz)
        self.group_size_weights = list(self.group_size_weights)
        self.validate()

    def validate(self):
        if self.seed is None or isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)):
            raise SynthConfigError("seed: an integer seed is required")
        for name in ("p_tp", "p_fp", "alone_prob", "overlap_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SynthConfigError(f"{name}: must lie in [0, 1], got {v}")
        w = np.asarray(self.group_size_weights, dtype=np.float64)
        if len(w) == 0 or len(w) > 6 or np.any(w < 0) or w.sum() <= 0:
            raise SynthConfigError("group_size_weights: 1 to 6 non-negative weights for sizes 2..7")
        if self.n_participants < 2:
            raise SynthConfigError("n_participants: at least 2 participants are needed")
        if self.min_group_size > self.n_participants:
            raise SynthConfigError(
                f"group_size_weights: smallest group ({self.min_group_size}) exceeds "
                f"n_participants ({self.n_participants})")
        if self.session_s < self.max_window_s:
            raise SynthConfigError(f"session_s: must be at least the largest window ({self.max_window_s}s)")
        if abs(self.session_s - round(self.session_s)) > 1e-9:
            raise SynthConfigError("session_s: must be a whole number of seconds")
        lo, hi = self.turn_s
        if not 0 < lo <= hi:
            raise SynthConfigError("turn_s: need 0 < min <= max")
        if self.mean_group_lifetime_s <= 0 or self.min_group_lifetime_s < 1:
            raise SynthConfigError("group lifetimes must be positive (minimum at least 1 s)")
        for name in ("accel_noise", "speaker_energy", "listener_energy", "coordination_gain", "phase_drift"):
            if getattr(self, name) < 0:
                raise SynthConfigError(f"{name}: must be non-negative")

    @property
    def min_group_size(self) -> int:
        w = self.group_size_weights
        return 2 + next(i for i, x in enumerate(w) if x > 0)

    @property
    def participant_ids(self) -> list:
        width = max(2, len(str(self.n_participants)))
        return [f"p{i + 1:0{width}d}" for i in range(self.n_participants)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["turn_s"] = list(self.turn_s)
        d["coordination_hz"] = list(self.coordination_hz)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SynthConfig:
        d = dict(d)
        if "seed" not in d:
            raise SynthConfigError("seed: missing required field")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SynthConfigError(f"unknown synth fields: {', '.join(sorted(unknown))}")
        return cls(**d)


@dataclass
class SynthSession:
    name: str
    duration_s: float
    accel: dict
    proximity: ProximityEvents
    annotations: AnnotationTrack
    latent: dict
    config: SynthConfig

    def to_session(self) -> Session:
        return Session(self.name, self.duration_s, dict(self.accel), self.proximity, self.annotations)

    def export(self, directory) -> Path:
        """Write the session in the ingestion file formats plus ``latent.json``."""
        directory = ensure_dir(directory)
        for pid, stream in sorted(self.accel.items()):
            write_accel_csv(directory / f"{pid}_accel.csv", stream, DECIMALS)
        write_proximity_csv(directory / PROXIMITY_FILE, self.proximity)
        write_annotations_csv(directory / ANNOTATION_FILE, self.annotations)
        with open(directory / SESSION_MANIFEST, "w", encoding="utf-8") as fh:
            json.dump({"name": self.name, "duration_s": self.duration_s,
                       "generator": self.config.to_dict()}, fh, indent=2, sort_keys=True)
        with open(directory / LATENT_FILE, "w", encoding="utf-8") as fh:
            json.dump(self.latent, fh, indent=1, sort_keys=True)
        return directory


# --- schedule -------------------------------------------------------------------

def _epochs(config, rng):
    n = int(round(config.session_s))
    bounds = [0]
    while bounds[-1] < n:
        life = max(config.min_group_lifetime_s, rng.exponential(config.mean_group_lifetime_s))
        bounds.append(min(n, bounds[-1] + int(round(life))))
    # a very short tail is folded into the previous epoch
    if len(bounds) > 2 and bounds[-1] - bounds[-2] < config.min_group_lifetime_s:
        del bounds[-2]
    return list(zip(bounds[:-1], bounds[1:]))


def _partition(ids, config, rng):
    """Split participants into groups (size 2..7) and people standing alone."""
    sizes = np.arange(2, 2 + len(config.group_size_weights))
    w = np.asarray(config.group_size_weights, dtype=np.float64)
    w = w / w.sum()
    order = [ids[i] for i in rng.permutation(len(ids))]
    alone = [p for p in order if rng.random() < config.alone_prob]
    pool = [p for p in order if p not in alone]
    groups = []
    while len(pool) >= config.min_group_size:
        feasible = sizes <= len(pool)
        p = w * feasible
        size = int(rng.choice(sizes, p=p / p.sum()))
        groups.append(sorted(pool[:size]))
        pool = pool[size:]
    alone.extend(pool)
    if not groups:
        # every epoch hosts at least one conversation
        size = config.min_group_size
        groups.append(sorted(alone[:size]))
        alone = alone[size:]
    return groups, sorted(alone)


def _turns(members, start, end, config, rng):
    """Rotating speaker schedule on a half-second grid: list of (start, end, speakers)."""
    lo, hi = config.turn_s
    turns = []
    t = float(start)
    speaker = members[int(rng.integers(len(members)))]
    while t < end:
        length = rng.uniform(lo, hi)
        stop = min(float(end), round((t + length) / TURN_GRID_S) * TURN_GRID_S)
        if stop <= t:
            stop = min(float(end), t + TURN_GRID_S)
        speakers = [speaker]
        others = [m for m in members if m != speaker]
        if others and rng.random() < config.overlap_prob:
            speakers.append(others[int(rng.integers(len(others)))])
        turns.append((t, stop, sorted(speakers)))
        speaker = others[int(rng.integers(len(others)))] if others else speaker
        t = stop
    return turns


# --- signals ----------------------------------------------------------------------

def _shared_signal(n_frames, config, rng):
    freq = rng.uniform(*config.coordination_hz)
    phase0 = rng.uniform(0, 2 * math.pi)
    drift = np.cumsum(rng.normal(0.0, config.phase_drift, n_frames))
    t = np.arange(n_frames) / ACCEL_RATE_HZ
    return np.sin(2 * math.pi * freq * t + phase0 + drift), float(freq), float(phase0)


def generate(config: SynthConfig) -> SynthSession:
    """Deterministic synthetic session for ``config``."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    ids = config.participant_ids
    n_sec = int(round(config.session_s))
    fps = int(ACCEL_RATE_HZ)
    n_frames = n_sec * fps

    group_of = np.full((len(ids), n_sec), -1, dtype=np.int64)
    speaking = np.zeros((len(ids), n_frames), dtype=bool)
    formations, latent_epochs = [], []
    speaking_spans = {p: [] for p in ids}
    col = {p: i for i, p in enumerate(ids)}
    accel = np.zeros((len(ids), n_frames, 3))
    directions = rng.normal(size=(len(ids), 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    gid = 0
    for e, (s, t) in enumerate(_epochs(config, rng)):
        groups, alone = _partition(ids, config, rng)
        ep = {"start": s, "end": t, "groups": [], "alone": alone}
        f0, f1 = s * fps, t * fps
        for members in groups:
            name = f"g{gid:03d}"
            gid += 1
            formations.append(FormationInterval(float(s), float(t), name, frozenset(members)))
            turns = _turns(members, s, t, config, rng)
            sig, freq, phase = _shared_signal(f1 - f0, config, rng)
            for m in members:
                group_of[col[m], s:t] = gid
                accel[col[m], f0:f1] += config.coordination_gain * sig[:, None] * directions[col[m]]
            for a, b, who in turns:
                for m in who:
                    speaking_spans[m].append((a, b))
                    speaking[col[m], int(round(a * fps)):int(round(b * fps))] = True
            ep["groups"].append({"name": name, "members": members, "freq_hz": freq, "phase": phase,
                                 "turns": [[a, b, who] for a, b, who in turns]})
        for m in alone:
            sig, _, _ = _shared_signal(f1 - f0, config, rng)
            accel[col[m], f0:f1] += config.coordination_gain * sig[:, None] * directions[col[m]]
        latent_epochs.append(ep)

    energy = np.where(speaking, config.speaker_energy, config.listener_energy)
    accel += energy[:, :, None] * rng.normal(size=accel.shape)
    accel += config.accel_noise * rng.normal(size=accel.shape)
    accel = np.round(accel, DECIMALS)

    times = np.round(np.arange(n_frames) / ACCEL_RATE_HZ, 2)
    streams = {p: AccelStream(p, times, accel[col[p]]) for p in ids}

    detections = {p: {} for p in ids}
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            together = (group_of[i] == group_of[j]) & (group_of[i] >= 0)
            hit = rng.random(n_sec) < np.where(together, config.p_tp, config.p_fp)
            # who sees whom: only one badge, the other one, or both
            direction = rng.integers(0, 3, n_sec)
            for sec in np.flatnonzero(hit):
                d = direction[sec]
                if d in (0, 2):
                    detections[ids[i]].setdefault(int(sec), set()).add(ids[j])
                if d in (1, 2):
                    detections[ids[j]].setdefault(int(sec), set()).add(ids[i])
    prox = ProximityEvents(
        {p: ProximityStream(p, {s: frozenset(v) for s, v in sorted(d.items())}, n_sec)
         for p, d in detections.items()},
        n_sec,
    )
    track = AnnotationTrack(tuple(formations), {p: tuple(v) for p, v in speaking_spans.items()})
    latent = {"participants": ids, "epochs": latent_epochs,
              "directions": {p: directions[col[p]].tolist() for p in ids}}
    return SynthSession(config.name, float(n_sec), streams, prox, track, latent, config)


def co_grouped_seconds(latent: dict, a: str, b: str, n_seconds: int) -> np.ndarray:
    """Per-second indicator that ``a`` and ``b`` share a group, from the latent schedule."""
    out = np.zeros(n_seconds, dtype=bool)
    for ep in latent["epochs"]:
        for g in ep["groups"]:
            if a in g["members"] and b in g["members"]:
                out[ep["start"]:ep["end"]] = True
    return out
