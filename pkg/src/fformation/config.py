"""YAML run configuration with documented defaults."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import yaml

DEFAULTS_YAML = """\
# Every key is optional except synth.seed, which `gen` requires.
seed_base: 0                 # repetition i uses seed_base + i
repetitions: 20
strict_determinism: false    # pin BLAS to one thread and record the backend
jobs: 1                      # concurrent repetitions
output_dir: runs
data: data/synth             # a session directory or a directory of sessions
task: binary                 # binary | joint4
input_combos: [acceleration, proximity, fusion]
windows_s: [15, 30]
overlap: 0.5
membership_threshold: 0.66
speaking_threshold: 0.30
split:
  ratios: [0.8, 0.1, 0.1]
  participant_disjoint: false
  max_retries: 50
train:
  epochs: 50
  batch_size: 64
  learning_rate: 0.001
  beta1: 0.9
  beta2: 0.999
  epsilon: 1.0e-8
  hidden_size: 16
  n_layers: 3
  head_size: 8
  relu_on_logits: false
  dtype: float32
  backend: auto              # auto | cython | numpy
  eval_batch_size: 256
  clip_norm: null            # global gradient-norm limit; null disables clipping
synth:
  seed: null                 # required by gen
  n_sessions: 1
  n_participants: 12
  session_s: 600
  group_size_weights: [0.35, 0.30, 0.20, 0.10, 0.03, 0.02]   # sizes 2..7
  alone_prob: 0.15
  mean_group_lifetime_s: 120
  min_group_lifetime_s: 20
  turn_s: [4.0, 10.0]
  overlap_prob: 0.1
  p_tp: 0.9
  p_fp: 0.05
  accel_noise: 0.5
  speaker_energy: 1.0
  listener_energy: 0.2
  coordination_gain: 1.0
  coordination_hz: [0.2, 0.8]
  phase_drift: 0.05
"""

TASKS = ("binary", "joint4")
COMBOS = ("acceleration", "proximity", "fusion")


class ConfigError(ValueError):
    pass


def defaults() -> dict:
    return yaml.safe_load(DEFAULTS_YAML)


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"{where}: unknown key")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected a mapping")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


@dataclass
class RunConfig:
    raw: dict = field(default_factory=defaults)
    source: str | None = None

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def windows(self) -> list:
        return [float(w) for w in self.raw["windows_s"]]

    @property
    def combos(self) -> list:
        return list(self.raw["input_combos"])

    def experiment_config(self):
        from .experiment import ExperimentConfig, TrainConfig

        split = self.raw["split"]
        return ExperimentConfig(
            ratios=tuple(float(r) for r in split["ratios"]),
            repetitions=int(self.raw["repetitions"]),
            seed_base=int(self.raw["seed_base"]),
            participant_disjoint=bool(split["participant_disjoint"]),
            max_split_retries=int(split["max_retries"]),
            train=TrainConfig(**self.raw["train"]),
        )

    def synth_config(self, index: int = 0):
        from .synth import SynthConfig

        params = dict(self.raw["synth"])
        params.pop("n_sessions", None)
        if params.get("seed") is None:
            raise ConfigError("synth.seed: missing required field")
        params["seed"] = int(params["seed"]) + index
        params["name"] = f"session_{index:02d}"
        params["max_window_s"] = max(self.windows)
        return SynthConfig.from_dict(params)

    def validate(self) -> RunConfig:
        r = self.raw
        if r["task"] not in TASKS:
            raise ConfigError(f"task: expected one of {', '.join(TASKS)}, got {r['task']!r}")
        if not r["input_combos"]:
            raise ConfigError("input_combos: at least one input combination is required")
        for c in r["input_combos"]:
            if c not in COMBOS:
                raise ConfigError(f"input_combos: unknown combination {c!r}")
        if not r["windows_s"]:
            raise ConfigError("windows_s: at least one window size is required")
        for w in r["windows_s"]:
            if not isinstance(w, (int, float)) or w <= 0:
                raise ConfigError(f"windows_s: window sizes must be positive numbers, got {w!r}")
        if not isinstance(r["repetitions"], int) or r["repetitions"] < 2:
            raise ConfigError("repetitions: need an integer of at least 2")
        if not isinstance(r["seed_base"], int):
            raise ConfigError("seed_base: must be an integer")
        if not isinstance(r["jobs"], int) or r["jobs"] < 1:
            raise ConfigError("jobs: must be a positive integer")
        ratios = r["split"]["ratios"]
        if len(ratios) != 3 or any(x < 0 for x in ratios) or abs(sum(ratios) - 1) > 1e-9:
            raise ConfigError("split.ratios: three non-negative fractions summing to 1")
        t = r["train"]
        for key in ("epochs", "batch_size", "hidden_size", "n_layers", "head_size"):
            if not isinstance(t[key], int) or t[key] < 1:
                raise ConfigError(f"train.{key}: must be a positive integer")
        if t["clip_norm"] is not None and (not isinstance(t["clip_norm"], (int, float)) or t["clip_norm"] <= 0):
            raise ConfigError("train.clip_norm: a positive number or null")
        if t["dtype"] not in ("float32", "float64"):
            raise ConfigError("train.dtype: float32 or float64")
        if t["backend"] not in ("auto", "cython", "numpy"):
            raise ConfigError("train.backend: auto, cython or numpy")
        return self

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)


def from_dict(override: dict | None, source: str | None = None) -> RunConfig:
    if override is None:
        override = {}
    if not isinstance(override, dict):
        raise ConfigError("config: top level must be a mapping")
    return RunConfig(_merge(defaults(), override), source).validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: config file not found")
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    return from_dict(data, str(path))
