"""Telemetry schema, ingestion, windowing, splits and channel-group masking.

A recording is one driver's continuous drive through one road area, sampled
at 100 Hz over 31 named channels.  Recordings are cut into fixed-length
windows on a contiguous 8:1:1 train/eval/test split of frames, so windows
never straddle a split boundary and overlapping windows cannot leak across
splits.  Channels belong to named groups which are only ever masked whole
(derived channels would leak a removed quantity otherwise).
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .errors import ConfigurationError, DataError

logger = logging.getLogger(__name__)

SAMPLE_RATE_HZ = 100

AREAS = ("highway", "suburban", "urban", "tutorial")

CHANNEL_GROUPS: dict[str, tuple[str, ...]] = {
    "acceleration": ("Acceleration (x)", "Acceleration (y)", "Acceleration (z)"),
    "distance information": (
        "Distance to next vehicle", "Distance to next intersection",
        "Distance to next stop sign", "Distance to next traffic signal",
        "Distance to next yield sign", "Distance to completion"),
    "gearbox": ("Gear", "Clutch pedal"),
    "lane information": (
        "Number of lanes present", "Fast lane", "Location in lane (right)",
        "Location in lane (center)", "Location in lane (left)", "Lane width"),
    "pedals": ("Acceleration pedal", "Brake pedal"),
    "road angle": ("Steering wheel angle", "Curve radius", "Road angle"),
    "speed": ("Speed (x)", "Speed (y)", "Speed (z)",
              "Speed (next vehicle)", "Speed limit"),
    "turn indicators": ("Turn indicators", "Turn indicators on intersection"),
    "uncategorized": ("Horn", "Vehicle heading"),
}

CANONICAL_CHANNELS: tuple[str, ...] = tuple(
    name for group in CHANNEL_GROUPS.values() for name in group)

GROUP_OF_CHANNEL: dict[str, str] = {
    name: group for group, names in CHANNEL_GROUPS.items() for name in names}


@dataclass
class Recording:
    driver: str
    area: str
    frames: np.ndarray  # [T, C] float64, rows are 10 ms frames
    channels: tuple[str, ...] = CANONICAL_CHANNELS

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != len(self.channels):
            raise DataError(
                f"recording {self.recording_id}: frames {self.frames.shape} do not "
                f"match {len(self.channels)} channels")
        if self.area not in AREAS:
            raise DataError(f"unknown area tag {self.area!r}; expected one of {AREAS}")

    @property
    def recording_id(self) -> str:
        return f"{self.driver}/{self.area}"

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class WindowingConfig:
    interval_length_s: float = 10.0
    interval_gap_s: float = 2.0
    sample_rate: int = SAMPLE_RATE_HZ

    @property
    def length_frames(self) -> int:
        return int(round(self.interval_length_s * self.sample_rate))

    @property
    def gap_frames(self) -> int:
        return int(round(self.interval_gap_s * self.sample_rate))

    def validate(self) -> "WindowingConfig":
        if self.interval_gap_s <= 0:
            raise ConfigurationError(f"interval gap must be positive, got {self.interval_gap_s}")
        if self.length_frames < 2 or self.length_frames % 2 != 0:
            raise ConfigurationError(
                f"interval length must give an even positive frame count, "
                f"got {self.length_frames}")
        return self


@dataclass
class Window:
    """A [C, L] view into one recording; carries no copied frame data."""
    recording: Recording
    start: int
    length: int

    @property
    def frames(self) -> np.ndarray:
        return self.recording.frames[self.start:self.start + self.length].T

    @property
    def driver(self) -> str:
        return self.recording.driver

    @property
    def area(self) -> str:
        return self.recording.area

    @property
    def recording_id(self) -> str:
        return self.recording.recording_id


def split_811(n_frames: int) -> dict[str, tuple[int, int]]:
    """Contiguous train/eval/test frame ranges at 8:1:1, remainder to train."""
    n_eval = n_frames // 10
    n_test = n_frames // 10
    n_train = n_frames - n_eval - n_test
    return {
        "train": (0, n_train),
        "eval": (n_train, n_train + n_eval),
        "test": (n_train + n_eval, n_frames),
    }


def expected_window_count(range_frames: int, length_frames: int, gap_frames: int) -> int:
    if range_frames < length_frames:
        return 0
    return (range_frames - length_frames) // gap_frames + 1


def make_windows(recording: Recording, frame_range: tuple[int, int],
                 cfg: WindowingConfig) -> list[Window]:
    """Windows starting at range begin, stepping by the gap, fully inside."""
    cfg.validate()
    lo, hi = frame_range
    length = cfg.length_frames
    gap = cfg.gap_frames
    windows = []
    start = lo
    while start + length <= hi:
        windows.append(Window(recording, start, length))
        start += gap
    return windows


class Normalizer:
    """Per-channel z-score with statistics from the training windows only.

    A zero-variance channel is centered but not scaled.
    """

    def __init__(self, mean: np.ndarray, std: np.ndarray):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)

    @classmethod
    def fit(cls, windows: list[Window]) -> "Normalizer":
        if not windows:
            raise DataError("cannot fit a normalizer on zero training windows")
        c = windows[0].frames.shape[0]
        total = np.zeros(c)
        total_sq = np.zeros(c)
        count = 0
        for w in windows:
            f = w.frames
            total += f.sum(axis=1)
            total_sq += (f * f).sum(axis=1)
            count += f.shape[1]
        mean = total / count
        var = np.maximum(total_sq / count - mean ** 2, 0.0)
        std = np.sqrt(var)
        std[std == 0.0] = 1.0
        return cls(mean, std)

    def apply(self, frames: np.ndarray) -> np.ndarray:
        return (frames - self.mean) / self.std


@dataclass
class WindowDataset:
    channels: tuple[str, ...]
    drivers: tuple[str, ...]
    splits: dict[str, list[Window]]
    windowing: WindowingConfig
    normalizer: Normalizer

    @property
    def label_of(self) -> dict[str, int]:
        return {d: i for i, d in enumerate(self.drivers)}

    def labels(self, split: str) -> np.ndarray:
        label_of = self.label_of
        return np.array([label_of[w.driver] for w in self.splits[split]], dtype=np.int64)

    def areas(self, split: str) -> list[str]:
        return [w.area for w in self.splits[split]]

    def stack_frames(self, windows: list[Window]) -> np.ndarray:
        return np.ascontiguousarray(np.stack([w.frames for w in windows]))


def build_dataset(recordings: list[Recording], cfg: WindowingConfig) -> WindowDataset:
    """Split each recording 8:1:1, window every split range, normalize with
    train statistics, return windows over the normalized recordings."""
    cfg.validate()
    if not recordings:
        raise DataError("no recordings supplied")
    channels = recordings[0].channels
    for rec in recordings:
        if rec.channels != channels:
            raise DataError(
                f"recording {rec.recording_id} has channels inconsistent with "
                f"{recordings[0].recording_id}")

    ranges = {rec.recording_id: split_811(rec.n_frames) for rec in recordings}
    raw_train = []
    for rec in recordings:
        raw_train.extend(make_windows(rec, ranges[rec.recording_id]["train"], cfg))
    normalizer = Normalizer.fit(raw_train)

    normalized = [replace(rec, frames=normalizer.apply(rec.frames)) for rec in recordings]
    splits: dict[str, list[Window]] = {"train": [], "eval": [], "test": []}
    for rec in normalized:
        for split_name, frame_range in ranges[rec.recording_id].items():
            splits[split_name].extend(make_windows(rec, frame_range, cfg))

    drivers = tuple(sorted({rec.driver for rec in recordings}))
    return WindowDataset(channels=channels, drivers=drivers, splits=splits,
                         windowing=cfg, normalizer=normalizer)


def mask_groups(recordings: list[Recording], removed: set[str] | None = None,
                keep_only: set[str] | None = None) -> list[Recording]:
    """Reduce recordings to whole channel groups; order stays canonical."""
    if (removed is None) == (keep_only is None):
        raise ConfigurationError("pass exactly one of removed= or keep_only=")
    groups = removed if removed is not None else keep_only
    unknown = set(groups) - set(CHANNEL_GROUPS)
    if unknown:
        raise ConfigurationError(
            f"unknown channel group(s) {sorted(unknown)}; "
            f"known: {sorted(CHANNEL_GROUPS)}")
    if removed is not None:
        kept_groups = [g for g in CHANNEL_GROUPS if g not in removed]
    else:
        kept_groups = [g for g in CHANNEL_GROUPS if g in keep_only]
    if not kept_groups:
        raise ConfigurationError("masking removed every channel group")

    out = []
    for rec in recordings:
        idx = [i for i, name in enumerate(rec.channels)
               if GROUP_OF_CHANNEL[name] in kept_groups]
        out.append(replace(rec, frames=rec.frames[:, idx],
                           channels=tuple(rec.channels[i] for i in idx)))
    return out


# -- delimited-text interchange ----------------------------------------------

def load_recordings(manifest_path) -> list[Recording]:
    """Load recordings listed in a JSON manifest of (driver, area, path) rows.

    Files are comma-delimited with a header row naming channels; columns are
    reordered to canonical order, unknown extra columns are dropped with a
    warning, missing required channels are an error.
    """
    manifest_path = os.fspath(manifest_path)
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    entries = manifest.get("recordings")
    if not entries:
        raise DataError(f"manifest {manifest_path} lists no recordings")
    base = os.path.dirname(manifest_path)
    recordings = []
    for entry in entries:
        driver = str(entry["driver"])
        area = entry["area"]
        if area not in AREAS:
            raise DataError(f"unknown area tag {area!r} for driver {driver!r}")
        path = os.path.join(base, entry["path"])
        df = pd.read_csv(path)
        missing = [c for c in CANONICAL_CHANNELS if c not in df.columns]
        if missing:
            raise DataError(f"{path}: missing required channel(s) {missing}")
        extra = [c for c in df.columns if c not in CANONICAL_CHANNELS]
        if extra:
            logger.warning("%s: ignoring unknown channel(s) %s", path, extra)
        df = df[list(CANONICAL_CHANNELS)]
        try:
            frames = df.to_numpy(dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}: non-numeric cell ({exc})") from exc
        if not np.isfinite(frames).all():
            raise DataError(f"{path}: non-finite values present")
        recordings.append(Recording(driver=driver, area=area, frames=frames))
    return recordings


def save_recordings(recordings: list[Recording], out_dir) -> str:
    """Write one CSV per recording plus a manifest; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for rec in recordings:
        fname = f"{rec.driver}_{rec.area}.csv"
        df = pd.DataFrame(rec.frames, columns=list(rec.channels))
        df.to_csv(os.path.join(out_dir, fname), index=False)
        entries.append({"driver": rec.driver, "area": rec.area, "path": fname})
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump({"recordings": entries}, fh, indent=2, sort_keys=True)
    return manifest_path
