"""Dataset manifests, MOS normalization, split policies, and augmentation.

A manifest is a CSV with header `path,mos`. MOS values are normalized to
[0, 1] by min-max over the dataset's nominal score range (configured, not
empirical), so targets stay stable across splits. Official splits come from a
CSV with header `path,split` and split in {train,val,test}.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, IngestionError

RATIO_POLICIES = {
    "ratio_80_10_10": (0.8, 0.1),
    "ratio_60_20_20": (0.6, 0.2),
}
MIN_RATIO_SPLIT_SIZE = 10


@dataclass(frozen=True)
class Sample:
    image_ref: str
    mos_raw: float
    mos_norm: float


@dataclass(frozen=True)
class SampleManifest:
    dataset_id: str
    mos_range: tuple[float, float]
    entries: tuple[Sample, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def paths(self) -> list[str]:
        return [e.image_ref for e in self.entries]

    def targets(self) -> np.ndarray:
        return np.array([e.mos_norm for e in self.entries])


@dataclass(frozen=True)
class SplitSpec:
    policy: str
    seed: int = 0
    official_path: str | None = None  # required for policy="official"

    def __post_init__(self):
        if self.policy not in RATIO_POLICIES and self.policy != "official":
            raise ConfigError(
                f"unknown split policy {self.policy!r};"
                f" expected official or one of {sorted(RATIO_POLICIES)}"
            )
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError(f"seed {self.seed} outside the unsigned 64-bit range")


def normalize_mos(mos_raw: float, lo: float, hi: float) -> float:
    return float(np.clip((mos_raw - lo) / (hi - lo), 0.0, 1.0))


def load_manifest(
    csv_path: str, mos_range: tuple[float, float], dataset_id: str | None = None
) -> SampleManifest:
    """Read a `path,mos` CSV; row order preserved, duplicate paths rejected."""
    lo, hi = float(mos_range[0]), float(mos_range[1])
    if hi <= lo:
        raise ConfigError(f"mos range must satisfy hi > lo, got ({lo}, {hi})")
    if not os.path.exists(csv_path):
        raise IngestionError(f"manifest not found: {csv_path}")
    base = os.path.dirname(os.path.abspath(csv_path))
    entries = []
    seen = {}
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["path", "mos"]:
            raise IngestionError(f"{csv_path}: expected header 'path,mos', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 2:
                raise IngestionError(f"{csv_path}:{lineno}: expected 'path,mos', got {row}")
            path = row[0].strip()
            try:
                mos = float(row[1])
            except ValueError as exc:
                raise IngestionError(
                    f"{csv_path}:{lineno}: mos {row[1]!r} is not a number"
                ) from exc
            if not np.isfinite(mos):
                raise IngestionError(f"{csv_path}:{lineno}: non-finite mos {mos}")
            if not path:
                raise IngestionError(f"{csv_path}:{lineno}: empty image path")
            if path in seen:
                raise IngestionError(
                    f"{csv_path}:{lineno}: duplicate image path {path!r}"
                    f" (first seen on line {seen[path]})"
                )
            seen[path] = lineno
            resolved = path if os.path.isabs(path) else os.path.join(base, path)
            entries.append(Sample(resolved, mos, normalize_mos(mos, lo, hi)))
    return SampleManifest(
        dataset_id=dataset_id or os.path.splitext(os.path.basename(csv_path))[0],
        mos_range=(lo, hi),
        entries=tuple(entries),
    )


def _subset(manifest: SampleManifest, idx) -> SampleManifest:
    return SampleManifest(
        dataset_id=manifest.dataset_id,
        mos_range=manifest.mos_range,
        entries=tuple(manifest.entries[i] for i in idx),
    )


def _official_split(manifest: SampleManifest, path: str):
    if not path or not os.path.exists(path):
        raise IngestionError(f"official split file not found: {path}")
    assignment = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["path", "split"]:
            raise IngestionError(f"{path}: expected header 'path,split', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2 or row[1].strip() not in ("train", "val", "test"):
                raise IngestionError(
                    f"{path}:{lineno}: expected 'path,<train|val|test>', got {row}"
                )
            assignment[row[0].strip()] = row[1].strip()
    buckets = {"train": [], "val": [], "test": []}
    for i, entry in enumerate(manifest.entries):
        key = os.path.basename(entry.image_ref)
        split = assignment.get(entry.image_ref) or assignment.get(key)
        if split is None:
            raise IngestionError(
                f"{path}: no split assignment for manifest entry {entry.image_ref!r}"
            )
        buckets[split].append(i)
    return tuple(_subset(manifest, buckets[k]) for k in ("train", "val", "test"))


def split_manifest(
    manifest: SampleManifest, spec: SplitSpec
) -> tuple[SampleManifest, SampleManifest, SampleManifest]:
    """Deterministic (train, val, test): seeded shuffle then contiguous slicing."""
    if spec.policy == "official":
        return _official_split(manifest, spec.official_path)
    n = len(manifest)
    if n < MIN_RATIO_SPLIT_SIZE:
        raise ConfigError(
            f"ratio split needs at least {MIN_RATIO_SPLIT_SIZE} samples, got {n}"
        )
    train_frac, val_frac = RATIO_POLICIES[spec.policy]
    perm = np.random.default_rng(int(spec.seed)).permutation(n)
    n_train = int(n * train_frac)
    n_val = int(n * val_frac)
    return (
        _subset(manifest, perm[:n_train]),
        _subset(manifest, perm[n_train:n_train + n_val]),
        _subset(manifest, perm[n_train + n_val:]),
    )


def hflip(image: np.ndarray) -> np.ndarray:
    """Reverse the column axis of a channel-first image."""
    return image[..., ::-1].copy()


def augment(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random horizontal flip with probability 0.5.

    Applied to the image BEFORE prompt composition; the prompt itself is
    position-anchored and never flipped.
    """
    if rng.random() < 0.5:
        return hflip(image)
    return image
