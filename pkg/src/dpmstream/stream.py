"""Drifting Gaussian-mixture streams and their CSV/JSON storage.

Synthetic streams use numpy's ``default_rng`` (PCG64) seeded with
``StreamConfig.seed``. Draw order: initial means, initial stds, then per
batch the drift perturbation and new stds (drift batches only), training
labels and points, test labels and points. Mean/std draws are repeated
until every pair of clusters is ``min_separation * (std_i + std_j)``
apart; ``min_separation = 0`` disables the check.
"""

from __future__ import annotations

import csv
import glob
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class StreamConfig:
    n_batches: int = 20
    train_per_batch: int = 1000
    test_per_batch: int = 500
    k_true: int = 4
    dim: int = 2
    drift_period: int = 4
    seed: int = 0
    mean_box: float = 10.0
    std_range: tuple[float, float] = (0.5, 1.5)
    drift_scale: float = 3.0
    min_separation: float = 3.0
    max_redraws: int = 1000

    def __post_init__(self):
        for name in ("n_batches", "train_per_batch", "test_per_batch", "k_true", "dim", "drift_period"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v}")
        lo, hi = self.std_range
        object.__setattr__(self, "std_range", (float(lo), float(hi)))
        if not 0 < lo <= hi:
            raise ValueError(f"std_range must satisfy 0 < low <= high, got {self.std_range}")
        if not self.mean_box >= 0 or not self.drift_scale >= 0 or not self.min_separation >= 0:
            raise ValueError("mean_box, drift_scale and min_separation must be non-negative")


@dataclass(frozen=True, eq=False)
class StreamBatch:
    t: int
    train: np.ndarray
    test: np.ndarray
    train_labels: np.ndarray
    test_labels: np.ndarray


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """True generating parameters per batch.

    ``means`` has shape (n_batches, k, d), ``stds`` (n_batches, k) and
    ``weights`` (k,).
    """

    means: np.ndarray
    stds: np.ndarray
    weights: np.ndarray
    drift_flags: np.ndarray

    def to_json(self) -> dict:
        return {
            "weights": [float(w) for w in self.weights],
            "batches": [
                {
                    "t": t,
                    "means": self.means[t].tolist(),
                    "stds": self.stds[t].tolist(),
                    "drift": bool(self.drift_flags[t]),
                }
                for t in range(len(self.drift_flags))
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GroundTruth":
        batches = sorted(obj["batches"], key=lambda b: b["t"])
        means = np.array([b["means"] for b in batches], dtype=float)
        k = means.shape[1]
        weights = np.asarray(obj.get("weights", np.full(k, 1.0 / k)), dtype=float)
        return cls(
            means=means,
            stds=np.array([b["stds"] for b in batches], dtype=float),
            weights=weights,
            drift_flags=np.array([bool(b["drift"]) for b in batches]),
        )


def drift_schedule(n_batches: int, period: int) -> np.ndarray:
    t = np.arange(n_batches)
    return (t > 0) & (t % period == 0)


def well_separated(means: np.ndarray, stds: np.ndarray, factor: float) -> bool:
    """True when every pair of means is at least ``factor * (std_i + std_j)`` apart."""
    if factor <= 0 or len(means) < 2:
        return True
    dist = np.sqrt(((means[:, None, :] - means[None, :, :]) ** 2).sum(-1))
    need = factor * (stds[:, None] + stds[None, :])
    iu = np.triu_indices(len(means), 1)
    return bool(np.all(dist[iu] >= need[iu]))


def _draw_separated(rng, draw, cfg: StreamConfig):
    for _ in range(cfg.max_redraws):
        means, stds = draw()
        if well_separated(means, stds, cfg.min_separation):
            return means, stds
    raise RuntimeError(
        f"could not draw separated clusters in {cfg.max_redraws} attempts; "
        "lower min_separation or enlarge mean_box"
    )


def _sample(rng, n, means, stds, weights):
    labels = rng.choice(len(weights), size=n, p=weights)
    pts = means[labels] + stds[labels, None] * rng.standard_normal((n, means.shape[1]))
    return pts, labels


def generate_stream(cfg: StreamConfig) -> tuple[list[StreamBatch], GroundTruth]:
    rng = np.random.default_rng(cfg.seed)
    k, d = cfg.k_true, cfg.dim
    lo, hi = cfg.std_range
    means, stds = _draw_separated(
        rng, lambda: (rng.uniform(-cfg.mean_box, cfg.mean_box, size=(k, d)), rng.uniform(lo, hi, size=k)), cfg
    )
    weights = np.full(k, 1.0 / k)
    flags = drift_schedule(cfg.n_batches, cfg.drift_period)

    batches, all_means, all_stds = [], [], []
    for t in range(cfg.n_batches):
        if flags[t]:
            base = means
            means, stds = _draw_separated(
                rng,
                lambda: (base + cfg.drift_scale * rng.standard_normal((k, d)), rng.uniform(lo, hi, size=k)),
                cfg,
            )
        train, train_labels = _sample(rng, cfg.train_per_batch, means, stds, weights)
        test, test_labels = _sample(rng, cfg.test_per_batch, means, stds, weights)
        batches.append(StreamBatch(t, train, test, train_labels, test_labels))
        all_means.append(means.copy())
        all_stds.append(stds.copy())
    truth = GroundTruth(np.array(all_means), np.array(all_stds), weights, flags)
    return batches, truth


# ---------------------------------------------------------------------------
# CSV storage: header ``t,split,label,x0,...,x{d-1}``
# ---------------------------------------------------------------------------


def truth_path_for(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".truth.json")


def save_stream(stream, ground_truth: GroundTruth | None, path) -> list[Path]:
    """Write the stream as CSV and, when given, the ground truth as a JSON sidecar."""
    path = Path(path)
    stream = list(stream)
    if not stream:
        raise ValueError("cannot save an empty stream")
    d = stream[0].train.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "split", "label"] + [f"x{j}" for j in range(d)])
        for b in stream:
            for split, pts, labels in (("train", b.train, b.train_labels), ("test", b.test, b.test_labels)):
                for row, lab in zip(pts, labels):
                    w.writerow([b.t, split, int(lab)] + [repr(float(v)) for v in row])
    written = [path]
    if ground_truth is not None:
        tp = truth_path_for(path)
        tp.write_text(json.dumps(ground_truth.to_json(), indent=1), encoding="utf-8")
        written.append(tp)
    return written


def load_ground_truth(path) -> GroundTruth:
    return GroundTruth.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def load_stream_csv(path_pattern) -> list[StreamBatch]:
    """Read one or more CSV files (glob pattern) into batches ordered by ``t``.

    Labels of ``-1`` mark unknown classes.
    """
    paths = sorted(glob.glob(str(path_pattern)))
    if not paths:
        raise FileNotFoundError(f"no files match {path_pattern}")
    rows: dict[int, dict[str, tuple[list, list]]] = {}
    dim = None
    for p in paths:
        with open(p, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ValueError(f"{p}: empty file") from None
            header = [h.strip() for h in header]
            for col in ("t", "split", "label"):
                if col not in header:
                    raise ValueError(f"{p}: missing column {col!r}")
            n_x = sum(1 for h in header if re.fullmatch(r"x\d+", h))
            xcols = [f"x{j}" for j in range(max(n_x, 1))]
            for col in xcols:
                if col not in header:
                    raise ValueError(f"{p}: missing column {col!r}")
            if dim is None:
                dim = len(xcols)
            elif dim != len(xcols):
                raise ValueError(f"{p}: inconsistent dimension {len(xcols)} (expected {dim})")
            it, isp, ilab = header.index("t"), header.index("split"), header.index("label")
            ix = [header.index(c) for c in xcols]
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise ValueError(f"{p}:{lineno}: expected {len(header)} fields, got {len(row)}")
                try:
                    t = int(row[it])
                    split = row[isp].strip()
                    label = int(row[ilab])
                    x = [float(row[j]) for j in ix]
                except ValueError as exc:
                    raise ValueError(f"{p}:{lineno}: {exc}") from None
                if split not in ("train", "test"):
                    raise ValueError(f"{p}:{lineno}: split must be 'train' or 'test', got {split!r}")
                if label < -1:
                    raise ValueError(f"{p}:{lineno}: invalid label {label}")
                pts, labs = rows.setdefault(t, {"train": ([], []), "test": ([], [])})[split]
                pts.append(x)
                labs.append(label)
    batches = []
    for t in sorted(rows):
        parts = {}
        for split in ("train", "test"):
            pts, labs = rows[t][split]
            parts[split] = (np.array(pts, dtype=float).reshape(-1, dim), np.array(labs, dtype=int))
        batches.append(StreamBatch(t, parts["train"][0], parts["test"][0], parts["train"][1], parts["test"][1]))
    return batches
