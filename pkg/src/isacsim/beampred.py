"""
Position-to-beam datasets and a k-nearest-neighbour baseline with top-k
accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bus import approx_sync, read_bag
from .geometry import Pose, pose_apply, pose_inverse
from .messages import decode

GNSS_TOPIC = "/gnss"
KPI_TOPIC = "/channel/kpi"


class BeamPredError(Exception):
    pass


@dataclass(frozen=True)
class Sample:
    stamp: int
    position: tuple
    label: int
    pixel: tuple | None = None


@dataclass(frozen=True)
class TopKReport:
    accuracy: dict   # k -> fraction
    count: int

    def format(self) -> str:
        parts = [f"top-{k}: {acc:.4f}" for k, acc in sorted(self.accuracy.items())]
        return f"{self.count} samples  " + "  ".join(parts)


def build_dataset(bag, slop_ns: int, camera=None, camera_pose: Pose | None = None,
                  truth_topic: str | None = None) -> list[Sample]:
    """Join ``/gnss`` and ``/channel/kpi`` within ``slop_ns``; one sample per tuple.

    With ``camera`` (intrinsics) and ``camera_pose`` (its world pose) the
    ground-truth platform position read from ``truth_topic`` at the GNSS
    stamp is projected to a pixel.
    """
    envs = read_bag(bag) if isinstance(bag, (str, Path)) else list(bag)
    present = {e.topic for e in envs}
    for t in (GNSS_TOPIC, KPI_TOPIC):
        if t not in present:
            raise BeamPredError(f"bag has no {t} records")
    truth = {}
    if truth_topic is not None:
        for e in envs:
            if e.topic == truth_topic:
                truth[e.stamp] = decode(e.schema, e.payload).pose.translation
    stream = [e for e in envs if e.topic in (GNSS_TOPIC, KPI_TOPIC)]
    samples = []
    for gnss_env, kpi_env in approx_sync(stream, [GNSS_TOPIC, KPI_TOPIC], slop_ns):
        fix = decode(gnss_env.schema, gnss_env.payload)
        kpi = decode(kpi_env.schema, kpi_env.payload)
        pixel = None
        if camera is not None and camera_pose is not None and gnss_env.stamp in truth:
            p_cam = pose_apply(pose_inverse(camera_pose), truth[gnss_env.stamp])
            uv = camera.project(p_cam)
            pixel = None if uv is None else (float(uv[0]), float(uv[1]))
        samples.append(Sample(gnss_env.stamp, tuple(float(c) for c in fix.position), int(kpi.best_beam), pixel))
    return samples


def dataset_from_ckm(ckm) -> list[Sample]:
    """One sample per non-outage cell, positioned at the cell centre."""
    centers = ckm.grid.centers()
    beams = ckm.layers["best_beam"]
    out = []
    for i in range(ckm.grid.n_x):
        for j in range(ckm.grid.n_y):
            b = beams[i, j]
            if np.isfinite(b):
                out.append(Sample(0, tuple(float(c) for c in centers[i, j]), int(b)))
    return out


def split_dataset(samples, train_fraction: float = 0.8, seed: int = 0):
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(len(samples))
    n_train = int(round(train_fraction * len(samples)))
    return [samples[i] for i in perm[:n_train]], [samples[i] for i in perm[n_train:]]


class KnnPredictor:
    def __init__(self, train, k: int = 5):
        if not len(train):
            raise BeamPredError("empty training set")
        if k < 1:
            raise BeamPredError("k must be at least 1")
        self.X = np.array([s.position for s in train], dtype=float)
        self.y = np.array([s.label for s in train], dtype=np.int64)
        self.k = k

    def rank(self, query) -> list[int]:
        """Beams by vote count among the k nearest, then mean distance, then index."""
        d = np.linalg.norm(self.X - np.asarray(query, dtype=float), axis=1)
        near = np.argsort(d, kind="stable")[: self.k]
        votes: dict[int, list[float]] = {}
        for i in near:
            votes.setdefault(int(self.y[i]), []).append(float(d[i]))
        return sorted(votes, key=lambda b: (-len(votes[b]), sum(votes[b]) / len(votes[b]), b))


def knn_predict(train, query, k: int = 5) -> list[int]:
    return KnnPredictor(train, k).rank(query)


def evaluate_topk(predictor: KnnPredictor, test, ks=(1, 3, 5)) -> TopKReport:
    if not len(test):
        raise BeamPredError("empty test set")
    hits = {k: 0 for k in ks}
    for s in test:
        ranked = predictor.rank(s.position)
        for k in ks:
            hits[k] += s.label in ranked[:k]
    return TopKReport({k: hits[k] / len(test) for k in ks}, len(test))


def export_dataset(samples, path) -> None:
    """One record per line: ``t x y z [u v] beam`` with ``t`` in ns."""
    lines = []
    for s in samples:
        fields = [str(s.stamp)] + [repr(c) for c in s.position]
        if s.pixel is not None:
            fields += [repr(c) for c in s.pixel]
        fields.append(str(s.label))
        lines.append(" ".join(fields))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_dataset(path) -> list[Sample]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if len(parts) not in (5, 7):
            raise BeamPredError(f"{path}:{lineno}: expected 5 or 7 fields")
        pixel = (float(parts[4]), float(parts[5])) if len(parts) == 7 else None
        out.append(Sample(int(parts[0]), tuple(float(x) for x in parts[1:4]), int(parts[-1]), pixel))
    return out
