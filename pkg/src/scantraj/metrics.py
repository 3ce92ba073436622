"""Forecast quality measures: displacement errors, best-of-k, collisions.

All functions take plain float arrays shaped (N, T, 2) — N pedestrians, T
predicted steps — with an optional (N, T) boolean validity mask (missing
mask means everything counts). Angles, tapes, and nodes never appear here;
callers evaluate first, measure second.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import EmptyMetricError

NEAR_COLLISION_M = 0.10

CSV_HEADER = "ade,fde,bok_ade,bok_fde,ncr_pct,n_scenes,n_peds"


@dataclass
class MetricReport:
    """One evaluation's headline numbers plus the counts behind them."""

    ade: float
    fde: float
    best_of_k_ade: float
    best_of_k_fde: float
    near_collision_pct: float
    n_scenes: int
    n_peds: int

    def validate(self) -> None:
        for name in ("ade", "fde", "best_of_k_ade", "best_of_k_fde",
                     "near_collision_pct"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.n_scenes < 0 or self.n_peds < 0:
            raise ValueError("counts must be >= 0")

    def csv_row(self) -> str:
        values = [self.ade, self.fde, self.best_of_k_ade, self.best_of_k_fde,
                  self.near_collision_pct]
        return ",".join(["%.17g" % v for v in values]
                        + [str(self.n_scenes), str(self.n_peds)])

    def to_csv(self) -> str:
        return CSV_HEADER + "\n" + self.csv_row() + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "MetricReport":
        lines = [ln for ln in text.strip().splitlines() if ln]
        if not lines or lines[0] != CSV_HEADER:
            raise ValueError("unrecognized metric CSV header")
        parts = lines[1].split(",")
        if len(parts) != 7:
            raise ValueError("metric CSV row must have 7 fields")
        return cls(float(parts[0]), float(parts[1]), float(parts[2]),
                   float(parts[3]), float(parts[4]), int(parts[5]), int(parts[6]))


def _prepare(pred, truth, mask):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 3 or pred.shape[-1] != 2:
        raise ValueError(f"prediction {pred.shape} and truth {truth.shape} "
                         "must both be (N, T, 2)")
    if mask is None:
        mask = np.ones(pred.shape[:2], dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != pred.shape[:2]:
            raise ValueError(f"mask {mask.shape} must be {pred.shape[:2]}")
    return pred, truth, mask


def ade(pred, truth, mask=None) -> float:
    """Mean Euclidean error over every valid (pedestrian, step) pair."""
    pred, truth, mask = _prepare(pred, truth, mask)
    if not mask.any():
        raise EmptyMetricError("ade: no valid (pedestrian, step) pairs")
    err = np.linalg.norm(pred - truth, axis=-1)
    return float(err[mask].mean())


def fde(pred, truth, mask=None) -> float:
    """Mean Euclidean error at each pedestrian's last valid step.

    Pedestrians whose final step is masked fall back to their last valid
    one (reported via a warning); pedestrians with no valid steps are
    skipped. No pedestrian measurable at all raises EmptyMetricError.
    """
    pred, truth, mask = _prepare(pred, truth, mask)
    n, t = mask.shape
    finals = []
    fallbacks = 0
    for p in range(n):
        valid = np.flatnonzero(mask[p])
        if valid.size == 0:
            continue
        last = int(valid[-1])
        if last != t - 1:
            fallbacks += 1
        finals.append(float(np.linalg.norm(pred[p, last] - truth[p, last])))
    if not finals:
        raise EmptyMetricError("fde: no pedestrian has a valid step")
    if fallbacks:
        warnings.warn(f"fde: {fallbacks} pedestrian(s) lacked a valid final "
                      "step; used their last valid step instead")
    return float(np.mean(finals))


def best_of_k(samples, truth, mask=None) -> tuple[float, float]:
    """(ADE, FDE) of the minimum-ADE sample among ``samples``.

    ``samples`` is (k, N, T, 2) for one scene. Selection is keyed on ADE
    alone; the chosen sample's FDE is reported even when another sample's
    final error is smaller. Ties go to the lowest sample index.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 4 or samples.shape[0] < 1:
        raise ValueError(f"samples must be (k, N, T, 2), got {samples.shape}")
    ades = [ade(samples[i], truth, mask) for i in range(samples.shape[0])]
    best = int(np.argmin(ades))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        best_fde = fde(samples[best], truth, mask)
    return ades[best], best_fde


def frame_collision_fractions(positions, mask=None,
                              threshold: float = NEAR_COLLISION_M) -> list[float]:
    """Per-frame fraction of present pedestrians with a neighbour < threshold.

    ``positions`` is (N, T, 2). Frames with nobody present are skipped;
    frames with one pedestrian contribute 0.0.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 3 or positions.shape[-1] != 2:
        raise ValueError(f"positions must be (N, T, 2), got {positions.shape}")
    n, t = positions.shape[:2]
    if mask is None:
        mask = np.ones((n, t), dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (n, t):
            raise ValueError(f"mask {mask.shape} must be {(n, t)}")
    fractions = []
    for f in range(t):
        present = np.flatnonzero(mask[:, f])
        if present.size == 0:
            continue
        if present.size == 1:
            fractions.append(0.0)
            continue
        pts = positions[present, f]
        deltas = pts[:, None, :] - pts[None, :, :]
        dist = np.linalg.norm(deltas, axis=-1)
        np.fill_diagonal(dist, np.inf)
        colliding = int(np.count_nonzero(dist.min(axis=1) < threshold))
        fractions.append(colliding / present.size)
    return fractions


def near_collision_rate(positions, mask=None,
                        threshold: float = NEAR_COLLISION_M) -> float:
    """Average over frames of the colliding-pedestrian percentage.

    A pedestrian collides in a frame when any other present pedestrian is
    strictly closer than ``threshold`` (0.10 m by default).
    """
    fractions = frame_collision_fractions(positions, mask, threshold)
    if not fractions:
        return 0.0
    return float(np.mean(fractions) * 100.0)


def linear_extrapolation(observed, pred_len: int) -> np.ndarray:
    """Constant-velocity baseline: continue each pedestrian's mean velocity.

    ``observed`` is (N, obs, 2) with obs >= 2; the velocity is the total
    observed displacement divided by the number of observed intervals.
    Returns (N, pred_len, 2) future positions.
    """
    observed = np.asarray(observed, dtype=np.float64)
    if observed.ndim != 3 or observed.shape[-1] != 2:
        raise ValueError(f"observed must be (N, obs, 2), got {observed.shape}")
    n, obs = observed.shape[:2]
    if obs < 2:
        raise ValueError("linear extrapolation needs at least two observed steps")
    velocity = (observed[:, -1] - observed[:, 0]) / float(obs - 1)
    steps = np.arange(1, pred_len + 1, dtype=np.float64)
    return observed[:, -1, None, :] + steps[None, :, None] * velocity[:, None, :]
