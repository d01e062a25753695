"""Indicator-weighted baseline estimation and its error metric.

The baseline estimate of a link is the mean of its frame values over the
frames where the link was labeled background.  Copied (non-fresh) values
count when labeled background; foreground frames leave the accumulator
untouched.  Sums are Neumaier-compensated so the estimate is independent of
frame order to machine precision even over long traces.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from rfcal.bgsub import LabelField
from rfcal.frames import Frame
from rfcal.topology import NetworkTopology

__all__ = [
    "BaselineEstimate",
    "EstimationError",
    "estimation_error",
    "reference_from_frames",
    "write_baseline_csv",
    "read_baseline_csv",
]


class BaselineEstimate:
    """Running per-link sums of background-labeled RSS values."""

    def __init__(self, n_links: int):
        self.n_links = n_links
        self._sum = np.zeros(n_links)
        self._comp = np.zeros(n_links)  # Neumaier compensation terms
        self.counts = np.zeros(n_links, dtype=np.int64)

    def update(self, frame: Frame, labels: LabelField) -> "BaselineEstimate":
        """Fold one frame in: background-labeled links with a value accumulate."""
        if len(frame.rss) != self.n_links:
            raise ValueError("frame/estimate link count mismatch")
        if len(labels.foreground) != self.n_links:
            raise ValueError("labels/estimate link count mismatch")
        take = labels.background & frame.available
        v = np.where(take, frame.rss, 0.0)
        t = self._sum + v
        self._comp += np.where(
            np.abs(self._sum) >= np.abs(v), (self._sum - t) + v, (v - t) + self._sum
        )
        self._sum = t
        self.counts += take
        return self

    def r_hat(self) -> np.ndarray:
        """Per-link baseline estimate; NaN where no background sample exists."""
        with np.errstate(invalid="ignore", divide="ignore"):
            est = (self._sum + self._comp) / self.counts
        return np.where(self.counts > 0, est, np.nan)

    @property
    def defined(self) -> np.ndarray:
        return self.counts > 0


@dataclass(frozen=True)
class EstimationError:
    """RMS error over the links where the estimate is defined."""

    rmse_dbm: float
    n_used: int
    n_links: int

    @property
    def coverage(self) -> float:
        return self.n_used / self.n_links if self.n_links else 0.0


def estimation_error(
    estimate: BaselineEstimate | np.ndarray,
    reference: np.ndarray,
    link_mask: np.ndarray | None = None,
) -> EstimationError:
    """Root mean square gap between estimated and reference baselines.

    Links without a defined estimate (no background sample yet) are excluded
    from the mean and surfaced through the coverage field.  ``link_mask`` can
    restrict the evaluation to a subset of links.
    """
    est = estimate.r_hat() if isinstance(estimate, BaselineEstimate) else np.asarray(estimate, float)
    ref = np.asarray(reference, dtype=float)
    if est.shape != ref.shape:
        raise ValueError("estimate/reference shape mismatch")
    mask = ~np.isnan(est) & ~np.isnan(ref)
    n_total = int(mask.size)
    if link_mask is not None:
        mask &= np.asarray(link_mask, dtype=bool)
        n_total = int(np.asarray(link_mask, dtype=bool).sum())
    if n_total == 0:
        raise ValueError("empty link set")
    n_used = int(mask.sum())
    if n_used == 0:
        return EstimationError(float("nan"), 0, n_total)
    diff = ref[mask] - est[mask]
    return EstimationError(float(np.sqrt(np.mean(diff * diff))), n_used, n_total)


def reference_from_frames(frames) -> np.ndarray:
    """Mean RSS per link over a calibration trace (region known empty)."""
    stack = np.array([fr.rss for fr in frames])
    if stack.size == 0:
        raise ValueError("no frames")
    counts = (~np.isnan(stack)).sum(axis=0)
    with np.errstate(invalid="ignore"):
        means = np.nansum(stack, axis=0) / np.maximum(counts, 1)
    return np.where(counts > 0, means, np.nan)


def write_baseline_csv(path, topology: NetworkTopology, values: np.ndarray, counts=None) -> None:
    """Write per-link baselines as ``link_a,link_b,rb_hat_dbm,sample_count``."""
    counts_arr = (
        np.asarray(counts, dtype=np.int64)
        if counts is not None
        else np.where(np.isnan(values), 0, 1).astype(np.int64)
    )
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["link_a", "link_b", "rb_hat_dbm", "sample_count"])
        for i, lk in enumerate(topology.links):
            v = values[i]
            w.writerow([lk.a, lk.b, "" if np.isnan(v) else repr(float(v)), int(counts_arr[i])])


def read_baseline_csv(path, topology: NetworkTopology) -> tuple[np.ndarray, np.ndarray]:
    """Read a baseline CSV back into arrays aligned with the topology's links."""
    values = np.full(topology.n_links, np.nan)
    counts = np.zeros(topology.n_links, dtype=np.int64)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            i = topology.link_id(int(row["link_a"]), int(row["link_b"]))
            if row["rb_hat_dbm"] != "":
                values[i] = float(row["rb_hat_dbm"])
            counts[i] = int(row["sample_count"])
    return values, counts
