"""Per-frame foreground/background labeling of links.

Five labeling strategies over a frame of per-link RSS values:

* ``ma``           -- every link background (plain mean accumulation).
* ``tbm``          -- temporal test: kernel density of the current value
                      against the link's own recent history, thresholded.
* ``fabs``         -- adds a foreground density built over length-similar
                      neighbour links and iterates a ratio test.
* ``fabs-mmcl-r``  -- Markov smoothing of the FABS labels with a neighbour
                      vote over rectangle-overlap neighbourhoods.
* ``fabs-mmcl-o``  -- Markov smoothing with data-driven neighbourhoods: the
                      cell of each link's rectangle set currently crossed by
                      the most foreground links, with a population-balance
                      offset ``mu`` re-centring the vote.

All updates are synchronous (whole label field relabels from the previous
iteration), which makes every stage a pure function of its inputs.
Foreground always requires strict inequality; ties stay background.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from rfcal.frames import Frame
from rfcal.topology import NeighbourhoodIndex, RectanglePartition

__all__ = [
    "ALGORITHMS",
    "AlgorithmParams",
    "HistoryBuffer",
    "LabelField",
    "gaussian_kernel",
    "background_pdf",
    "background_densities",
    "ma_label",
    "tbm_label",
    "fabs_label",
    "mmcl_r_label",
    "mmcl_o_label",
    "preset_params",
    "load_params_json",
]

ALGORITHMS = ("ma", "tbm", "fabs", "fabs-mmcl-r", "fabs-mmcl-o")

_EXP_CAP = 700.0  # keep exp() finite; beyond this the test outcome is saturated anyway


@dataclass(frozen=True)
class AlgorithmParams:
    """Tuning knobs shared by the labeling algorithms.

    ``n_history``: frames of per-link history for the temporal density.
    ``sigma_t_sq`` / ``sigma_s_sq``: temporal/spatial kernel variances (dBm^2).
    ``theta``: temporal-test density threshold.
    ``tau``: length-similarity tolerance in metres.
    ``eta``: density-ratio threshold for FABS and the Markov tests.
    ``gamma``: natural temperature of the neighbour-vote exponent.
    ``c_percent``: rectangle-overlap percentage for the ``s`` neighbourhood.
    """

    n_history: int = 25
    sigma_t_sq: float = 4.0
    theta: float = 0.17
    tau: float = 0.0
    sigma_s_sq: float = 4.0
    eta: float = 1.0
    gamma: float = 5.0
    c_percent: float = 95.0
    mmcl_iters: int = 10
    fabs_max_iters: int = 3

    def __post_init__(self):
        if self.n_history < 1:
            raise ValueError("n_history must be >= 1")
        if self.sigma_t_sq <= 0 or self.sigma_s_sq <= 0:
            raise ValueError("kernel variances must be positive")
        if self.theta <= 0:
            raise ValueError("theta must be positive")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if not 0 < self.c_percent <= 100:
            raise ValueError("c_percent must be in (0, 100]")
        if self.mmcl_iters < 1 or self.fabs_max_iters < 1:
            raise ValueError("iteration counts must be >= 1")


# Tuned values per environment and algorithm.  TBM needs only the first
# three fields; the rest keep harmless defaults there.
_PRESETS: dict[str, dict[str, dict]] = {
    "outdoor": {
        "ma": {},
        "tbm": dict(n_history=25, sigma_t_sq=4.0, theta=0.17),
        "fabs": dict(n_history=25, sigma_t_sq=4.0, theta=0.17, tau=0.0, sigma_s_sq=4.0, eta=1.0),
        "fabs-mmcl-r": dict(
            n_history=25, sigma_t_sq=4.0, theta=0.17, tau=0.0, sigma_s_sq=4.0,
            eta=1.0, gamma=5.0, c_percent=95.0,
        ),
        # No published outdoor tuning for the obstruction variant; reuse the
        # rectangle variant's settings.
        "fabs-mmcl-o": dict(
            n_history=25, sigma_t_sq=4.0, theta=0.17, tau=0.0, sigma_s_sq=4.0,
            eta=1.0, gamma=5.0, c_percent=95.0,
        ),
    },
    "indoor": {
        "ma": {},
        "tbm": dict(n_history=35, sigma_t_sq=17.0, theta=0.05),
        "fabs": dict(n_history=35, sigma_t_sq=17.0, theta=0.05, tau=0.75, sigma_s_sq=10.0, eta=5.0),
        "fabs-mmcl-r": dict(
            n_history=35, sigma_t_sq=17.0, theta=0.05, tau=0.75, sigma_s_sq=10.0,
            eta=5.0, gamma=25.0, c_percent=35.0,
        ),
        "fabs-mmcl-o": dict(
            n_history=35, sigma_t_sq=17.0, theta=0.05, tau=0.75, sigma_s_sq=10.0,
            eta=1.0, gamma=50.0, c_percent=35.0,
        ),
    },
    "through-wall": {
        "ma": {},
        "tbm": dict(n_history=35, sigma_t_sq=1.0, theta=0.05),
        "fabs": dict(n_history=35, sigma_t_sq=1.0, theta=0.05, tau=1.0, sigma_s_sq=1.0, eta=5.0),
        "fabs-mmcl-r": dict(
            n_history=35, sigma_t_sq=1.0, theta=0.05, tau=1.0, sigma_s_sq=5.0,
            eta=15.0, gamma=50.0, c_percent=15.0,
        ),
        "fabs-mmcl-o": dict(
            n_history=35, sigma_t_sq=1.0, theta=0.05, tau=0.0, sigma_s_sq=10.0,
            eta=4.0, gamma=10.0, c_percent=15.0,
        ),
    },
}


def preset_params(environment: str, algorithm: str) -> AlgorithmParams:
    """Tuned parameters for one environment preset and algorithm."""
    try:
        env = _PRESETS[environment]
    except KeyError:
        raise ValueError(f"unknown preset {environment!r}; options: {sorted(_PRESETS)}")
    if algorithm not in env:
        raise ValueError(f"unknown algorithm {algorithm!r}; options: {ALGORITHMS}")
    return AlgorithmParams(**env[algorithm])


def load_params_json(path) -> dict[str, AlgorithmParams]:
    """Read a parameter file: one profile of AlgorithmParams fields per algorithm."""
    doc = json.loads(Path(path).read_text())
    out = {}
    for alg, fields_ in doc.items():
        if alg not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {alg!r} in params file")
        out[alg] = AlgorithmParams(**fields_)
    return out


@dataclass(frozen=True)
class LabelField:
    """Foreground/background assignment for one frame.

    ``foreground`` is a boolean array over link indices; background is its
    complement, so the two sets always partition the links.
    """

    frame_index: int
    foreground: np.ndarray
    stage: str
    iterations: int = 0
    converged: bool = True

    @property
    def background(self) -> np.ndarray:
        return ~self.foreground

    def n_foreground(self) -> int:
        return int(self.foreground.sum())


class HistoryBuffer:
    """Last ``maxlen`` frame values per link, most recent first.

    Histories advance with the frame values as assembled (including copied
    values); labels never filter what enters the buffer.
    """

    def __init__(self, n_links: int, maxlen: int):
        if maxlen < 1:
            raise ValueError("history length must be >= 1")
        self.n_links = n_links
        self._buf: deque[np.ndarray] = deque(maxlen=maxlen)

    def push(self, values: np.ndarray) -> None:
        if len(values) != self.n_links:
            raise ValueError("value vector length mismatch")
        self._buf.appendleft(np.asarray(values, dtype=float).copy())

    def matrix(self) -> np.ndarray:
        if not self._buf:
            return np.empty((0, self.n_links))
        return np.array(self._buf)

    def __len__(self) -> int:
        return len(self._buf)


def gaussian_kernel(x, variance: float):
    """Zero-mean Gaussian kernel: ``(2 pi v)^-1/2 exp(-x^2 / 2v)``."""
    if variance <= 0:
        raise ValueError("variance must be positive")
    x = np.asarray(x, dtype=float)
    out = np.exp(-(x * x) / (2.0 * variance)) / math.sqrt(2.0 * math.pi * variance)
    return float(out) if out.ndim == 0 else out


def background_pdf(current: float, history, sigma_t_sq: float) -> float:
    """Temporal background density of one link's current value.

    Mean kernel response over the link's stored history; during warm-up the
    mean runs over however many entries exist.
    """
    h = np.asarray(history, dtype=float)
    h = h[~np.isnan(h)]
    if h.size == 0:
        raise ValueError("empty history")
    return float(np.mean(gaussian_kernel(float(current) - h, sigma_t_sq)))


def background_densities(current: np.ndarray, history, sigma_t_sq: float) -> np.ndarray:
    """Vectorised :func:`background_pdf` over all links.

    ``history`` is a HistoryBuffer or an (n, n_links) matrix.  Links with no
    stored history get NaN.
    """
    if isinstance(history, HistoryBuffer):
        history = history.matrix()
    hist = np.asarray(history, dtype=float)
    cur = np.asarray(current, dtype=float)
    if hist.shape[0] == 0:
        return np.full(cur.shape, np.nan)
    diffs = cur[None, :] - hist
    with np.errstate(invalid="ignore"):
        k = gaussian_kernel(diffs, sigma_t_sq)
    counts = (~np.isnan(k)).sum(axis=0)
    sums = np.nansum(k, axis=0)
    return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def ma_label(frame: Frame) -> LabelField:
    """Mean-approximation labeling: every link background, always."""
    return LabelField(frame.index, np.zeros(len(frame.rss), dtype=bool), "MA")


def tbm_label(frame: Frame, history, params: AlgorithmParams, pb: np.ndarray | None = None) -> LabelField:
    """Temporal test: foreground iff the background density falls below theta.

    Links with empty history (cold start, frame 1) stay background.
    """
    if pb is None:
        pb = background_densities(frame.rss, history, params.sigma_t_sq)
    with np.errstate(invalid="ignore"):
        fg = pb < params.theta
    fg &= frame.available
    return LabelField(frame.index, fg, "TBM")


def _foreground_density(
    rss: np.ndarray,
    fg: np.ndarray,
    available: np.ndarray,
    l_mat: np.ndarray,
    sigma_s_sq: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-link mean kernel response over current foreground neighbours.

    Returns (pf, has_neighbours); pf is NaN where no foreground neighbour
    exists and the ratio test is undefined.
    """
    vals = np.where(available, rss, 0.0)  # masked entries never selected
    diffs = vals[:, None] - vals[None, :]
    kmat = gaussian_kernel(diffs, sigma_s_sq)
    w = l_mat & fg[None, :] & available[None, :]
    counts = w.sum(axis=1)
    has = counts > 0
    sums = np.where(w, kmat, 0.0).sum(axis=1)
    pf = np.where(has, sums / np.maximum(counts, 1), np.nan)
    return pf, has


def fabs_label(
    frame: Frame,
    tbm_labels: LabelField,
    neighbourhoods: NeighbourhoodIndex,
    params: AlgorithmParams,
    pb: np.ndarray,
) -> LabelField:
    """Foreground-adaptive relabeling over length-similar neighbours.

    Iterates the ratio test (foreground iff pb/pf < eta) synchronously until
    the labels stop changing or ``fabs_max_iters`` passes run.  Links with no
    foreground neighbour keep their current label.
    """
    avail = frame.available
    fg = tbm_labels.foreground.copy()
    iterations = 0
    converged = False
    for _ in range(params.fabs_max_iters):
        iterations += 1
        pf, has = _foreground_density(frame.rss, fg, avail, neighbourhoods.l_mat, params.sigma_s_sq)
        new_fg = fg.copy()
        upd = has & avail
        with np.errstate(invalid="ignore", divide="ignore"):
            new_fg[upd] = pb[upd] / pf[upd] < params.eta
        if np.array_equal(new_fg, fg):
            converged = True
            break
        fg = new_fg
    return LabelField(frame.index, fg, "FABS", iterations=iterations, converged=converged)


def mmcl_r_label(
    frame: Frame,
    fabs_labels: LabelField,
    neighbourhoods: NeighbourhoodIndex,
    params: AlgorithmParams,
    pb: np.ndarray,
) -> LabelField:
    """Markov relabeling with rectangle-overlap neighbour votes.

    Runs exactly ``mmcl_iters`` synchronous passes of the test
    ``pb/pf < eta * exp((|S_F| - |S_B|) / gamma)``, with the foreground
    density rebuilt each pass from the current labels.  Links with an empty
    vote neighbourhood use exponent zero.
    """
    avail = frame.available
    fg = fabs_labels.foreground.copy()
    s_mat = neighbourhoods.s_mat
    for _ in range(params.mmcl_iters):
        pf, has = _foreground_density(frame.rss, fg, avail, neighbourhoods.l_mat, params.sigma_s_sq)
        s_fg = (s_mat & (fg & avail)[None, :]).sum(axis=1)
        s_bg = (s_mat & (~fg & avail)[None, :]).sum(axis=1)
        expo = np.clip((s_fg - s_bg) / params.gamma, -_EXP_CAP, _EXP_CAP)
        rhs = params.eta * np.exp(expo)
        new_fg = fg.copy()
        upd = has & avail
        with np.errstate(invalid="ignore", divide="ignore"):
            new_fg[upd] = pb[upd] / pf[upd] < rhs[upd]
        fg = new_fg
    return LabelField(frame.index, fg, "MMCL-R", iterations=params.mmcl_iters)


def most_foreground_cell(
    partition: RectanglePartition,
    foreground: np.ndarray,
    link,
    available: np.ndarray | None = None,
    _cell_counts: np.ndarray | None = None,
) -> int:
    """Cell of the link's rectangle set crossed by the most foreground links.

    The link itself never counts; ties resolve to the lowest cell index.
    """
    li = partition.topology.resolve_link(link)
    if available is None:
        available = np.ones(partition.topology.n_links, dtype=bool)
    if _cell_counts is None:
        _cell_counts = partition.incidence @ (np.asarray(foreground, bool) & available)
    cells = np.fromiter(sorted(partition.rho[li]), dtype=int)
    own = 1 if (foreground[li] and available[li]) else 0
    counts = _cell_counts[cells] - own
    return int(cells[int(np.argmax(counts))])


def mmcl_o_label(
    frame: Frame,
    fabs_labels: LabelField,
    partition: RectanglePartition,
    neighbourhoods: NeighbourhoodIndex,
    params: AlgorithmParams,
    pb: np.ndarray,
) -> LabelField:
    """Markov relabeling with obstruction-guessing neighbourhoods.

    Each pass: reset ``mu = |B| - |F|`` network-wide; per link pick the cell
    of its rectangle set crossed by the most foreground links (itself
    excluded; ties to the lowest cell index); vote over the links through
    that cell; relabel via ``pb/pf < eta * exp((|S_F| - |S_B| + mu)/gamma)``.
    """
    avail = frame.available
    fg = fabs_labels.foreground.copy()
    rho_sorted = [np.fromiter(sorted(r), dtype=int) for r in partition.rho]
    inc = partition.incidence
    links_per_cell_avail = inc @ avail  # available links through each cell
    link_idx = np.flatnonzero(avail)
    for _ in range(params.mmcl_iters):
        n_fg = int((fg & avail).sum())
        mu = int((avail & ~fg).sum()) - n_fg
        cell_fg = inc @ (fg & avail)
        pf, has = _foreground_density(frame.rss, fg, avail, neighbourhoods.l_mat, params.sigma_s_sq)
        new_fg = fg.copy()
        for li in link_idx:
            if not has[li]:
                continue
            cells = rho_sorted[li]
            own = 1 if fg[li] else 0
            counts = cell_fg[cells] - own
            r = cells[int(np.argmax(counts))]  # first max = lowest cell index
            s_f = int(cell_fg[r]) - own
            s_size = int(links_per_cell_avail[r]) - 1  # exclude the link itself
            s_b = s_size - s_f
            expo = min(max((s_f - s_b + mu) / params.gamma, -_EXP_CAP), _EXP_CAP)
            rhs = params.eta * math.exp(expo)
            with np.errstate(invalid="ignore", divide="ignore"):
                new_fg[li] = pb[li] / pf[li] < rhs
        fg = new_fg
    return LabelField(frame.index, fg, "MMCL-O", iterations=params.mmcl_iters)
