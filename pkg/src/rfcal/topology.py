"""Network geometry: nodes, bidirectional links, rectangle partition, link neighbourhoods.

A fully-connected RF sensing network is described by node positions; every
unordered node pair forms exactly one bidirectional link.  The monitored
region is partitioned into rectangles so that each link carries the set of
cells its line-of-sight segment crosses.  Two neighbourhood systems are
derived from this geometry: length similarity (links within ``tau`` metres
of each other's length) and rectangle overlap (links sharing at least ``C``
percent of the smaller link's cells).
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Region",
    "Link",
    "NetworkTopology",
    "RectanglePartition",
    "NeighbourhoodIndex",
    "build_topology",
    "link_cells",
    "chi",
    "build_neighbourhoods",
    "load_topology_json",
    "save_topology_json",
]

# Grazing tolerance: a cell counts as crossed only when the chord inside it
# exceeds this fraction of the segment length (excludes corner touches).
_CHORD_TOL = 1e-12

# Absolute slack for length comparisons, so tau = 0 means "equal length"
# under floating point.
_LENGTH_TOL = 1e-9


@dataclass(frozen=True)
class Region:
    """Axis-aligned bounding rectangle, in metres."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def contains(self, x: float, y: float, slack: float = 1e-9) -> bool:
        return (
            self.xmin - slack <= x <= self.xmax + slack
            and self.ymin - slack <= y <= self.ymax + slack
        )


@dataclass(frozen=True)
class Link:
    """One bidirectional link between two nodes, a < b in id order."""

    a: int
    b: int
    length: float


class NetworkTopology:
    """Immutable node/link geometry of a fully connected network.

    Links are ordered lexicographically by their (a, b) endpoint ids, and
    that order fixes the link index used throughout the package.
    """

    def __init__(
        self,
        nodes: list[tuple[int, float, float]],
        region: Region,
    ) -> None:
        self.nodes: tuple[tuple[int, float, float], ...] = tuple(nodes)
        self.region = region
        self.positions: dict[int, tuple[float, float]] = {
            nid: (x, y) for nid, x, y in self.nodes
        }
        pairs = sorted(
            (min(a, b), max(a, b))
            for i, a in enumerate(self.positions)
            for b in list(self.positions)[i + 1 :]
        )
        links = []
        for a, b in pairs:
            ax, ay = self.positions[a]
            bx, by = self.positions[b]
            links.append(Link(a, b, math.hypot(bx - ax, by - ay)))
        self.links: tuple[Link, ...] = tuple(links)
        self.link_index: dict[tuple[int, int], int] = {
            (lk.a, lk.b): i for i, lk in enumerate(self.links)
        }
        self.lengths = np.array([lk.length for lk in self.links])
        # Segment endpoints as (n_links, 2) arrays for vectorised geometry.
        self.seg_a = np.array([self.positions[lk.a] for lk in self.links])
        self.seg_b = np.array([self.positions[lk.b] for lk in self.links])

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def node_ids(self) -> list[int]:
        return [nid for nid, _, _ in self.nodes]

    def link_id(self, a: int, b: int) -> int:
        """Index of the link between nodes a and b (order-insensitive)."""
        key = (min(a, b), max(a, b))
        if key not in self.link_index:
            raise KeyError(f"no link between nodes {a} and {b}")
        return self.link_index[key]

    def resolve_link(self, link) -> int:
        """Accept a link index or an (a, b) endpoint pair."""
        if isinstance(link, (tuple, list)):
            return self.link_id(*link)
        idx = int(link)
        if not 0 <= idx < self.n_links:
            raise KeyError(f"unknown link index {link}")
        return idx


def build_topology(
    positions,
    node_ids: list[int] | None = None,
    region: Region | None = None,
) -> NetworkTopology:
    """Build the fully connected topology over the given node positions.

    ``positions`` is a sequence of (x, y) in metres; ids default to 0..M-1.
    The region defaults to the nodes' bounding box.
    """
    pts = [(float(x), float(y)) for x, y in positions]
    if len(pts) < 3:
        raise ValueError(f"need at least 3 nodes, got {len(pts)}")
    if node_ids is None:
        node_ids = list(range(len(pts)))
    if len(node_ids) != len(pts):
        raise ValueError("node_ids and positions length mismatch")
    if len(set(node_ids)) != len(node_ids):
        raise ValueError("duplicate node ids")
    if len(set(pts)) != len(pts):
        raise ValueError("duplicate node positions")
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    if region is None:
        region = Region(min(xs), min(ys), max(xs), max(ys))
    for nid, (x, y) in zip(node_ids, pts):
        if not region.contains(x, y):
            raise ValueError(f"node {nid} at ({x}, {y}) lies outside the region")
    nodes = [(int(nid), x, y) for nid, (x, y) in zip(node_ids, pts)]
    return NetworkTopology(nodes, region)


class RectanglePartition:
    """Rectangular tiling of the region plus per-link crossed-cell sets.

    Cells are indexed ``row * n_cols + col`` with cell (0, 0) at the region's
    min corner.  When the cell size does not divide the region, the last
    row/column cells are truncated so the tiling still covers the region
    exactly.
    """

    def __init__(self, topology: NetworkTopology, cell_width: float, cell_height: float):
        if cell_width <= 0 or cell_height <= 0:
            raise ValueError("cell dimensions must be positive")
        region = topology.region
        self.topology = topology
        self.region = region
        self.cell_width = float(cell_width)
        self.cell_height = float(cell_height)
        self.n_cols = max(1, math.ceil(region.width / cell_width - 1e-12))
        self.n_rows = max(1, math.ceil(region.height / cell_height - 1e-12))
        self.n_cells = self.n_cols * self.n_rows
        self.rho: list[frozenset[int]] = [
            frozenset(self._cells_crossed(topology.positions[lk.a], topology.positions[lk.b]))
            for lk in topology.links
        ]
        links_by_cell: list[list[int]] = [[] for _ in range(self.n_cells)]
        for li, cells in enumerate(self.rho):
            if not cells:
                raise RuntimeError(f"link {li} crosses no cell; inconsistent partition")
            for c in cells:
                links_by_cell[c].append(li)
        self.links_by_cell: tuple[tuple[int, ...], ...] = tuple(
            tuple(ls) for ls in links_by_cell
        )
        # Cell/link incidence as a dense boolean matrix (n_cells x n_links).
        self.incidence = np.zeros((self.n_cells, topology.n_links), dtype=bool)
        for li, cells in enumerate(self.rho):
            for c in cells:
                self.incidence[c, li] = True

    def cell_index(self, col: int, row: int) -> int:
        return row * self.n_cols + col

    def cell_bounds(self, col: int, row: int) -> tuple[float, float, float, float]:
        r = self.region
        x0 = r.xmin + col * self.cell_width
        y0 = r.ymin + row * self.cell_height
        x1 = min(x0 + self.cell_width, r.xmax)
        y1 = min(y0 + self.cell_height, r.ymax)
        return x0, y0, x1, y1

    def rho_of(self, link) -> frozenset[int]:
        return self.rho[self.topology.resolve_link(link)]

    def _cells_crossed(self, p: tuple[float, float], q: tuple[float, float]) -> set[int]:
        """Cells whose closed rectangle holds a positive-length chord of pq.

        Exact parametric clipping (Liang-Barsky) of the segment against each
        candidate cell in the segment's bounding box; corner grazes yield a
        zero-length interval and are excluded.
        """
        px, py = p
        qx, qy = q
        r = self.region
        col_lo = self._clamp_col(math.floor((min(px, qx) - r.xmin) / self.cell_width))
        col_hi = self._clamp_col(math.floor((max(px, qx) - r.xmin) / self.cell_width))
        row_lo = self._clamp_row(math.floor((min(py, qy) - r.ymin) / self.cell_height))
        row_hi = self._clamp_row(math.floor((max(py, qy) - r.ymin) / self.cell_height))
        out: set[int] = set()
        for row in range(row_lo, row_hi + 1):
            for col in range(col_lo, col_hi + 1):
                x0, y0, x1, y1 = self.cell_bounds(col, row)
                span = _clip_segment(px, py, qx, qy, x0, y0, x1, y1)
                if span is not None and span[1] - span[0] > _CHORD_TOL:
                    out.add(self.cell_index(col, row))
        return out

    def _clamp_col(self, c: int) -> int:
        return min(max(c, 0), self.n_cols - 1)

    def _clamp_row(self, rw: int) -> int:
        return min(max(rw, 0), self.n_rows - 1)


def _clip_segment(
    px: float, py: float, qx: float, qy: float,
    x0: float, y0: float, x1: float, y1: float,
) -> tuple[float, float] | None:
    """Liang-Barsky clip of segment p->q to the closed box; None if disjoint."""
    dx = qx - px
    dy = qy - py
    t0, t1 = 0.0, 1.0
    for delta, lo_gap, hi_gap in (
        (dx, px - x0, x1 - px),
        (dy, py - y0, y1 - py),
    ):
        if delta == 0.0:
            if lo_gap < 0.0 or hi_gap < 0.0:
                return None
            continue
        t_lo = -lo_gap / delta
        t_hi = hi_gap / delta
        if delta < 0.0:
            t_lo, t_hi = t_hi, t_lo
        t0 = max(t0, t_lo)
        t1 = min(t1, t_hi)
        if t0 > t1:
            return None
    return t0, t1


def _modal_nn_spacing(topology: NetworkTopology) -> float:
    """Most common nearest-neighbour node distance (1 mm binning)."""
    pts = np.array([(x, y) for _, x, y in topology.nodes])
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    nn = d.min(axis=1)
    binned = Counter(round(v, 3) for v in nn)
    top = max(binned.values())
    return min(v for v, c in binned.items() if c == top)


def link_cells(
    topology: NetworkTopology,
    cell_width: float | None = None,
    cell_height: float | None = None,
) -> RectanglePartition:
    """Partition the region into rectangles and compute each link's cell set.

    The default cell size is the modal nearest-neighbour node spacing.
    """
    if cell_width is None:
        cell_width = _modal_nn_spacing(topology)
    if cell_height is None:
        cell_height = cell_width
    return RectanglePartition(topology, cell_width, cell_height)


def chi(partition: RectanglePartition, link1, link2) -> float:
    """Percentage of partition cells the two links share.

    ``|rho1 & rho2| / min(|rho1|, |rho2|) * 100``, in [0, 100].
    """
    i = partition.topology.resolve_link(link1)
    j = partition.topology.resolve_link(link2)
    r1, r2 = partition.rho[i], partition.rho[j]
    return 100.0 * len(r1 & r2) / min(len(r1), len(r2))


@dataclass
class NeighbourhoodIndex:
    """Per-link neighbour sets for the two similarity notions.

    ``l_sets[i]``: links within ``tau`` metres of link i's length.
    ``s_sets[i]``: links sharing at least ``c_percent`` of cells with link i.
    Both are symmetric and exclude the link itself. ``l_mat``/``s_mat`` hold
    the same relation as boolean adjacency matrices.
    """

    tau: float
    c_percent: float
    l_mat: np.ndarray
    s_mat: np.ndarray

    @property
    def l_sets(self) -> list[np.ndarray]:
        return [np.flatnonzero(row) for row in self.l_mat]

    @property
    def s_sets(self) -> list[np.ndarray]:
        return [np.flatnonzero(row) for row in self.s_mat]


def build_neighbourhoods(
    topology: NetworkTopology,
    partition: RectanglePartition,
    tau: float,
    c_percent: float,
) -> NeighbourhoodIndex:
    """Build both neighbourhood systems over all link pairs."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if not 0 < c_percent <= 100:
        raise ValueError("C must be in (0, 100]")
    lengths = topology.lengths
    l_mat = np.abs(lengths[:, None] - lengths[None, :]) <= tau + _LENGTH_TOL
    np.fill_diagonal(l_mat, False)

    n = topology.n_links
    sizes = np.array([len(r) for r in partition.rho])
    inc = partition.incidence.astype(np.int32)  # (n_cells, n_links)
    shared = inc.T @ inc  # pairwise shared-cell counts
    chi_mat = 100.0 * shared / np.minimum(sizes[:, None], sizes[None, :])
    s_mat = chi_mat >= c_percent
    np.fill_diagonal(s_mat, False)
    return NeighbourhoodIndex(tau=tau, c_percent=c_percent, l_mat=l_mat, s_mat=s_mat)


def perimeter_positions(
    n_nodes: int, width: float, height: float, origin: tuple[float, float] = (0.0, 0.0)
) -> list[tuple[float, float]]:
    """Evenly spaced node positions around a rectangle's perimeter.

    Node 0 sits at the origin corner; the rest follow counterclockwise at
    equal arclength spacing, mirroring a perimeter deployment around a
    monitored region.
    """
    if n_nodes < 3:
        raise ValueError("need at least 3 nodes")
    ox, oy = origin
    per = 2.0 * (width + height)
    pts = []
    for k in range(n_nodes):
        s = k * per / n_nodes
        if s < width:
            pts.append((ox + s, oy))
        elif s < width + height:
            pts.append((ox + width, oy + (s - width)))
        elif s < 2 * width + height:
            pts.append((ox + width - (s - width - height), oy + height))
        else:
            pts.append((ox, oy + height - (s - 2 * width - height)))
    return pts


def load_topology_json(path) -> tuple[NetworkTopology, dict]:
    """Read a topology file: nodes plus optional region and cell sizes.

    Returns the topology and a dict of partition overrides (possibly empty).
    Link ids are derived from node ids, never stored.
    """
    doc = json.loads(Path(path).read_text())
    nodes = doc["nodes"]
    ids = [int(n["id"]) for n in nodes]
    pos = [(float(n["x"]), float(n["y"])) for n in nodes]
    region = None
    if "region" in doc and doc["region"] is not None:
        xmin, ymin, xmax, ymax = doc["region"]
        region = Region(float(xmin), float(ymin), float(xmax), float(ymax))
    topo = build_topology(pos, node_ids=ids, region=region)
    part = {}
    for key in ("cell_width", "cell_height"):
        if doc.get(key) is not None:
            part[key] = float(doc[key])
    return topo, part


def save_topology_json(topology: NetworkTopology, path, partition_params: dict | None = None) -> None:
    doc: dict = {
        "nodes": [{"id": nid, "x": x, "y": y} for nid, x, y in topology.nodes],
        "region": [
            topology.region.xmin,
            topology.region.ymin,
            topology.region.xmax,
            topology.region.ymax,
        ],
    }
    if partition_params:
        doc.update(partition_params)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
