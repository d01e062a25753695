"""Frame assembly from broadcast measurement vectors.

Nodes broadcast in a token ring; each broadcast yields one measurement
vector of directed RSS readings (tx -> every receiver that heard it).  A
frame is built from M consecutive vectors, M being the node count:

1. vectors from a node that appears more than once in the window are
   averaged entry-wise;
2. the two directed readings of each node pair are averaged into one
   bidirectional link value;
3. links with no reading in the window copy the previous frame's value
   and are marked not fresh.

Consecutive frames therefore consume disjoint measurement vectors, except
where dropped packets force the copy rule.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rfcal.topology import NetworkTopology

__all__ = [
    "MeasurementVector",
    "Frame",
    "assemble_frames",
    "frame_count",
    "read_trace",
    "write_trace",
]


@dataclass(frozen=True)
class MeasurementVector:
    """Directed RSS readings from one broadcast: rx node id -> dBm."""

    seq: int
    tx_node: int
    rss: dict[int, float]
    t_ms: float = 0.0

    def __post_init__(self):
        if self.tx_node in self.rss:
            raise ValueError(f"vector seq={self.seq}: tx node {self.tx_node} measures itself")
        for rx, v in self.rss.items():
            if not math.isfinite(v):
                raise ValueError(f"vector seq={self.seq}: non-finite RSS on rx {rx}")


@dataclass(frozen=True)
class Frame:
    """One complete per-link RSS snapshot.

    ``rss[i]`` is NaN for links never observed so far (cold start).
    ``fresh[i]`` is False where the value was copied from the previous
    frame.  ``seqs`` records which measurement vectors the frame consumed.
    """

    index: int
    rss: np.ndarray
    fresh: np.ndarray
    t_ms: float = 0.0
    seqs: tuple[int, ...] = field(default=())

    @property
    def available(self) -> np.ndarray:
        return ~np.isnan(self.rss)


def frame_count(stream_len: int, n_nodes: int) -> int:
    """Number of complete frames in a stream; the trailing partial window is dropped."""
    if n_nodes < 1:
        raise ValueError("node count must be >= 1")
    return stream_len // n_nodes


def assemble_frames(
    topology: NetworkTopology, packets, strict_ids: bool = True
) -> list[Frame]:
    """Assemble the packet stream into frames of M consecutive vectors."""
    m = topology.n_nodes
    valid_ids = set(topology.node_ids)
    prev = np.full(topology.n_links, np.nan)
    frames: list[Frame] = []
    window: list[MeasurementVector] = []
    last_seq = None
    for pkt in packets:
        if last_seq is not None and pkt.seq <= last_seq:
            raise ValueError(f"packets out of order at seq={pkt.seq}")
        last_seq = pkt.seq
        if strict_ids:
            unknown = ({pkt.tx_node} | set(pkt.rss)) - valid_ids
            if unknown:
                raise ValueError(f"vector seq={pkt.seq}: unknown node ids {sorted(unknown)}")
        window.append(pkt)
        if len(window) == m:
            frame = _build_frame(topology, window, len(frames), prev)
            frames.append(frame)
            prev = frame.rss
            window = []
    return frames


def _build_frame(
    topology: NetworkTopology,
    window: list[MeasurementVector],
    index: int,
    prev: np.ndarray,
) -> Frame:
    # Stage 1: average entry-wise over each node's (possibly repeated) vectors.
    per_tx: dict[int, dict[int, list[float]]] = {}
    for pkt in window:
        entries = per_tx.setdefault(pkt.tx_node, {})
        for rx, v in pkt.rss.items():
            entries.setdefault(rx, []).append(float(v))
    directed: dict[tuple[int, int], float] = {
        (tx, rx): sum(vals) / len(vals)
        for tx, entries in per_tx.items()
        for rx, vals in entries.items()
    }
    # Stage 2: average the two directions; stage 3: copy-forward when absent.
    rss = np.array(prev)
    fresh = np.zeros(topology.n_links, dtype=bool)
    for i, lk in enumerate(topology.links):
        readings = [
            directed[key] for key in ((lk.a, lk.b), (lk.b, lk.a)) if key in directed
        ]
        if readings:
            rss[i] = sum(readings) / len(readings)
            fresh[i] = True
    return Frame(
        index=index,
        rss=rss,
        fresh=fresh,
        t_ms=window[0].t_ms,
        seqs=tuple(pkt.seq for pkt in window),
    )


def write_trace(path, vectors) -> None:
    """Write measurement vectors as JSON Lines, one vector per line."""
    with open(path, "w") as fh:
        for v in vectors:
            fh.write(
                json.dumps(
                    {
                        "seq": v.seq,
                        "tx": v.tx_node,
                        "t_ms": v.t_ms,
                        "rss": {str(rx): val for rx, val in v.rss.items()},
                    }
                )
            )
            fh.write("\n")


def read_trace(path) -> list[MeasurementVector]:
    """Read a JSON Lines trace written by :func:`write_trace` or the simulator."""
    vectors = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            vectors.append(
                MeasurementVector(
                    seq=int(doc["seq"]),
                    tx_node=int(doc["tx"]),
                    rss={int(rx): float(val) for rx, val in doc["rss"].items()},
                    t_ms=float(doc.get("t_ms", 0.0)),
                )
            )
    return vectors
