"""Dataset loading, synthetic generators, stream scripting, and export.

Loaders produce :class:`LabeledDataset`, a thin bundle of either coordinates
or a precomputed distance matrix plus optional ground-truth labels.  All
randomness is routed through a caller-supplied seed so every generator and
scenario script is reproducible byte for byte.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .exceptions import DatasetFormatError, StreamEventError
from .medium import SIGMA_FLOOR, CellSet
from .engine import StreamEvent

__all__ = [
    "LabeledDataset",
    "load_points_csv",
    "load_distance_matrix",
    "load_graph_edges",
    "synth",
    "script_stream",
    "export_points_csv",
    "export_distance_matrix",
    "export_assignment_csv",
    "export_history_jsonl",
]

# float formatting used by every exporter; 17 significant digits round-trips
# IEEE doubles exactly, which is what the reload-within-1e-12 guarantee needs
_FMT = "%.17g"


@dataclass
class LabeledDataset:
    """Points or distances, optionally labeled, ready to feed the engine."""

    name: str
    coords: np.ndarray | None = None
    distances: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        if (self.coords is None) == (self.distances is None):
            raise ValueError("exactly one of coords/distances must be given")
        if self.coords is not None:
            self.coords = np.asarray(self.coords, dtype=float)
            if self.coords.ndim != 2:
                raise ValueError("coords must be a 2-d array")
        if self.distances is not None:
            self.distances = np.asarray(self.distances, dtype=float)
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if len(self.labels) != self.n:
                raise ValueError("labels length must match cell count")

    @property
    def n(self) -> int:
        if self.coords is not None:
            return self.coords.shape[0]
        return self.distances.shape[0]

    @property
    def is_coordinate_mode(self) -> bool:
        return self.coords is not None

    def cellset(self) -> CellSet:
        """Fresh CellSet over this data; safe to mutate independently."""
        if self.coords is not None:
            return CellSet(coords=self.coords.copy())
        return CellSet(distances=self.distances.copy())


def _parse_float(token: str, path, line_no: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise DatasetFormatError(
            f"{path}: non-numeric value {token!r}", line=line_no
        ) from None


def load_points_csv(path, standardize: bool = False) -> LabeledDataset:
    """Load a points CSV, optionally with a trailing label column.

    An optional header row is detected by being non-numeric; if its last
    column is named ``label`` (any case) that column holds ground truth and
    everything before it is a feature.  Without a header every column is a
    feature.  ``standardize`` z-scores each feature column (constant columns
    are left centered only).
    """
    rows = []
    header = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for line_no, raw in enumerate(reader, start=1):
            row = [tok.strip() for tok in raw]
            if not row or all(tok == "" for tok in row):
                continue
            if header is None and line_no == 1:
                try:
                    float(row[0])
                except ValueError:
                    header = row
                    continue
            rows.append((line_no, row))
    if not rows:
        raise DatasetFormatError(f"{path}: no data rows")

    width = len(rows[0][1])
    if header is not None and len(header) != width:
        raise DatasetFormatError(
            f"{path}: header has {len(header)} columns, data has {width}",
            line=rows[0][0],
        )
    has_labels = header is not None and header[-1].lower() == "label"
    n_feat = width - 1 if has_labels else width
    if n_feat < 1:
        raise DatasetFormatError(f"{path}: no feature columns")

    coords = np.empty((len(rows), n_feat))
    labels = [] if has_labels else None
    for out_i, (line_no, row) in enumerate(rows):
        if len(row) != width:
            raise DatasetFormatError(
                f"{path}: expected {width} columns, got {len(row)}",
                line=line_no,
            )
        for j in range(n_feat):
            coords[out_i, j] = _parse_float(row[j], path, line_no)
        if has_labels:
            labels.append(row[-1])

    if standardize:
        mu = coords.mean(axis=0)
        sd = coords.std(axis=0)
        sd[sd == 0.0] = 1.0
        coords = (coords - mu) / sd

    lab = None
    if labels is not None:
        # keep integer-looking labels as ints so exports round-trip cleanly
        try:
            lab = np.array([int(x) for x in labels])
        except ValueError:
            lab = np.array(labels)
    name = os.path.splitext(os.path.basename(str(path)))[0]
    return LabeledDataset(name=name, coords=coords, labels=lab)


def load_distance_matrix(path) -> LabeledDataset:
    """Load a square distance matrix (CSV or whitespace separated).

    Requires symmetry within 1e-9, nonnegative entries, and a zero diagonal.
    """
    rows = []
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            toks = line.replace(",", " ").split()
            rows.append([_parse_float(t, path, line_no) for t in toks])
    if not rows:
        raise DatasetFormatError(f"{path}: empty matrix")
    n = len(rows)
    if any(len(r) != n for r in rows):
        raise DatasetFormatError(f"{path}: matrix is not square ({n} rows)")
    d = np.array(rows)
    if np.abs(d - d.T).max() > 1e-9:
        raise DatasetFormatError(f"{path}: matrix is not symmetric")
    if d.min() < 0.0:
        raise DatasetFormatError(f"{path}: negative distances")
    if np.abs(np.diag(d)).max() > 1e-9:
        raise DatasetFormatError(f"{path}: nonzero diagonal")
    np.fill_diagonal(d, 0.0)
    name = os.path.splitext(os.path.basename(str(path)))[0]
    return LabeledDataset(name=name, distances=d)


def load_graph_edges(path) -> LabeledDataset:
    """Load an undirected graph and turn it into hop-count distances.

    File format, one record per line ('#' starts a comment):

    - ``node <id> [label]`` declares a node, optionally with a class label.
    - ``<u> <v>`` declares an undirected edge.

    When any ``node`` lines are present they fix the node universe and an
    edge naming an undeclared id is an error; otherwise nodes are inferred
    from the edges.  Self-loops are ignored.  The distance between nodes in
    different components is a finite sentinel of twice the graph diameter.
    """
    declared: dict[str, int] = {}
    node_labels: list = []
    edges: list[tuple[str, str]] = []
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            toks = line.split()
            if toks[0] == "node":
                if len(toks) < 2:
                    raise DatasetFormatError(
                        f"{path}: node line needs an id", line=line_no
                    )
                if toks[1] in declared:
                    raise DatasetFormatError(
                        f"{path}: duplicate node {toks[1]!r}", line=line_no
                    )
                declared[toks[1]] = len(declared)
                node_labels.append(toks[2] if len(toks) > 2 else None)
            elif len(toks) == 2:
                edges.append((toks[0], toks[1]))
            else:
                raise DatasetFormatError(
                    f"{path}: expected 'u v' or 'node id [label]'",
                    line=line_no,
                )

    if declared:
        index = declared
        for u, v in edges:
            for t in (u, v):
                if t not in index:
                    raise DatasetFormatError(f"{path}: unknown node {t!r}")
    else:
        index = {}
        for u, v in edges:
            for t in (u, v):
                if t not in index:
                    index[t] = len(index)
    if not index:
        raise DatasetFormatError(f"{path}: graph has no nodes")

    n = len(index)
    adj: list[list[int]] = [[] for _ in range(n)]
    for u, v in edges:
        iu, iv = index[u], index[v]
        if iu == iv:
            continue  # self-loop
        adj[iu].append(iv)
        adj[iv].append(iu)

    # BFS from every node; n is small for graph data (105 for the book net)
    hop = np.full((n, n), -1, dtype=float)
    for s in range(n):
        hop[s, s] = 0.0
        frontier = [s]
        depth = 0
        while frontier:
            depth += 1
            nxt = []
            for u in frontier:
                for v in adj[u]:
                    if hop[s, v] < 0:
                        hop[s, v] = depth
                        nxt.append(v)
            frontier = nxt
    diameter = hop.max()
    sentinel = 2.0 * max(diameter, 1.0)
    hop[hop < 0] = sentinel

    lab = None
    if declared and any(x is not None for x in node_labels):
        lab = np.array([x if x is not None else "" for x in node_labels])
    name = os.path.splitext(os.path.basename(str(path)))[0]
    return LabeledDataset(name=name, distances=hop, labels=lab)


# ---------------------------------------------------------------------------
# synthetic generators


def _gen_two_moons(n, noise, rng):
    n1 = n // 2
    n2 = n - n1
    t1 = rng.uniform(0, np.pi, n1)
    t2 = rng.uniform(0, np.pi, n2)
    m1 = np.column_stack([np.cos(t1), np.sin(t1)])
    m2 = np.column_stack([1 - np.cos(t2), 0.5 - np.sin(t2)])
    pts = np.vstack([m1, m2]) + rng.normal(0, noise, (n, 2))
    return pts, np.array([0] * n1 + [1] * n2)


def _gen_two_spirals(n, noise, rng):
    # interleaved Archimedean spirals, r = t/4, two turns starting at pi/2.
    # Points are spaced uniformly in arc length (s ~ t^2 for r linear in t)
    # so no stretch of either arm is starved; noise=0 puts them exactly on
    # the curves.
    n1 = n // 2
    n2 = n - n1
    t0, t1 = 0.5 * np.pi, 3.0 * np.pi

    def arm(m, flip):
        t = np.sqrt(np.linspace(t0 * t0, t1 * t1, m))
        r = t / 4.0
        sign = -1.0 if flip else 1.0
        return np.column_stack([sign * r * np.cos(t), sign * r * np.sin(t)])

    pts = np.vstack([arm(n1, False), arm(n2, True)])
    pts = pts + rng.normal(0, noise, (n, 2))
    return pts, np.array([0] * n1 + [1] * n2)


def _gen_two_chains(n, noise, rng):
    # two parallel segments of length 4 separated by 1; length/gap ratio
    # keeps within-chain spacing far below the cross-chain distance
    n1 = n // 2
    n2 = n - n1
    x1 = rng.uniform(0.0, 4.0, n1)
    x2 = rng.uniform(0.0, 4.0, n2)
    c1 = np.column_stack([x1, np.zeros(n1)])
    c2 = np.column_stack([x2, np.ones(n2)])
    pts = np.vstack([c1, c2]) + rng.normal(0, noise, (n, 2))
    return pts, np.array([0] * n1 + [1] * n2)


def _gen_island(n, noise, rng):
    # dense core of spread 0.4 inside a ring of radius 1.2 (3x the spread);
    # the ring gets the larger share so it stays connected.  Core draws are
    # truncated at 2 spreads so the tail cannot touch the ring.
    n_core = n // 3
    n_ring = n - n_core
    spread = 0.4
    core = rng.normal(0.0, spread, (n_core, 2))
    while True:
        far = np.linalg.norm(core, axis=1) > 2.0 * spread
        if not far.any():
            break
        core[far] = rng.normal(0.0, spread, (int(far.sum()), 2))
    theta = rng.uniform(0.0, 2.0 * np.pi, n_ring)
    ring = 1.2 * np.column_stack([np.cos(theta), np.sin(theta)])
    pts = np.vstack([core, ring]) + rng.normal(0, noise, (n, 2))
    return pts, np.array([0] * n_core + [1] * n_ring)


_GENERATORS = {
    "two_moons": _gen_two_moons,
    "two_spirals": _gen_two_spirals,
    "two_chains": _gen_two_chains,
    "island": _gen_island,
}


def synth(kind: str, n: int = 200, noise: float = 0.05, seed: int = 0,
          scale: float = 1.0) -> LabeledDataset:
    """Generate a labeled synthetic dataset.

    ``kind`` is one of ``two_moons``, ``two_spirals``, ``two_chains``,
    ``island``.  The seed fully determines the output.  ``scale``
    multiplies the final coordinates (noise included), for scenarios
    where the shape lives in arena units rather than unit scale.
    """
    if kind not in _GENERATORS:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    if n < 4:
        raise ValueError("need n >= 4")
    if noise < 0:
        raise ValueError("noise must be nonnegative")
    if scale <= 0:
        raise ValueError("scale must be positive")
    rng = np.random.default_rng(seed)
    pts, labels = _GENERATORS[kind](n, noise, rng)
    return LabeledDataset(name=kind, coords=pts * scale, labels=labels)


# ---------------------------------------------------------------------------
# stream scenario scripting


def script_stream(base: LabeledDataset, scenario: dict) -> list[StreamEvent]:
    """Compile a scenario description into a sorted StreamEvent list.

    Scenario keys (all optional, empty dict means no events):

    - ``seed``: RNG seed for every random draw (default 0).
    - ``steps``: horizon; jitter runs over [1, steps].
    - ``jitter``: ``{"radius": r, "every": k, "cells": [...] | null}``.
      Each affected cell walks randomly inside a disc of the given radius
      around its home position, with a per-cell speed drawn once; a move
      event fires every ``every`` steps (default 10).
    - ``joins``: list of ``{"time": t, "count": m, "center": [..],
      "spread": s}`` batches; each produces ``m`` add events at step t.
    - ``migrations``: list of ``{"cells": [...], "start": t0, "end": t1,
      "waypoint": [..], "every": k}``; the group translates linearly so
      its centroid arrives at the waypoint at t1, keeping formation.

    Referencing a cell id outside the base dataset is an error.
    """
    if not base.is_coordinate_mode:
        raise StreamEventError("stream scenarios need coordinate data")
    n = base.n
    dim = base.coords.shape[1]
    rng = np.random.default_rng(int(scenario.get("seed", 0)))
    steps = int(scenario.get("steps", 0))
    events: list[StreamEvent] = []

    def check_ids(ids):
        out = [int(i) for i in ids]
        for i in out:
            if not 0 <= i < n:
                raise StreamEventError(f"scenario references unknown cell {i}")
        return out

    jitter = scenario.get("jitter")
    if jitter:
        radius = float(jitter.get("radius", 0.5))
        every = max(1, int(jitter.get("every", 10)))
        ids = jitter.get("cells")
        ids = list(range(n)) if ids is None else check_ids(ids)
        if ids and steps > 0:
            home = base.coords[ids].copy()
            offset = np.zeros((len(ids), dim))
            speed = rng.uniform(0.2, 1.0, len(ids)) * radius  # per-cell pace
            for t in range(every, steps + 1, every):
                heading = rng.normal(size=(len(ids), dim))
                heading /= np.linalg.norm(heading, axis=1, keepdims=True)
                offset = offset + heading * speed[:, None]
                norm = np.linalg.norm(offset, axis=1)
                over = norm > radius
                if over.any():  # reflect back inside the disc
                    offset[over] *= (radius / norm[over])[:, None]
                for row, cid in enumerate(ids):
                    events.append(StreamEvent(
                        time=t, kind="move", cell_id=cid,
                        position=home[row] + offset[row],
                    ))

    next_id = n
    for batch in scenario.get("joins", ()):
        t = int(batch["time"])
        count = int(batch["count"])
        center = np.asarray(batch.get("center", np.zeros(dim)), dtype=float)
        spread = float(batch.get("spread", 0.3))
        pos = center + rng.normal(0.0, spread, (count, dim))
        for row in range(count):
            events.append(StreamEvent(time=t, kind="add", position=pos[row]))
            next_id += 1

    for mig in scenario.get("migrations", ()):
        ids = check_ids(mig["cells"])
        t0 = int(mig["start"])
        t1 = int(mig["end"])
        if t1 <= t0:
            raise StreamEventError("migration must end after it starts")
        every = max(1, int(mig.get("every", 10)))
        waypoint = np.asarray(mig["waypoint"], dtype=float)
        home = base.coords[ids].copy()
        trek = waypoint - home.mean(axis=0)  # group keeps formation
        for t in range(t0 + every, t1 + 1, every):
            frac = min(1.0, (t - t0) / (t1 - t0))
            for row, cid in enumerate(ids):
                events.append(StreamEvent(
                    time=t, kind="move", cell_id=cid,
                    position=home[row] + frac * trek,
                ))

    removals = scenario.get("removals", ())
    for rem in removals:
        for cid in check_ids(rem["cells"]):
            events.append(StreamEvent(
                time=int(rem["time"]), kind="remove", cell_id=cid,
            ))

    events.sort(key=lambda e: e.time)
    return events


# ---------------------------------------------------------------------------
# export


def export_points_csv(dataset: LabeledDataset, path) -> None:
    """Write coordinates (and labels when present) as CSV with a header."""
    if not dataset.is_coordinate_mode:
        raise ValueError("dataset is distance-mode; use export_distance_matrix")
    coords = dataset.coords
    cols = [f"f{j}" for j in range(coords.shape[1])]
    if dataset.labels is not None:
        cols.append("label")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for i in range(dataset.n):
            row = [_FMT % v for v in coords[i]]
            if dataset.labels is not None:
                row.append(str(dataset.labels[i]))
            writer.writerow(row)


def export_distance_matrix(dataset: LabeledDataset, path) -> None:
    if dataset.is_coordinate_mode:
        d = dataset.cellset().pairwise_distances()
    else:
        d = dataset.distances
    with open(path, "w") as fh:
        for row in d:
            fh.write(" ".join(_FMT % v for v in row))
            fh.write("\n")


def export_assignment_csv(labels, path, cell_ids=None) -> None:
    """Write the final assignment as ``cell_id,label`` rows."""
    labels = np.asarray(labels)
    if cell_ids is None:
        cell_ids = list(range(len(labels)))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell_id", "label"])
        for cid, lab in zip(cell_ids, labels):
            writer.writerow([cid, int(lab)])


def export_history_jsonl(history: list, path) -> None:
    """Write run history as JSON lines, one snapshot per line."""
    with open(path, "w") as fh:
        for snap in history:
            fh.write(json.dumps(_jsonable(snap), sort_keys=True))
            fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj
