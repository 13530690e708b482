"""Directed labeled graphs: ingestion, canonical dumps and degree queries.

Edge semantics: ``u -> v`` means *u follows v*.  Out-degree therefore counts
follows (engagement) and in-degree counts followers (influence).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)


class GraphFormatError(ValueError):
    """Raised for malformed edge or label files."""


@dataclass(frozen=True, eq=False)
class LabeledGraph:
    """Directed graph on dense ids ``0..N-1`` with a binary ``N x d`` label matrix."""

    adjacency: sp.csr_matrix
    labels: np.ndarray
    node_ids: tuple[str, ...]
    directed: bool = True
    load_report: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.adjacency.shape[0]
        if self.adjacency.shape != (n, n):
            raise ValueError("adjacency must be square")
        if self.labels.ndim != 2 or self.labels.shape[0] != n or self.labels.shape[1] < 1:
            raise ValueError("labels must be an N x d matrix with d >= 1")
        if len(self.node_ids) != n:
            raise ValueError("node_ids must have one entry per node")
        if self.adjacency.diagonal().any():
            raise ValueError("self-loops are not allowed")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be binary")

    @classmethod
    def from_edges(cls, n_nodes, edges, labels, node_ids=None, directed=True):
        """Build from an integer edge array; drops self-loops and duplicates."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if len(edges) and (edges.min() < 0 or edges.max() >= n_nodes):
            raise ValueError("edge endpoint out of range")
        if not directed:
            edges = np.concatenate([edges, edges[:, ::-1]])
        n_raw = len(edges)
        loops = edges[:, 0] == edges[:, 1]
        edges = edges[~loops]
        unique = np.unique(edges, axis=0) if len(edges) else edges
        adjacency = sp.csr_matrix(
            (np.ones(len(unique), dtype=np.int8), (unique[:, 0], unique[:, 1])),
            shape=(n_nodes, n_nodes),
        )
        adjacency.sort_indices()
        labels = np.ascontiguousarray(labels, dtype=np.uint8)
        if node_ids is None:
            node_ids = tuple(str(i) for i in range(n_nodes))
        report = {
            "self_loops_dropped": int(loops.sum()),
            "duplicates_dropped": int(n_raw - loops.sum() - len(unique)),
        }
        return cls(adjacency, labels, tuple(node_ids), directed, report)

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.nnz)

    @property
    def d(self) -> int:
        return self.labels.shape[1]

    @property
    def out_degree(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)

    @property
    def in_degree(self) -> np.ndarray:
        return np.diff(self.reverse.indptr)

    @property
    def reverse(self) -> sp.csr_matrix:
        """Transposed adjacency in CSR form (row v lists the followers of v)."""
        rev = self.__dict__.get("_reverse")
        if rev is None:
            rev = self.adjacency.T.tocsr()
            rev.sort_indices()
            object.__setattr__(self, "_reverse", rev)
        return rev

    def out_neighbors(self, u: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[u]:a.indptr[u + 1]]

    def in_neighbors(self, v: int) -> np.ndarray:
        r = self.reverse
        return r.indices[r.indptr[v]:r.indptr[v + 1]]

    def undirected(self) -> sp.csr_matrix:
        """Symmetrized binary adjacency (edge in either direction)."""
        sym = ((self.adjacency + self.reverse) > 0).astype(np.int8).tocsr()
        sym.sort_indices()
        return sym

    def edge_array(self) -> np.ndarray:
        coo = self.adjacency.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return np.stack([coo.row[order], coo.col[order]], axis=1).astype(np.int64)

    def same_as(self, other: "LabeledGraph") -> bool:
        return (
            self.node_ids == other.node_ids
            and self.directed == other.directed
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.edge_array(), other.edge_array())
        )


def engaged_nodes(g: LabeledGraph, tau: int) -> np.ndarray:
    """Ids of nodes with out-degree at least ``tau`` (sorted)."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    return np.flatnonzero(g.out_degree >= tau)


def _node_sort_key(name: str):
    try:
        return (0, int(name), name)
    except ValueError:
        return (1, 0, name)


def _data_lines(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield lineno, line


def _read_edges(path: Path) -> list[tuple[str, str]]:
    pairs = []
    for lineno, line in _data_lines(path):
        parts = line.split("\t") if "\t" in line else line.split()
        if len(parts) != 2 or not all(parts):
            raise GraphFormatError(f"{path}:{lineno}: expected 'src<TAB>dst', got {line!r}")
        pairs.append((parts[0].strip(), parts[1].strip()))
    return pairs


def _read_labels(path: Path) -> dict[str, list[int]]:
    rows: dict[str, list[int]] = {}
    for lineno, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise GraphFormatError(f"{path}:{lineno}: expected 'node<TAB>i1,i2,...', got {line!r}")
        node, spec = parts[0].strip(), parts[1].strip()
        if spec in ("-", ""):
            rows[node] = []
            continue
        try:
            idx = [int(tok) for tok in spec.split(",")]
        except ValueError:
            raise GraphFormatError(f"{path}:{lineno}: bad label index list {spec!r}") from None
        if any(i < 0 for i in idx):
            raise GraphFormatError(f"{path}:{lineno}: negative label index")
        rows[node] = idx
    return rows


def load_graph(edges_path, labels_path, directed: bool = True, d: int | None = None) -> LabeledGraph:
    """Read an edge list and a label file into a :class:`LabeledGraph`.

    Node names are remapped to dense ids in natural order (numeric names
    sorted numerically, then the rest lexicographically), so ids do not
    depend on file row order.  ``d`` defaults to ``max label index + 1``.
    Nodes that appear only in the label file become isolated nodes.
    """
    edges_path, labels_path = Path(edges_path), Path(labels_path)
    pairs = _read_edges(edges_path)
    label_rows = _read_labels(labels_path)

    names = {n for pair in pairs for n in pair} | set(label_rows)
    node_ids = sorted(names, key=_node_sort_key)
    index = {name: i for i, name in enumerate(node_ids)}

    max_idx = max((max(v) for v in label_rows.values() if v), default=-1)
    if d is None:
        d = max(max_idx + 1, 1)
    elif max_idx >= d:
        raise GraphFormatError(f"label index {max_idx} out of bounds for d={d}")

    labels = np.zeros((len(node_ids), d), dtype=np.uint8)
    for name, idx in label_rows.items():
        labels[index[name], idx] = 1
    edges = np.array([(index[a], index[b]) for a, b in pairs], dtype=np.int64).reshape(-1, 2)
    g = LabeledGraph.from_edges(len(node_ids), edges, labels, node_ids, directed)
    unlabeled = len(names - set(label_rows))
    g.load_report["unlabeled_nodes"] = unlabeled
    if g.load_report["self_loops_dropped"] or g.load_report["duplicates_dropped"]:
        logger.info("load_graph: %s", g.load_report)
    return g


def format_label_row(row: np.ndarray) -> str:
    ones = np.flatnonzero(row)
    return ",".join(map(str, ones)) if len(ones) else "-"


def dump_graph(g: LabeledGraph, out_dir) -> Path:
    """Write ``edges.tsv``, ``labels.tsv`` and ``graph.json`` under ``out_dir``.

    The edge file holds the stored directed edges, so an undirected input
    is dumped already symmetrized and reloads as directed=True unless
    read back through :func:`load_dump`.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = g.node_ids
    with open(out / "edges.tsv", "w", encoding="utf-8") as fh:
        for u, v in g.edge_array():
            fh.write(f"{ids[u]}\t{ids[v]}\n")
    with open(out / "labels.tsv", "w", encoding="utf-8") as fh:
        for i, row in enumerate(g.labels):
            fh.write(f"{ids[i]}\t{format_label_row(row)}\n")
    header = {"N": g.n_nodes, "E": g.n_edges, "d": g.d, "directed": g.directed}
    (out / "graph.json").write_text(json.dumps(header, sort_keys=True) + "\n", encoding="utf-8")
    return out


def load_dump(dump_dir) -> LabeledGraph:
    root = Path(dump_dir)
    header = json.loads((root / "graph.json").read_text(encoding="utf-8"))
    g = load_graph(root / "edges.tsv", root / "labels.tsv", directed=True, d=header["d"])
    g = LabeledGraph(g.adjacency, g.labels, g.node_ids, header["directed"], g.load_report)
    if g.n_nodes != header["N"] or g.n_edges != header["E"]:
        raise GraphFormatError(f"dump header mismatch in {root}")
    return g


def load_snap_ego(directory, ego: str = "107", symmetrize: bool = False) -> LabeledGraph:
    """Load a SNAP ego-network (``<ego>.edges``, ``<ego>.feat``, ``<ego>.egofeat``).

    The ego's outgoing links are dropped and its incoming links kept: every
    alter gets an edge ``alter -> ego``.  Alter-alter pairs are taken as
    listed (one directed edge per row) unless ``symmetrize`` is set.
    """
    root = Path(directory)
    feats: dict[str, np.ndarray] = {}
    for lineno, line in _data_lines(root / f"{ego}.feat"):
        parts = line.split()
        try:
            feats[parts[0]] = np.array([int(x) for x in parts[1:]], dtype=np.uint8)
        except ValueError:
            raise GraphFormatError(f"{ego}.feat:{lineno}: non-integer feature") from None
    ego_path = root / f"{ego}.egofeat"
    d = len(next(iter(feats.values())))
    if ego_path.exists():
        _, line = next(_data_lines(ego_path))
        feats[ego] = np.array([int(x) for x in line.split()], dtype=np.uint8)
    else:
        feats[ego] = np.zeros(d, dtype=np.uint8)

    pairs = [tuple(line.split()) for _, line in _data_lines(root / f"{ego}.edges")]
    alters = set(feats) - {ego} | {n for p in pairs for n in p}
    node_ids = sorted(alters | {ego}, key=_node_sort_key)
    index = {name: i for i, name in enumerate(node_ids)}
    labels = np.zeros((len(node_ids), d), dtype=np.uint8)
    for name, row in feats.items():
        labels[index[name]] = row
    edges = [(index[a], index[b]) for a, b in pairs]
    if symmetrize:
        edges += [(b, a) for a, b in edges]
    edges += [(index[a], index[ego]) for a in alters]
    return LabeledGraph.from_edges(len(node_ids), np.array(edges), labels, node_ids, directed=True)
