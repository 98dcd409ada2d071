"""Graph representation, edge-list ingestion and regional aggregation."""

import logging
import math
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from typing import BinaryIO, Iterable, Literal, NamedTuple, TextIO

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .errors import DataError, DuplicateEdgeError, ParseError

logger = logging.getLogger(__name__)

DedupPolicy = Literal["sum", "error"]
SelfLoopPolicy = Literal["drop", "internal"]


class DirectedEdges(NamedTuple):
    """Both orientations of every undirected edge, sorted by (src, dst).

    Outgoing edges of node i occupy positions indptr[i]:indptr[i + 1].
    rev[e] is the position of the opposite orientation of e; forward[u] and
    backward[u] locate i->j and j->i for undirected edge u = (i, j), i < j.
    """

    src: np.ndarray
    dst: np.ndarray
    rev: np.ndarray
    forward: np.ndarray
    backward: np.ndarray
    indptr: np.ndarray


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected weighted graph without self-loops.

    Edges are stored once, as (src, dst, weight) with src < dst, in ascending
    order. Same-node interaction mass from regional aggregation lives in
    `internal` and is not part of `degrees`.
    """

    node_ids: tuple[str, ...]
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    internal: np.ndarray

    @classmethod
    def from_edges(
        cls,
        node_ids: Iterable[str],
        edges: Iterable[tuple[int, int, float]],
        internal: Iterable[float] | None = None,
    ) -> "Graph":
        """Build a graph, orienting edges i < j and merging duplicates by weight sum."""
        rows = list(edges)
        return cls.from_arrays(
            node_ids,
            np.array([i for i, _, _ in rows], dtype=np.int64),
            np.array([j for _, j, _ in rows], dtype=np.int64),
            np.array([w for _, _, w in rows], dtype=np.float64),
            internal=internal,
        )

    @classmethod
    def from_arrays(
        cls,
        node_ids: Iterable[str],
        a: np.ndarray,
        b: np.ndarray,
        w: np.ndarray | None = None,
        internal: Iterable[float] | None = None,
    ) -> "Graph":
        """Like from_edges, with endpoints and weights as parallel arrays."""
        node_ids = tuple(node_ids)
        n = len(node_ids)
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        w = np.ones(len(a)) if w is None else np.asarray(w, dtype=np.float64)
        if not (a.shape == b.shape == w.shape):
            raise DataError("edge arrays differ in length")

        if a.size and (min(a.min(), b.min()) < 0 or max(a.max(), b.max()) >= n):
            raise DataError("edge endpoint outside node range")
        if np.any(w < 0):
            raise DataError("negative edge weight")

        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        loops = lo == hi
        if loops.any():
            logger.warning("dropped %d self-loop(s)", int(loops.sum()))
            lo, hi, w = lo[~loops], hi[~loops], w[~loops]

        keys, inverse = np.unique(lo * max(n, 1) + hi, return_inverse=True)
        merged = np.bincount(inverse, weights=w, minlength=len(keys))

        internal_arr = (
            np.zeros(n, dtype=np.float64)
            if internal is None
            else np.asarray(list(internal), dtype=np.float64)
        )
        if internal_arr.shape != (n,):
            raise DataError("internal weights must have one entry per node")

        return cls(
            node_ids=node_ids,
            src=(keys // max(n, 1)).astype(np.int64),
            dst=(keys % max(n, 1)).astype(np.int64),
            weight=merged.astype(np.float64),
            internal=internal_arr,
        )

    @classmethod
    def empty(cls) -> "Graph":
        return cls.from_edges((), ())

    @property
    def node_count(self) -> int:
        return len(self.node_ids)

    @property
    def edge_count(self) -> int:
        return len(self.src)

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        return [
            (int(i), int(j), float(w))
            for i, j, w in zip(self.src, self.dst, self.weight)
        ]

    @property
    def total_weight(self) -> float:
        """Total edge weight, excluding node-internal weight."""
        return float(self.weight.sum())

    @property
    def is_simple(self) -> bool:
        return bool(np.all(self.weight == 1.0)) and not self.internal.any()

    @cached_property
    def degrees(self) -> np.ndarray:
        n = self.node_count
        return np.bincount(self.src, weights=self.weight, minlength=n) + np.bincount(
            self.dst, weights=self.weight, minlength=n
        )

    @cached_property
    def csr(self) -> sparse.csr_array:
        """Symmetric weighted adjacency matrix."""
        n = self.node_count
        rows = np.concatenate([self.src, self.dst])
        cols = np.concatenate([self.dst, self.src])
        data = np.concatenate([self.weight, self.weight])
        return sparse.csr_array((data, (rows, cols)), shape=(n, n))

    @cached_property
    def adjacency(self) -> list[list[tuple[int, float]]]:
        """Per-node list of (neighbor, weight), neighbors ascending."""
        m = self.csr
        return [
            [
                (int(j), float(w))
                for j, w in zip(
                    m.indices[m.indptr[i] : m.indptr[i + 1]],
                    m.data[m.indptr[i] : m.indptr[i + 1]],
                )
            ]
            for i in range(self.node_count)
        ]

    @cached_property
    def directed_edges(self) -> DirectedEdges:
        m = self.edge_count
        heads = np.concatenate([self.src, self.dst])
        tails = np.concatenate([self.dst, self.src])
        order = np.lexsort((tails, heads))
        position = np.empty(2 * m, dtype=np.int64)
        position[order] = np.arange(2 * m)
        forward = position[:m]
        backward = position[m:]
        rev = np.empty(2 * m, dtype=np.int64)
        rev[forward] = backward
        rev[backward] = forward
        src = heads[order]
        indptr = np.searchsorted(src, np.arange(self.node_count + 1))
        return DirectedEdges(
            src=src,
            dst=tails[order],
            rev=rev,
            forward=forward,
            backward=backward,
            indptr=indptr,
        )

    def neighbors(self, i: int) -> list[tuple[int, float]]:
        return self.adjacency[i]

    def subgraph(self, nodes: np.ndarray) -> "Graph":
        """Induced subgraph on `nodes` (old indices, kept in the given order)."""
        nodes = np.asarray(nodes, dtype=np.int64)
        new_index = np.full(self.node_count, -1, dtype=np.int64)
        new_index[nodes] = np.arange(len(nodes))
        keep = (new_index[self.src] >= 0) & (new_index[self.dst] >= 0)
        return Graph.from_arrays(
            (self.node_ids[i] for i in nodes),
            new_index[self.src[keep]],
            new_index[self.dst[keep]],
            self.weight[keep],
            internal=self.internal[nodes],
        )


def _decode(raw: bytes | str, line_no: int) -> str:
    if isinstance(raw, str):
        return raw
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(line_no, f"invalid UTF-8: {e}") from None


def _lines(source: BinaryIO | bytes) -> Iterable[bytes]:
    if isinstance(source, bytes):
        return source.splitlines()
    return source


def load_edge_list(
    source: BinaryIO | bytes,
    weighted: bool = True,
    dedup: DedupPolicy = "sum",
    self_loops: SelfLoopPolicy = "drop",
) -> Graph:
    """Parse a tab-separated edge list into a Graph.

    Lines are `src<TAB>dst[<TAB>weight]`; blank lines and lines starting with
    `#` are skipped. Node identifiers get dense indices in first-seen order.
    With weighted=False only two fields are accepted and every line counts 1.
    Self-loops are dropped with a counted warning, or folded into the node's
    internal weight when self_loops="internal". A dropped self-loop does not
    introduce its node.
    """
    ids: dict[str, int] = {}
    rows: list[tuple[int, int, float]] = []
    internal: Counter[int] = Counter()
    seen: set[tuple[int, int]] = set()
    dropped = 0
    allowed = (2, 3) if weighted else (2,)

    for line_no, raw in enumerate(_lines(source), 1):
        line = _decode(raw, line_no).rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue

        fields = line.split("\t")
        if len(fields) not in allowed:
            expected = " or ".join(str(a) for a in allowed)
            raise ParseError(line_no, f"expected {expected} fields, got {len(fields)}")

        a, b = fields[0].strip(), fields[1].strip()
        if not a or not b:
            raise ParseError(line_no, "empty node identifier")

        w = 1.0
        if len(fields) == 3:
            try:
                w = float(fields[2])
            except ValueError:
                raise ParseError(line_no, f"non-numeric weight {fields[2]!r}") from None
            if not math.isfinite(w):
                raise ParseError(line_no, f"non-finite weight {fields[2]!r}")
            if w < 0:
                raise ParseError(line_no, f"negative weight {fields[2]!r}")

        if a == b and self_loops == "drop":
            dropped += 1
            continue
        i = ids.setdefault(a, len(ids))
        j = ids.setdefault(b, len(ids))
        if i == j:
            internal[i] += w
            continue

        key = (min(i, j), max(i, j))
        if key in seen and dedup == "error":
            raise DuplicateEdgeError(f"line {line_no}: duplicate edge {a} - {b}")
        seen.add(key)
        rows.append((i, j, w))

    if dropped:
        logger.warning("dropped %d self-loop(s) during ingestion", dropped)

    return Graph.from_edges(
        ids.keys(), rows, internal=(internal[i] for i in range(len(ids)))
    )


def _format_weight(w: float) -> str:
    return str(int(w)) if float(w).is_integer() else repr(float(w))


def format_edge_list(g: Graph) -> str:
    """Edge-list text that reloads with the same node order.

    Each node is introduced in index order by one line: the edge to its
    smallest earlier neighbor, else the edge to its next node or smallest
    later neighbor, else its internal weight as a self-loop line. The other
    edges follow with i < j ascending, then the other internal weights.
    Isolated nodes without internal weight cannot be written.
    """
    weighted = not g.is_simple
    weights = {(i, j): w for i, j, w in g.edges}
    csr = g.csr

    def edge_line(i: int, j: int) -> str:
        a, b = g.node_ids[i], g.node_ids[j]
        w = weights[(min(i, j), max(i, j))]
        return f"{a}\t{b}\t{_format_weight(w)}" if weighted else f"{a}\t{b}"

    def loop_line(i: int) -> str:
        a = g.node_ids[i]
        return f"{a}\t{a}\t{_format_weight(g.internal[i])}"

    lines, written, loops = [], set(), set()
    seen = np.zeros(g.node_count, dtype=bool)
    for v in range(g.node_count):
        if seen[v]:
            continue
        seen[v] = True
        neighbors = csr.indices[csr.indptr[v]:csr.indptr[v + 1]]
        earlier, later = neighbors[neighbors < v], neighbors[neighbors > v]
        if earlier.size:
            u = int(earlier.min())
            lines.append(edge_line(u, v))
            written.add((u, v))
        elif later.size and (v + 1 in later or not g.internal[v]):
            u = v + 1 if v + 1 in later else int(later.min())
            lines.append(edge_line(v, u))
            written.add((v, u))
            seen[u] = True
        elif g.internal[v]:
            lines.append(loop_line(v))
            loops.add(v)
        else:
            logger.warning("node %r is isolated and cannot be written", g.node_ids[v])

    lines.extend(edge_line(i, j) for i, j, _ in g.edges if (i, j) not in written)
    lines.extend(loop_line(int(i)) for i in np.flatnonzero(g.internal) if i not in loops)
    return "".join(line + "\n" for line in lines)


def dump_edge_list(g: Graph, stream: TextIO) -> None:
    stream.write(format_edge_list(g))


@dataclass(frozen=True)
class RegionInteractionLog:
    """Unordered interaction records between region codes."""

    records: tuple[tuple[str, str], ...]

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> "RegionInteractionLog":
        records = []
        for a, b in pairs:
            a, b = a.strip(), b.strip()
            if not a or not b:
                raise DataError("region codes must be non-empty")
            records.append((a, b) if a <= b else (b, a))
        return cls(tuple(records))


def load_region_log(source: BinaryIO | bytes) -> RegionInteractionLog:
    """Parse a two-column TSV of region codes."""
    pairs = []
    for line_no, raw in enumerate(_lines(source), 1):
        line = _decode(raw, line_no).rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise ParseError(line_no, f"expected 2 fields, got {len(fields)}")
        if not fields[0].strip() or not fields[1].strip():
            raise ParseError(line_no, "empty region code")
        pairs.append((fields[0], fields[1]))
    return RegionInteractionLog.from_pairs(pairs)


def aggregate_by_region(log: RegionInteractionLog) -> Graph:
    """Count interactions between every pair of regions.

    Nodes are the distinct region codes in lexicographic order, so the result
    does not depend on record order. Same-region records become internal weight.
    """
    counts = Counter(log.records)
    codes = sorted({code for pair in counts for code in pair})
    index = {code: i for i, code in enumerate(codes)}
    internal = np.zeros(len(codes))
    edges = []
    for (a, b), count in sorted(counts.items()):
        if a == b:
            internal[index[a]] += count
        else:
            edges.append((index[a], index[b], float(count)))
    return Graph.from_edges(codes, edges, internal=internal)


def largest_connected_component(g: Graph) -> tuple[Graph, np.ndarray]:
    """Restrict g to its largest connected component.

    Returns the subgraph and the mapping new index -> old index (ascending).
    Equal-size components are broken toward the one holding the smallest index.
    """
    if g.node_count == 0:
        return g, np.zeros(0, dtype=np.int64)

    n_comp, labels = connected_components(g.csr, directed=False)
    sizes = np.bincount(labels, minlength=n_comp)
    first = np.full(n_comp, g.node_count, dtype=np.int64)
    np.minimum.at(first, labels, np.arange(g.node_count))
    best = min(range(n_comp), key=lambda c: (-sizes[c], first[c]))
    mapping = np.flatnonzero(labels == best)
    if len(mapping) < g.node_count:
        logger.info(
            "largest component holds %d of %d nodes", len(mapping), g.node_count
        )
    return g.subgraph(mapping), mapping
