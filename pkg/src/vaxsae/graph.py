"""Areal adjacency graphs and the ICAR structure matrix."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from os import PathLike
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components as _cc


class GraphError(ValueError):
    """Raised for malformed adjacency or state-membership input."""


@dataclass(frozen=True)
class AdjacencyGraph:
    """Undirected areal adjacency with a state label per unit.

    Parameters
    ----------
    unit_ids : tuple of str
        Unique unit identifiers; position gives the unit index.
    neighbors : tuple of tuple of int
        Sorted neighbor indices per unit.
    state_of : tuple of str
        State identifier per unit.
    """

    unit_ids: tuple[str, ...]
    neighbors: tuple[tuple[int, ...], ...]
    state_of: tuple[str, ...]
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.unit_ids)
        if len(set(self.unit_ids)) != n:
            raise GraphError("unit identifiers are not unique")
        if len(self.neighbors) != n or len(self.state_of) != n:
            raise GraphError("neighbors/state_of length does not match unit count")
        for i, nbrs in enumerate(self.neighbors):
            if i in nbrs:
                raise GraphError(f"self-loop at unit {self.unit_ids[i]!r}")
            if list(nbrs) != sorted(set(nbrs)):
                raise GraphError(f"neighbor list of {self.unit_ids[i]!r} not sorted/unique")
            for j in nbrs:
                if not 0 <= j < n:
                    raise GraphError(f"neighbor index {j} out of range")
                if i not in self.neighbors[j]:
                    raise GraphError(
                        f"asymmetric adjacency between {self.unit_ids[i]!r} and {self.unit_ids[j]!r}"
                    )
        self._index.update({u: i for i, u in enumerate(self.unit_ids)})

    @property
    def n_units(self) -> int:
        return len(self.unit_ids)

    def index_of(self, unit_id: str) -> int:
        try:
            return self._index[unit_id]
        except KeyError:
            raise GraphError(f"unknown unit {unit_id!r}") from None

    @property
    def n_neighbors(self) -> np.ndarray:
        return np.array([len(nb) for nb in self.neighbors], dtype=np.int64)

    @property
    def states(self) -> tuple[str, ...]:
        """Distinct states in order of first appearance."""
        return tuple(dict.fromkeys(self.state_of))

    def state_members(self) -> dict[str, np.ndarray]:
        members: dict[str, list[int]] = {s: [] for s in self.states}
        for i, s in enumerate(self.state_of):
            members[s].append(i)
        return {s: np.asarray(v, dtype=np.int64) for s, v in members.items()}

    def edges(self) -> list[tuple[int, int]]:
        """Each undirected edge once, as ``(i, j)`` with ``i < j``."""
        return [(i, j) for i, nb in enumerate(self.neighbors) for j in nb if i < j]

    def adjacency_matrix(self) -> sp.csr_matrix:
        e = np.asarray(self.edges(), dtype=np.int64).reshape(-1, 2)
        n = self.n_units
        data = np.ones(2 * len(e), dtype=np.int64)
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def from_edges(
    unit_ids: Sequence[str],
    edges: Iterable[tuple[str, str]],
    state_of: Mapping[str, str] | Sequence[str],
) -> AdjacencyGraph:
    """Build a graph from identifier pairs, applying symmetric closure."""
    unit_ids = tuple(str(u) for u in unit_ids)
    index = {u: i for i, u in enumerate(unit_ids)}
    if len(index) != len(unit_ids):
        raise GraphError("unit identifiers are not unique")
    nbrs: list[set[int]] = [set() for _ in unit_ids]
    for a, b in edges:
        a, b = str(a), str(b)
        for u in (a, b):
            if u not in index:
                raise GraphError(f"unknown unit {u!r} in edge list")
        if a == b:
            raise GraphError(f"self-loop at unit {a!r}")
        ia, ib = index[a], index[b]
        nbrs[ia].add(ib)
        nbrs[ib].add(ia)
    if isinstance(state_of, Mapping):
        states = tuple(str(state_of[u]) for u in unit_ids)
    else:
        states = tuple(str(s) for s in state_of)
    return AdjacencyGraph(
        unit_ids=unit_ids,
        neighbors=tuple(tuple(sorted(s)) for s in nbrs),
        state_of=states,
    )


def _read_rows(source, columns: tuple[str, str]) -> list[tuple[str, str]]:
    if isinstance(source, (str, PathLike)):
        with open(source, newline="") as fh:
            return _read_rows(fh, columns)
    if not hasattr(source, "read"):
        return [(str(a), str(b)) for a, b in source]
    lines = (ln for ln in source if not ln.startswith("#"))
    reader = csv.DictReader(lines)
    missing = [c for c in columns if c not in (reader.fieldnames or ())]
    if missing:
        raise GraphError(f"missing column(s) {missing}; expected {list(columns)}")
    return [(row[columns[0]].strip(), row[columns[1]].strip()) for row in reader]


def load_adjacency(edge_list_source, state_map_source) -> AdjacencyGraph:
    """Read an edge list and a state map into an :class:`AdjacencyGraph`.

    Sources may be paths, open text files, or iterables of pairs. The edge list
    has columns ``unit_a,unit_b`` and the state map ``unit,state``. One-sided
    edge lists are symmetrised. Units that appear only in the state map become
    islands. Unit order follows the state map.
    """
    state_rows = _read_rows(state_map_source, ("unit", "state"))
    state_of: dict[str, str] = {}
    for unit, state in state_rows:
        prev = state_of.setdefault(unit, state)
        if prev != state:
            raise GraphError(f"unit {unit!r} assigned to both {prev!r} and {state!r}")
    edges = _read_rows(edge_list_source, ("unit_a", "unit_b"))
    return from_edges(list(state_of), edges, state_of)


def write_adjacency(graph: AdjacencyGraph, edge_path, state_path, header: str | None = None) -> None:
    """Write the edge list and state map; ``header`` becomes a leading ``#`` line."""
    with open(edge_path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit_a", "unit_b"])
        for i, j in graph.edges():
            w.writerow([graph.unit_ids[i], graph.unit_ids[j]])
    with open(state_path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit", "state"])
        for u, s in zip(graph.unit_ids, graph.state_of):
            w.writerow([u, s])


def connected_components(graph: AdjacencyGraph) -> tuple[np.ndarray, int]:
    """Component label per unit and the number of components.

    Labels are numbered by the smallest unit index in each component, so they
    do not depend on the order edges were supplied in.
    """
    n = graph.n_units
    if n == 0:
        return np.zeros(0, dtype=np.int64), 0
    n_comp, raw = _cc(graph.adjacency_matrix(), directed=False)
    first_seen: dict[int, int] = {}
    for lab in raw:
        first_seen.setdefault(int(lab), len(first_seen))
    labels = np.array([first_seen[int(lab)] for lab in raw], dtype=np.int64)
    return labels, int(n_comp)


@dataclass(frozen=True)
class IcarStructure:
    """ICAR structure matrix ``R`` with component bookkeeping.

    ``R`` has the neighbor count on the diagonal and -1 for each neighbor
    pair. Island rows are all zero.
    """

    R: sp.csr_matrix
    components: np.ndarray
    n_components: int
    islands: tuple[int, ...]

    @property
    def n_units(self) -> int:
        return self.R.shape[0]

    @property
    def connected_groups(self) -> list[np.ndarray]:
        """Unit indices of every component that is not an island."""
        isl = set(self.islands)
        groups = []
        for c in range(self.n_components):
            members = np.flatnonzero(self.components == c)
            if not (len(members) == 1 and int(members[0]) in isl):
                groups.append(members)
        return groups

    def log_pdet(self) -> float:
        """Log of the product of the non-zero eigenvalues of ``R``."""
        total = 0.0
        R = self.R.toarray().astype(float)
        for members in self.connected_groups:
            ev = np.linalg.eigvalsh(R[np.ix_(members, members)])
            total += float(np.sum(np.log(ev[1:])))
        return total


def icar_structure(graph: AdjacencyGraph) -> IcarStructure:
    A = graph.adjacency_matrix()
    deg = np.asarray(A.sum(axis=1)).ravel()
    R = (sp.diags(deg) - A).tocsr().astype(np.int64)
    R.eliminate_zeros()
    labels, n_comp = connected_components(graph)
    islands = tuple(int(i) for i in np.flatnonzero(deg == 0))
    return IcarStructure(R=R, components=labels, n_components=n_comp, islands=islands)
