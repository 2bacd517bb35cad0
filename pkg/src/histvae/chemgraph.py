"""Molecular graphs with typed atoms, typed bonds, and implicit hydrogens.

Graphs are immutable from the caller's perspective: every operation returns a
new graph, so values can be shared freely across workers. Hydrogens are never
graph nodes; each heavy atom carries an implicit-hydrogen count instead.
"""
from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

from .histograms import ValenceHistogram

BOND_ORDERS = (1, 2, 3)


@dataclass(frozen=True)
class AtomType:
    symbol: str
    valence: int

    def __post_init__(self):
        if not self.symbol:
            raise ValueError("atom type needs a symbol")
        if self.valence < 1:
            raise ValueError(f"valence of {self.symbol} must be positive")


class AtomVocabulary:
    """Ordered atom types; the ordering fixes the one-hot / embedding index."""

    def __init__(self, types: Iterable[AtomType]):
        self.types = tuple(types)
        if not self.types:
            raise ValueError("empty vocabulary")
        self._index = {}
        for i, t in enumerate(self.types):
            if t.symbol in self._index:
                raise ValueError(f"duplicate symbol {t.symbol!r} in vocabulary")
            self._index[t.symbol] = i
        self.nu = max(t.valence for t in self.types)

    def __len__(self) -> int:
        return len(self.types)

    def __getitem__(self, index: int) -> AtomType:
        return self.types[index]

    def __iter__(self) -> Iterator[AtomType]:
        return iter(self.types)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, AtomVocabulary) and self.types == other.types

    def __hash__(self) -> int:
        return hash(self.types)

    def index_of(self, symbol: str) -> int:
        if symbol not in self._index:
            raise KeyError(f"unknown element {symbol!r}")
        return self._index[symbol]

    def contains(self, symbol: str) -> bool:
        return symbol in self._index

    def fingerprint(self) -> str:
        text = ";".join(f"{t.symbol}:{t.valence}" for t in self.types)
        return hashlib.sha1(text.encode("utf-8")).hexdigest()[:16]

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.types:
                fh.write(f"{t.symbol} {t.valence}\n")

    @classmethod
    def load(cls, path: str) -> "AtomVocabulary":
        types = []
        with open(path, "r", encoding="utf-8") as fh:
            for ln in fh:
                ln = ln.strip()
                if not ln or ln.startswith("#"):
                    continue
                symbol, valence = ln.split()
                types.append(AtomType(symbol, int(valence)))
        return cls(types)


def qm9_vocabulary() -> AtomVocabulary:
    return AtomVocabulary(
        [AtomType("C", 4), AtomType("N", 3), AtomType("O", 2), AtomType("F", 1)]
    )


class MolecularGraph:
    """Labeled graph of typed heavy atoms with implicit-hydrogen counts.

    Invariant: for every atom the incident bond orders plus implicit hydrogens
    never exceed the atom's valence (enforced at construction). A graph is
    *valence-valid* when equality holds everywhere.
    """

    __slots__ = ("vocab", "_types", "_implicit_h", "_bonds", "_adj")

    def __init__(
        self,
        vocab: AtomVocabulary,
        atom_types: Sequence[int],
        implicit_h: Optional[Sequence[int]] = None,
        bonds: Iterable[tuple[int, int, int]] = (),
    ):
        self.vocab = vocab
        self._types = tuple(int(t) for t in atom_types)
        n = len(self._types)
        for t in self._types:
            if not 0 <= t < len(vocab):
                raise ValueError(f"atom type index {t} outside vocabulary")
        if implicit_h is None:
            self._implicit_h = (0,) * n
        else:
            self._implicit_h = tuple(int(h) for h in implicit_h)
            if len(self._implicit_h) != n:
                raise ValueError("implicit_h length must match atom count")
            if any(h < 0 for h in self._implicit_h):
                raise ValueError("implicit hydrogen counts must be non-negative")
        bond_map: dict[tuple[int, int], int] = {}
        for u, v, order in bonds:
            if u == v:
                raise ValueError(f"self-loop on atom {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"bond ({u},{v}) outside atom range")
            if order not in BOND_ORDERS:
                raise ValueError(f"bond order {order} not in {BOND_ORDERS}")
            key = (u, v) if u < v else (v, u)
            if key in bond_map:
                raise ValueError(f"duplicate bond {key}")
            bond_map[key] = order
        self._bonds = bond_map
        adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for (u, v), order in bond_map.items():
            adj[u].append((v, order))
            adj[v].append((u, order))
        self._adj = tuple(tuple(sorted(a)) for a in adj)
        for i in range(n):
            if self._order_sum(i) + self._implicit_h[i] > self.atom_type(i).valence:
                raise ValueError(
                    f"atom {i} ({self.atom_type(i).symbol}) exceeds valence "
                    f"{self.atom_type(i).valence}"
                )

    # -- basic accessors ---------------------------------------------------

    @property
    def num_atoms(self) -> int:
        return len(self._types)

    @property
    def num_bonds(self) -> int:
        return len(self._bonds)

    def type_index(self, atom: int) -> int:
        return self._types[atom]

    def atom_type(self, atom: int) -> AtomType:
        return self.vocab[self._types[atom]]

    def implicit_h(self, atom: int) -> int:
        return self._implicit_h[atom]

    def bonds(self) -> Iterator[tuple[int, int, int]]:
        for (u, v), order in sorted(self._bonds.items()):
            yield u, v, order

    def bond_order(self, u: int, v: int) -> int:
        """Order of the bond between u and v, or 0 when absent."""
        key = (u, v) if u < v else (v, u)
        return self._bonds.get(key, 0)

    def neighbors(self, atom: int) -> tuple[tuple[int, int], ...]:
        return self._adj[atom]

    def degree(self, atom: int) -> int:
        return len(self._adj[atom])

    def _order_sum(self, atom: int) -> int:
        return sum(order for _, order in self._adj[atom])

    # -- valence accounting ------------------------------------------------

    def remaining_valence(self, atom: int) -> int:
        if not 0 <= atom < self.num_atoms:
            raise IndexError(f"atom index {atom} out of range")
        return self.atom_type(atom).valence - self._order_sum(atom) - self._implicit_h[atom]

    def is_valence_valid(self) -> bool:
        return all(self.remaining_valence(i) == 0 for i in range(self.num_atoms))

    # -- derived graphs ----------------------------------------------------

    def with_bond(self, u: int, v: int, order: int) -> "MolecularGraph":
        bonds = [(a, b, o) for (a, b), o in self._bonds.items()]
        bonds.append((u, v, order))
        return MolecularGraph(self.vocab, self._types, self._implicit_h, bonds)

    def complete_with_hydrogens(self) -> "MolecularGraph":
        """Raise every implicit-H count so the graph becomes valence-valid."""
        new_h = [
            self._implicit_h[i] + self.remaining_valence(i) for i in range(self.num_atoms)
        ]
        bonds = [(u, v, o) for (u, v), o in self._bonds.items()]
        return MolecularGraph(self.vocab, self._types, new_h, bonds)

    def remove_isolated_atoms(self) -> "MolecularGraph":
        """Drop degree-zero atoms; an all-isolated graph becomes the empty graph."""
        keep = [i for i in range(self.num_atoms) if self.degree(i) > 0]
        return self.subgraph(keep)

    def subgraph(self, atoms: Sequence[int]) -> "MolecularGraph":
        index = {a: i for i, a in enumerate(atoms)}
        types = [self._types[a] for a in atoms]
        hs = [self._implicit_h[a] for a in atoms]
        bonds = [
            (index[u], index[v], o)
            for (u, v), o in self._bonds.items()
            if u in index and v in index
        ]
        return MolecularGraph(self.vocab, types, hs, bonds)

    def permuted(self, order: Sequence[int]) -> "MolecularGraph":
        """Relabel so that new atom i is old atom order[i]."""
        if sorted(order) != list(range(self.num_atoms)):
            raise ValueError("order must be a permutation of the atom indices")
        inv = {old: new for new, old in enumerate(order)}
        types = [self._types[a] for a in order]
        hs = [self._implicit_h[a] for a in order]
        bonds = [(inv[u], inv[v], o) for (u, v), o in self._bonds.items()]
        return MolecularGraph(self.vocab, types, hs, bonds)

    # -- analysis ----------------------------------------------------------

    def valence_histogram(self, include_hydrogens: bool = False) -> ValenceHistogram:
        """Histogram of heavy-atom valences; implicit hydrogens count as valence 1."""
        counts = [0] * self.vocab.nu
        n_h = 0
        for i in range(self.num_atoms):
            counts[self.atom_type(i).valence - 1] += 1
            n_h += self._implicit_h[i]
        if include_hydrogens:
            counts[0] += n_h
        return ValenceHistogram(counts)

    def shortest_path_lengths(self, source: int) -> list[Optional[int]]:
        """BFS hop counts from `source`; None marks unreachable atoms."""
        dist: list[Optional[int]] = [None] * self.num_atoms
        dist[source] = 0
        queue = deque([source])
        while queue:
            v = queue.popleft()
            for u, _ in self._adj[v]:
                if dist[u] is None:
                    dist[u] = dist[v] + 1
                    queue.append(u)
        return dist

    def is_connected(self) -> bool:
        if self.num_atoms == 0:
            return False
        reached = sum(1 for d in self.shortest_path_lengths(0) if d is not None)
        return reached == self.num_atoms

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, MolecularGraph)
            and self.vocab == other.vocab
            and self._types == other._types
            and self._implicit_h == other._implicit_h
            and self._bonds == other._bonds
        )

    def __hash__(self) -> int:
        return hash((self._types, self._implicit_h, tuple(sorted(self._bonds.items()))))

    def __repr__(self) -> str:
        atoms = ",".join(
            f"{self.atom_type(i).symbol}H{self._implicit_h[i]}" for i in range(self.num_atoms)
        )
        bonds = ",".join(f"{u}-{v}:{o}" for u, v, o in self.bonds())
        return f"MolecularGraph([{atoms}] bonds=[{bonds}])"


# -- canonical labeling ------------------------------------------------------


def _dense_ranks(keys: list) -> list[int]:
    ranking = {k: i for i, k in enumerate(sorted(set(keys)))}
    return [ranking[k] for k in keys]


def _refine_colors(graph: MolecularGraph, colors: list[int]) -> list[int]:
    # Iterative neighborhood-label refinement; stops at the stable partition.
    while True:
        sigs = []
        for v in range(graph.num_atoms):
            nbr = tuple(sorted((order, colors[u]) for u, order in graph.neighbors(v)))
            sigs.append((colors[v], nbr))
        new = _dense_ranks(sigs)
        if new == colors:
            return colors
        colors = new


def canonical_order(graph: MolecularGraph) -> tuple[int, ...]:
    """Permutation of atom indices that is invariant under relabeling.

    Refinement alone can leave symmetric atoms tied; ties are broken by
    individualizing each member of the first non-singleton class and keeping
    the branch with the smallest certificate. Exponential only for highly
    symmetric graphs; intended for molecules up to ~64 atoms.
    """
    n = graph.num_atoms
    if n == 0:
        return ()
    atom_keys = [
        (graph.type_index(v), graph.implicit_h(v)) for v in range(n)
    ]

    def certificate(order: Sequence[int]) -> tuple:
        pos = {a: i for i, a in enumerate(order)}
        atoms = tuple(atom_keys[a] for a in order)
        bonds = tuple(
            sorted(
                (min(pos[u], pos[v]), max(pos[u], pos[v]), o)
                for u, v, o in graph.bonds()
            )
        )
        return (atoms, bonds)

    best: list = [None, None]  # certificate, order

    def descend(colors: list[int]) -> None:
        if len(set(colors)) == n:
            order = sorted(range(n), key=colors.__getitem__)
            cert = certificate(order)
            if best[0] is None or cert < best[0]:
                best[0], best[1] = cert, order
            return
        cls_count: dict[int, int] = {}
        for c in colors:
            cls_count[c] = cls_count.get(c, 0) + 1
        target = min(c for c, k in cls_count.items() if k > 1)
        for v in range(n):
            if colors[v] != target:
                continue
            branched = list(colors)
            branched[v] = -1  # individualize v: strictly smallest color
            descend(_refine_colors(graph, _dense_ranks(branched)))

    descend(_refine_colors(graph, _dense_ranks(atom_keys)))
    return tuple(best[1])


def canonical_form(graph: MolecularGraph) -> str:
    """Permutation-invariant string identifier of the labeled graph."""
    order = canonical_order(graph)
    pos = {a: i for i, a in enumerate(order)}
    atoms = ";".join(
        f"{graph.atom_type(a).symbol}{graph.implicit_h(a)}" for a in order
    )
    bonds = ",".join(
        f"{i}-{j}:{o}"
        for i, j, o in sorted(
            (min(pos[u], pos[v]), max(pos[u], pos[v]), o) for u, v, o in graph.bonds()
        )
    )
    return atoms + "|" + bonds
