"""SMILES parsing and writing for the supported chemistry subset.

Supported: organic-subset bare atoms, bracket atoms with explicit hydrogen
counts, bonds - = #, branches, ring closures 0-9 and %nn, and aromatic
lowercase forms (kekulized to alternating single/double bonds). Charges,
isotopes, stereo marks and dot-disconnected fragments raise structured
errors. Every byte string either parses to a graph or raises SmilesError.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .chemgraph import AtomVocabulary, MolecularGraph, canonical_order

ORGANIC_SYMBOLS = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
_ASCII_DIGITS = "0123456789"
AROMATIC_SYMBOLS = ("b", "c", "n", "o", "p", "s")
_BOND_CHARS = {"-": 1, "=": 2, "#": 3}
_UNSUPPORTED = {
    ".": "disconnected fragments",
    "/": "stereo bonds",
    "\\": "stereo bonds",
    ":": "explicit aromatic bonds",
    "+": "charges",
    "*": "wildcard atoms",
    "@": "stereo centres",
}


class SmilesError(ValueError):
    """Parse failure with a 1-based position into the input string."""

    def __init__(self, message: str, position: Optional[int] = None):
        self.position = position
        if position is not None:
            message = f"{message} (position {position})"
        super().__init__(message)


@dataclass
class _Atom:
    symbol: str
    aromatic: bool
    hcount: Optional[int]  # None: infer from valence
    pos: int


@dataclass
class _Bond:
    u: int
    v: int
    order: Optional[int]  # None: aromatic, resolved by kekulization
    pos: int


def _parse_bracket(s: str, start: int) -> tuple[_Atom, int]:
    # start indexes the '['; returns the atom and the index just past ']'
    end = s.find("]", start)
    if end < 0:
        raise SmilesError("unclosed bracket atom", start + 1)
    body = s[start + 1 : end]
    i = 0
    if not body:
        raise SmilesError("empty bracket atom", start + 1)
    if body[0] in _ASCII_DIGITS:
        raise SmilesError("isotopes are not supported", start + 2)
    aromatic = False
    if body[0] in AROMATIC_SYMBOLS:
        symbol = body[0].upper()
        aromatic = True
        i = 1
    elif body[0].isupper():
        symbol = body[0]
        i = 1
        if i < len(body) and body[i].islower() and body[i] != "h":
            symbol += body[i]
            i += 1
    else:
        raise SmilesError(f"bad element in bracket atom: {body!r}", start + 2)
    hcount = 0
    if i < len(body) and body[i] == "H":
        i += 1
        digits = ""
        while i < len(body) and body[i] in _ASCII_DIGITS:
            digits += body[i]
            i += 1
        hcount = int(digits) if digits else 1
    if i < len(body):
        ch = body[i]
        if ch in "+-":
            raise SmilesError("charges are not supported", start + 2 + i)
        if ch == "@":
            raise SmilesError("stereo centres are not supported", start + 2 + i)
        raise SmilesError(f"unexpected {ch!r} in bracket atom", start + 2 + i)
    return _Atom(symbol, aromatic, hcount, start + 1), end + 1


def parse_smiles(text: str, vocab: AtomVocabulary) -> MolecularGraph:
    """Parse a SMILES string into a valence-valid molecular graph."""
    s = text.strip()
    if not s:
        raise SmilesError("empty SMILES string")

    atoms: list[_Atom] = []
    bonds: list[_Bond] = []
    bond_keys: set[tuple[int, int]] = set()
    prev: Optional[int] = None
    branch_stack: list[tuple[int, int]] = []  # (atom, position of '(')
    pending: Optional[tuple[int, int]] = None  # (order, position)
    rings: dict[int, tuple[int, Optional[int], int]] = {}

    def add_bond(u: int, v: int, order: Optional[int], pos: int) -> None:
        key = (u, v) if u < v else (v, u)
        if u == v:
            raise SmilesError("ring bond closes on the same atom", pos)
        if key in bond_keys:
            raise SmilesError("duplicate bond between the same atoms", pos)
        bond_keys.add(key)
        bonds.append(_Bond(u, v, order, pos))

    def link(new_atom: int, pos: int) -> None:
        nonlocal pending
        if prev is None:
            return
        if pending is not None:
            order, _ = pending
            pending = None
        elif atoms[prev].aromatic and atoms[new_atom].aromatic:
            order = None
        else:
            order = 1
        add_bond(prev, new_atom, order, pos)

    i = 0
    while i < len(s):
        ch = s[i]
        pos = i + 1
        if ch == "[":
            atom, nxt = _parse_bracket(s, i)
            atoms.append(atom)
            link(len(atoms) - 1, pos)
            prev = len(atoms) - 1
            i = nxt
            continue
        two = s[i : i + 2]
        if two in ("Cl", "Br"):
            atoms.append(_Atom(two, False, None, pos))
            link(len(atoms) - 1, pos)
            prev = len(atoms) - 1
            i += 2
            continue
        if ch in "BCNOPSFI":
            atoms.append(_Atom(ch, False, None, pos))
            link(len(atoms) - 1, pos)
            prev = len(atoms) - 1
            i += 1
            continue
        if ch in AROMATIC_SYMBOLS:
            atoms.append(_Atom(ch.upper(), True, None, pos))
            link(len(atoms) - 1, pos)
            prev = len(atoms) - 1
            i += 1
            continue
        if ch in _BOND_CHARS:
            if pending is not None:
                raise SmilesError("two bond symbols in a row", pos)
            if prev is None:
                raise SmilesError("bond symbol before any atom", pos)
            pending = (_BOND_CHARS[ch], pos)
            i += 1
            continue
        if ch == "(":
            if prev is None:
                raise SmilesError("branch before any atom", pos)
            if pending is not None:
                raise SmilesError("bond symbol before branch open", pos)
            branch_stack.append((prev, pos))
            i += 1
            continue
        if ch == ")":
            if not branch_stack:
                raise SmilesError("unbalanced branch close", pos)
            if pending is not None:
                raise SmilesError("dangling bond symbol before branch close", pos)
            prev, _ = branch_stack.pop()
            i += 1
            continue
        if ch in _ASCII_DIGITS or ch == "%":
            if ch == "%":
                two = s[i + 1 : i + 3]
                if len(two) < 2 or any(c not in _ASCII_DIGITS for c in two):
                    raise SmilesError("%% ring label needs two digits", pos)
                num = int(two)
                i += 3
            else:
                num = int(ch)
                i += 1
            if prev is None:
                raise SmilesError("ring closure before any atom", pos)
            my_order = pending[0] if pending is not None else None
            pending = None
            if num in rings:
                other, other_order, _ = rings.pop(num)
                if my_order is not None and other_order is not None:
                    if my_order != other_order:
                        raise SmilesError("ring bond order mismatch", pos)
                order = my_order if my_order is not None else other_order
                if order is None and not (atoms[other].aromatic and atoms[prev].aromatic):
                    order = 1
                add_bond(other, prev, order, pos)
            else:
                rings[num] = (prev, my_order, pos)
            continue
        if ch in _UNSUPPORTED:
            raise SmilesError(f"{_UNSUPPORTED[ch]} are not supported", pos)
        raise SmilesError(f"unexpected character {ch!r}", pos)

    if branch_stack:
        raise SmilesError("unclosed branch", branch_stack[-1][1])
    if pending is not None:
        raise SmilesError("dangling bond symbol", pending[1])
    if rings:
        num, (_, _, pos) = next(iter(rings.items()))
        raise SmilesError(f"unpaired ring closure {num}", pos)
    if not atoms:
        raise SmilesError("no atoms in SMILES string")

    return _build_graph(atoms, bonds, vocab)


def _build_graph(
    atoms: list[_Atom], bonds: list[_Bond], vocab: AtomVocabulary
) -> MolecularGraph:
    type_idx = []
    for a in atoms:
        if not vocab.contains(a.symbol):
            raise SmilesError(f"unknown element {a.symbol!r}", a.pos)
        type_idx.append(vocab.index_of(a.symbol))

    _kekulize(atoms, bonds, vocab, type_idx)

    order_sum = [0] * len(atoms)
    for b in bonds:
        order_sum[b.u] += b.order
        order_sum[b.v] += b.order

    implicit_h = []
    for i, a in enumerate(atoms):
        valence = vocab[type_idx[i]].valence
        if a.hcount is not None:
            if order_sum[i] + a.hcount != valence:
                raise SmilesError(
                    f"{a.symbol} with {a.hcount} explicit hydrogens totals "
                    f"{order_sum[i] + a.hcount}, expected valence {valence}",
                    a.pos,
                )
            implicit_h.append(a.hcount)
        else:
            h = valence - order_sum[i]
            if h < 0:
                raise SmilesError(
                    f"valence overflow on {a.symbol}: bonds total {order_sum[i]} "
                    f"but valence is {valence}",
                    a.pos,
                )
            implicit_h.append(h)

    return MolecularGraph(
        vocab, type_idx, implicit_h, [(b.u, b.v, b.order) for b in bonds]
    )


def _kekulize(
    atoms: list[_Atom],
    bonds: list[_Bond],
    vocab: AtomVocabulary,
    type_idx: list[int],
) -> None:
    """Resolve aromatic bonds to alternating single/double orders in place."""
    aromatic_bonds = [b for b in bonds if b.order is None]
    if not aromatic_bonds and not any(a.aromatic for a in atoms):
        return

    arom_adj: dict[int, list[_Bond]] = {}
    for b in aromatic_bonds:
        arom_adj.setdefault(b.u, []).append(b)
        arom_adj.setdefault(b.v, []).append(b)

    for i, a in enumerate(atoms):
        if a.aromatic and len(arom_adj.get(i, ())) < 2:
            raise SmilesError(
                f"aromatic atom {a.symbol.lower()} is not inside an aromatic ring", a.pos
            )

    fixed_sum = [0] * len(atoms)
    for b in bonds:
        if b.order is not None:
            fixed_sum[b.u] += b.order
            fixed_sum[b.v] += b.order

    # An aromatic atom takes part in exactly one double bond iff it still has
    # free valence once all its bonds count as single and explicit hydrogens
    # are reserved.
    wants: dict[int, bool] = {}
    for i in arom_adj:
        valence = vocab[type_idx[i]].valence
        used = fixed_sum[i] + len(arom_adj[i]) + (atoms[i].hcount or 0)
        if used > valence:
            raise SmilesError(
                f"valence overflow on aromatic {atoms[i].symbol.lower()}", atoms[i].pos
            )
        wants[i] = used < valence

    wanting = sorted(i for i, w in wants.items() if w)
    matched: dict[int, _Bond] = {}

    def match(pending: list[int]) -> bool:
        while pending and pending[0] in matched:
            pending = pending[1:]
        if not pending:
            return True
        v = pending[0]
        for b in arom_adj[v]:
            u = b.u if b.v == v else b.v
            if wants.get(u) and u not in matched:
                matched[v] = b
                matched[u] = b
                if match(pending[1:]):
                    return True
                del matched[v]
                del matched[u]
        return False

    if not match(wanting):
        first = atoms[wanting[0]] if wanting else atoms[aromatic_bonds[0].u]
        raise SmilesError("no kekulization exists for the aromatic system", first.pos)

    double_bonds = {id(b) for b in matched.values()}
    for b in aromatic_bonds:
        b.order = 2 if id(b) in double_bonds else 1
    for a in atoms:
        a.aromatic = False


# -- writing -----------------------------------------------------------------

_ORDER_MARK = {1: "", 2: "=", 3: "#"}


def write_smiles(graph: MolecularGraph) -> str:
    """Serialize a connected valence-valid graph; canonical order makes the
    output identical for isomorphic graphs."""
    if graph.num_atoms == 0:
        raise ValueError("cannot write an empty graph")
    if not graph.is_connected():
        raise ValueError("cannot write a disconnected graph")
    if not graph.is_valence_valid():
        raise ValueError("graph must be valence-valid before writing")

    g = graph.permuted(list(canonical_order(graph)))
    n = g.num_atoms

    # root at the first canonical atom of minimal degree so chains come out
    # unbranched; children in canonical order
    root = min(range(n), key=lambda v: (g.degree(v), v))
    parent: list[Optional[int]] = [None] * n
    visited = [False] * n
    tree_children: list[list[int]] = [[] for _ in range(n)]
    ring_edges: list[tuple[int, int]] = []
    seen_edges: set[tuple[int, int]] = set()
    stack = [root]
    visited[root] = True
    dfs_order = []
    while stack:
        v = stack.pop()
        dfs_order.append(v)
        for u, _ in sorted(g.neighbors(v), reverse=True):
            key = (v, u) if v < u else (u, v)
            if key in seen_edges:
                continue
            if visited[u]:
                seen_edges.add(key)
                ring_edges.append(key)
            else:
                seen_edges.add(key)
                visited[u] = True
                parent[u] = v
                tree_children[v].append(u)
                stack.append(u)
    # stack-based DFS reversed the child order; restore ascending
    for v in range(n):
        tree_children[v].sort()

    ring_at: dict[int, list[tuple[int, int]]] = {}
    for a, b in ring_edges:
        ring_at.setdefault(a, []).append((a, b))
        ring_at.setdefault(b, []).append((a, b))

    digit_of: dict[tuple[int, int], int] = {}
    free_digits = list(range(1, 100))
    out: list[str] = []

    def ring_token(edge: tuple[int, int]) -> str:
        if edge in digit_of:
            d = digit_of.pop(edge)
            free_digits.append(d)
            free_digits.sort()
        else:
            d = free_digits.pop(0)
            digit_of[edge] = d
        mark = _ORDER_MARK[g.bond_order(*edge)]
        return f"{mark}{d}" if d < 10 else f"{mark}%{d:02d}"

    def emit(v: int) -> None:
        out.append(g.atom_type(v).symbol)
        for edge in sorted(ring_at.get(v, ())):
            out.append(ring_token(edge))
        children = tree_children[v]
        for idx, c in enumerate(children):
            mark = _ORDER_MARK[g.bond_order(v, c)]
            if idx < len(children) - 1:
                out.append("(" + mark)
                emit(c)
                out.append(")")
            else:
                out.append(mark)
                emit(c)

    emit(root)
    return "".join(out)


# -- dataset files -------------------------------------------------------------


@dataclass
class DatasetRecord:
    graph: MolecularGraph
    prop: Optional[float]
    smiles: str
    line_no: int


@dataclass
class DatasetLoadResult:
    records: list[DatasetRecord]
    failures: list[tuple[int, str]]  # (line number, message)

    @property
    def graphs(self) -> list[MolecularGraph]:
        return [r.graph for r in self.records]


def load_dataset(path: str, vocab: AtomVocabulary) -> DatasetLoadResult:
    """Read `SMILES<TAB>property` records; '#' lines and blanks are skipped."""
    records: list[DatasetRecord] = []
    failures: list[tuple[int, str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            smiles, _, prop_text = line.partition("\t")
            smiles = smiles.strip()
            try:
                graph = parse_smiles(smiles, vocab)
                prop = float(prop_text) if prop_text.strip() else None
            except (SmilesError, ValueError) as exc:
                failures.append((line_no, str(exc)))
                continue
            records.append(DatasetRecord(graph, prop, smiles, line_no))
    return DatasetLoadResult(records, failures)
