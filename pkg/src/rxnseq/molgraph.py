"""Molecular graphs: parsing, canonical emission, fingerprints.

The canonicalizer uses iterative neighborhood refinement of atom
invariants with tie-breaking by rank doubling; when a tied class cannot
be separated, every member is tried and the lexicographically smallest
rendering wins, so the result is independent of input atom order.
Stereo markers are carried through emission but excluded from ranking,
so two renderings of one molecule that differ only in stereo layout may
canonicalize differently; constitution is what is canonicalized.
"""

from __future__ import annotations

import copy
import enum
import random
from dataclasses import dataclass

from .smiles import (
    AROMATIC_SUBSET,
    ORGANIC_SUBSET,
    BracketFields,
    TokenKind,
    TokenSequence,
    ValidationFailure,
    _assemble,
    _events,
    bare_hydrogen_fill,
    format_bracket,
    tokenize,
    validate,
)

__all__ = [
    "Atom",
    "BondOrder",
    "CanonicalizationError",
    "Fingerprint",
    "GraphError",
    "InvalidStructure",
    "MolGraph",
    "ValenceError",
    "WidthMismatch",
    "canonical_smiles",
    "canonical_from_string",
    "effective_hcount",
    "morgan_fingerprint",
    "parse_graph",
    "parse_string",
    "random_smiles",
    "tanimoto",
]


class GraphError(ValueError):
    """Base class for graph construction and emission errors."""


class InvalidStructure(GraphError):
    def __init__(self, failures: tuple[ValidationFailure, ...]):
        detail = ", ".join(f"{f.kind.value}@{f.index}" for f in failures)
        super().__init__(f"structurally invalid token sequence: {detail}")
        self.failures = failures


class ValenceError(GraphError):
    """A bare atom carries more bond order than its largest valence."""


class CanonicalizationError(GraphError):
    """Tie-breaking budget exhausted (pathologically symmetric input)."""


class WidthMismatch(ValueError):
    """Fingerprints of different widths cannot be compared."""


class BondOrder(enum.Enum):
    SINGLE = "-"
    DOUBLE = "="
    TRIPLE = "#"
    AROMATIC = ":"
    UP = "/"
    DOWN = "\\"

    @property
    def valence(self) -> int:
        return {"-": 1, "=": 2, "#": 3, ":": 1, "/": 1, "\\": 1}[self.value]

    @property
    def rank_class(self) -> int:
        # stereo direction is excluded from ranking and fingerprints
        return {"-": 1, "/": 1, "\\": 1, "=": 2, "#": 3, ":": 4}[self.value]


_FLIP = {
    BondOrder.UP: BondOrder.DOWN,
    BondOrder.DOWN: BondOrder.UP,
}


@dataclass
class Atom:
    """One heavy (or explicitly written) atom.

    ``hcount`` None means "fill from the valence ladder at emission";
    bracket atoms always carry an explicit count.
    """

    element: str
    aromatic: bool = False
    charge: int = 0
    hcount: int | None = None
    isotope: int | None = None
    chirality: str | None = None


class MolGraph:
    """Undirected molecular graph with oriented directional bonds.

    Adjacency stores the bond order as seen from each endpoint, so an
    UP bond written a->b reads as DOWN from b; all other orders are
    symmetric.
    """

    __slots__ = ("atoms", "_adj")

    def __init__(self) -> None:
        self.atoms: list[Atom] = []
        self._adj: list[dict[int, BondOrder]] = []

    def __len__(self) -> int:
        return len(self.atoms)

    def add_atom(self, atom: Atom) -> int:
        self.atoms.append(atom)
        self._adj.append({})
        return len(self.atoms) - 1

    def add_bond(self, a: int, b: int, order: BondOrder) -> None:
        if a == b:
            raise GraphError("self bond")
        if b in self._adj[a]:
            raise GraphError(f"duplicate bond {a}-{b}")
        self._adj[a][b] = order
        self._adj[b][a] = _FLIP.get(order, order)

    def set_bond(self, a: int, b: int, order: BondOrder) -> None:
        if b in self._adj[a]:
            self._adj[a][b] = order
            self._adj[b][a] = _FLIP.get(order, order)
        else:
            self.add_bond(a, b, order)

    def remove_bond(self, a: int, b: int) -> None:
        if b not in self._adj[a]:
            raise GraphError(f"no bond {a}-{b}")
        del self._adj[a][b]
        del self._adj[b][a]

    def bond_order(self, a: int, b: int) -> BondOrder | None:
        """Order as seen from ``a``."""
        return self._adj[a].get(b)

    def neighbors(self, i: int) -> list[int]:
        return list(self._adj[i])

    def bonds(self) -> list[tuple[int, int, BondOrder]]:
        out = []
        for a, nbrs in enumerate(self._adj):
            for b, order in nbrs.items():
                if a < b:
                    out.append((a, b, order))
        return out

    def degree(self, i: int) -> int:
        return len(self._adj[i])

    def copy(self) -> "MolGraph":
        g = MolGraph()
        g.atoms = [copy.copy(a) for a in self.atoms]
        g._adj = [dict(nbrs) for nbrs in self._adj]
        return g

    def subgraph(self, indices: list[int]) -> "MolGraph":
        """Induced subgraph; atoms appear in the order given."""
        remap = {old: new for new, old in enumerate(indices)}
        g = MolGraph()
        for old in indices:
            g.add_atom(copy.copy(self.atoms[old]))
        for old in indices:
            for nbr, order in self._adj[old].items():
                if nbr in remap and old < nbr:
                    g.add_bond(remap[old], remap[nbr], order)
        return g

    def components(self) -> list[list[int]]:
        seen: set[int] = set()
        comps: list[list[int]] = []
        for start in range(len(self.atoms)):
            if start in seen:
                continue
            comp = [start]
            seen.add(start)
            queue = [start]
            while queue:
                u = queue.pop()
                for v in self._adj[u]:
                    if v not in seen:
                        seen.add(v)
                        comp.append(v)
                        queue.append(v)
            comps.append(sorted(comp))
        return comps


_BOND_OF_SYMBOL = {o.value: o for o in BondOrder}


def parse_graph(tokens: TokenSequence) -> MolGraph:
    """Build a graph from validated molecule tokens.

    Bond order left implicit becomes aromatic between two aromatic atoms
    and single otherwise.  Bare atoms whose bond order sum exceeds their
    largest valence raise :class:`ValenceError`.
    """
    result = validate(tokens)
    if not result.ok:
        raise InvalidStructure(result.failures)
    atom_events, bonds, _ = _assemble(_events(tokens))

    g = MolGraph()
    for tok_index in atom_events:
        t = tokens[tok_index]
        if t.kind is TokenKind.BRACKET_ATOM:
            f = t.bracket
            assert f is not None
            g.add_atom(
                Atom(
                    element=f.element.capitalize() if f.element != "*" else "*",
                    aromatic=f.aromatic,
                    charge=f.charge,
                    hcount=f.hcount,
                    isotope=f.isotope,
                    chirality=f.chirality,
                )
            )
        elif t.kind is TokenKind.AROMATIC_ATOM:
            g.add_atom(Atom(element=t.text.upper(), aromatic=True))
        else:
            g.add_atom(Atom(element=t.text))

    for bond in bonds:
        if bond.symbol is None:
            both_aromatic = g.atoms[bond.a].aromatic and g.atoms[bond.b].aromatic
            order = BondOrder.AROMATIC if both_aromatic else BondOrder.SINGLE
        else:
            order = _BOND_OF_SYMBOL[bond.symbol]
        g.add_bond(bond.a, bond.b, order)

    for i, atom in enumerate(g.atoms):
        if atom.hcount is None:
            effective_hcount(g, i)  # raises ValenceError on overfilled bare atoms
    return g


def parse_string(text: str) -> MolGraph:
    return parse_graph(tokenize(text))


def _order_sum(g: MolGraph, i: int) -> int:
    return sum(order.valence for order in g._adj[i].values())


def effective_hcount(g: MolGraph, i: int) -> int:
    """Hydrogen count: explicit, or valence fill for bare atoms."""
    atom = g.atoms[i]
    if atom.hcount is not None:
        return atom.hcount
    fill = bare_hydrogen_fill(atom.element, atom.aromatic, _order_sum(g, i))
    if fill is None:
        raise ValenceError(
            f"atom {i} ({atom.element}, bond order sum {_order_sum(g, i)}) "
            "exceeds its largest valence"
        )
    return fill


def _ring_atoms(g: MolGraph) -> list[bool]:
    """Atoms on at least one cycle: endpoints of non-bridge edges."""
    in_ring = [False] * len(g.atoms)
    for a, b, _ in g.bonds():
        # edge is in a cycle iff endpoints stay connected without it
        seen = {a}
        queue = [a]
        found = False
        while queue and not found:
            u = queue.pop()
            for v in g._adj[u]:
                if u == a and v == b:
                    continue
                if v == b:
                    found = True
                    break
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        if found:
            in_ring[a] = True
            in_ring[b] = True
    return in_ring


def _dense_ranks(keys: list) -> list[int]:
    order = {k: r for r, k in enumerate(sorted(set(keys)))}
    return [order[k] for k in keys]


def _refine(g: MolGraph, ranks: list[int]) -> list[int]:
    while True:
        keys = [
            (
                ranks[i],
                tuple(
                    sorted(
                        (order.rank_class, ranks[j]) for j, order in g._adj[i].items()
                    )
                ),
            )
            for i in range(len(g.atoms))
        ]
        new_ranks = _dense_ranks(keys)
        if new_ranks == ranks:
            return ranks
        ranks = new_ranks


def _initial_ranks(g: MolGraph) -> list[int]:
    in_ring = _ring_atoms(g)
    keys = [
        (
            a.element,
            a.isotope or 0,
            g.degree(i),
            a.charge,
            effective_hcount(g, i),
            a.aromatic,
            in_ring[i],
        )
        for i, a in enumerate(g.atoms)
    ]
    return _dense_ranks(keys)


_EMISSION_BUDGET = 20000


def _canonical_component(g: MolGraph) -> str:
    if len(g.atoms) == 0:
        return ""
    budget = [_EMISSION_BUDGET]
    best: list[str | None] = [None]

    def search(ranks: list[int]) -> None:
        classes: dict[int, list[int]] = {}
        for i, r in enumerate(ranks):
            classes.setdefault(r, []).append(i)
        tied = None
        for r in sorted(classes):
            if len(classes[r]) > 1:
                tied = classes[r]
                break
        if tied is None:
            budget[0] -= 1
            if budget[0] < 0:
                raise CanonicalizationError("tie-breaking budget exhausted")
            root = min(range(len(ranks)), key=lambda i: ranks[i])
            rendered = _render(g, root, lambda u, v: ranks[v])
            if best[0] is None or rendered < best[0]:
                best[0] = rendered
            return
        for atom in tied:
            doubled = [r * 2 for r in ranks]
            doubled[atom] -= 1
            search(_refine(g, doubled))

    search(_refine(g, _initial_ranks(g)))
    assert best[0] is not None
    return best[0]


def canonical_smiles(g: MolGraph) -> str:
    """One deterministic rendering per molecule, input-order independent.

    Components are canonicalized separately and joined with dots in
    lexicographic order.
    """
    parts = sorted(_canonical_component(g.subgraph(comp)) for comp in g.components())
    return ".".join(parts)


def canonical_from_string(text: str) -> str:
    return canonical_smiles(parse_string(text))


def random_smiles(g: MolGraph, seed: int) -> str:
    """A random but valid rendering; deterministic for a given seed."""
    rng = random.Random(seed)
    comps = g.components()
    rng.shuffle(comps)
    parts = []
    for comp in comps:
        sub = g.subgraph(comp)
        if len(sub) == 0:
            continue
        shuffle_pos = list(range(len(sub)))
        rng.shuffle(shuffle_pos)
        root = rng.randrange(len(sub))
        parts.append(_render(sub, root, lambda u, v: shuffle_pos[v]))
    return ".".join(parts)


def _atom_text(g: MolGraph, i: int) -> str:
    atom = g.atoms[i]
    bare_symbol = atom.element.lower() if atom.aromatic else atom.element
    bare_ok = (
        atom.charge == 0
        and atom.isotope is None
        and atom.chirality is None
        and (
            (atom.aromatic and bare_symbol in AROMATIC_SUBSET)
            or (not atom.aromatic and atom.element in ORGANIC_SUBSET)
        )
    )
    if bare_ok:
        if atom.hcount is None:
            return bare_symbol
        fill = bare_hydrogen_fill(atom.element, atom.aromatic, _order_sum(g, i))
        if fill == atom.hcount:
            return bare_symbol
    h = atom.hcount
    if h is None:
        h = effective_hcount(g, i)
    element = bare_symbol if atom.aromatic else atom.element
    return format_bracket(
        BracketFields(
            element=element,
            isotope=atom.isotope,
            chirality=atom.chirality,
            hcount=h,
            charge=atom.charge,
        )
    )


def _bond_text(g: MolGraph, u: int, v: int) -> str:
    """Bond symbol when traversing u -> v; '' when implied."""
    order = g._adj[u][v]
    both_aromatic = g.atoms[u].aromatic and g.atoms[v].aromatic
    if order is BondOrder.SINGLE:
        return "-" if both_aromatic else ""
    if order is BondOrder.AROMATIC:
        return "" if both_aromatic else ":"
    return order.value


def _render(g: MolGraph, root: int, key) -> str:
    """Emit one component by DFS; ``key(u, v)`` orders the neighbors of u."""
    parent: dict[int, int | None] = {root: None}
    preindex: dict[int, int] = {}
    children: dict[int, list[int]] = {i: [] for i in range(len(g.atoms))}
    ring_at: dict[int, list[tuple[int, int]]] = {i: [] for i in range(len(g.atoms))}
    ring_edges: set[frozenset[int]] = set()

    stack = [(root, iter(sorted(g.neighbors(root), key=lambda v: key(root, v))))]
    preindex[root] = 0
    while stack:
        u, it = stack[-1]
        advanced = False
        for v in it:
            if v not in preindex:
                parent[v] = u
                preindex[v] = len(preindex)
                children[u].append(v)
                stack.append((v, iter(sorted(g.neighbors(v), key=lambda w: key(v, w)))))
                advanced = True
                break
            if v != parent.get(u) and frozenset((u, v)) not in ring_edges:
                ring_edges.add(frozenset((u, v)))
        if not advanced:
            stack.pop()

    for edge in ring_edges:
        a, b = sorted(edge, key=lambda x: preindex[x])
        ring_at[a].append((preindex[b], b))
        ring_at[b].append((preindex[a], a))
    for lst in ring_at.values():
        lst.sort()

    marker_of: dict[frozenset[int], int] = {}
    free: list[int] = []
    next_marker = [1]

    def marker_text(m: int) -> str:
        if m < 10:
            return str(m)
        if m < 100:
            return f"%{m:02d}"
        raise GraphError("ring marker numbers exhausted")

    pieces: list[str] = []

    def write(u: int) -> None:
        pieces.append(_atom_text(g, u))
        for _, v in ring_at[u]:
            edge = frozenset((u, v))
            if edge in marker_of:
                m = marker_of.pop(edge)
                pieces.append(marker_text(m))
                free.append(m)
            else:
                m = min(free) if free else next_marker[0]
                if free:
                    free.remove(m)
                else:
                    next_marker[0] += 1
                marker_of[edge] = m
                pieces.append(_bond_text(g, u, v) + marker_text(m))
        kids = children[u]
        for v in kids[:-1]:
            pieces.append("(")
            pieces.append(_bond_text(g, u, v))
            write(v)
            pieces.append(")")
        if kids:
            v = kids[-1]
            pieces.append(_bond_text(g, u, v))
            write(v)

    write(root)
    return "".join(pieces)


_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class Fingerprint:
    bits: int
    nbits: int
    radius: int

    @property
    def popcount(self) -> int:
        return self.bits.bit_count()

    def on_bits(self) -> list[int]:
        return [i for i in range(self.nbits) if (self.bits >> i) & 1]


def morgan_fingerprint(g: MolGraph, radius: int = 2, nbits: int = 2048) -> Fingerprint:
    """Hashed circular fingerprint over atom environments.

    Radius-0 invariants cover element, isotope, degree, charge, hydrogen
    count and aromaticity; each iteration folds in sorted
    (bond class, neighbor invariant) pairs.  Every environment hash sets
    one bit (FNV-1a 64 modulo ``nbits``).
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if nbits <= 0 or nbits & (nbits - 1):
        raise ValueError("nbits must be a positive power of two")
    inv = [
        _fnv1a(
            "|".join(
                str(x)
                for x in (
                    a.element,
                    a.isotope or 0,
                    g.degree(i),
                    a.charge,
                    effective_hcount(g, i),
                    int(a.aromatic),
                )
            ).encode()
        )
        for i, a in enumerate(g.atoms)
    ]
    bits = 0
    for r in range(radius + 1):
        for h in inv:
            bits |= 1 << (h % nbits)
        if r == radius:
            break
        nxt = []
        for i in range(len(g.atoms)):
            env = sorted(
                (order.rank_class, inv[j]) for j, order in g._adj[i].items()
            )
            payload = f"{r + 1}|{inv[i]}|" + ",".join(f"{c}:{v}" for c, v in env)
            nxt.append(_fnv1a(payload.encode()))
        inv = nxt
    return Fingerprint(bits=bits, nbits=nbits, radius=radius)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """Bit-set similarity; two all-zero fingerprints count as identical."""
    if a.nbits != b.nbits:
        raise WidthMismatch(f"fingerprint widths differ: {a.nbits} vs {b.nbits}")
    union = (a.bits | b.bits).bit_count()
    if union == 0:
        return 1.0
    return (a.bits & b.bits).bit_count() / union
