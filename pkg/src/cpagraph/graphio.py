"""Molecular graph model, a small SMILES reader/writer, corpus I/O and featurization."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ELEMENTS = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
BOND_ORDERS = ("single", "double", "triple", "aromatic")
BOND_ORDER_VALUE = {"single": 1, "double": 2, "triple": 3, "aromatic": 1}

# Allowed valences, smallest first.
VALENCES = {
    "B": (3,), "C": (4,), "N": (3,), "O": (2,), "P": (3, 5), "S": (2, 4, 6),
    "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,),
}
ATOMIC_MASS = {
    "B": 10.811, "C": 12.011, "N": 14.007, "O": 15.999, "P": 30.974,
    "S": 32.065, "F": 18.998, "Cl": 35.453, "Br": 79.904, "I": 126.904,
}
MAX_H = 8
DEGREE_BINS = 16


class GraphError(ValueError):
    pass


class SmilesError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


@dataclass(frozen=True)
class AtomRecord:
    element: str
    formal_charge: int = 0
    num_h: int = 0
    aromatic: bool = False
    in_ring: bool = False
    mass: float | None = None

    def __post_init__(self):
        if self.element not in ELEMENTS:
            raise GraphError(f"element {self.element!r} not in vocabulary")
        if not -2 <= self.formal_charge <= 2:
            raise GraphError(f"formal charge {self.formal_charge} outside [-2, 2]")
        if not 0 <= self.num_h <= MAX_H:
            raise GraphError(f"hydrogen count {self.num_h} outside [0, {MAX_H}]")
        if self.aromatic and not self.in_ring:
            raise GraphError("aromatic atom must be in a ring")
        if self.mass is None:
            object.__setattr__(self, "mass", ATOMIC_MASS[self.element])


@dataclass(frozen=True)
class BondRecord:
    u: int
    v: int
    order: str = "single"
    conjugated: bool = False
    in_ring: bool = False

    def __post_init__(self):
        if self.u == self.v:
            raise GraphError("bond endpoints must be distinct")
        if self.order not in BOND_ORDERS:
            raise GraphError(f"unknown bond order {self.order!r}")
        if self.u > self.v:
            u, v = self.v, self.u
            object.__setattr__(self, "u", u)
            object.__setattr__(self, "v", v)

    @property
    def endpoints(self) -> tuple[int, int]:
        return (self.u, self.v)


@dataclass
class MolGraph:
    id: str
    atoms: list[AtomRecord]
    bonds: list[BondRecord] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.atoms)
        if n < 1:
            raise GraphError("graph needs at least one atom")
        seen = set()
        for b in self.bonds:
            if not (0 <= b.u < n and 0 <= b.v < n):
                raise GraphError(f"bond ({b.u}, {b.v}) references a missing atom")
            if b.endpoints in seen:
                raise GraphError(f"duplicate bond ({b.u}, {b.v})")
            seen.add(b.endpoints)
            if b.order == "aromatic" and not (self.atoms[b.u].aromatic and self.atoms[b.v].aromatic):
                raise GraphError(f"aromatic bond ({b.u}, {b.v}) between non-aromatic atoms")

    @property
    def n(self) -> int:
        return len(self.atoms)

    def adjacency(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in self.atoms]
        for b in self.bonds:
            adj[b.u].append(b.v)
            adj[b.v].append(b.u)
        for row in adj:
            row.sort()
        return adj

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        for b in self.bonds:
            deg[b.u] += 1
            deg[b.v] += 1
        return deg

    def bond_map(self) -> dict[tuple[int, int], BondRecord]:
        return {b.endpoints: b for b in self.bonds}

    def subgraph(self, keep, new_id: str | None = None) -> tuple["MolGraph", np.ndarray]:
        """Induced subgraph on ``keep`` (reindexed in ascending original order)."""
        keep = np.array(sorted(set(int(k) for k in keep)), dtype=np.int64)
        remap = {int(old): new for new, old in enumerate(keep)}
        bonds = [
            BondRecord(remap[b.u], remap[b.v], b.order, b.conjugated, b.in_ring)
            for b in self.bonds if b.u in remap and b.v in remap
        ]
        atoms = [self.atoms[int(k)] for k in keep]
        return MolGraph(new_id or self.id, atoms, bonds), keep


# -- ring / conjugation perception ---------------------------------------------

def ring_bonds(n: int, edges: list[tuple[int, int]]) -> set[tuple[int, int]]:
    """Edges lying on at least one cycle (i.e. the non-bridges)."""
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for eid, (u, v) in enumerate(edges):
        adj[u].append((v, eid))
        adj[v].append((u, eid))
    disc = [-1] * n
    low = [0] * n
    bridges: set[int] = set()
    timer = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        disc[root] = low[root] = timer
        timer += 1
        stack = [(root, -1, iter(adj[root]))]
        while stack:
            node, parent_edge, it = stack[-1]
            advanced = False
            for nxt, eid in it:
                if eid == parent_edge:
                    continue
                if disc[nxt] == -1:
                    disc[nxt] = low[nxt] = timer
                    timer += 1
                    stack.append((nxt, eid, iter(adj[nxt])))
                    advanced = True
                    break
                low[node] = min(low[node], disc[nxt])
            if not advanced:
                stack.pop()
                if stack:
                    par = stack[-1][0]
                    low[par] = min(low[par], low[node])
                    if low[node] > disc[par]:
                        bridges.add(parent_edge)
    return {tuple(sorted(e)) for i, e in enumerate(edges) if i not in bridges}


def _conjugated(n: int, edges: list[tuple[int, int]], orders: list[str]) -> list[bool]:
    unsat = [o != "single" for o in orders]
    has_unsat = [False] * n
    for (u, v), un in zip(edges, unsat):
        if un:
            has_unsat[u] = has_unsat[v] = True
    incident: list[list[int]] = [[] for _ in range(n)]
    for eid, (u, v) in enumerate(edges):
        incident[u].append(eid)
        incident[v].append(eid)
    out = []
    for eid, ((u, v), o) in enumerate(zip(edges, orders)):
        if o == "aromatic":
            out.append(True)
        elif o == "single":
            out.append(has_unsat[u] and has_unsat[v])
        else:
            # multiple bond conjugated if a single bond links it to another unsaturation
            conj = False
            for end in (u, v):
                for other in incident[end]:
                    if other == eid or orders[other] != "single":
                        continue
                    a, b = edges[other]
                    far = b if a == end else a
                    if has_unsat[far]:
                        conj = True
            out.append(conj)
    return out


def perceive(atoms: list[AtomRecord], bonds: list[BondRecord], gid: str) -> MolGraph:
    """Recompute ring membership, aromaticity and conjugation from topology.

    Aromatic bonds that no longer lie on a cycle become single bonds, and an
    atom stays aromatic only while it keeps an aromatic ring bond.
    """
    n = len(atoms)
    edges = [b.endpoints for b in bonds]
    rings = ring_bonds(n, edges)
    orders = [b.order if (b.order != "aromatic" or b.endpoints in rings) else "single" for b in bonds]
    conj = _conjugated(n, edges, orders)
    ring_atoms = {a for e in rings for a in e}
    arom_atoms = {a for e, o in zip(edges, orders) if o == "aromatic" for a in e}
    new_bonds = [
        BondRecord(b.u, b.v, o, c, b.endpoints in rings) for b, o, c in zip(bonds, orders, conj)
    ]
    new_atoms = [
        AtomRecord(a.element, a.formal_charge, a.num_h, a.aromatic and i in arom_atoms, i in ring_atoms, a.mass)
        for i, a in enumerate(atoms)
    ]
    return MolGraph(gid, new_atoms, new_bonds)


# -- SMILES --------------------------------------------------------------------

_AROMATIC = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S"}
_BOND_SYMBOL = {"-": "single", "=": "double", "#": "triple", ":": "aromatic"}
_PI_DONOR = {"B", "C", "N"}


def _bond_sum(element: str, aromatic: bool, orders: list[str]) -> int:
    total = sum(BOND_ORDER_VALUE[o] for o in orders)
    if aromatic and element in _PI_DONOR and any(o == "aromatic" for o in orders):
        total += 1
    return total


def valence_ok(element: str, aromatic: bool, orders: list[str], num_h: int, charge: int = 0) -> bool:
    """Whether explicit hydrogens and bonds fit an allowed valence.

    An aromatic atom may or may not donate its extra pi electron (pyridine-type
    versus pyrrole-type nitrogen), so both readings are accepted.
    """
    raw = sum(BOND_ORDER_VALUE[o] for o in orders) + num_h
    totals = {raw, _bond_sum(element, aromatic, orders) + num_h}
    if charge:
        return min(totals) <= max(VALENCES[element]) + abs(charge)
    return any(t in VALENCES[element] for t in totals)


def implicit_hydrogens(element: str, aromatic: bool, orders: list[str]) -> int | None:
    """Hydrogens filling the smallest feasible valence, or None on overflow."""
    used = _bond_sum(element, aromatic, orders)
    for v in VALENCES[element]:
        if v >= used:
            return v - used
    return None


def parse_smiles(text: str, gid: str = "") -> MolGraph:
    """Parse the supported SMILES subset into a :class:`MolGraph`.

    Supported: organic-subset and bracket atoms (charge and H count), bonds
    ``- = # :``, branches, ring-closure digits 1-9, lowercase aromatic atoms and
    ``.`` separated fragments.  Stereo, isotopes and ``%nn`` closures are rejected.
    """
    if not text or not text.strip():
        raise SmilesError("empty SMILES", 0)
    text = text.strip()
    atoms: list[dict] = []
    bonds: list[list] = []  # [u, v, order or None, offset]
    branch: list[int] = []
    rings: dict[int, tuple[int, str | None, int]] = {}
    prev: int | None = None
    pending: str | None = None
    pos = 0

    def add_atom(spec: dict, offset: int):
        nonlocal prev, pending
        atoms.append(spec)
        idx = len(atoms) - 1
        if prev is not None:
            bonds.append([prev, idx, pending, offset])
        prev = idx
        pending = None

    while pos < len(text):
        ch = text[pos]
        if ch in _BOND_SYMBOL:
            if pending is not None or prev is None:
                raise SmilesError(f"unexpected bond symbol {ch!r}", pos)
            pending = _BOND_SYMBOL[ch]
            pos += 1
        elif ch == "(":
            if prev is None or pending is not None:
                raise SmilesError("branch without a preceding atom", pos)
            branch.append(prev)
            pos += 1
        elif ch == ")":
            if not branch:
                raise SmilesError("unbalanced parenthesis ')'", pos)
            if pending is not None:
                raise SmilesError("bond symbol before ')'", pos)
            prev = branch.pop()
            pos += 1
        elif ch == ".":
            if pending is not None or branch:
                raise SmilesError("fragment separator inside a branch or after a bond", pos)
            prev = None
            pos += 1
        elif ch.isdigit():
            if ch == "0":
                raise SmilesError("ring closure digit 0 unsupported", pos)
            if prev is None:
                raise SmilesError("ring closure without an atom", pos)
            d = int(ch)
            if d in rings:
                other, order, _ = rings.pop(d)
                if other == prev:
                    raise SmilesError("ring closure to the same atom", pos)
                if order is not None and pending is not None and order != pending:
                    raise SmilesError("conflicting ring-closure bond orders", pos)
                bonds.append([other, prev, pending or order, pos])
            else:
                rings[d] = (prev, pending, pos)
            pending = None
            pos += 1
        elif ch == "%":
            raise SmilesError("multi-digit ring closures unsupported", pos)
        elif ch == "[":
            end = text.find("]", pos)
            if end < 0:
                raise SmilesError("unterminated bracket atom", pos)
            add_atom(_parse_bracket(text[pos + 1:end], pos), pos)
            pos = end + 1
        elif ch in "/\\@":
            raise SmilesError("stereo markers unsupported", pos)
        else:
            two = text[pos:pos + 2]
            if two in ("Cl", "Br"):
                add_atom({"el": two, "arom": False, "chg": 0, "h": None, "off": pos}, pos)
                pos += 2
            elif ch in ELEMENTS:
                add_atom({"el": ch, "arom": False, "chg": 0, "h": None, "off": pos}, pos)
                pos += 1
            elif ch in _AROMATIC:
                add_atom({"el": _AROMATIC[ch], "arom": True, "chg": 0, "h": None, "off": pos}, pos)
                pos += 1
            else:
                raise SmilesError(f"unknown atom symbol {ch!r}", pos)

    if branch:
        raise SmilesError("unbalanced parenthesis '('", len(text))
    if rings:
        d, (_, _, off) = min(rings.items(), key=lambda kv: kv[1][2])
        raise SmilesError(f"unclosed ring closure {d}", off)
    if pending is not None:
        raise SmilesError("dangling bond symbol", len(text) - 1)
    if not atoms:
        raise SmilesError("no atoms", 0)

    seen = set()
    records: list[BondRecord] = []
    for u, v, order, off in bonds:
        key = (min(u, v), max(u, v))
        if key in seen:
            raise SmilesError("duplicate bond", off)
        seen.add(key)
        if order is None:
            order = "aromatic" if atoms[u]["arom"] and atoms[v]["arom"] else "single"
        if order == "aromatic" and not (atoms[u]["arom"] and atoms[v]["arom"]):
            raise SmilesError("aromatic bond between non-aromatic atoms", off)
        records.append(BondRecord(u, v, order))

    orders_at: list[list[str]] = [[] for _ in atoms]
    for b in records:
        orders_at[b.u].append(b.order)
        orders_at[b.v].append(b.order)
    rings_set = ring_bonds(len(atoms), [b.endpoints for b in records])
    ring_atoms = {a for e in rings_set for a in e}

    atom_records = []
    for i, spec in enumerate(atoms):
        el, arom = spec["el"], spec["arom"]
        if arom and i not in ring_atoms:
            raise SmilesError("aromatic atom outside a ring", spec["off"])
        if spec["h"] is None:
            nh = implicit_hydrogens(el, arom, orders_at[i])
            if nh is None:
                raise SmilesError(f"valence overflow on {el}", spec["off"])
        else:
            nh = spec["h"]
            limit = max(VALENCES[el]) + abs(spec["chg"])
            # an explicit H on an aromatic atom marks a pyrrole-type donor
            used = sum(BOND_ORDER_VALUE[o] for o in orders_at[i]) if nh else _bond_sum(el, arom, orders_at[i])
            if used + nh > limit:
                raise SmilesError(f"valence overflow on {el}", spec["off"])
        atom_records.append(AtomRecord(el, spec["chg"], nh, arom, i in ring_atoms))
    return perceive(atom_records, records, gid or text)


def _parse_bracket(body: str, offset: int) -> dict:
    i = 0
    if body[:1].isdigit():
        raise SmilesError("isotopes unsupported", offset + 1)
    if body[i:i + 2] in ("Cl", "Br"):
        el, arom, i = body[i:i + 2], False, 2
    elif body[i:i + 1] in ELEMENTS:
        el, arom, i = body[i], False, 1
    elif body[i:i + 1] in _AROMATIC:
        el, arom, i = _AROMATIC[body[i]], True, 1
    else:
        raise SmilesError(f"unknown atom symbol in [{body}]", offset + 1)
    if "@" in body:
        raise SmilesError("stereo markers unsupported", offset + 1 + body.index("@"))
    h = 0
    if body[i:i + 1] == "H":
        i += 1
        h = 1
        if body[i:i + 1].isdigit():
            h = int(body[i])
            i += 1
    chg = 0
    if body[i:i + 1] in ("+", "-"):
        sign = 1 if body[i] == "+" else -1
        i += 1
        if body[i:i + 1].isdigit():
            chg = sign * int(body[i])
            i += 1
        else:
            chg = sign
            while body[i:i + 1] == body[i - 1:i] and body[i:i + 1] in ("+", "-"):
                chg += sign
                i += 1
    if i != len(body):
        raise SmilesError(f"unsupported bracket atom [{body}]", offset + 1 + i)
    if not -2 <= chg <= 2:
        raise SmilesError("formal charge outside [-2, 2]", offset)
    return {"el": el, "arom": arom, "chg": chg, "h": h, "off": offset}


_BOND_CHAR = {"single": "-", "double": "=", "triple": "#", "aromatic": ":"}


def _atom_token(g: MolGraph, i: int, orders: list[str]) -> str:
    a = g.atoms[i]
    sym = a.element.lower() if a.aromatic else a.element
    if a.formal_charge == 0 and implicit_hydrogens(a.element, a.aromatic, orders) == a.num_h:
        return sym
    out = "[" + sym
    if a.num_h:
        out += "H" + (str(a.num_h) if a.num_h > 1 else "")
    if a.formal_charge:
        out += ("+" if a.formal_charge > 0 else "-") + (str(abs(a.formal_charge)) if abs(a.formal_charge) > 1 else "")
    return out + "]"


def to_smiles(g: MolGraph, return_order: bool = False):
    """Write a SMILES string (DFS from the lowest index of each fragment).

    With ``return_order`` the atom visit order is returned too: atom ``k`` of the
    re-parsed string corresponds to atom ``order[k]`` of ``g``.
    """
    adj = g.adjacency()
    bmap = g.bond_map()
    orders_at = [[bmap[(min(i, j), max(i, j))].order for j in adj[i]] for i in range(g.n)]
    visited = [False] * g.n
    order: list[int] = []
    pieces: list[str] = []

    def bond_text(u: int, v: int) -> str:
        b = bmap[(min(u, v), max(u, v))]
        au, av = g.atoms[u].aromatic, g.atoms[v].aromatic
        if b.order == "aromatic":
            return ""
        if b.order == "single":
            return "-" if (au and av) else ""
        return _BOND_CHAR[b.order]

    for root in range(g.n):
        if visited[root]:
            continue
        # first pass: DFS tree and ring-closure edges
        parent = {root: None}
        tree_children: dict[int, list[int]] = {}
        closures: dict[int, list[int]] = {}
        stack = [root]
        seen_local = []
        while stack:
            u = stack.pop()
            if visited[u]:
                continue
            visited[u] = True
            seen_local.append(u)
            tree_children.setdefault(u, [])
            p = parent[u]
            if p is not None:
                tree_children[p].append(u)
            for v in reversed(adj[u]):
                if not visited[v]:
                    parent[v] = u
                    stack.append(v)
        tree_edges = {(min(u, p), max(u, p)) for u, p in parent.items() if p is not None}
        for u in seen_local:
            for v in adj[u]:
                e = (min(u, v), max(u, v))
                if e not in tree_edges and u < v:
                    closures.setdefault(u, []).append(v)
                    closures.setdefault(v, []).append(u)
        # second pass: emit
        open_digits: dict[tuple[int, int], int] = {}
        free = list(range(1, 10))
        if pieces:
            pieces.append(".")

        def emit(u: int):
            order.append(u)
            pieces.append(_atom_token(g, u, orders_at[u]))
            for v in sorted(closures.get(u, [])):
                e = (min(u, v), max(u, v))
                if e in open_digits:
                    d = open_digits.pop(e)
                    pieces.append(bond_text(u, v) + str(d))
                    free.append(d)
                    free.sort()
                else:
                    if not free:
                        raise GraphError("more than 9 simultaneous ring closures")
                    d = free.pop(0)
                    open_digits[e] = d
                    pieces.append(bond_text(u, v) + str(d))
            kids = tree_children.get(u, [])
            for k, c in enumerate(kids):
                last = k == len(kids) - 1
                if not last:
                    pieces.append("(")
                pieces.append(bond_text(u, c))
                emit(c)
                if not last:
                    pieces.append(")")

        import sys
        limit = sys.getrecursionlimit()
        sys.setrecursionlimit(max(limit, 4 * g.n + 100))
        try:
            emit(root)
        finally:
            sys.setrecursionlimit(limit)
    text = "".join(pieces)
    return (text, order) if return_order else text


# -- corpus I/O -------------------------------------------------------------------

def graph_to_record(g: MolGraph) -> dict:
    return {
        "id": g.id,
        "atoms": [
            {"el": a.element, "chg": a.formal_charge, "nH": a.num_h, "arom": a.aromatic,
             "ring": a.in_ring, "mass": a.mass}
            for a in g.atoms
        ],
        "bonds": [[b.u, b.v, {"order": b.order, "conj": b.conjugated, "ring": b.in_ring}] for b in g.bonds],
    }


def graph_from_record(rec: dict) -> MolGraph:
    if not isinstance(rec, dict):
        raise GraphError("record must be an object")
    missing = {"id", "atoms", "bonds"} - rec.keys()
    if missing:
        raise GraphError(f"missing fields {sorted(missing)}")
    atoms = []
    for a in rec["atoms"]:
        atoms.append(AtomRecord(
            element=a["el"], formal_charge=int(a["chg"]), num_h=int(a["nH"]),
            aromatic=bool(a["arom"]), in_ring=bool(a["ring"]), mass=float(a["mass"]),
        ))
    bonds = []
    for entry in rec["bonds"]:
        u, v, attrs = entry
        bonds.append(BondRecord(int(u), int(v), attrs["order"], bool(attrs["conj"]), bool(attrs["ring"])))
    return MolGraph(str(rec["id"]), atoms, bonds)


@dataclass
class LoadError:
    line: int
    message: str


def load_corpus(path, mode: str = "json") -> tuple[list[MolGraph], list[LoadError]]:
    """Read one graph per line; bad lines go to the error report, in order."""
    if mode not in ("json", "smiles"):
        raise ValueError(f"unknown corpus mode {mode!r}")
    text = Path(path).read_text()
    graphs: list[MolGraph] = []
    errors: list[LoadError] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or (mode == "smiles" and line.startswith("#")):
            continue
        try:
            if mode == "json":
                graphs.append(graph_from_record(json.loads(line)))
            else:
                parts = line.split()
                gid = parts[1] if len(parts) > 1 else f"line{lineno}"
                graphs.append(parse_smiles(parts[0], gid))
        except (ValueError, KeyError, TypeError) as exc:
            errors.append(LoadError(lineno, f"{type(exc).__name__}: {exc}"))
    return graphs, errors


def write_corpus(path, graphs) -> None:
    with open(path, "w") as fh:
        for g in graphs:
            fh.write(json.dumps(graph_to_record(g), sort_keys=True) + "\n")


# -- featurization -----------------------------------------------------------------

NODE_FIELDS = ("element", "degree", "charge", "num_h", "aromatic", "in_ring")
BOND_FIELDS = ("order", "conjugated", "in_ring")


@dataclass(frozen=True)
class FeatureSchema:
    node_vocab: tuple = (
        ("element", len(ELEMENTS)), ("degree", DEGREE_BINS), ("charge", 5),
        ("num_h", MAX_H + 1), ("aromatic", 2), ("in_ring", 2),
    )
    bond_vocab: tuple = (("order", len(BOND_ORDERS)), ("conjugated", 2), ("in_ring", 2))
    continuous: tuple = ("mass",)

    def node_sizes(self) -> list[int]:
        return [s for _, s in self.node_vocab]

    def bond_sizes(self) -> list[int]:
        return [s for _, s in self.bond_vocab]


DEFAULT_SCHEMA = FeatureSchema()


@dataclass(frozen=True)
class CorpusStats:
    mean: dict
    std: dict

    @staticmethod
    def identity() -> "CorpusStats":
        return CorpusStats({"mass": 0.0}, {"mass": 1.0})

    def to_dict(self) -> dict:
        return {"mean": dict(self.mean), "std": dict(self.std)}

    @staticmethod
    def from_dict(d: dict) -> "CorpusStats":
        return CorpusStats(dict(d["mean"]), dict(d["std"]))


def compute_corpus_stats(graphs) -> CorpusStats:
    """Population mean/std of continuous atom fields over every atom."""
    masses = np.array([a.mass for g in graphs for a in g.atoms], dtype=np.float64)
    if masses.size == 0:
        raise GraphError("cannot compute statistics of an empty corpus")
    mu = float(masses.mean())
    sd = float(np.sqrt(((masses - mu) ** 2).mean()))
    if not sd > 0.0:
        sd = 1.0
    return CorpusStats({"mass": mu}, {"mass": sd})


@dataclass
class NodeFeatures:
    categorical: np.ndarray  # (N, len(NODE_FIELDS)) int
    continuous: np.ndarray  # (N, 1) float


def featurize(g: MolGraph, schema: FeatureSchema = DEFAULT_SCHEMA, stats: CorpusStats | None = None,
              degree_bins: np.ndarray | None = None):
    """Categorical index matrix, z-scored mass column, and a bond-feature map.

    ``degree_bins`` overrides the degrees derived from ``g`` (used when a view
    inherits its topology from the original graph).
    """
    from .topo import degree_bin

    stats = stats or CorpusStats.identity()
    mu, sd = stats.mean["mass"], stats.std["mass"]
    if not (math.isfinite(mu) and math.isfinite(sd)) or sd <= 0:
        raise GraphError("corpus statistics must be finite with positive std")
    if degree_bins is None:
        degree_bins = np.array([degree_bin(int(d)) for d in g.degrees()], dtype=np.int64)
    cat = np.zeros((g.n, len(NODE_FIELDS)), dtype=np.int64)
    cont = np.zeros((g.n, 1), dtype=np.float64)
    for i, a in enumerate(g.atoms):
        cat[i] = (ELEMENTS.index(a.element), degree_bins[i], a.formal_charge + 2, a.num_h,
                  int(a.aromatic), int(a.in_ring))
        cont[i, 0] = (a.mass - mu) / sd
    sizes = np.array(schema.node_sizes())
    if np.any(cat < 0) or np.any(cat >= sizes[None, :]):
        raise GraphError("node feature index outside schema vocabulary")
    bsizes = np.asarray(schema.bond_sizes())
    bidx = np.array([(BOND_ORDERS.index(b.order), int(b.conjugated), int(b.in_ring)) for b in g.bonds],
                    dtype=np.int64).reshape(-1, len(BOND_FIELDS))
    if np.any(bidx >= bsizes[None, :]):
        raise GraphError("bond feature index outside schema vocabulary")
    edges = {b.endpoints: bidx[e] for e, b in enumerate(g.bonds)}
    return NodeFeatures(cat, cont), edges
