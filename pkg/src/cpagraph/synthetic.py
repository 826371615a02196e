"""Synthetic graphs: random molecules, the cardinality task and star probes."""

from __future__ import annotations

import numpy as np

from .graphio import ATOMIC_MASS, AtomRecord, BondRecord, MolGraph, perceive

_MAX_DEGREE = {"C": 4, "N": 3, "O": 2}


def random_molecule(gen: np.random.Generator, n: int, gid: str = "", ring_bonds: int = 1,
                    aromatic_ring: bool | None = None) -> MolGraph:
    """A random valence-respecting molecule of ``n`` heavy atoms.

    A random tree of C/N/O atoms, plus up to ``ring_bonds`` extra single bonds
    and optionally one fused benzene ring.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    elements = ["C"]
    edges: list[tuple[int, int]] = []
    deg = [0]
    orders: dict[tuple[int, int], str] = {}
    arom_atoms: set[int] = set()
    if aromatic_ring is None:
        aromatic_ring = n >= 8 and gen.random() < 0.5
    if aromatic_ring and n >= 6:
        elements = ["C"] * 6
        deg = [2] * 6
        for i in range(6):
            e = (min(i, (i + 1) % 6), max(i, (i + 1) % 6))
            edges.append(e)
            orders[e] = "aromatic"
        arom_atoms = set(range(6))
    while len(elements) < n:
        el = str(gen.choice(["C", "C", "C", "N", "O"]))
        open_ = [i for i in range(len(elements))
                 if deg[i] < _MAX_DEGREE[elements[i]] - (1 if i in arom_atoms else 0)]
        parent = int(gen.choice(open_))
        child = len(elements)
        elements.append(el)
        deg.append(1)
        deg[parent] += 1
        edges.append((parent, child))
        orders[(parent, child)] = "single"
    for _ in range(ring_bonds):
        free = [i for i in range(n) if deg[i] < _MAX_DEGREE[elements[i]] and i not in arom_atoms]
        if len(free) < 2:
            break
        u, v = sorted(int(x) for x in gen.choice(free, size=2, replace=False))
        if (u, v) in orders:
            continue
        edges.append((u, v))
        orders[(u, v)] = "single"
        deg[u] += 1
        deg[v] += 1
    atoms = []
    for i, el in enumerate(elements):
        used = deg[i] + (1 if i in arom_atoms else 0)
        atoms.append(AtomRecord(el, 0, _MAX_DEGREE[el] - used, i in arom_atoms, i in arom_atoms))
    bonds = [BondRecord(u, v, orders[(u, v)]) for u, v in edges]
    return perceive(atoms, bonds, gid)


def random_corpus(n_graphs: int, gen: np.random.Generator, n_range=(4, 20), prefix: str = "m"):
    return [random_molecule(gen, int(gen.integers(n_range[0], n_range[1] + 1)), f"{prefix}{i}",
                            ring_bonds=int(gen.integers(0, 3)))
            for i in range(n_graphs)]


def complete_graph(n: int, element: str = "C", mass: float | None = None, gid: str = "") -> MolGraph:
    """K_n with identical atoms; every support is the whole graph."""
    atoms = [AtomRecord(element, 0, 0, False, n >= 3, mass) for _ in range(n)]
    bonds = [BondRecord(u, v, "single", False, n >= 3) for u in range(n) for v in range(u + 1, n)]
    return MolGraph(gid, atoms, bonds)


def cardinality_task(n_graphs: int, gen: np.random.Generator, n_range=(17, 28), threshold: int = 23,
                     prefix: str = "k", jitter: float = 1e-3, elements=("C", "N", "O")):
    """Complete graphs labelled by whether the replicated support exceeds ``threshold``.

    Every node sees ``n`` identical values, so a softmax head outputs the same
    vector for every ``n``.  A per-graph element and mass jitter give each graph
    a distinct, label-independent embedding so ties cannot leak the size.
    """
    items = []
    for i in range(n_graphs):
        n = int(gen.integers(n_range[0], n_range[1] + 1))
        el = str(gen.choice(elements))
        mass = ATOMIC_MASS[el] + float(gen.uniform(-jitter, jitter))
        items.append((complete_graph(n, el, mass, f"{prefix}{i}"), float(n >= threshold)))
    return items


def star_graph(arity: int, gid: str = "", center: str = "C", leaf: str = "C") -> MolGraph:
    atoms = [AtomRecord(center, 0, 0)] + [AtomRecord(leaf, 0, 0) for _ in range(arity)]
    bonds = [BondRecord(0, j) for j in range(1, arity + 1)]
    return MolGraph(gid, atoms, bonds)


def path_graph(n: int, gid: str = "") -> MolGraph:
    atoms = [AtomRecord("C", 0, 2 if 0 < i < n - 1 else 3) for i in range(n)]
    return MolGraph(gid, atoms, [BondRecord(i, i + 1) for i in range(n - 1)])
