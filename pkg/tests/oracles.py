"""Reference implementations used only by the tests.

They share no code with the package's engine: networks are described as
plain branch lists and solved with a sparse-tableau formulation through
``numpy.linalg.solve``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ldosim.netlist import Circuit, CurrentSource, Resistor, VoltageSource


@dataclass
class Branch:
    kind: str  # "R", "V" or "I"
    a: int  # node index, 0 is ground
    b: int
    value: float


def random_network(rng: np.random.Generator, max_nodes: int = 12) -> tuple[int, list[Branch]]:
    """Connected resistive network with a few V and I sources and no V-source loops."""
    n = int(rng.integers(2, max_nodes + 1))  # non-ground nodes
    branches: list[Branch] = []
    order = rng.permutation(n) + 1
    tree = []
    for k, node in enumerate(order):
        parent = 0 if k == 0 else int(order[rng.integers(0, k)])
        tree.append((parent, int(node)))
    n_v = int(rng.integers(1, 3))
    for k, (p, c) in enumerate(tree):
        if k < n_v:
            branches.append(Branch("V", c, p, float(rng.uniform(-10, 10))))
        else:
            branches.append(Branch("R", p, c, float(10 ** rng.uniform(1, 5))))
    for _ in range(int(rng.integers(0, 2 * n))):
        a, b = (int(x) for x in rng.choice(n + 1, 2, replace=False))
        branches.append(Branch("R", a, b, float(10 ** rng.uniform(1, 5))))
    for _ in range(int(rng.integers(0, 3))):
        a, b = (int(x) for x in rng.choice(n + 1, 2, replace=False))
        branches.append(Branch("I", a, b, float(rng.uniform(-1e-2, 1e-2))))
    return n, branches


def tableau_solve(n: int, branches: list[Branch]) -> tuple[np.ndarray, np.ndarray]:
    """Sparse-tableau solve: unknowns are node voltages e[1..n] and every branch current.

    KCL:   A i = 0
    KVL:   v = A^T e
    branch: R: v - R i = 0; V: v = E; I: i = J
    Returns (node voltages, branch currents a->b through the branch).
    """
    nb = len(branches)
    inc = np.zeros((n + 1, nb))
    for k, br in enumerate(branches):
        inc[br.a, k] += 1.0
        inc[br.b, k] -= 1.0
    a = inc[1:]  # drop ground
    size = n + nb
    m = np.zeros((size, size))
    rhs = np.zeros(size)
    m[:n, n:] = a
    for k, br in enumerate(branches):
        row = n + k
        v_row = a[:, k]  # v_k = e_a - e_b
        if br.kind == "R":
            m[row, :n] = v_row
            m[row, n + k] = -br.value
        elif br.kind == "V":
            m[row, :n] = v_row
            rhs[row] = br.value
        else:
            m[row, n + k] = 1.0
            rhs[row] = br.value
    x = np.linalg.solve(m, rhs)
    return x[:n], x[n:]


def to_circuit(n: int, branches: list[Branch]) -> Circuit:
    def node(i):
        return "0" if i == 0 else f"n{i}"

    els = []
    for k, br in enumerate(branches):
        if br.kind == "R":
            els.append(Resistor(f"R{k}", node(br.a), node(br.b), br.value))
        elif br.kind == "V":
            els.append(VoltageSource(f"V{k}", node(br.a), node(br.b), br.value))
        else:
            # the tableau current J flows a->b through the branch, which is the
            # SPICE convention for I n+ n-
            els.append(CurrentSource(f"I{k}", node(br.a), node(br.b), br.value))
    return Circuit(tuple(els))


def naive_assemble(circuit: Circuit, x: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Dense MNA for linear R/V/I/E circuits written directly from the textbook rules."""
    nodes = list(circuit.node_order)
    vsrc = [e.name for e in circuit.elements if type(e) is VoltageSource]
    idx = {nd: i for i, nd in enumerate(nodes)}
    size = len(nodes) + len(vsrc)
    a = np.zeros((size, size))
    b = np.zeros(size)

    def put(r, c, v):
        if r is not None and c is not None:
            a[r, c] += v

    for e in circuit.elements:
        p = idx.get(getattr(e, "n1", None))
        q = idx.get(getattr(e, "n2", None))
        if isinstance(e, Resistor):
            g = 1.0 / e.value
            put(p, p, g)
            put(q, q, g)
            put(p, q, -g)
            put(q, p, -g)
        elif isinstance(e, CurrentSource):
            if p is not None:
                b[p] -= e.dc
            if q is not None:
                b[q] += e.dc
        elif isinstance(e, VoltageSource):
            k = len(nodes) + vsrc.index(e.name)
            put(p, k, 1.0)
            put(q, k, -1.0)
            put(k, p, 1.0)
            put(k, q, -1.0)
            b[k] = e.dc
    return a, b, nodes + vsrc
