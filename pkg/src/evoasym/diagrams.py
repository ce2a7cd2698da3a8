"""Bracket terms of the vacuum amplitude at orders 2 to 4.

The vacuum amplitude at order n is (-i)^n times the ordered integral of
<0|V_I(t1)...V_I(tn)|0>.  Wick's theorem turns it into a sum over leg
matchings; each matching fixes vertex energies E_1..E_n (sum zero) and the
ordered integral of exp(i sum E_k t_k) splits over compositions of n, one
composition per bracket term.
"""
from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .model import ConfigError, ModelSpec
from .numerics import UnsupportedOrderError, compositions, ordered_expansion


class UnsupportedModelError(ConfigError):
    pass


@dataclass(frozen=True)
class BracketTerm:
    """One composition (k1, ..., k_{l+1}) of the order n."""

    order: int
    composition: tuple

    def __post_init__(self):
        if sum(self.composition) != self.order or min(self.composition) < 1:
            raise ConfigError(f"{self.composition} is not a composition of {self.order}")

    @property
    def cuts(self) -> int:
        return len(self.composition) - 1

    @property
    def sign(self) -> int:
        return (-1) ** self.cuts

    @property
    def oscillatory(self) -> bool:
        """True when the first block carries exp(it sum E) with sum E != 0."""
        return self.composition[0] != self.order

    @property
    def blocks(self):
        out, a = [], 1
        for k in self.composition:
            out.append((a, a + k - 1))
            a += k
        return out

    @property
    def denominator_chain(self):
        """Vertex index sets (1-based) of the partial energy sums, Gamma-nesting order.

        For block [a..b] the sums run (b..b), (b-1..b), ..., (a..b); the full
        sum (1..n) vanishes for vacuum terms and is left out.
        """
        chain = []
        for a, b in self.blocks:
            for v in range(b, a - 1, -1):
                if (v, b) != (1, self.order):
                    chain.append(tuple(range(v, b + 1)))
        return chain

    def denominator(self, energies) -> complex:
        """sign / prod_chain (i * partial sum) for given vertex energies."""
        E = np.asarray(energies, dtype=float)
        den = 1.0 + 0j
        for s in self.denominator_chain:
            den *= 1j * E[np.array(s) - 1].sum()
        return self.sign / den


def enumerate_terms(n: int):
    if not 2 <= n <= 4:
        raise UnsupportedOrderError(f"bracket terms are available for orders 2..4, got {n}")
    return [BracketTerm(n, c) for c in compositions(n)]


# ---------------------------------------------------------------- Wick matchings

def _vertex_kinds(model: ModelSpec):
    """(label, leg kinds, amplitude array) per vertex type.

    Leg kinds: "a" annihilates, "c" creates, "f" is a field a + a*.
    """
    g = model.grid
    sw = np.sqrt(g.weights)
    if model.variant in ("pure_creation", "linear_coupling"):
        n = model.arity
        amp = model.kernel.values(g).astype(complex) * model.bose_factor
        for ax in range(n):
            shape = [1] * n
            shape[ax] = -1
            amp = amp * sw.reshape(shape)
        return [("cre", ("c",) * n, amp), ("ann", ("a",) * n, np.conj(amp))]
    if model.variant == "cubic_vacuum":
        amp = model.kernel.values(g).astype(complex)
        for ax in range(3):
            shape = [1] * 3
            shape[ax] = -1
            amp = amp * sw.reshape(shape)
        return [("phi", ("f",) * 3, amp)]
    raise UnsupportedModelError(f"no vacuum contraction pattern for {model.variant}")


def _matchings(legs):
    """Perfect matchings of legs [(vertex, kind)]; pairs (i, j) with i < j."""
    if not legs:
        yield ()
        return
    first, rest = 0, list(range(1, len(legs)))

    def rec(free):
        if not free:
            yield ()
            return
        i = free[0]
        u, ki = legs[i]
        for pos in range(1, len(free)):
            j = free[pos]
            w, kj = legs[j]
            if u == w:
                ok = ki == "f" and kj == "f"
            else:
                ok = ki in ("a", "f") and kj in ("c", "f")
            if ok:
                for tail in rec(free[1:pos] + free[pos + 1:]):
                    yield ((i, j),) + tail
    yield from rec([first] + rest)


def _connected(n, lines):
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x
    for u, w in lines:
        parent[find(u)] = find(w)
    return len({find(x) for x in range(n)}) == 1


@dataclass
class WickGroup:
    types: tuple
    lines: tuple          # ((u, slot_u), (w, slot_w)) per line, u <= w
    multiplicity: int
    connected: bool


def wick_groups(model: ModelSpec, n: int, connected: bool | None = None):
    """Vacuum matchings at order n grouped by vertex types and vertex-pair multiset."""
    kinds = _vertex_kinds(model)
    symmetric = model.kernel.symmetric
    groups = {}
    counts = Counter()
    for choice in itertools.product(range(len(kinds)), repeat=n):
        legs = [(u, k) for u, c in enumerate(choice) for k in kinds[c][1]]
        slot = [s for u, c in enumerate(choice) for s in range(len(kinds[c][1]))]
        for m in _matchings(legs):
            lines = tuple(((legs[i][0], slot[i]), (legs[j][0], slot[j])) for i, j in m)
            if symmetric:
                key = (choice, tuple(sorted((a[0], b[0]) for a, b in lines)))
            else:
                key = (choice, tuple(sorted(lines)))
            counts[key] += 1
            groups.setdefault(key, lines)
    out = []
    for key, lines in groups.items():
        conn = _connected(n, [(a[0], b[0]) for a, b in lines if a[0] != b[0]])
        if connected is None or conn == connected:
            out.append(WickGroup(key[0], lines, counts[key], conn))
    return out


def _group_paths(model, n, groups, limit=10_000_000):
    """Weights (P,) and vertex energies (P, n) for every mode assignment of every group."""
    kinds = _vertex_kinds(model)
    omega = model.omega()
    M = omega.size
    Ws, Es = [], []
    for grp in groups:
        L = len(grp.lines)
        if M ** L > limit:
            raise ConfigError(f"{M}^{L} mode assignments exceed the enumeration guard")
        modes = np.indices((M,) * L).reshape(L, -1)
        slots = {}
        E = np.zeros((n, modes.shape[1]))
        for li, ((u, su), (w, sw_)) in enumerate(grp.lines):
            slots[(u, su)] = modes[li]
            slots[(w, sw_)] = modes[li]
            if u != w:
                E[u] -= omega[modes[li]]
                E[w] += omega[modes[li]]
        W = np.full(modes.shape[1], grp.multiplicity * (-1j) ** n, dtype=complex)
        for u, c in enumerate(grp.types):
            amp = kinds[c][2]
            W = W * amp[tuple(slots[(u, s)] for s in range(amp.ndim))]
        keep = np.abs(W) > 0
        Ws.append(W[keep])
        Es.append(E[:, keep].T)
    if not Ws:
        return np.zeros(0, dtype=complex), np.zeros((0, n))
    return np.concatenate(Ws), np.concatenate(Es)


@dataclass
class VacuumDiagrams:
    """All order-n vacuum contributions of a model, resolved per bracket term."""

    order: int
    terms: list
    weights: np.ndarray = field(repr=False)
    energies: np.ndarray = field(repr=False)
    expansion: object = field(repr=False)
    connected: bool = True

    def _index(self, term):
        return self.expansion.comps.index(tuple(term.composition))

    def value(self, term, t):
        """Value of one bracket term at times t."""
        t = np.asarray(t, dtype=float)
        if self.weights.size == 0:
            return np.zeros(t.shape, dtype=complex)
        v = self.expansion.values(t)[self._index(term)]
        return np.tensordot(self.weights, v, axes=(0, 0))

    def polynomial(self, term):
        """Coefficients (low to high) of the non-oscillating part of one term."""
        if self.weights.size == 0:
            return np.zeros(self.order + 1, dtype=complex)
        return self.weights @ self.expansion.polynomial()[self._index(term)]

    def oscillating(self, term, t):
        t = np.asarray(t, dtype=float)
        if self.weights.size == 0:
            return np.zeros(t.shape, dtype=complex)
        return np.tensordot(self.weights, self.expansion.oscillating(t)[self._index(term)], axes=(0, 0))

    def total(self, t):
        return sum(self.value(term, t) for term in self.terms)


def vacuum_diagrams(model: ModelSpec, n: int, connected: bool = True) -> VacuumDiagrams:
    """Enumerate matchings (connected only, or all) and expand the ordered integrals."""
    terms = enumerate_terms(n)
    groups = wick_groups(model, n, connected=True if connected else None)
    W, E = _group_paths(model, n, groups)
    ex = ordered_expansion(E) if W.size else None
    return VacuumDiagrams(n, terms, W, E, ex, connected)


def evaluate_term(term: BracketTerm, model: ModelSpec, t, connected: bool = True):
    return vacuum_diagrams(model, term.order, connected).value(term, t)


@dataclass
class ABC:
    A: complex
    B: complex
    C: object = field(repr=False)
    poly: np.ndarray = field(repr=False, default=None)     # full non-oscillating polynomial
    per_term: dict = field(repr=False, default_factory=dict)


def split_ABC(diag: VacuumDiagrams) -> ABC:
    """A_n t + B_n + C_n(t): linear, constant and oscillating parts of the summed terms."""
    poly = sum(diag.polynomial(term) for term in diag.terms)
    per = {}
    for term in diag.terms:
        p = diag.polynomial(term)
        per[term.composition] = (complex(p[1]), complex(p[0]))

    def C(t):
        return sum(diag.oscillating(term, t) for term in diag.terms)
    return ABC(complex(poly[1]), complex(poly[0]), C, poly, per)


def term_table(diag: VacuumDiagrams, t: float):
    """JSON-ready rows {order, composition, sign, denominator_chain, value_re, value_im}."""
    rows = []
    for term in diag.terms:
        v = complex(diag.value(term, np.array(t)))
        rows.append({
            "order": term.order,
            "composition": list(term.composition),
            "sign": term.sign,
            "denominator_chain": [list(s) for s in term.denominator_chain],
            "value_re": v.real,
            "value_im": v.imag,
        })
    return rows
