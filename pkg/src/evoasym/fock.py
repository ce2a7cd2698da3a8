"""Truncated bosonic Fock spaces and model interactions as dense matrices."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .model import ConfigError, ModelSpec


class FockTooLargeError(ConfigError):
    pass


@dataclass(frozen=True, eq=False)
class FockSpec:
    """Modes with energies, per-mode cap n_max and total cap N_max.

    ``selector`` optionally keeps only states in a conserved sector.
    """

    omegas: tuple
    n_max: int
    N_max: int
    selector: Callable | None = field(default=None, repr=False)
    guard: int = 4096

    def __post_init__(self):
        if self.n_max < 2 or self.N_max < 2:
            raise ConfigError("Fock cutoffs must be >= 2")


class FockBasis:
    def __init__(self, spec: FockSpec):
        self.spec = spec
        M = len(spec.omegas)
        states = []
        for occ in _occupations(M, spec.n_max, spec.N_max):
            if spec.selector is None or spec.selector(occ):
                states.append(occ)
                if len(states) > spec.guard:
                    raise FockTooLargeError(
                        f"truncated Fock dimension exceeds {spec.guard}; lower n_max/N_max or use fewer modes"
                    )
        self.states = states
        self.index = {s: i for i, s in enumerate(states)}
        self.energies = np.array([sum(n * w for n, w in zip(s, spec.omegas)) for s in states], dtype=float)

    @property
    def dim(self):
        return len(self.states)

    def vacuum(self):
        return self.index[(0,) * len(self.spec.omegas)]

    def apply(self, coef, cre, ann):
        """Matrix of coef * a*_{cre...} a_{ann...} (normal ordered) on the basis."""
        out = np.zeros((self.dim, self.dim), dtype=complex)
        self.add_monomial(out, coef, cre, ann)
        return out

    def add_monomial(self, out, coef, cre, ann):
        for j, s in enumerate(self.states):
            occ = list(s)
            amp = coef
            for i in ann:
                if occ[i] == 0:
                    amp = 0
                    break
                amp *= math.sqrt(occ[i])
                occ[i] -= 1
            if amp == 0:
                continue
            for i in cre:
                occ[i] += 1
                amp *= math.sqrt(occ[i])
            k = self.index.get(tuple(occ))
            if k is not None:
                out[k, j] += amp


def _occupations(M, n_max, N_max):
    def rec(prefix, left):
        if len(prefix) == M:
            yield tuple(prefix)
            return
        for n in range(min(n_max, left) + 1):
            yield from rec(prefix + [n], left - n)
    yield from rec([], N_max)


# ---------------------------------------------------------------- model interactions

def interaction_monomials(model: ModelSpec, tol: float = 0.0):
    """Normal-ordered monomials (coef, creators, annihilators) of V on the grid modes.

    Discrete amplitudes reproduce the grid integrals: g = sqrt(prod w) v for
    the non-translation-invariant vertices, g = sqrt(w_p w_q / w_{p-q}) v for
    the momentum-conserving ones (two integration variables, three operators).  Lee species a, b, c
    occupy mode blocks [0, M), [M, 2M), [2M, 3M).
    """
    g = model.grid
    M = g.size
    sw = np.sqrt(g.weights)
    terms = []
    if model.variant in ("pure_creation", "linear_coupling"):
        n = model.arity
        v = model.kernel.values(g)
        amp = v * _outer_power(sw, n) * model.bose_factor
        for idx in itertools.product(range(M), repeat=n):
            a = complex(amp[idx])
            if abs(a) > tol:
                terms.append((a, idx, ()))
                terms.append((a.conjugate(), (), idx))
    elif model.variant in ("cubic_ti", "lee"):
        v = model.kernel.values(g)
        diff = model.lattice_difference()
        c = model.bose_factor
        for p in range(M):
            for q in range(M):
                r = diff[p, q]
                if r < 0:
                    continue
                a = complex(v[p, q] * sw[p] * sw[q] / sw[r]) * c
                if abs(a) <= tol:
                    continue
                if model.variant == "cubic_ti":
                    cre, ann = (q, r), (p,)
                else:
                    cre, ann = (r, M + q), (2 * M + p,)
                terms.append((a, cre, ann))
                terms.append((a.conjugate(), ann, cre))
    elif model.variant == "cubic_vacuum":
        v = model.kernel.values(g)
        amp = v * _outer_power(sw, 3)
        for idx in itertools.product(range(M), repeat=3):
            a = complex(amp[idx])
            if abs(a) <= tol:
                continue
            # phi_i phi_j phi_k = :phi phi phi: + contractions (<phi_x phi_y> = delta)
            for pattern in itertools.product((0, 1), repeat=3):
                cre = tuple(i for i, s in zip(idx, pattern) if s)
                ann = tuple(i for i, s in zip(idx, pattern) if not s)
                terms.append((a, cre, ann))
            i, j, k = idx
            for x, y, z in ((i, j, k), (i, k, j), (j, k, i)):
                if x == y:
                    terms.append((a, (z,), ()))
                    terms.append((a, (), (z,)))
    else:
        raise ConfigError(f"no Fock realization for {model.variant}")
    return terms


def _outer_power(x, n):
    out = x
    for _ in range(n - 1):
        out = np.multiply.outer(out, x)
    return out


def mode_energies(model: ModelSpec) -> np.ndarray:
    if model.variant == "lee":
        return np.concatenate([w.on_grid(model.grid) for w in model.lee_dispersions])
    return model.omega()


def mode_momenta(model: ModelSpec) -> np.ndarray:
    """Integer lattice momenta per mode (for sector selection)."""
    k = model.grid.lattice_index(model.grid.nodes)
    return np.concatenate([k, k, k]) if model.variant == "lee" else k


def momentum_selector(model: ModelSpec, total_index):
    """Keep states whose total lattice momentum equals the node index's momentum."""
    K = mode_momenta(model)
    target = model.grid.lattice_index(model.grid.nodes[total_index])

    def sel(occ):
        tot = np.zeros_like(target)
        for n, k in zip(occ, K):
            if n:
                tot = tot + n * k
        return bool(np.all(tot == target))
    return sel


def build_fock(model: ModelSpec, n_max: int, N_max: int, selector=None, guard: int = 4096):
    """Basis, diagonal H0 and the interaction matrix V (lambda = 1)."""
    spec = FockSpec(tuple(mode_energies(model)), n_max, N_max, selector, guard)
    basis = FockBasis(spec)
    V = np.zeros((basis.dim, basis.dim), dtype=complex)
    for coef, cre, ann in interaction_monomials(model):
        basis.add_monomial(V, coef, cre, ann)
    return basis, V


def one_particle_state(model: ModelSpec, basis: FockBasis, p_index: int) -> int:
    """Basis index of a single particle at node p (species c for the Lee model)."""
    M = model.grid.size
    occ = [0] * len(basis.spec.omegas)
    occ[(2 * M if model.variant == "lee" else 0) + p_index] = 1
    try:
        return basis.index[tuple(occ)]
    except KeyError:
        raise ConfigError("one-particle state is not in the truncated basis") from None


def lee_sector(model: ModelSpec, p_index: int):
    """The closed one-c sector {c(p), a(p-q) b(q)} of the Lee model.

    Returns (delta, g): delta_q = omega_a(p-q) + omega_b(q) - omega_c(p) and the
    couplings g_q = sqrt(w_q) v(p, q) of <a b_q|V|c(p)>.  From a b only c*ba acts,
    so the sector is invariant and U_11 reduces to an arrowhead matrix.
    """
    if model.variant != "lee":
        raise ConfigError("the closed one-particle sector exists for the Lee model")
    delta = model.pair_energies(p_index)
    ok = np.isfinite(delta)
    g = np.sqrt(model.grid.weights) * model.kernel.values(model.grid)[p_index]
    return delta[ok], g[ok].astype(complex)
