"""The Gamma-operation and the perturbative coefficients A, B, C(t)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .fock import build_fock, lee_sector, momentum_selector, one_particle_state
from .model import ConfigError, ModelSpec, MomentumGrid, sphere_area, _radial_rule
from .numerics import (
    EpsilonSchedule,
    LimitResult,
    NumericError,
    PanelGrid,
    SingularDenominatorError,
    ieps_limit,
    ordered_expansion,
)


class RouteMismatchError(ConfigError):
    pass


class LimitMayNotExistError(ConfigError):
    pass


# ---------------------------------------------------------------- kernels

@dataclass(frozen=True, eq=False)
class GridKernel:
    """Kernel samples with their quadrature weights and attached vertex energy."""

    samples: np.ndarray
    energy: np.ndarray
    weights: np.ndarray
    arity: int = 1

    def __post_init__(self):
        if not (self.samples.shape == self.energy.shape == self.weights.shape):
            raise ConfigError("samples, energy and weights must share a shape")
        if not np.all(np.isfinite(self.samples)):
            raise NumericError("non-finite kernel samples")

    def with_samples(self, s):
        return GridKernel(s, self.energy, self.weights, self.arity)


def gamma_apply(k: GridKernel, power: int = 1, eps: float = 0.0, sign: int = +1) -> GridKernel:
    """Divide samples by (E + i sign eps)^power.

    sign=+1 is the adiabatic (+i0) prescription of the Gamma-operation; the
    decay routes call it with sign=-1, which is what the time-domain integrals
    produce (see notes on the i0 sign).
    """
    if power not in (1, 2, 3):
        raise ConfigError("power must be 1, 2 or 3")
    if eps < 0:
        raise ConfigError("eps must be >= 0")
    E = k.energy
    if eps == 0:
        small = np.flatnonzero(np.abs(E).ravel() < 1e-12)
        if small.size:
            node = np.unravel_index(int(small[0]), E.shape)
            raise SingularDenominatorError(f"vanishing energy denominator at node {node}")
        den = E
    else:
        den = E + 1j * sign * eps
    return k.with_samples(k.samples / den ** power)


def pair(k1: GridKernel, k2: GridKernel) -> complex:
    """sum w conj(k1) k2, the one-loop contraction <V Gamma(V)> on the grid."""
    return complex(np.sum(k1.weights * np.conj(k1.samples) * k2.samples))


def vertex_kernel(model: ModelSpec, p: int | None = None) -> GridKernel:
    """The order-2 vertex kernel: vacuum tuples, or (fixed p, q) for one particle."""
    g = model.grid
    if model.variant in ("pure_creation", "linear_coupling"):
        n = model.arity
        if g.size ** n > 5_000_000:
            raise ConfigError("grid too large for the vacuum tuple kernel")
        v = model.kernel.values(g)
        w = g.weights
        W, E = w, model.omega()
        for _ in range(n - 1):
            W = np.multiply.outer(W, w)
            E = np.add.outer(E, model.omega())
        return GridKernel(v, np.broadcast_to(E, v.shape).copy(), np.broadcast_to(W, v.shape).copy(), n)
    if model.variant in ("cubic_ti", "lee"):
        if p is None:
            raise ConfigError("one-particle kernels need a momentum node p")
        E = model.pair_energies(p)
        ok = np.isfinite(E)
        v = model.kernel.values(g)[p][ok]
        return GridKernel(v, E[ok], g.weights[ok], 2)
    raise ConfigError(f"no order-2 kernel for {model.variant}")


# ---------------------------------------------------------------- coefficients

@dataclass
class PredictionCoefficients:
    flavor: str                      # "vacuum" or "one_particle"
    order: int
    A: complex
    B: complex
    C: Callable = field(repr=False)
    coupling: float = 0.0
    p: int | None = None
    extra: dict = field(default_factory=dict, repr=False)


def _oscillator(amps, freqs):
    amps, freqs = np.asarray(amps), np.asarray(freqs)

    def C(t):
        t = np.asarray(t, dtype=float)
        return np.exp(-1j * np.multiply.outer(t, freqs)) @ amps
    return C


def vacuum_order2(model: ModelSpec) -> PredictionCoefficients:
    """A2 = i sum |v|^2/E, B2 = -sum |v|^2/E^2, C2(t) = sum |v|^2/E^2 exp(-itE)."""
    if model.variant not in ("pure_creation", "linear_coupling"):
        raise ConfigError("vacuum order 2 needs pure_creation or linear_coupling")
    if model.decaying:
        raise RouteMismatchError("decaying model: use decay_order2")
    k = vertex_kernel(model)
    gk = gamma_apply(k, 1)
    A = 1j * pair(k, gk)
    B = -pair(gk, gk)
    amps = (k.weights * np.abs(gk.samples) ** 2).ravel()
    return PredictionCoefficients("vacuum", 2, A, B, _oscillator(amps, k.energy.ravel()),
                                  model.coupling, extra={"amps": amps, "freqs": k.energy.ravel()})


def vacuum_prediction(coeffs, t, lam: float | None = None):
    """exp(lam^2 (A t + B + C(t))), or exp(lam^2 (t A2(t) + B2(t))) for decay coefficients."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ConfigError("t must be >= 0")
    if isinstance(coeffs, DecayCoefficients):
        lam = coeffs.coupling if lam is None else lam
        return np.exp(lam ** 2 * (t * coeffs.A2_t(t) + coeffs.B2_t(t)))
    lam = coeffs.coupling if lam is None else lam
    return np.exp(lam ** 2 * (coeffs.A * t + coeffs.B + coeffs.C(t)))


# ---------------------------------------------------------------- decay case

def graded_rule(a: float, b: float, roots=(), panel: int = 16, levels: int = 40,
                ratio: float = 0.6, base: int = 64):
    """Composite Gauss-Legendre on [a, b], panels graded geometrically toward roots.

    Resolves 1/(x - x0 - i eps) down to eps ~ ratio^levels * scale.
    """
    marks = {a, b}
    for x0 in roots:
        if a < x0 < b:
            marks.add(x0)
            for side, lim in ((-1, a), (1, b)):
                d = abs(lim - x0)
                for j in range(1, levels + 1):
                    marks.add(x0 + side * d * ratio ** j)
    marks.update(np.linspace(a, b, base + 1))
    edges = np.array(sorted(marks))
    edges = edges[np.concatenate([[True], np.diff(edges) > 1e-15 * max(1.0, abs(b))])]
    x, w = np.polynomial.legendre.leggauss(panel)
    lo, hi = edges[:-1, None], edges[1:, None]
    nodes = (0.5 * (hi - lo) * x + 0.5 * (hi + lo)).ravel()
    weights = (0.5 * (hi - lo) * w).ravel()
    return nodes, weights


class QuadraticPhase:
    """F(s) = int dens(r) exp(-i s (c r^2 - a)) over a radial variable in D dims.

    Carries both routes: time integrals of F with tail correction by repeated
    integration by parts, and the i-eps energy-denominator integrals.
    """

    def __init__(self, dens: Callable, D: int, c: float, a: float, R: float = 7.0):
        self.dens, self.D, self.c, self.a, self.R = dens, D, c, a, R
        self._grids = {}

    def _radial(self, smax):
        # >= 32 nodes per local period of exp(-i s c r^2) on [0, R]
        n = int(math.ceil((2 * self.c * max(smax, 1.0) * self.R * self.R / math.pi + 8) * 2 / 16)) * 16
        n = max(n, 256)
        if n not in self._grids:
            r, w = _radial_rule(n, self.R, self.D)
            self._grids[n] = (r, w * self.dens(r))
        return self._grids[n]

    def h(self, s, k: int = 0, smax=None):
        """k-th derivative of h(s) = exp(-i a s) F(s)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        r, W = self._radial(s.max() if smax is None else smax)
        E = self.c * r * r
        out = np.empty(s.size, dtype=complex)
        for i0 in range(0, s.size, 256):
            blk = s[i0:i0 + 256]
            out[i0:i0 + 256] = np.exp(-1j * np.outer(blk, E)) @ (W * (-1j * E) ** k)
        return out

    def F(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        return np.exp(1j * self.a * s) * self.h(s)

    def cumulative(self, times, moment: int = 0):
        """int_0^t s^moment F(s) ds at each requested t."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        out = np.zeros(times.size, dtype=complex)
        pos = times > 0
        if not np.any(pos):
            return out
        band = self.a + self.c * 16.0
        pg = PanelGrid.covering(times[pos], band, 16, max_width=0.5)
        f = self.F(pg.nodes) * pg.nodes ** moment
        _, edges = pg.cumulative(f)
        out[pos] = edges[pg.edge_index(times[pos])]
        return out

    def tail(self, T: float, moment: int = 0, terms: int = 30):
        """int_T^inf s^moment F(s) ds by the asymptotic integration-by-parts series."""
        if self.a == 0:
            raise NumericError("tail series needs a nonzero phase rate")
        hs = [self.h([T], k, smax=T)[0] for k in range(terms + 1)]
        ia = 1j * self.a
        total, prev = 0j, np.inf
        for k in range(terms):
            # k-th derivative of s^moment h(s) at T
            gk = hs[k] if moment == 0 else T * hs[k] + (k * hs[k - 1] if k else 0)
            term = -np.exp(ia * T) * (-1) ** k * gk / ia ** (k + 1)
            if abs(term) > prev:
                break
            total += term
            prev = abs(term)
            if prev < 1e-17 * max(1.0, abs(total)):
                break
        return total, prev

    def integral(self, moment: int = 0, T: float | None = None):
        """int_0^inf s^moment F(s) ds with error estimate from two cut points."""
        T = T or max(30.0, 150.0 / max(self.a, 1e-3))
        v1 = self.cumulative([T], moment)[0] + self.tail(T, moment)[0]
        v2 = self.cumulative([T / 2], moment)[0] + self.tail(T / 2, moment)[0]
        return v1, float(abs(v1 - v2))

    def ieps(self, eps, power: int = 1):
        """int dens(r) / (c r^2 - a - i eps)^power on a root-graded rule."""
        r0 = math.sqrt(self.a / self.c) if self.a > 0 else None
        key = ("ieps", r0)
        if key not in self._grids:
            r, w = graded_rule(0.0, self.R, [r0] if r0 else [], levels=60)
            self._grids[key] = (r, w * sphere_area(self.D) * r ** (self.D - 1) * self.dens(r))
        r, W = self._grids[key]
        E = self.c * r * r - self.a
        return complex(np.sum(W / (E - 1j * eps) ** power))


@dataclass
class DecayCoefficients:
    F: Callable
    A2_t: Callable
    B2_t: Callable
    A2: LimitResult
    B2: LimitResult
    dn: int
    coupling: float = 0.0
    A2_ieps: LimitResult | None = None
    B2_ieps: LimitResult | None = None
    phase: QuadraticPhase | None = field(default=None, repr=False)


def _decay_density(model: ModelSpec):
    """|v|^2 as a radial function in the product space R^{dn}."""
    k = model.kernel
    s2 = abs(k.scale) ** 2
    if k.name == "gaussian":
        return lambda r: s2 * np.exp(-r * r)
    if k.name == "omega_gaussian" and model.arity == 1:
        c, w0 = model.dispersion.curvature, model.dispersion.omega0
        return lambda r: s2 * (c * r * r - w0) ** 2 * np.exp(-r * r)
    raise ConfigError("decay routes need a gaussian (product) kernel")


def decay_order2(model: ModelSpec, schedule: EpsilonSchedule | None = None,
                 require_limit: bool = True, direct_max: float | None = None) -> DecayCoefficients:
    """F(s), A2(t) = -int_0^t F, B2(t) = int_0^t s F and their limits.

    The product of n Gaussian factors with omega = c k^2 - omega0 is radial
    in D = d n dimensions, so F reduces to one radial integral.
    """
    if model.variant not in ("pure_creation", "linear_coupling"):
        raise ConfigError("decay routes need pure_creation or linear_coupling")
    disp = model.dispersion
    if disp.kind not in ("nonrel_shifted", "quadratic_shifted"):
        raise RouteMismatchError("decay routes need a shifted quadratic dispersion")
    n = model.arity
    D = model.grid.d * n
    if require_limit and D < 3:
        raise LimitMayNotExistError(f"dn = {D} < 3: the limit of A2(t) may not exist")
    ph = QuadraticPhase(_decay_density(model), D, disp.curvature, n * disp.omega0)
    Tdir = direct_max or max(30.0, 150.0 / ph.a)
    a2, a2e = ph.integral(0, Tdir)
    b2, b2e = ph.integral(1, Tdir)
    A2 = LimitResult(-a2, a2e)
    B2 = LimitResult(b2, b2e)

    def A2_t(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty(t.size, dtype=complex)
        near = t <= Tdir
        out[near] = -ph.cumulative(t[near], 0)
        for i in np.flatnonzero(~near):
            out[i] = A2.value + ph.tail(t[i], 0)[0]
        return out

    def B2_t(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty(t.size, dtype=complex)
        near = t <= Tdir
        out[near] = ph.cumulative(t[near], 1)
        for i in np.flatnonzero(~near):
            out[i] = B2.value - ph.tail(t[i], 1)[0]
        return out

    res = DecayCoefficients(ph.F, A2_t, B2_t, A2, B2, D, model.coupling, phase=ph)
    if D >= 3:
        schedule = schedule or EpsilonSchedule()
        res.A2_ieps = ieps_limit(lambda e: 1j * ph.ieps(e, 1), schedule)
        if D >= 5:
            res.B2_ieps = ieps_limit(lambda e: -ph.ieps(e, 2), schedule)
    return res


# ---------------------------------------------------------------- one particle, order 2

def oneparticle_order2(model: ModelSpec, p: int) -> PredictionCoefficients:
    """A2(p) = sum |v|^2/E2, B2(p) = -sum |v|^2/E2^2, C2(t,p) = sum |v|^2/E2^2 exp(-i E2 t)."""
    if model.variant not in ("cubic_ti", "lee"):
        raise ConfigError("one-particle coefficients need cubic_ti or lee")
    if model.decaying:
        raise RouteMismatchError("decaying model: use oneparticle_decay_a2")
    k = vertex_kernel(model, p)
    gk = gamma_apply(k, 1)
    A = pair(k, gk)
    B = -pair(gk, gk)
    amps = k.weights * np.abs(gk.samples) ** 2
    return PredictionCoefficients("one_particle", 2, A, B, _oscillator(amps, k.energy), model.coupling, p,
                                  extra={"amps": amps, "freqs": k.energy})


def oneparticle_decay_a2(model: ModelSpec, p_value: float, schedule: EpsilonSchedule | None = None,
                         L: float = 9.0) -> dict:
    """A2(p) for a decaying one-particle vertex in d=1 (continuum in q).

    i-eps route: int dq |v|^2 / (E2(q) - i eps), extrapolated eps -> 0.
    For cubic_ti with a shifted quadratic dispersion also the time route
    A2 = i int_0^inf F_p(s) ds, F_p(s) = int dq |v|^2 exp(-i s E2(q)).
    """
    if model.grid.d != 1:
        raise ConfigError("continuum one-particle decay route is implemented for d = 1")
    if model.variant == "lee":
        wa, wb, wc = model.lee_dispersions
    elif model.variant == "cubic_ti":
        wa = wb = wc = model.dispersion
    else:
        raise ConfigError("one-particle decay needs cubic_ti or lee")
    s2 = abs(model.kernel.scale) ** 2

    def E2(q):
        return wa.of_norm(np.abs(p_value - q)) + wb.of_norm(np.abs(q)) - wc.of_norm(abs(p_value))

    def dens(q):
        return s2 * np.exp(-(q * q + (p_value - q) ** 2))

    qs = np.linspace(-L, L, 20001)
    e = E2(qs)
    roots = [brentq(E2, qs[i], qs[i + 1], xtol=1e-15) for i in np.flatnonzero(np.sign(e[:-1]) * np.sign(e[1:]) < 0)]
    nodes, w = graded_rule(-L, L, roots, levels=60)
    W = w * dens(nodes)
    En = E2(nodes)
    schedule = schedule or EpsilonSchedule()
    g = lambda eps: complex(np.sum(W / (En - 1j * eps)))
    out = {"roots": roots, "ieps": ieps_limit(g, schedule)}
    if model.variant == "cubic_ti" and wa.kind in ("nonrel_shifted", "quadratic_shifted"):
        c = wa.curvature
        a = c * p_value ** 2 / 2 + wa.omega0
        # q = p/2 + u: E2 = 2c u^2 - a, |v|^2 = exp(-p^2/2 - 2u^2)
        ph = QuadraticPhase(lambda u: s2 * math.exp(-p_value ** 2 / 2) * np.exp(-2 * u * u), 1, 2 * c, a, R=7.0)
        val, err = ph.integral(0)
        out["time"] = LimitResult(1j * val, err)
    return out


# ---------------------------------------------------------------- one particle, order 4

def _sector(model: ModelSpec, p: int):
    if model.variant != "cubic_ti":
        raise ConfigError("the Fock-sector path sums need cubic_ti")
    if model.decaying:
        raise RouteMismatchError("order 4 assumes no decay")
    basis, V = build_fock(model, 3, 3, momentum_selector(model, p))
    i0 = one_particle_state(model, basis, p)
    return basis, V, i0


@dataclass
class OneParticleOrder4:
    A2: float
    B2: float
    S3: float                 # sum |V|^2 / Delta^3
    A4_1PI: complex
    A4_1PR: complex
    B4_1PR: complex
    B4_1PR_closed: complex
    B4_1PI: complex
    poly: np.ndarray          # coefficients of 1, t, t^2 of U^(4)
    C4_1PR: Callable = field(repr=False)
    C4_1PI: Callable = field(repr=False)
    C2: Callable = field(repr=False)

    @property
    def A4(self):
        return self.A4_1PI + self.A4_1PR

    def U4(self, t):
        t = np.asarray(t, dtype=float)
        return np.polyval(self.poly[::-1], t) + self.C4_1PR(t) + self.C4_1PI(t)


def _paths(V, E, i0):
    """All 4-step paths i0 -> a -> b -> c -> i0 with phases and weights."""
    nz = [np.flatnonzero(np.abs(V[:, j]) > 0) for j in range(V.shape[0])]
    rows = []
    for a in nz[i0]:
        if a == i0:
            continue
        for b in nz[a]:
            for c in nz[b]:
                if c == i0 or abs(V[i0, c]) == 0:
                    continue
                w = V[i0, c] * V[c, b] * V[b, a] * V[a, i0]
                rows.append((b == i0, w, E[i0] - E[c], E[c] - E[b], E[b] - E[a], E[a] - E[i0]))
    arr = np.array([r[1:] for r in rows], dtype=complex)
    red = np.array([r[0] for r in rows], dtype=bool)
    return red, arr[:, 0], arr[:, 1:].real


def oneparticle_order4(model: ModelSpec, p: int) -> OneParticleOrder4:
    """Order-lambda^4 structure of U_11(t, p) from exact old-fashioned path sums."""
    if model.variant == "lee":
        return _lee_order4(model, p)
    basis, V, i0 = _sector(model, p)
    E = basis.energies
    d = E - E[i0]
    v = V[:, i0]
    mask = np.arange(E.size) != i0
    red, w, ph = _paths(V, E, i0)
    return _assemble4(np.abs(v[mask]) ** 2, d[mask], red, w, ph)


def _assemble4(c, d, red, w, ph):
    A2 = float(np.sum(c / d))
    S2 = float(np.sum(c / d ** 2))
    S3 = float(np.sum(c / d ** 3))
    B2 = -S2
    parts = {}
    for name, sel in (("1PR", red), ("1PI", ~red)):
        if not np.any(sel):
            parts[name] = (np.zeros(5, dtype=complex), lambda t: np.zeros(np.shape(t), dtype=complex))
            continue
        ex = ordered_expansion(ph[sel])
        ws = w[sel]
        poly = np.einsum("p,cpd->d", ws, ex.polynomial())

        def C(t, ex=ex, ws=ws):
            t = np.asarray(t, dtype=float)
            return np.einsum("p,cp...->...", ws, ex.oscillating(t))
        parts[name] = (poly, C)
    poly = parts["1PR"][0] + parts["1PI"][0]
    return OneParticleOrder4(
        A2=A2, B2=B2, S3=S3,
        A4_1PI=complex(-1j * parts["1PI"][0][1]), A4_1PR=complex(A2 * B2),
        B4_1PR=complex(parts["1PR"][0][0]), B4_1PR_closed=complex(2 * A2 * S3 + S2 ** 2),
        B4_1PI=complex(parts["1PI"][0][0]), poly=poly[:3],
        C4_1PR=parts["1PR"][1], C4_1PI=parts["1PI"][1],
        C2=_oscillator(c / d ** 2, d),
    )


def _lee_order4(model: ModelSpec, p: int, max_paths: int = 250_000) -> OneParticleOrder4:
    """Lee sector: every order-4 path is c -> ab_k -> c -> ab_j -> c, all reducible."""
    if model.decaying:
        raise RouteMismatchError("order 4 assumes no decay")
    d, g = lee_sector(model, p)
    c = np.abs(g) ** 2
    K = d.size
    if K * K > max_paths:
        # polynomial part only; the oscillating part would need K^2 paths
        A2, S2, S3 = float(np.sum(c / d)), float(np.sum(c / d ** 2)), float(np.sum(c / d ** 3))
        B4 = complex(2 * A2 * S3 + S2 ** 2)
        poly = np.array([B4, 2j * A2 * -S2, -A2 * A2 / 2])

        def unavailable(t):
            raise ConfigError(f"C4 needs {K}^2 paths; use a coarser grid")
        return OneParticleOrder4(A2, -S2, S3, 0j, complex(-A2 * S2), B4, B4, 0j, poly,
                                 unavailable, lambda t: np.zeros(np.shape(t), dtype=complex),
                                 _oscillator(c / d ** 2, d))
    j, k = np.meshgrid(np.arange(K), np.arange(K), indexing="ij")
    j, k = j.ravel(), k.ravel()
    w = (c[j] * c[k]).astype(complex)
    ph = np.stack([-d[j], d[j], -d[k], d[k]], axis=1)
    return _assemble4(c, d, np.ones(w.size, dtype=bool), w, ph)


def u11_prediction(model: ModelSpec, p: int, t, lam: float, order: int = 2, form: str = "raw"):
    """U_11(t, p) from the coefficients.

    form="raw": 1 + lam^2 (i t A2 + B2 + C2(t)) [+ lam^4 U4(t)]
    form="exponential": exp(i tau A2) (1 + i lam^2 tau A4 + lam^2 (B2 + C2(t))), tau = lam^2 t
    (C2 vanishes in the continuum; on a finite mode set it is kept so that t=0 gives 1).
    """
    if order not in (2, 4):
        raise ConfigError("order must be 2 or 4")
    t = np.asarray(t, dtype=float)
    c2 = oneparticle_order2(model, p)
    if form == "raw":
        out = 1 + lam ** 2 * (1j * t * c2.A + c2.B + c2.C(t))
        if order == 4:
            out = out + lam ** 4 * oneparticle_order4(model, p).U4(t)
        return out
    if form != "exponential":
        raise ConfigError(f"unknown form {form!r}")
    tau = lam ** 2 * t
    A4 = oneparticle_order4(model, p).A4 if order == 4 else 0.0
    return np.exp(1j * tau * c2.A) * (1 + 1j * lam ** 2 * tau * A4 + lam ** 2 * (c2.B + c2.C(t)))


# ---------------------------------------------------------------- mass kernels

def _gamma_op(X, E):
    """Gamma on an operator matrix: X_ab / (E_a - E_b) off the diagonal, diagonal dropped."""
    X = X.copy()
    np.fill_diagonal(X, 0.0)
    den = np.subtract.outer(E, E)
    live = np.abs(X) > 1e-300
    bad = live & (np.abs(den) < 1e-12)
    if np.any(bad):
        a, b = np.argwhere(bad)[0]
        raise SingularDenominatorError(f"Gamma: degenerate energies between states {a} and {b}")
    out = np.zeros_like(X)
    out[live] = X[live] / den[live]
    return out


def m_kernels(model: ModelSpec, p: int) -> dict:
    """M2 = -(V Gamma V)_11 and M4 = -(V Gamma(V Gamma(V Gamma V)))_11 - (V Gamma^2 V)_11 M2.

    Gamma drops diagonal entries, so the inner chain is the reduced (1PI) one.
    """
    basis, V, i0 = _sector(model, p)
    E = basis.energies
    GV = _gamma_op(V, E)
    M2 = -(V @ GV)[i0, i0]
    inner = V @ _gamma_op(V @ GV, E)
    chain = (V @ _gamma_op(inner, E))[i0, i0]
    G2V = _gamma_op(GV, E)
    M4 = -chain - (V @ G2V)[i0, i0] * M2
    return {"M2": complex(M2), "M4": complex(M4)}


def sector_frequencies(model: ModelSpec, p: int) -> np.ndarray:
    """E_x - E_p over the momentum sector: the frequencies of the oscillating terms."""
    if model.variant == "lee":
        return np.unique(lee_sector(model, p)[0])
    basis, _, i0 = _sector(model, p)
    d = basis.energies - basis.energies[i0]
    return np.unique(d[np.abs(d) > 1e-12])
