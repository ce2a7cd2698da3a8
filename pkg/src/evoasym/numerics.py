"""Quadrature and asymptotic primitives."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as L

from .model import ConfigError, Dispersion, InteractionKernel, MomentumGrid


class NumericError(ArithmeticError):
    pass


class SingularDenominatorError(NumericError):
    pass


class UnsupportedOrderError(NumericError):
    pass


class AsymptoticsUnavailableError(NumericError):
    pass


# ---------------------------------------------------------------- grids

def integrate(f, grid: MomentumGrid) -> complex:
    """Sum of weights * f over the grid nodes (numpy pairwise summation)."""
    f = np.asarray(f).ravel()
    w = grid.weights
    if f.shape != w.shape:
        raise ConfigError(f"grid function has {f.size} samples, grid has {w.size} nodes")
    bad = np.flatnonzero(~np.isfinite(f))
    if bad.size:
        raise NumericError(f"non-finite sample at node {int(bad[0])}")
    return complex(np.sum(w * f))


@dataclass(frozen=True)
class TimeGrid:
    t: tuple

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.ndim != 1 or t.size == 0 or t[0] < 0 or np.any(np.diff(t) <= 0):
            raise ConfigError("time grid must be non-empty, >= 0 and strictly increasing")
        object.__setattr__(self, "t", tuple(float(x) for x in t))

    @classmethod
    def linspace(cls, t0, t1, n):
        return cls(tuple(np.linspace(t0, t1, n)))

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.t)

    def __len__(self):
        return len(self.t)


@dataclass(frozen=True)
class EpsilonSchedule:
    eps: tuple = tuple(0.1 * 0.5 ** k for k in range(8))

    def __post_init__(self):
        e = np.asarray(self.eps, dtype=float)
        if e.size < 2 or np.any(e <= 0) or np.any(np.diff(e) >= 0):
            raise ConfigError("epsilon schedule must be positive and strictly decreasing")

    @classmethod
    def geometric(cls, eps1=0.1, ratio=0.5, count=8):
        return cls(tuple(eps1 * ratio ** k for k in range(count)))


# ---------------------------------------------------------------- panel quadrature

@lru_cache(maxsize=None)
def _gl_panel(p: int):
    """Nodes, weights and spectral integration matrix on [-1, 1].

    S[j, k] = int_{-1}^{x_j} l_k(x) dx for the Lagrange basis l_k on the nodes,
    built from  int P_k = (P_{k+1} - P_{k-1}) / (2k+1).
    """
    x, w = L.leggauss(p)
    V = L.legvander(x, p)                       # P_0..P_p at nodes
    W = np.empty((p, p))
    W[:, 0] = x + 1.0
    for k in range(1, p):
        W[:, k] = (V[:, k + 1] - V[:, k - 1]) / (2 * k + 1)
    S = W @ np.linalg.inv(V[:, :p])
    return x, w, S


class PanelGrid:
    """Composite Gauss-Legendre rule on [0, T] with spectral cumulative integration."""

    def __init__(self, edges, order: int = 16):
        edges = np.asarray(edges, dtype=float)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise NumericError("panel edges must be strictly increasing")
        self.edges = edges
        self.order = order
        x, w, S = _gl_panel(order)
        a, b = edges[:-1, None], edges[1:, None]
        self.h = (b - a)[:, 0]
        self.nodes = (0.5 * (b - a) * x + 0.5 * (a + b)).ravel()
        self.weights = (0.5 * (b - a) * w).ravel()
        self._w = w
        self._S = S

    @classmethod
    def covering(cls, times, fmax: float, order: int = 16, start: float = 0.0,
                 max_width: float = 1.0, per_period: int = 32):
        """Panels on [start, max(times)] with every requested time an edge and
        at least `per_period` nodes per period 2*pi/fmax."""
        times = np.unique(np.asarray(times, dtype=float))
        T = times.max() if times.size else start
        width = max_width
        if fmax > 0:
            width = min(width, 2 * math.pi * order / (per_period * fmax))
        marks = np.unique(np.concatenate([[start], times[times > start]]))
        if marks.size < 2:
            marks = np.array([start, start + width])
        edges = [marks[:1]]
        for a, b in zip(marks[:-1], marks[1:]):
            n = max(1, int(math.ceil((b - a) / width)))
            edges.append(np.linspace(a, b, n + 1)[1:])
        return cls(np.concatenate(edges), order)

    @property
    def size(self):
        return self.nodes.size

    def cumulative(self, f):
        """int_{edges[0]}^{x} f along the last axis, at every node.

        Returns (node_values, edge_values) with edge_values[..., 0] = 0.
        """
        f = np.asarray(f)
        shape = f.shape[:-1]
        P, p = self.h.size, self.order
        fp = f.reshape(shape + (P, p))
        half = 0.5 * self.h
        inner = np.einsum("jk,...pk->...pj", self._S, fp) * half[:, None]
        totals = np.einsum("k,...pk->...p", self._w, fp) * half
        offs = np.concatenate([np.zeros(shape + (1,), dtype=totals.dtype),
                               np.cumsum(totals, axis=-1)], axis=-1)
        nodes = (inner + offs[..., :-1, None]).reshape(shape + (P * p,))
        return nodes, offs

    def edge_index(self, times):
        idx = np.searchsorted(self.edges, np.asarray(times, dtype=float))
        idx = np.clip(idx, 0, self.edges.size - 1)
        if not np.allclose(self.edges[idx], times, rtol=0, atol=1e-12 * max(1.0, self.edges[-1])):
            raise NumericError("requested time is not a panel edge")
        return idx


def ordered_time_integrals(phases, times, n: int = 0, order: int = 16) -> np.ndarray:
    """Iterated integrals over t > t1 > ... > t_m > 0 of t_m^n exp(i sum E_k t_k).

    phases: shape (P, m) or (m,), E_1 outermost.  Returns shape (P, len(times)).
    """
    ph = np.atleast_2d(np.asarray(phases, dtype=float))
    m = ph.shape[1]
    if m < 1 or m > 4:
        raise UnsupportedOrderError(f"ordered integrals of order {m} are not supported (1..4)")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0):
        raise ConfigError("t must be >= 0")
    out = np.zeros((ph.shape[0], times.size), dtype=complex)
    pos = times > 0
    if not np.any(pos):
        return out
    suffix = np.abs(np.cumsum(ph[:, ::-1], axis=1)).max()
    fmax = max(np.abs(ph).max(), suffix)
    pg = PanelGrid.covering(times[pos], fmax, order)
    s = pg.nodes
    g = np.exp(1j * np.outer(ph[:, m - 1], s)) * s ** n
    for k in range(m - 2, -1, -1):
        G, _ = pg.cumulative(g)
        g = np.exp(1j * np.outer(ph[:, k], s)) * G
    _, edge_vals = pg.cumulative(g)
    out[:, pos] = edge_vals[:, pg.edge_index(times[pos])]
    return out


def ordered_time_integral(phases, t: float, n: int = 0) -> complex:
    """Single-tuple convenience form of :func:`ordered_time_integrals`."""
    ph = np.asarray(phases, dtype=float)
    if ph.ndim != 1:
        raise ConfigError("phases must be a flat list")
    if ph.size > 4:
        raise UnsupportedOrderError(f"ordered integrals of order {ph.size} are not supported (1..4)")
    return complex(ordered_time_integrals(ph, [t], n)[0, 0])


def closed_form_double(E: float, t):
    """int_0^t dt1 int_0^t1 dt2 exp(-i E (t1 - t2)) = -it/E + 1/E^2 - exp(-itE)/E^2."""
    if E == 0:
        raise SingularDenominatorError("closed_form_double needs E != 0")
    t = np.asarray(t, dtype=float)
    val = -1j * t / E + (1.0 - np.exp(-1j * t * E)) / E ** 2
    return complex(val) if val.ndim == 0 else val


# ---------------------------------------------------------------- i-epsilon limits

@dataclass
class LimitResult:
    value: complex
    error: float
    converged: bool = True
    table: np.ndarray | None = field(default=None, repr=False)

    def __complex__(self):
        return complex(self.value)


def ieps_limit(g, schedule: EpsilonSchedule | None = None, order: int = 4) -> LimitResult:
    """Richardson (Neville) extrapolation of g(eps) to eps -> 0+."""
    schedule = schedule or EpsilonSchedule()
    eps = np.asarray(schedule.eps, dtype=float)
    vals = np.array([complex(g(e)) for e in eps])
    if not np.all(np.isfinite(vals)):
        raise NumericError("g(eps) is not finite on the schedule")
    K = eps.size
    order = min(order, K - 1)
    T = np.full((K, order + 1), np.nan + 0j)
    T[:, 0] = vals
    for j in range(1, order + 1):
        for k in range(j, K):
            T[k, j] = (eps[k - j] * T[k, j - 1] - eps[k] * T[k - 1, j - 1]) / (eps[k - j] - eps[k])
    col = T[order:, order]
    value = col[-1]
    inc = np.abs(np.diff(col))
    err = float(inc[-1]) if inc.size else float(abs(T[-1, order] - T[-1, order - 1]))
    converged = True
    if inc.size >= 2 and inc[-1] > inc[-2] and inc[-1] > 1e-10 * max(1.0, abs(value)):
        converged = False
        warnings.warn("i-epsilon extrapolation increments are not decreasing", RuntimeWarning)
    return LimitResult(complex(value), err, converged, T)


# ---------------------------------------------------------------- stationary phase

@dataclass
class StationaryPoint:
    k0: np.ndarray
    amplitude: complex
    exponent: float
    omega0: float


def stationary_phase_coeff(omega: Dispersion, v: InteractionKernel, d: int,
                           cutoff: float = 6.0, over_omega_sq: bool = True) -> StationaryPoint:
    """Large-t coefficient of C(t) = int g(k) exp(-i t omega(k)) dk.

    C(t) ~ amplitude * t^{-d/2} * exp(-i t omega(k0)), with
    amplitude = (2 pi)^{d/2} |det H|^{-1/2} exp(-i pi sig(H)/4) g(k0),
    g = |v|^2 / omega^2 (or |v|^2 when over_omega_sq is False).
    """
    if omega.kind == "tabulated":
        raise AsymptoticsUnavailableError("tabulated dispersion: no analytic refinement")
    axis = np.linspace(-cutoff, cutoff, 41)
    mesh = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    gn = np.array([np.linalg.norm(omega.gradient(k)) for k in mesh])
    k = mesh[int(np.argmin(gn))].astype(float)
    for _ in range(50):
        H = omega.hessian(k)
        step = np.linalg.solve(H, omega.gradient(k))
        k = k - step
        if np.linalg.norm(step) < 1e-14:
            break
    H = omega.hessian(k)
    ev = np.linalg.eigvalsh(H)
    if np.any(np.abs(k) > cutoff) or np.linalg.norm(omega.gradient(k)) > 1e-10:
        raise AsymptoticsUnavailableError("no critical point in the grid box")
    if np.min(np.abs(ev)) < 1e-12:
        raise AsymptoticsUnavailableError("degenerate Hessian at the critical point")
    w0 = float(omega(k.reshape(1, d))[0])
    vk = complex(np.asarray(v(*([k.reshape(1, d)] * v.arity))).ravel()[0])
    g = abs(vk) ** 2 / (w0 ** 2 if over_omega_sq else 1.0)
    sig = int(np.sum(np.sign(ev)))
    amp = (2 * math.pi) ** (d / 2) / math.sqrt(abs(np.prod(ev))) * np.exp(-0.25j * math.pi * sig) * g
    return StationaryPoint(k, complex(amp), d / 2, w0)


# ---------------------------------------------------------------- exact ordered integrals

def compositions(n: int):
    """All compositions of n, in lexicographic order of the cut pattern."""
    out = []
    for mask in range(2 ** (n - 1)):
        sizes, run = [], 1
        for j in range(n - 1):
            if mask >> (n - 2 - j) & 1:
                sizes.append(run)
                run = 1
            else:
                run += 1
        sizes.append(run)
        out.append(tuple(sizes))
    return out


@dataclass
class OrderedExpansion:
    """Exact value of ordered exponential integrals, split by composition.

    For phases phi (P, m) the integral over t > t1 > ... > tm > 0 of
    exp(i sum phi_k t_k) equals sum over compositions c of
    K_c [Q_c(t) exp(i S_c t) - Q_c(0)], Q_c a polynomial (coefficients low→high).
    """

    comps: list
    K: np.ndarray        # (C, P)
    S: np.ndarray        # (C, P)
    Q: np.ndarray        # (C, P, D)
    zero: np.ndarray     # (C, P) bool, S_c == 0

    def _poly(self, t):
        t = np.asarray(t, dtype=float)
        pw = t[..., None] ** np.arange(self.Q.shape[-1])
        return np.einsum("cpd,...d->cp...", self.Q, pw)

    def values(self, t):
        """Per-composition, per-path values at times t: shape (C, P, *t.shape)."""
        t = np.asarray(t, dtype=float)
        Qt = self._poly(t)
        ph = np.exp(1j * self.S[(...,) + (None,) * t.ndim] * t)
        return self.K[(...,) + (None,) * t.ndim] * (Qt * ph - self.Q[:, :, 0][(...,) + (None,) * t.ndim])

    def polynomial(self):
        """Coefficients (C, P, D) of the non-oscillating part in t."""
        c = np.where(self.zero[..., None], self.Q, 0.0) * self.K[..., None]
        c[:, :, 0] -= self.K * self.Q[:, :, 0]
        return c

    def oscillating(self, t):
        t = np.asarray(t, dtype=float)
        Qt = self._poly(t)
        ph = np.exp(1j * self.S[(...,) + (None,) * t.ndim] * t)
        keep = ~self.zero[(...,) + (None,) * t.ndim]
        return np.where(keep, self.K[(...,) + (None,) * t.ndim] * Qt * ph, 0.0)


def _antiderivative(p, S, zero):
    """Q with d/ds[Q e^{iSs}] = p e^{iSs}; for S = 0 the one with Q(0) = 0."""
    D = p.shape[-1]
    # S = 0 branch
    P0 = np.zeros_like(p)
    P0[:, 1:] = p[:, :-1] / np.arange(1, D)
    # S != 0 branch: Q = sum_j (-1)^j p^{(j)} / (iS)^{j+1}
    iS = np.where(zero, 1.0, 1j * S)[:, None]
    Q = np.zeros_like(p)
    deriv = p.copy()
    for j in range(D):
        Q += (-1) ** j * deriv / iS ** (j + 1)
        deriv = np.concatenate([deriv[:, 1:] * np.arange(1, D), np.zeros((p.shape[0], 1))], axis=1)
        if not np.any(deriv):
            break
    return np.where(zero[:, None], P0, Q)


def ordered_expansion(phases, n: int = 0, zero_tol: float = 1e-10) -> OrderedExpansion:
    """Exact composition expansion of the ordered integral of t_m^n exp(i sum phi t).

    Phases whose partial block sums vanish (to zero_tol relative) are treated as
    exact zeros, producing polynomial growth instead of a singular denominator.
    Sums that are small but above the tolerance lose digits like 1/S^m; use
    ordered_time_integrals for such near-degenerate phases.
    """
    ph = np.atleast_2d(np.asarray(phases, dtype=float))
    P, m = ph.shape
    if m < 1 or m > 4:
        raise UnsupportedOrderError(f"ordered integrals of order {m} are not supported (1..4)")
    D = m + n + 1
    tol = zero_tol * max(1.0, float(np.abs(ph).max()) if ph.size else 1.0)
    p0 = np.zeros((P, D), dtype=complex)
    p0[:, n] = 1.0
    # state: (blocks closed so far (from the right), K, p, S)
    states = [((), 1, np.ones(P, dtype=complex), p0, ph[:, m - 1].copy())]
    for k in range(m - 2, -1, -1):
        new = []
        for blocks, run, K, p, S in states:
            zero = np.abs(S) < tol
            Q = _antiderivative(p, S, zero)
            new.append((blocks, run + 1, K, Q, S + ph[:, k]))
            low = np.zeros((P, D), dtype=complex)
            low[:, 0] = 1.0
            new.append((blocks + (run,), 1, -K * Q[:, 0], low, ph[:, k].copy()))
        states = new
    comps, Ks, Ss, Qs, Zs = [], [], [], [], []
    for blocks, run, K, p, S in states:
        zero = np.abs(S) < tol
        Q = _antiderivative(p, S, zero)
        comps.append((run,) + tuple(reversed(blocks)))
        Ks.append(K)
        Ss.append(np.where(zero, 0.0, S))
        Qs.append(Q)
        Zs.append(zero)
    order = sorted(range(len(comps)), key=lambda i: comps[i], reverse=True)
    return OrderedExpansion([comps[i] for i in order], np.array([Ks[i] for i in order]),
                            np.array([Ss[i] for i in order]), np.array([Qs[i] for i in order]),
                            np.array([Zs[i] for i in order]))


def fit_quasi_polynomial(t, y, freqs, degree: int = 2, osc_degree: int = 1):
    """Least-squares fit y(t) = sum_j c_j t^j + sum_w (a_w + b_w t) exp(-i w t).

    Returns (poly coefficients low→high, oscillatory coefficient matrix, rms residual).
    """
    t = np.asarray(t, dtype=float)
    freqs = [w for w in np.unique(np.round(np.asarray(freqs, dtype=float), 12)) if abs(w) > 1e-9]
    cols = [t ** j for j in range(degree + 1)]
    for w in freqs:
        for j in range(osc_degree + 1):
            cols.append(t ** j * np.exp(-1j * w * t))
    A = np.stack(cols, axis=1).astype(complex)
    scale = np.abs(A).max(axis=0)
    coef, *_ = np.linalg.lstsq(A / scale, np.asarray(y, dtype=complex), rcond=None)
    coef = coef / scale
    rms = float(np.sqrt(np.mean(np.abs(A @ coef - y) ** 2)))
    return coef[: degree + 1], coef[degree + 1:].reshape(len(freqs), osc_degree + 1), rms
