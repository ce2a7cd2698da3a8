"""Independent ground truths: closed form, Dyson quadrature, truncated-Fock evolution."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .fock import build_fock, lee_sector, momentum_selector, one_particle_state
from .model import ConfigError, ModelSpec
from .numerics import NumericError, PanelGrid, ordered_time_integrals


class AssumptionViolationError(ConfigError):
    pass


class OracleTooLargeError(ConfigError):
    pass


@dataclass
class OracleResult:
    value: complex | np.ndarray
    route: str
    error_estimate: float = 0.0
    series: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.error_estimate >= 0:
            raise NumericError("error estimate must be >= 0")


def _element(element):
    if element == "vacuum":
        return "vacuum", None
    kind, p = element
    if kind != "one_particle":
        raise ConfigError(f"unknown matrix element {element!r}")
    return kind, int(p)


# ---------------------------------------------------------------- closed form

def solvable_closed_form(model: ModelSpec, t, lam: float) -> OracleResult:
    """exp[A t + B + lam^2 sum w |v|^2/omega^2 exp(-i omega t)] for linear coupling."""
    if model.variant != "linear_coupling":
        raise ConfigError("closed form exists for the linear-coupling model only")
    w = model.omega()
    if np.any(w <= 0):
        raise AssumptionViolationError("omega <= 0 on the grid: use the decay routes")
    wt = model.grid.weights * np.abs(model.kernel.values(model.grid)) ** 2
    A = 1j * lam ** 2 * np.sum(wt / w)
    B = -lam ** 2 * np.sum(wt / w ** 2)
    t = np.asarray(t, dtype=float)
    osc = lam ** 2 * (np.exp(-1j * np.multiply.outer(t, w)) @ (wt / w ** 2))
    val = np.exp(A * t + B + osc)
    return OracleResult(complex(val) if val.ndim == 0 else val, "closed_form", 1e-15)


# ---------------------------------------------------------------- Dyson order 2 (grid sums)

def _second_order_terms(model: ModelSpec, element):
    """(|g|^2 weights, energies) of the intermediate states at order 2."""
    kind, p = _element(element)
    g = model.grid
    if kind == "vacuum":
        if model.variant not in ("pure_creation", "linear_coupling"):
            raise ConfigError("order-2 grid sums: vacuum needs pure_creation or linear_coupling")
        n = model.arity
        if g.size ** n > 5_000_000:
            raise OracleTooLargeError("grid too large for the order-2 tuple sum")
        v = np.abs(model.kernel.values(g)) ** 2
        wts = g.weights
        W = wts
        E = model.omega()
        for _ in range(n - 1):
            W = np.multiply.outer(W, wts)
            E = np.add.outer(E, model.omega())
        return (W * v).ravel(), np.broadcast_to(E, v.shape).ravel()
    if model.variant not in ("cubic_ti", "lee"):
        raise ConfigError("one-particle elements need cubic_ti or lee")
    E = model.pair_energies(p)
    ok = np.isfinite(E)
    v = np.abs(model.kernel.values(g)[p]) ** 2
    return (g.weights * v)[ok], E[ok]


def dyson_order2(model: ModelSpec, element, t, lam: float) -> OracleResult:
    """1 + (-i lam)^2 sum |g|^2 int_0^t int_0^t1 exp(-iE(t1 - t2)) by time quadrature."""
    W, E = _second_order_terms(model, element)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    I = ordered_time_integrals(np.stack([-E, E], axis=1), t)
    amp = -(W @ I)
    val = 1.0 + lam ** 2 * amp
    return OracleResult(val if val.size > 1 else complex(val[0]), "dyson2", 1e-12,
                        series=np.stack([np.ones_like(amp), np.zeros_like(amp), amp]))


# ---------------------------------------------------------------- Dyson series on Fock vectors

def dyson_series(E, V, start: int, times, order: int = 4, target: int | None = None,
                 panel_order: int = 16):
    """Coefficients U_k(t) = <target| (-i)^k int_{ordered} V_I(t1)...V_I(tk) |start>.

    Computed by the recursion psi_k(x) = -i int_0^x V_I(s) psi_{k-1}(s) ds on the
    vector space, V_I(s)_{ab} = V_ab exp(is(E_a - E_b)).  Returns (order+1, len(times)).
    """
    target = start if target is None else target
    times = np.atleast_1d(np.asarray(times, dtype=float))
    out = np.zeros((order + 1, times.size), dtype=complex)
    out[0] = 1.0 if target == start else 0.0
    pos = times > 0
    if not np.any(pos):
        return out
    nz = np.abs(V) > 0
    fmax = np.abs(np.subtract.outer(E, E))[nz].max() if np.any(nz) else 0.0
    pg = PanelGrid.covering(times[pos], order * fmax, panel_order)
    s = pg.nodes
    if E.size * s.size > 5e7:
        raise OracleTooLargeError("Dyson recursion too large: reduce the basis or the time span")
    ph = np.exp(1j * np.outer(E, s))              # e^{isE_a}
    psi = np.zeros((E.size, s.size), dtype=complex)
    psi[start] = 1.0
    idx = pg.edge_index(times[pos])
    for k in range(1, order + 1):
        integrand = -1j * ph * (V @ (np.conj(ph) * psi))
        psi, edges = pg.cumulative(integrand)
        out[k, pos] = edges[target, idx]
    return out


def _fock_for(model, element, n_max, N_max):
    kind, p = _element(element)
    sel = None
    if kind == "one_particle":
        sel = momentum_selector(model, p)
    basis, V = build_fock(model, n_max, N_max, sel)
    i0 = basis.vacuum() if kind == "vacuum" else one_particle_state(model, basis, p)
    return basis, V, i0


def _default_caps(model, order):
    if model.variant == "cubic_vacuum":
        return 3 * order // 2, 3 * order // 2
    if model.variant == "pure_creation":
        return order * model.arity // 2, order * model.arity // 2
    return order + 1, order + 1


def dyson_order4(model: ModelSpec, element, t, lam: float, order: int = 4) -> OracleResult:
    """Order-by-order Dyson amplitude through lam^order on the exact finite basis.

    ``series[k]`` holds the lam^k coefficient; value = sum_k lam^k series[k].
    """
    n_max, N_max = _default_caps(model, order)
    basis, V, i0 = _fock_for(model, element, max(2, n_max), max(2, N_max))
    if basis.dim ** 2 > 1e7:
        raise OracleTooLargeError(f"contraction sum of size {basis.dim}^2 exceeds 1e7")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    ser = dyson_series(basis.energies, V, i0, t, order)
    ser_c = dyson_series(basis.energies, V, i0, t, order, panel_order=12)
    lp = lam ** np.arange(order + 1)
    val = lp @ ser
    err = float(np.max(np.abs(lp @ (ser - ser_c))))
    return OracleResult(val if val.size > 1 else complex(val[0]), "dyson4", err, series=ser)


def log_series(U):
    """Cumulant (connected) coefficients E_k of log(sum_k U_k x^k), U_0 = 1."""
    U = np.asarray(U)
    K = U.shape[0] - 1
    E = np.zeros_like(U)
    # x d/dx log U = (x U') / U  ->  k E_k = k U_k - sum_{j<k} j E_j U_{k-j}
    for k in range(1, K + 1):
        acc = k * U[k]
        for j in range(1, k):
            acc = acc - j * E[j] * U[k - j]
        E[k] = acc / k
    return E


# ---------------------------------------------------------------- exact truncated Fock

def _evolve(basis, V, i0, t, lam):
    H = np.diag(basis.energies).astype(complex) + lam * V
    t = np.atleast_1d(np.asarray(t, dtype=float))
    order = np.argsort(t, kind="stable")
    out = np.empty(t.size, dtype=complex)
    psi = np.zeros(basis.dim, dtype=complex)
    psi[i0] = 1.0
    cur = 0.0
    cache = {}
    for j in order:
        dt = t[j] - cur
        if dt > 0:
            key = round(dt, 12)
            if key not in cache:
                cache = {key: expm(-1j * dt * H)}
            psi = cache[key] @ psi
            cur = t[j]
        out[j] = np.exp(1j * t[j] * basis.energies[i0]) * psi[i0]
    return out


def fock_exact(model: ModelSpec, element, t, lam: float, n_max: int = 10, N_max: int | None = None,
               estimate: bool = True) -> OracleResult:
    """<i| e^{itH0} e^{-it(H0 + lam V)} |i> on the truncated basis (dense expm)."""
    N_max = n_max if N_max is None else N_max
    basis, V, i0 = _fock_for(model, element, n_max, N_max)
    val = _evolve(basis, V, i0, t, lam)
    err = 0.0
    if estimate:
        b2, V2, j0 = _fock_for(model, element, n_max - 1, N_max - 1)
        err = float(np.max(np.abs(val - _evolve(b2, V2, j0, t, lam))))
    val = val if val.size > 1 else complex(val[0])
    return OracleResult(val, "fock_exact", err)


# ---------------------------------------------------------------- Gaussian-state route

def pair_creation_exact(model: ModelSpec, t, lam: float, rtol: float = 1e-12) -> OracleResult:
    """Exact vacuum amplitude for the quadratic pair-creation model (n = 2).

    H = sum w a*a + sum (K_ij a*_i a*_j + conj(K)_ij a_i a_j) keeps the state
    Gaussian, psi = N exp(a* Z a*/2)|0>, with
        i dZ/dt = W Z + Z W + 2K + 2 Z conj(K) Z,   i d log N/dt = tr(conj(K) Z).
    """
    if model.variant != "pure_creation" or model.arity != 2:
        raise ConfigError("Gaussian route needs the pair-creation model (n = 2)")
    g = model.grid
    sw = np.sqrt(g.weights)
    K = lam * model.bose_factor * model.kernel.values(g) * np.outer(sw, sw)
    K = 0.5 * (K + K.T)
    Kc = np.conj(K)
    w = model.omega()
    M = w.size
    t = np.atleast_1d(np.asarray(t, dtype=float))

    def rhs(_, y):
        Z = y[:-1].reshape(M, M)
        dZ = -1j * (w[:, None] * Z + Z * w[None, :] + 2 * K + 2 * Z @ Kc @ Z)
        dl = -1j * np.sum(Kc * Z)
        return np.concatenate([dZ.ravel(), [dl]])

    y0 = np.zeros(M * M + 1, dtype=complex)
    ts = np.unique(np.concatenate([[0.0], t]))
    if ts[-1] == 0:
        val = np.ones(t.size, dtype=complex)
    else:
        sol = solve_ivp(rhs, (0.0, ts[-1]), y0, method="DOP853", t_eval=ts, rtol=rtol, atol=1e-14)
        if not sol.success:
            raise NumericError(f"Gaussian-state integration failed: {sol.message}")
        logN = sol.y[-1]
        val = np.exp(logN[np.searchsorted(ts, t)])
    val = val if val.size > 1 else complex(val[0])
    return OracleResult(val, "gaussian_exact", rtol * 10)


# ---------------------------------------------------------------- Lee sector (arrowhead)

def _merge_levels(e, c, tol=1e-12):
    """Combine degenerate levels: only sqrt(sum |g|^2) of a degenerate set couples."""
    order = np.argsort(e, kind="stable")
    e, c = e[order], c[order]
    start = np.concatenate([[True], np.diff(e) > tol * np.maximum(1.0, np.abs(e[1:]))])
    idx = np.cumsum(start) - 1
    return e[start], np.bincount(idx, weights=c)


def _secular_roots(e, c, lam, iters=200):
    """All roots of f(E) = E - lam^2 sum c/(E - e), e sorted and distinct, c > 0."""
    K = e.size
    s2 = lam * lam * c

    def f(E):
        with np.errstate(divide="ignore", invalid="ignore"):
            return E - (s2[None, :] / (E[:, None] - e[None, :])).sum(axis=1)
    roots = np.empty(K + 1)
    # interior gaps, bisection in the fractional position s of (e_k, e_{k+1})
    lo, hi = e[:-1].copy(), e[1:].copy()
    chunk = max(1, 4_000_000 // max(K, 1))
    for i0 in range(0, K - 1, chunk):
        a, b = lo[i0:i0 + chunk].copy(), hi[i0:i0 + chunk].copy()
        for _ in range(iters):
            m = 0.5 * (a + b)
            if np.all((m <= a) | (m >= b)):
                break
            neg = f(m) < 0
            a = np.where(neg, m, a)
            b = np.where(neg, b, m)
        roots[1 + i0:1 + i0 + a.size] = 0.5 * (a + b)
    # outer roots: f(e_0-) = +inf, f(e_K+) = -inf
    span = 1.0 + np.sqrt(s2.sum())
    fo = lambda x: float(f(np.array([x]))[0])
    a = min(0.0, e[0]) - span
    while fo(a) > 0:
        a -= 2 * span
    roots[0] = _bisect_scalar(fo, a, e[0])
    b = max(0.0, e[-1]) + span
    while fo(b) < 0:
        b += 2 * span
    roots[-1] = _bisect_scalar(fo, e[-1], b)
    return roots


def _bisect_scalar(f, a, b, iters=400):
    for _ in range(iters):
        m = 0.5 * (a + b)
        if m <= a or m >= b:
            break
        if f(m) < 0:
            a = m
        else:
            b = m
    return 0.5 * (a + b)


def lee_sector_exact(model: ModelSpec, p: int, t, lam: float) -> OracleResult:
    """Exact U_11(t, p) of the Lee model from the spectrum of its one-c sector.

    With energies measured from omega_c(p) the sector Hamiltonian is an arrowhead
    matrix; its eigenvalues E_n solve E = lam^2 sum |g|^2/(E - delta) and
    |<c|n>|^2 = 1/(1 + lam^2 sum |g|^2/(E_n - delta)^2).
    """
    delta, g = lee_sector(model, p)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if lam == 0 or delta.size == 0:
        val = np.ones(t.size, dtype=complex)
    else:
        e, c = _merge_levels(delta, np.abs(g) ** 2)
        live = c > 0
        e, c = e[live], c[live]
        E = _secular_roots(e, c, lam)
        with np.errstate(divide="ignore"):
            # a root sitting on a level carries no weight (Z -> 0)
            Z = 1.0 / (1.0 + lam * lam * (c[None, :] / (E[:, None] - e[None, :]) ** 2).sum(axis=1))
        val = np.exp(-1j * np.outer(t, E)) @ Z
    err = float(abs(1.0 - val[0])) if t[0] == 0 else 0.0
    val = val if val.size > 1 else complex(val[0])
    return OracleResult(val, "lee_sector", err)
