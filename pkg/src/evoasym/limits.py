"""Stochastic-limit sweeps, order fits and exponent unwrapping."""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .model import ConfigError, ModelSpec
from .numerics import NumericError
from .oracles import fock_exact, lee_sector_exact, pair_creation_exact, solvable_closed_form
from .perturb import decay_order2, oneparticle_order2, oneparticle_order4, vacuum_order2

FLOAT = "%.17g"
SWEEP_COLUMNS = ["lambda", "tau", "t", "pred_re", "pred_im", "oracle_re", "oracle_im",
                 "resid_uncorrected", "resid_corrected"]


class AliasingError(NumericError):
    pass


# ---------------------------------------------------------------- workers

def worker_count() -> int:
    env = os.environ.get("EVOASYM_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"EVOASYM_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError("EVOASYM_THREADS must be >= 1")
        return n
    return min(4, os.cpu_count() or 1)


def parallel_map(f, items):
    """Ordered map over independent points, capped by EVOASYM_THREADS."""
    items = list(items)
    n = min(worker_count(), len(items))
    if n <= 1:
        return [f(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(f, items))


# ---------------------------------------------------------------- fits

@dataclass
class ExponentFit:
    slope: float
    halfwidth: float
    intercept: float

    def within(self, target, tol):
        return abs(self.slope - target) <= tol


def fit_exponent(x, y, confidence: float = 0.95) -> ExponentFit:
    """Log-log least squares slope with a t-distribution confidence half-width."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size:
        raise ConfigError("x and y must have the same length")
    if x.size < 4:
        raise ConfigError("an exponent fit needs at least 4 points")
    if np.any(y <= 0) or np.any(x <= 0):
        raise ValueError("log-log fit needs x > 0 and y > 0")
    r = stats.linregress(np.log(x), np.log(y))
    q = stats.t.ppf(0.5 + confidence / 2, x.size - 2)
    return ExponentFit(float(r.slope), float(q * r.stderr), float(r.intercept))


@dataclass
class Unwrapped:
    A: complex
    B: complex
    C: np.ndarray
    exponent: np.ndarray
    osc: np.ndarray = field(default=None, repr=False)
    rms: float = 0.0


def unwrap_exponent(t, values, freqs=None, max_step: float = 0.95 * np.pi) -> Unwrapped:
    """log of values with continuity-unwrapped phase, split as A t + B + C(t).

    Without freqs the split is a plain linear detrend.  With freqs the fit also
    carries sum_w c_w exp(-i w t), which makes the split exact when C has that form.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=complex)
    if t.size < 2 or t.size != v.size:
        raise ConfigError("need matching t and values with at least 2 samples")
    if np.any(np.abs(v) <= 1e-12):
        raise NumericError("values too close to zero to take a logarithm")
    phase = np.angle(v)
    steps = np.diff(phase)
    steps = (steps + np.pi) % (2 * np.pi) - np.pi
    if np.any(np.abs(steps) >= max_step):
        i = int(np.argmax(np.abs(steps)))
        raise AliasingError(f"phase step {steps[i]:.3g} at t={t[i + 1]:.6g}: refine the time grid")
    expo = np.log(np.abs(v)) + 1j * (phase[0] + np.concatenate([[0.0], np.cumsum(steps)]))
    cols = [t, np.ones_like(t)]
    fr = [] if freqs is None else [w for w in np.unique(np.asarray(freqs, dtype=float)) if abs(w) > 1e-12]
    cols += [np.exp(-1j * w * t) for w in fr]
    M = np.stack(cols, axis=1).astype(complex)
    coef, *_ = np.linalg.lstsq(M, expo, rcond=None)
    A, B = complex(coef[0]), complex(coef[1])
    rms = float(np.sqrt(np.mean(np.abs(M @ coef - expo) ** 2)))
    return Unwrapped(A, B, expo - A * t - B, expo, np.asarray(coef[2:]), rms)


# ---------------------------------------------------------------- sweeps

@dataclass
class SweepResult:
    flavor: str
    route: str
    rows: list
    fit_uncorrected: ExponentFit
    fit_corrected: ExponentFit | None
    coefficients: dict = field(default_factory=dict)

    @property
    def ratio_at_smallest(self) -> float:
        r = self.rows[-1]
        return r["resid_uncorrected"] / r["resid_corrected"] if r["resid_corrected"] > 0 else np.inf

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_COLUMNS)
            for r in self.rows:
                w.writerow([FLOAT % r[c] for c in SWEEP_COLUMNS])


def _sweep_coefficients(model: ModelSpec, element):
    """(A2, correction(lam, tau, t), notes) for the limit form and its lam^2 correction."""
    if element == "vacuum":
        if model.decaying:
            dc = decay_order2(model)
            A2, B2 = dc.A2.value, dc.B2.value
        else:
            c = vacuum_order2(model)
            A2, B2 = c.A, c.B
        A4 = 0.0
        if model.variant == "pure_creation":
            from .diagrams import split_ABC, vacuum_diagrams
            A4 = split_ABC(vacuum_diagrams(model, 4)).A
        # <U(tau/lam^2)> ~ exp(A2 tau) (1 + lam^2 (B2 + tau A4))
        lim = lambda lam, tau, t: np.exp(A2 * tau)
        cor = lambda lam, tau, t: np.exp(A2 * tau) * (1 + lam ** 2 * (B2 + tau * A4))
        return lim, cor, {"A2": A2, "B2": B2, "A4": A4}
    kind, p = element
    c2 = oneparticle_order2(model, p)
    o4 = oneparticle_order4(model, p)
    A2, B2, A4 = c2.A, c2.B, o4.A4
    # U_11 ~ exp(i tau A2) (1 + i lam^2 tau A4 + lam^2 (B2 + C2(t))); C2 stays on a finite mode set
    lim = lambda lam, tau, t: np.exp(1j * tau * A2)
    cor = lambda lam, tau, t: np.exp(1j * tau * A2) * (1 + 1j * lam ** 2 * tau * A4 + lam ** 2 * (B2 + c2.C(t)))
    return lim, cor, {"A2": A2, "B2": B2, "A4": A4}


def _oracle(model: ModelSpec, element, route: str, n_max: int):
    if route == "closed_form":
        return lambda lam, t: complex(solvable_closed_form(model, t, lam).value)
    if route == "decay_exact":
        if model.variant != "linear_coupling":
            raise ConfigError("the exact decay route needs the linear-coupling model")
        dc = decay_order2(model)
        return lambda lam, t: complex(np.exp(lam ** 2 * (t * dc.A2_t(t)[0] + dc.B2_t(t)[0])))
    if route == "gaussian":
        return lambda lam, t: complex(pair_creation_exact(model, t, lam).value)
    if route == "lee_sector":
        if element == "vacuum" or model.variant != "lee":
            raise ConfigError("the Lee-sector route needs a Lee one-particle element")
        return lambda lam, t: complex(lee_sector_exact(model, element[1], t, lam).value)
    if route == "fock_exact":
        return lambda lam, t: complex(fock_exact(model, element, t, lam, n_max=n_max, estimate=False).value)
    raise ConfigError(f"unknown oracle route {route!r}")


def default_route(model: ModelSpec, element) -> str:
    if element != "vacuum":
        return "lee_sector" if model.variant == "lee" else "fock_exact"
    if model.variant == "linear_coupling":
        return "decay_exact" if model.decaying else "closed_form"
    if model.variant == "pure_creation" and model.arity == 2:
        return "gaussian"
    return "fock_exact"


def stochastic_sweep(model: ModelSpec, element, tau: float, lambdas, route: str | None = None,
                     n_max: int = 6) -> SweepResult:
    """Compare the oracle at t = tau/lam^2 with the limit form and its lam^2 correction."""
    lambdas = sorted({float(x) for x in lambdas}, reverse=True)
    if len(lambdas) < 4:
        raise ConfigError("a stochastic sweep needs at least 4 distinct lambda values")
    if any(not 0 < x <= 0.3 for x in lambdas):
        raise ConfigError("lambda values must lie in (0, 0.3]")
    if not tau > 0:
        raise ConfigError("tau must be > 0")
    route = route or default_route(model, element)
    lim, cor, coeffs = _sweep_coefficients(model, element)
    oracle = _oracle(model, element, route, n_max)

    def point(lam):
        t = tau / lam ** 2
        o = oracle(lam, t)
        pu, pc = complex(lim(lam, tau, t)), complex(cor(lam, tau, t))
        return {"lambda": lam, "tau": tau, "t": t, "pred_re": pc.real, "pred_im": pc.imag,
                "oracle_re": o.real, "oracle_im": o.imag,
                "resid_uncorrected": abs(pu - o), "resid_corrected": abs(pc - o)}

    rows = parallel_map(point, lambdas)
    lam = np.array([r["lambda"] for r in rows])
    fu = fit_exponent(lam, [r["resid_uncorrected"] for r in rows])
    rc = np.array([r["resid_corrected"] for r in rows])
    fc = fit_exponent(lam, rc) if np.all(rc > 0) else None
    flavor = "vacuum" if element == "vacuum" else "one_particle"
    return SweepResult(flavor, route, rows, fu, fc, coeffs)
