import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate as spi

from evoasym.model import ConfigError, build_grid, gaussian_kernel, relativistic
from evoasym.numerics import (
    AsymptoticsUnavailableError,
    EpsilonSchedule,
    NumericError,
    PanelGrid,
    SingularDenominatorError,
    TimeGrid,
    UnsupportedOrderError,
    closed_form_double,
    compositions,
    fit_quasi_polynomial,
    ieps_limit,
    integrate,
    ordered_expansion,
    ordered_time_integral,
    ordered_time_integrals,
    stationary_phase_coeff,
)


def test_integrate_matches_weights_and_rejects_nan():
    g = build_grid(1, 40, 6.0)
    assert integrate(np.exp(-g.norms ** 2), g).real == pytest.approx(math.sqrt(math.pi), rel=1e-10)
    f = np.ones(g.size)
    f[3] = np.nan
    with pytest.raises(NumericError):
        integrate(f, g)
    with pytest.raises(ConfigError):
        integrate(np.ones(3), g)


def test_time_grid_validation():
    assert len(TimeGrid.linspace(0, 1, 5)) == 5
    with pytest.raises(ConfigError):
        TimeGrid((0.0, 0.0))
    with pytest.raises(ConfigError):
        TimeGrid((-1.0, 1.0))


def test_epsilon_schedule_validation():
    assert len(EpsilonSchedule.geometric(0.1, 0.5, 6).eps) == 6
    with pytest.raises(ConfigError):
        EpsilonSchedule((0.1, 0.2))


def test_panel_cumulative_of_polynomial():
    pg = PanelGrid.covering([3.0], fmax=0.0, order=8)
    f = pg.nodes ** 5
    nodes, edges = pg.cumulative(f)
    assert np.allclose(nodes, pg.nodes ** 6 / 6, rtol=0, atol=1e-11)
    assert edges[-1] == pytest.approx(3.0 ** 6 / 6, rel=1e-13)


@pytest.mark.parametrize("E", [0.5, 1.0, 2.0, 5.0])
def test_closed_form_double_against_ordered_quadrature(E):
    t = np.array([0.1, 1.0, 10.0, 100.0])
    closed = closed_form_double(E, t)
    ordered = ordered_time_integrals([-E, E], t)[0]
    assert np.all(np.abs(closed - ordered) < 1e-9 * (1 + np.abs(t / E)))


def test_closed_form_double_singular():
    with pytest.raises(SingularDenominatorError):
        closed_form_double(0.0, 1.0)


def test_ordered_triple_against_scipy():
    ph = [0.7, -1.3, 0.4]
    t = 2.0

    def part(fn):
        return spi.tplquad(lambda t3, t2, t1: fn(np.exp(1j * (ph[0] * t1 + ph[1] * t2 + ph[2] * t3))),
                           0, t, 0, lambda t1: t1, 0, lambda t1, t2: t2, epsabs=1e-12, epsrel=1e-12)[0]
    ref = part(np.real) + 1j * part(np.imag)
    assert abs(ordered_time_integral(ph, t) - ref) < 1e-9


def test_order_limits():
    with pytest.raises(UnsupportedOrderError):
        ordered_time_integral([1, 1, 1, 1, 1], 1.0)
    with pytest.raises(UnsupportedOrderError):
        ordered_expansion(np.ones((1, 5)))


def test_compositions():
    assert compositions(1) == [(1,)]
    assert compositions(2) == [(2,), (1, 1)]
    c4 = compositions(4)
    assert len(c4) == 8 and len(set(c4)) == 8
    assert all(sum(c) == 4 for c in c4)


# quarter-spaced phases: block sums are either exactly zero or at least 1/4 away,
# the regime where the closed quasi-polynomial form is well conditioned
phase = st.integers(min_value=-12, max_value=12).map(lambda k: k / 4)


@settings(max_examples=40, deadline=None)
@given(st.lists(phase, min_size=2, max_size=4), st.floats(min_value=0.1, max_value=6.0))
def test_expansion_matches_quadrature(ph, t):
    ex = ordered_expansion([ph])
    total = ex.values(np.array([t])).sum(axis=0)[0, 0]
    ref = ordered_time_integrals(ph, [t])[0, 0]
    assert abs(total - ref) < 1e-8 * (1 + t ** len(ph))


def test_expansion_degenerate_partial_sums():
    # phases with vanishing suffix sums give polynomial growth: t^2 / 2 for (0, 0)
    ex = ordered_expansion([[1.0, -1.0], [0.0, 0.0]])
    t = np.array([0.5, 3.0])
    v = ex.values(t).sum(axis=0)
    assert np.allclose(v[1], t ** 2 / 2, atol=1e-13)
    assert np.allclose(v[0], ordered_time_integrals([1.0, -1.0], t)[0], atol=1e-12)


def test_expansion_split_reconstructs():
    ex = ordered_expansion([[0.3, -1.1, 0.8]])
    t = np.linspace(0, 5, 7)
    poly = ex.polynomial()
    recon = np.einsum("cpd,td->cpt", poly, t[:, None] ** np.arange(poly.shape[-1])) + ex.oscillating(t)
    assert np.allclose(recon, ex.values(t), atol=1e-12)


def test_ieps_limit_rational():
    r = ieps_limit(lambda e: 1.0 / (2.0 - 1j * e) + e ** 2)
    assert abs(r.value - 0.5) < 1e-10 and r.converged


def test_fit_quasi_polynomial_recovers_coefficients():
    t = np.linspace(0, 30, 400)
    y = (0.3 - 1.2j) + 0.7j * t - 0.05 * t ** 2 + (0.2 + 0.01j * t) * np.exp(-1.7j * t) + 0.1 * np.exp(-0.4j * t)
    poly, osc, rms = fit_quasi_polynomial(t, y, [1.7, 0.4], degree=2, osc_degree=1)
    assert np.allclose(poly, [0.3 - 1.2j, 0.7j, -0.05], atol=1e-10)
    assert rms < 1e-10


def test_stationary_phase_relativistic_d1():
    sp = stationary_phase_coeff(relativistic(1.0), gaussian_kernel(1), 1)
    assert sp.omega0 == pytest.approx(1.0)
    assert abs(sp.amplitude - math.sqrt(2 * math.pi) * np.exp(-0.25j * math.pi)) < 1e-12
    # direct C(t) at large t
    t = 400.0
    x, w = np.polynomial.legendre.leggauss(400)
    edges = np.linspace(-8, 8, 161)
    k = np.concatenate([0.5 * (b - a) * x + 0.5 * (a + b) for a, b in zip(edges[:-1], edges[1:])])
    wk = np.concatenate([0.5 * (b - a) * w for a, b in zip(edges[:-1], edges[1:])])
    om = np.sqrt(k * k + 1)
    C = np.sum(wk * np.exp(-k * k) / om ** 2 * np.exp(-1j * t * om))
    approx = sp.amplitude * t ** -0.5 * np.exp(-1j * t)
    assert abs(C - approx) / abs(approx) < 1e-2


def test_stationary_phase_unavailable_without_critical_point():
    from evoasym.model import Dispersion
    tab = Dispersion("tabulated", 1, values=(1.0, 2.0))
    with pytest.raises(AsymptoticsUnavailableError):
        stationary_phase_coeff(tab, gaussian_kernel(1), 1)


def test_ordered_pair_at_pi():
    assert abs(ordered_time_integral([-2.0, 2.0], math.pi) + 0.5j * math.pi) < 1e-14


def test_secular_coefficients_of_weighted_pair():
    t = np.linspace(10, 40, 121)
    v = ordered_time_integrals([-1.0, 1.0], t, n=1)[0]
    poly, _, _ = fit_quasi_polynomial(t, v, [1.0], degree=2, osc_degree=1)
    # t^2/(2iE) - t/(iE)^2 with E = 1
    assert abs(poly[2] - 1 / 2j) < 1e-10
    assert abs(poly[1] - 1.0) < 1e-10
