import math

import numpy as np
import pytest
from scipy import integrate as spi

from evoasym.fock import build_fock, momentum_selector, one_particle_state
from evoasym.model import (
    ConfigError,
    CubicTI,
    LeeModel,
    LinearCoupling,
    PureCreation,
    build_grid,
    constant_kernel,
    cubic_ti_kernel,
    gaussian_kernel,
    nonrel_shifted,
    omega_gaussian_kernel,
    relativistic,
    single_node_grid,
)
from evoasym.numerics import SingularDenominatorError
from evoasym.oracles import dyson_order2, dyson_order4, solvable_closed_form
from evoasym.perturb import (
    GridKernel,
    LimitMayNotExistError,
    RouteMismatchError,
    decay_order2,
    gamma_apply,
    m_kernels,
    oneparticle_decay_a2,
    oneparticle_order2,
    oneparticle_order4,
    pair,
    u11_prediction,
    vacuum_order2,
    vacuum_prediction,
)

SQPI = math.sqrt(math.pi)


def kernel(samples, energy):
    s = np.asarray(samples, dtype=complex)
    return GridKernel(s, np.asarray(energy, dtype=float), np.ones(s.shape))


def test_gamma_apply_divides_by_energy():
    k = kernel([1.0, 2.0], [0.5, 4.0])
    assert np.allclose(gamma_apply(k, 1).samples, [2.0, 0.5])
    assert np.allclose(gamma_apply(k, 2).samples, [4.0, 0.125])
    assert np.allclose(gamma_apply(k, 1, eps=0.1).samples, [1 / (0.5 + 0.1j), 2 / (4 + 0.1j)])
    assert np.allclose(gamma_apply(k, 1, eps=0.1, sign=-1).samples, [1 / (0.5 - 0.1j), 2 / (4 - 0.1j)])
    assert pair(k, gamma_apply(k, 1)) == pytest.approx(1 / 0.5 + 4 / 4.0)


def test_gamma_apply_errors():
    with pytest.raises(SingularDenominatorError):
        gamma_apply(kernel([1.0, 1.0], [0.0, 1.0]))
    with pytest.raises(ConfigError):
        gamma_apply(kernel([1.0], [1.0]), power=4)
    with pytest.raises(ConfigError):
        gamma_apply(kernel([1.0], [1.0]), eps=-1.0)


# ---------------------------------------------------------------- vacuum, no decay

def test_vacuum_order2_reproduces_closed_form():
    m = LinearCoupling(gaussian_kernel(1), relativistic(1.0), build_grid(1, 5, 2.0), 0.1)
    c = vacuum_order2(m)
    assert abs(c.A.real) < 1e-15 and c.A.imag > 0
    assert abs(c.B.imag) < 1e-15 and c.B.real < 0
    assert abs(c.C(0.0) + c.B) < 1e-15
    t = np.linspace(0, 20, 11)
    pred = vacuum_prediction(c, t, 0.1)
    assert np.max(np.abs(pred - solvable_closed_form(m, t, 0.1).value)) < 1e-14


def test_vacuum_order2_matches_dyson2_pure_creation():
    m = PureCreation(2, gaussian_kernel(2), relativistic(1.0), build_grid(1, 3, 1.5), 0.1)
    c = vacuum_order2(m)
    t = np.array([1.0, 4.0])
    d = dyson_order2(m, "vacuum", t, 1.0)
    assert np.allclose(1 + 1j * 0 + c.A * t + c.B + c.C(t), d.value, atol=1e-12)


def test_vacuum_order2_refuses_decaying_model():
    m = LinearCoupling(gaussian_kernel(1), nonrel_shifted(1.0), build_grid(1, 3, 2.0), 0.1)
    with pytest.raises(RouteMismatchError):
        vacuum_order2(m)


# ---------------------------------------------------------------- vacuum, decay

def test_omega_gaussian_coefficients():
    # v = omega exp(-k^2/2), omega = k^2/2 - 1, d = 1:
    # A = i lam^2 (sqrt(pi)/4 - sqrt(pi)), B = -lam^2 sqrt(pi)
    d = nonrel_shifted(1.0)
    m = LinearCoupling(omega_gaussian_kernel(d), d, build_grid(1, 8, 6.0), 0.1)
    dc = decay_order2(m, require_limit=False)
    lam2 = 0.01
    assert abs(lam2 * dc.A2.value - 1j * lam2 * (SQPI / 4 - SQPI)) < 1e-12
    assert abs(lam2 * dc.B2.value + lam2 * SQPI) < 1e-12


def pure_creation_decay(n):
    return PureCreation(n, gaussian_kernel(n), nonrel_shifted(1.0), build_grid(1, 4, 6.0), 0.1)


def test_decay_dn3_against_principal_value_and_delta_shell():
    dc = decay_order2(pure_creation_decay(3))
    # radial in D = 3: |v|^2 = exp(-r^2), E = r^2/2 - 3, area 4 pi
    r0 = math.sqrt(6.0)
    re = -4 * math.pi ** 2 * r0 * math.exp(-6.0)
    f = lambda r: 4 * math.pi * r * r * math.exp(-r * r) / (r + r0) * 2   # 1/E = 2/((r-r0)(r+r0))
    pv = spi.quad(f, 0, 12, weight="cauchy", wvar=r0, epsabs=1e-13, epsrel=1e-13)[0]
    assert abs(dc.A2.value - (re + 1j * pv)) < 1e-9
    assert abs(dc.A2_ieps.value - dc.A2.value) < 1e-9


def test_decay_dn5_time_vs_ieps():
    dc = decay_order2(pure_creation_decay(5))
    assert abs(dc.A2.value - dc.A2_ieps.value) < 1e-3 * abs(dc.A2.value)
    assert abs(dc.B2.value - dc.B2_ieps.value) < 1e-3 * abs(dc.B2.value)
    # A2(t) and B2(t) approach their limits
    A2t = dc.A2_t([400.0])[0]
    assert abs(A2t - dc.A2.value) < 1e-4


def test_decay_small_dn_refused():
    m = LinearCoupling(gaussian_kernel(1), nonrel_shifted(1.0), build_grid(1, 3, 2.0), 0.1)
    with pytest.raises(LimitMayNotExistError):
        decay_order2(m)


def test_decay_needs_shifted_dispersion():
    m = LinearCoupling(gaussian_kernel(1), relativistic(1.0), build_grid(1, 3, 2.0), 0.1)
    with pytest.raises(RouteMismatchError):
        decay_order2(m)


# ---------------------------------------------------------------- one particle

def ti3():
    return CubicTI(cubic_ti_kernel(), relativistic(1.0), build_grid(1, 3, 1.0, "lattice"), 0.1)


def eigen_shift_coefficients(m, p):
    """lam^2 and lam^4 coefficients of the exact one-particle level shift."""
    basis, V = build_fock(m, 6, 6, momentum_selector(m, p))
    i0 = one_particle_state(m, basis, p)
    lams = np.array([0.04, 0.02, 0.01, 0.005])
    sh = []
    for lam in lams:
        w, U = np.linalg.eigh(np.diag(basis.energies) + lam * V.real)
        k = int(np.argmax(np.abs(U[i0]) ** 2))
        sh.append(w[k] - basis.energies[i0])
    A = np.stack([lams ** 2, lams ** 4, lams ** 6, lams ** 8], 1)
    return np.linalg.solve(A, np.array(sh))[:2]


def test_oneparticle_order2_against_dyson2():
    m = ti3()
    c = oneparticle_order2(m, 1)
    assert abs(c.A.imag) < 1e-15
    t = np.linspace(0, 10, 6)
    pred = u11_prediction(m, 1, t, 0.1, order=2)
    assert np.max(np.abs(pred - dyson_order2(m, ("one_particle", 1), t, 0.1).value)) < 1e-13


def test_oneparticle_order4_against_level_shift():
    m = ti3()
    o4 = oneparticle_order4(m, 1)
    s2, s4 = eigen_shift_coefficients(m, 1)
    # U ~ exp(-i dE t): A2 = -s2, A4 = -s4
    assert abs(o4.A2 + s2) < 1e-8
    assert abs(o4.A4 + s4) < 1e-5
    t = np.linspace(0, 12, 13)
    d4 = dyson_order4(m, ("one_particle", 1), t, 0.1).series[4]
    assert np.max(np.abs(o4.U4(t) - d4)) < 1e-8
    assert abs(o4.U4(0.0)) < 1e-12


def test_m_kernels_identity():
    m = ti3()
    mk = m_kernels(m, 1)
    o4 = oneparticle_order4(m, 1)
    assert abs(mk["M2"] + o4.A2) < 1e-12
    assert abs(mk["M4"] + o4.A4) < 1e-10


def lee(masses=(1.0, 1.2, 1.5), n=5):
    g = build_grid(1, n, 2.0, "lattice")
    return LeeModel(cubic_ti_kernel(), *[relativistic(x) for x in masses], g, 0.1)


def test_lee_order4_has_no_irreducible_shift():
    m = lee()
    o4 = oneparticle_order4(m, 2)
    assert o4.A4_1PI == 0
    t = np.linspace(0, 8, 9)
    d4 = dyson_order4(m, ("one_particle", 2), t, 0.1).series[4]
    assert np.max(np.abs(o4.U4(t) - d4)) < 1e-8


def test_exponential_form_normalized():
    m = ti3()
    v = u11_prediction(m, 1, [0.0], 0.1, order=4, form="exponential")
    assert abs(v[0] - 1) < 1e-12


def test_oneparticle_decay_cubic_ti_two_routes():
    d = nonrel_shifted(1.0)
    m = CubicTI(cubic_ti_kernel(), d, build_grid(1, 5, 2.0, "lattice"), 0.1)
    r = oneparticle_decay_a2(m, 0.5)
    assert abs(r["time"].value - r["ieps"].value) < 1e-4 * abs(r["ieps"].value)
    assert r["ieps"].value.imag > 0


def test_oneparticle_decay_lee_delta_part():
    m = lee((0.2, 0.2, 1.0), 9)
    p = 0.5
    r = oneparticle_decay_a2(m, p)
    wa = wb = lambda k: np.sqrt(k * k + 0.04)
    E2 = lambda q: wa(p - q) + wb(q) - math.sqrt(p * p + 1)
    im = 0.0
    for q in r["roots"]:
        h = 1e-6
        slope = (E2(q + h) - E2(q - h)) / (2 * h)
        im += math.pi * math.exp(-(q * q + (p - q) ** 2)) / abs(slope)
    assert len(r["roots"]) == 2
    assert abs(r["ieps"].value.imag - im) < 1e-6


def test_single_mode_pair_creation_toy():
    c = 0.7
    m = PureCreation(2, constant_kernel(2, c), relativistic(1.0), single_node_grid(1.0), 0.1)
    o = vacuum_order2(m)
    assert abs(o.A - 0.5j * c ** 2) < 1e-15
    assert abs(o.B + c ** 2 / 4) < 1e-15
    t = np.array([0.0, 1.0, 3.3])
    assert np.allclose(o.C(t), c ** 2 / 4 * np.exp(-2j * t), atol=1e-15)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_time_integral_tail_converges(d):
    m = LinearCoupling(gaussian_kernel(1), nonrel_shifted(1.0, d), build_grid(d, 8, 6.0, "radial"), 0.1)
    dc = decay_order2(m, require_limit=False)
    assert dc.A2.error < 1e-6 and dc.B2.error < 1e-6
