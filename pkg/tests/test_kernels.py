import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spdefem.errors import ConfigurationError
from spdefem.kernels import (CustomStationaryKernel, KernelSpec, bessel_k,
                             eval_lag, kernel_eval, metadata, predict_rates)

ALL_SPECS = [
    KernelSpec("matern", sigma2=10.0, rho=0.25, nu=0.5),
    KernelSpec("matern", sigma2=10.0, rho=0.25, nu=0.01),
    KernelSpec("matern", sigma2=10.0, rho=0.25, nu=1.0),
    KernelSpec("gaussian", sigma2=10.0, rho=0.25),
    KernelSpec("poly_wendland1", sigma2=1.0),
    KernelSpec("poly_wendland2", sigma2=10.0),
    KernelSpec("factorizable_exponential", sigma2=10.0, rho=0.25),
]

# Independent oracle: high-precision quadrature of int_0^inf e^(-x cosh t) cosh(nu t) dt
# (mpmath, 30 digits), frozen before the implementation was trusted.
BESSEL_QUADRATURE_ORACLE = [
    (0.01, 0.5, 0.924475603609398141),
    (0.01, 3.0, 0.0347400103254719779),
    (2.3, 0.7, 5.97596176121058115),
    (2.3, 5.0, 0.00596135031744110198),
    (4.99, 1.3, 91.4080028062500203),
    (1.0, 2.0, 0.139865881816522427),
    (3.0, 0.05, 63980.0062395076519),
    (0.77, 17.0, 1.27082883577394509e-8),
    (0.5, 1.0, 0.461068504447894558),
]


# -- bessel_k ------------------------------------------------------------------

@pytest.mark.parametrize("nu,x,expected", BESSEL_QUADRATURE_ORACLE)
def test_bessel_matches_quadrature_oracle(nu, x, expected):
    assert bessel_k(nu, x) == pytest.approx(expected, rel=1e-10)


@pytest.mark.parametrize("nu", [0.5, 1.5, 2.5])
def test_bessel_half_integer_closed_forms(nu):
    x = np.geomspace(1e-3, 30.0, 400)
    pref = np.sqrt(np.pi / (2.0 * x)) * np.exp(-x)
    if nu == 0.5:
        ref = pref
    elif nu == 1.5:
        ref = pref * (1.0 + 1.0 / x)
    else:
        ref = pref * (1.0 + 3.0 / x + 3.0 / x ** 2)
    got = bessel_k(nu, x)
    assert np.max(np.abs(got - ref) / ref) < 1e-10


def test_bessel_k12_at_one():
    assert bessel_k(0.5, 1.0) == pytest.approx(math.sqrt(math.pi / 2.0) * math.exp(-1.0),
                                               rel=1e-12)
    assert bessel_k(1.5, 1.0) == pytest.approx(2.0 * math.sqrt(math.pi / 2.0) * math.exp(-1.0),
                                               rel=1e-12)


def test_bessel_domain_errors():
    with pytest.raises(ValueError):
        bessel_k(0.5, 0.0)
    with pytest.raises(ValueError):
        bessel_k(0.5, -1.0)
    with pytest.raises(ValueError):
        bessel_k(6.0, 1.0)
    with pytest.raises(ValueError):
        bessel_k(0.0, 1.0)


# -- evaluation ----------------------------------------------------------------

def test_matern_exponential_special_case():
    k = KernelSpec("matern", sigma2=10.0, rho=0.25, nu=0.5)
    assert kernel_eval(k, [0.25, 0.0], [0.0, 0.0]) == pytest.approx(10.0 * math.exp(-1.0),
                                                                    rel=1e-12)
    # arbitrary direction, same radius
    p = np.array([0.25, 0.0]) / math.sqrt(2.0)
    assert kernel_eval(k, p, -p) == pytest.approx(10.0 * math.exp(-np.hypot(*(2 * p)) / 0.25),
                                                  rel=1e-12)


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: f"{s.variant}-{s.nu}")
def test_zero_lag_is_sigma2(spec):
    x = np.array([0.37, 0.81])
    assert kernel_eval(spec, x, x) == spec.sigma2


def test_poly_wendland1_values():
    k = KernelSpec("poly_wendland1", sigma2=1.0)
    assert kernel_eval(k, [0.5, 0.0], [0.0, 0.0]) == pytest.approx(0.25, rel=1e-14)
    assert kernel_eval(k, [1.2, 0.0], [0.0, 0.0]) == 0.0


def test_poly_wendland2_values():
    k = KernelSpec("poly_wendland2", sigma2=10.0)
    u = 0.3
    assert kernel_eval(k, [u, 0.0], [0.0, 0.0]) == pytest.approx(
        10.0 * (1 - u) ** 4 * (4 * u + 1), rel=1e-14)
    assert kernel_eval(k, [0.8, 0.8], [0.0, 0.0]) == 0.0


def test_factorizable_exponential_form():
    k = KernelSpec("factorizable_exponential", sigma2=10.0, rho=0.25)
    got = kernel_eval(k, [0.3, 0.5], [0.1, 0.1])
    assert got == pytest.approx(10.0 * math.exp(-(0.2 + 0.4) / 0.25), rel=1e-13)


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: f"{s.variant}-{s.nu}")
def test_symmetry_and_range(spec):
    rng = np.random.default_rng(5)
    x = rng.random((200, 2))
    y = rng.random((200, 2))
    qxy = kernel_eval(spec, x, y)
    qyx = kernel_eval(spec, y, x)
    assert np.allclose(qxy, qyx, rtol=1e-13)
    assert np.all(np.abs(qxy) <= spec.sigma2 * (1 + 1e-12))


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: f"{s.variant}-{s.nu}")
def test_positive_semidefinite_spot_check(spec):
    rng = np.random.default_rng(11)
    pts = rng.random((20, 2))
    cov = kernel_eval(spec, pts[:, None, :], pts[None, :, :])
    eigs = np.linalg.eigvalsh(cov)
    assert eigs.min() >= -1e-8 * eigs.max()


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: f"{s.variant}-{s.nu}")
def test_holder_ratio_finite_and_stable(spec):
    gamma = metadata(spec).gamma
    rng = np.random.default_rng(23)
    x = rng.random((10 ** 4, 2))
    y = rng.random((10 ** 4, 2))

    def max_ratio(a, b):
        d = np.hypot(a[:, 0] - b[:, 0], a[:, 1] - b[:, 1])
        keep = d > 1e-12
        num = (kernel_eval(spec, a, a) - 2.0 * kernel_eval(spec, a, b)
               + kernel_eval(spec, b, b))
        return np.max(num[keep] / d[keep] ** (2.0 * gamma))

    m1 = max_ratio(x, y)
    m2 = max_ratio(x, 0.5 * (x + y))    # pair refinement: half the distances
    assert np.isfinite(m1) and np.isfinite(m2)
    assert m2 <= 4.0 * max(m1, 1e-12)


def test_matern_continuity_at_zero_lag():
    for nu in (0.5, 1.0, 2.3):
        k = KernelSpec("matern", sigma2=10.0, rho=0.25, nu=nu)
        assert abs(kernel_eval(k, [1e-8, 0.0], [0.0, 0.0]) - 10.0) < 1e-6 * 10.0
    # nu = 0.01 approaches sigma^2 only at scale exp(-1/nu): at lag 1e-8 the
    # correction term (Gamma(-nu)/Gamma(nu)) (z/2)^(2 nu) is still order one.
    k = KernelSpec("matern", sigma2=1.0, rho=0.25, nu=0.01)
    z = math.sqrt(0.02) * 1e-8 / 0.25
    correction = (math.gamma(-0.01) / math.gamma(0.01)) * (z / 2.0) ** 0.02
    expected = 1.0 + correction
    assert kernel_eval(k, [1e-8, 0.0], [0.0, 0.0]) == pytest.approx(expected, abs=2e-3)


def test_custom_stationary_kernel_hook():
    const = CustomStationaryKernel(lambda lag: np.full(lag.shape[:-1], 7.0), sup=7.0)
    assert eval_lag(const, [0.3, 0.4]) == 7.0
    assert const.sup_abs == 7.0


# -- validation -----------------------------------------------------------------

def test_kernelspec_validation():
    with pytest.raises(ConfigurationError):
        KernelSpec("matern", sigma2=10.0, rho=0.25)        # nu missing
    with pytest.raises(ConfigurationError):
        KernelSpec("matern", sigma2=10.0, rho=0.25, nu=6.0)
    with pytest.raises(ConfigurationError):
        KernelSpec("matern", sigma2=-1.0, rho=0.25, nu=0.5)
    with pytest.raises(ConfigurationError):
        KernelSpec("gaussian", sigma2=1.0, rho=0.0)
    with pytest.raises(ConfigurationError):
        KernelSpec("gaussian", sigma2=1.0, rho=1.0, nu=0.5)  # nu not a gaussian parameter
    with pytest.raises(ConfigurationError):
        KernelSpec("brownian_sheet", sigma2=1.0)
    with pytest.raises(ConfigurationError):
        KernelSpec("poly_wendland1", sigma2=1.0, support_radius=0.0)


# -- metadata and rates -----------------------------------------------------------

def test_metadata_values():
    m = metadata(KernelSpec("matern", sigma2=1.0, rho=1.0, nu=0.5))
    assert (m.gamma, m.mu, m.psi) == (0.5, 1.5, 2.0)
    m = metadata(KernelSpec("matern", sigma2=1.0, rho=1.0, nu=1.0))
    assert m.gamma == 1.0 and m.gamma_is_sup
    m = metadata(KernelSpec("gaussian", sigma2=1.0, rho=1.0))
    assert m.gamma == 1.0 and m.mu > 1.0 and m.psi == 2.0
    m = metadata(KernelSpec("poly_wendland1", sigma2=1.0))
    assert (m.gamma, m.mu, m.psi) == (0.5, 1.5, 2.0)
    m = metadata(KernelSpec("poly_wendland2", sigma2=1.0))
    assert (m.gamma, m.mu, m.psi) == (1.0, 2.5, 2.0)
    m = metadata(KernelSpec("factorizable_exponential", sigma2=1.0, rho=1.0))
    assert m.gamma == 0.5 and m.mu == 1.0 and m.mu_is_sup and m.mu * m.psi > 2.0


def test_predict_rates_matern_neumann():
    pred = predict_rates(KernelSpec("matern", sigma2=10.0, rho=0.25, nu=0.5), "neumann")
    assert pred.r1_sup == 0.5
    assert pred.r2_sup == 1.5
    assert pred.theta == 1.5
    assert not pred.noise_dominant        # tie counts as non-dominant
    assert pred.overall == 1.5


def test_predict_rates_exponential_vs_factorizable_dirichlet():
    exp_pred = predict_rates(KernelSpec("matern", sigma2=10.0, rho=0.25, nu=0.5), "dirichlet")
    fac_pred = predict_rates(KernelSpec("factorizable_exponential", sigma2=10.0, rho=0.25),
                             "dirichlet")
    assert 1.0 + exp_pred.r1_sup == 1.5
    assert 1.0 + fac_pred.r1_sup == 1.5
    assert exp_pred.r2_sup == 1.5
    assert fac_pred.r2_sup == 1.0
    assert fac_pred.noise_dominant and not exp_pred.noise_dominant


def test_predict_rates_rough_initial_value():
    pred = predict_rates(KernelSpec("poly_wendland2", sigma2=10.0), "neumann", x0_cap=0.0)
    assert 1.0 + pred.r1_sup == 1.0
    assert pred.r2_sup == 2.0


def test_predict_rates_nu_scan_overall():
    overall = [predict_rates(KernelSpec("matern", sigma2=10.0, rho=0.25, nu=nu),
                             "neumann").overall
               for nu in (0.01, 0.5, 1.0)]
    assert overall == [pytest.approx(1.01), pytest.approx(1.5), pytest.approx(2.0)]


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(0.05, 2.0), st.floats(0.1, 20.0))
def test_matern_eval_bounded_property(nu, rho, sigma2):
    k = KernelSpec("matern", sigma2=sigma2, rho=rho, nu=nu)
    lags = np.array([[0.0, 0.0], [1e-9, 0.0], [0.1, 0.2], [1.0, 1.0], [3.0, -2.0]])
    vals = eval_lag(k, lags)
    assert vals[0] == sigma2
    assert np.all(vals <= sigma2 + 1e-12)
    assert np.all(vals >= 0.0)
    assert np.all(np.diff(vals) <= 1e-12)   # radially decreasing for these lags
