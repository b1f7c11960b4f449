import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from martinlab import potential as pt
from martinlab.kernels import (
    CapabilityError,
    KernelDomainError,
    ProcessSpec,
    SingularityError,
    ball_exit_radial_cdf,
    ball_exit_time,
    ball_green,
    ball_poisson_kernel,
    levy_comparability,
    levy_density,
    levy_tail_mass,
    sample_ball_exit,
)

alphas = st.floats(0.05, 1.95)
dims = st.integers(1, 3)


def fourier_symbol(spec, xi):
    # int_R (1 - cos(xi z)) nu(z) dz for d = 1, split at z = 1 so the tail uses QAWF
    a = spec.alpha
    head = integrate.quad(lambda z: (1 - np.cos(xi * z)) * z ** (-1 - a), 0, 1,
                          epsabs=1e-13, limit=200)[0]
    tail = 1.0 / a - integrate.quad(lambda z: z ** (-1 - a), 1, np.inf, weight="cos",
                                    wvar=xi)[0]
    return 2 * spec.levy_norm * (head + tail)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
@pytest.mark.parametrize("xi", [0.5, 1.0, 3.0])
def test_levy_norm_gives_unit_symbol(alpha, xi):
    spec = ProcessSpec(1, alpha)
    assert fourier_symbol(spec, xi) == pytest.approx(abs(xi) ** alpha, rel=1e-7)


def test_levy_density_cauchy_value():
    assert float(levy_density(ProcessSpec(1, 1.0), [0.0], [2.0])) == pytest.approx(
        1 / (4 * np.pi), rel=1e-13)


def test_levy_density_singular():
    with pytest.raises(SingularityError):
        levy_density(ProcessSpec(2, 1.0), [0.1, 0.2], [0.1, 0.2])


@settings(max_examples=50, deadline=None)
@given(dims, alphas, st.integers(0, 2**32 - 1))
def test_levy_density_symmetry_and_scaling(d, a, seed):
    spec = ProcessSpec(d, a)
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, d))
    assert levy_density(spec, x, y) == levy_density(spec, y, x)
    z = rng.normal(size=d)
    lhs = levy_density(spec, np.zeros(d), 2 * z)
    assert lhs == pytest.approx(2.0 ** (-d - a) * levy_density(spec, np.zeros(d), z), rel=1e-12)


def test_levy_tail_mass_cauchy():
    spec = ProcessSpec(1, 1.0)
    quad = 2 * integrate.quad(lambda z: 1 / (np.pi * z * z), 1, np.inf)[0]
    assert float(levy_tail_mass(spec, 1.0)) == pytest.approx(quad, rel=1e-10)
    assert float(levy_tail_mass(spec, 1.0)) == pytest.approx(2 / np.pi, rel=1e-14)


@settings(max_examples=40, deadline=None)
@given(dims, alphas, st.floats(1e-3, 1e3))
def test_levy_tail_mass_doubling(d, a, r):
    spec = ProcessSpec(d, a)
    assert levy_tail_mass(spec, r) / levy_tail_mass(spec, 2 * r) == pytest.approx(2**a, rel=1e-12)


def test_levy_tail_mass_grows_to_infinity():
    spec = ProcessSpec(2, 0.7)
    vals = levy_tail_mass(spec, 2.0 ** -np.arange(40))
    assert np.all(np.diff(vals) > 0)
    assert vals[-1] > 1e7
    with pytest.raises(KernelDomainError):
        levy_tail_mass(spec, 0.0)


def test_levy_comparability_cauchy_grid():
    spec = ProcessSpec(1, 1.0)
    R, r = 1.0, 0.5
    x = np.linspace(-r, r, 2001)
    y = np.concatenate([np.linspace(R, 20, 4000), -np.linspace(R, 20, 4000)])
    ratio = (np.abs(y[None]) / np.abs(y[None] - x[:, None])) ** 2
    grid_max = np.max(np.maximum(ratio, 1 / ratio))
    assert grid_max == pytest.approx(4.0, rel=1e-12)
    assert levy_comparability(spec, r, R) == 4.0


@settings(max_examples=40, deadline=None)
@given(dims, alphas, st.floats(0.01, 0.9))
def test_levy_comparability_properties(d, a, frac):
    spec = ProcessSpec(d, a)
    c = levy_comparability(spec, frac, 1.0)
    assert c >= 1.0
    assert levy_comparability(spec, frac * 0.5, 1.0) <= c
    # constant along r -> 2r family, and tends to 1 as r -> 0
    assert levy_comparability(spec, frac, 2 * frac + 1) == pytest.approx(
        levy_comparability(spec, 3 * frac, 3 * (2 * frac + 1)), rel=1e-12)
    assert levy_comparability(spec, 1e-12, 1.0) == pytest.approx(1.0, abs=1e-9)


def test_levy_comparability_domain():
    with pytest.raises(KernelDomainError):
        levy_comparability(ProcessSpec(1, 1.0), 1.0, 1.0)


def test_poisson_kernel_cauchy_value():
    spec = ProcessSpec(1, 1.0)
    val = float(ball_poisson_kernel(spec, 1.0, [0.0], [2.0]))
    assert val == pytest.approx(1 / (2 * np.pi * np.sqrt(3)), rel=1e-13)


@pytest.mark.parametrize("d,alpha", [(1, 0.5), (2, 1.5), (1, 1.0), (1, 1.5), (2, 0.5)])
@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_poisson_kernel_normalised(d, alpha, r):
    x = np.zeros(d)
    x[0] = 0.3 * r
    assert pt.poisson_mass(ProcessSpec(d, alpha), r, x) == pytest.approx(1.0, abs=1e-6)


def test_poisson_kernel_isotropic_at_center():
    spec = ProcessSpec(3, 1.2)
    rng = np.random.default_rng(0)
    u = rng.normal(size=(20, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    vals = ball_poisson_kernel(spec, 1.0, np.zeros(3), 1.7 * u)
    np.testing.assert_allclose(vals, vals[0], rtol=1e-13)


def test_poisson_kernel_domain_errors():
    spec = ProcessSpec(1, 1.0)
    with pytest.raises(KernelDomainError):
        ball_poisson_kernel(spec, 1.0, [1.0], [2.0])
    with pytest.raises(KernelDomainError):
        ball_poisson_kernel(spec, 1.0, [0.0], [0.5])


@pytest.mark.parametrize("d", [1, 2, 3])
def test_exit_radius_median_sqrt2_for_cauchy(d):
    spec = ProcessSpec(d, 1.0)
    t = np.sqrt(2)
    arcsine = 2 / np.pi * np.arcsin(np.sqrt(1 - 1 / t**2))
    assert ball_exit_radial_cdf(spec, t) == pytest.approx(0.5, abs=1e-14)
    assert arcsine == pytest.approx(0.5, abs=1e-14)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.7])
def test_exit_radial_cdf_matches_density_quadrature(alpha):
    # radial density of |Y|/r in d = 1 from the Poisson kernel at the center
    spec = ProcessSpec(1, alpha)
    for t in (1.05, 1.5, 3.0, 10.0):
        q = 2 * integrate.quad(lambda y: float(ball_poisson_kernel(spec, 1.0, [0.0], [y])),
                               1.0, t, limit=200)[0]
        assert float(ball_exit_radial_cdf(spec, t)) == pytest.approx(q, abs=1e-8)


@pytest.mark.parametrize("d,alpha", [(1, 0.5), (2, 1.5), (3, 1.0)])
def test_sample_ball_exit_law(d, alpha):
    spec = ProcessSpec(d, alpha)
    rng = np.random.default_rng(12345)
    y = sample_ball_exit(spec, 2.0, rng, 100_000)
    rad = np.linalg.norm(y, axis=1) / 2.0
    assert np.all(rad > 1.0 - 1e-15)
    assert stats.kstest(rad, lambda t: ball_exit_radial_cdf(spec, t)).pvalue > 0.01
    u = y / np.linalg.norm(y, axis=1, keepdims=True)
    se = u.std(axis=0, ddof=1) / np.sqrt(len(u))
    assert np.all(np.abs(u.mean(axis=0)) < 3 * se + 1e-12)


def test_exit_time_values():
    assert float(ball_exit_time(ProcessSpec(1, 1.0), 1.0, [0.0])) == pytest.approx(1.0, rel=1e-15)
    assert float(ball_exit_time(ProcessSpec(2, 1.3), 1.0, [0.6, 0.8])) == 0.0
    with pytest.raises(KernelDomainError):
        ball_exit_time(ProcessSpec(1, 1.0), 1.0, [1.5])


@settings(max_examples=40, deadline=None)
@given(dims, alphas, st.floats(0.0, 0.99))
def test_exit_time_scaling(d, a, frac):
    spec = ProcessSpec(d, a)
    x = np.zeros(d)
    x[0] = frac
    assert ball_exit_time(spec, 3.0, 3 * x) == pytest.approx(3.0**a * ball_exit_time(spec, 1.0, x),
                                                           rel=1e-12)


def test_ball_green_regression_value():
    # pinned; equals kappa * |x-y|^(a-d) * int_0^3 s^(a/2-1) (1+s)^(-1) ds by mpmath
    v = float(ball_green(ProcessSpec(2, 1.5), 1.0, [0.0, 0.0], [0.5, 0.0]))
    assert v == pytest.approx(0.16698865333615906, rel=1e-12)


def test_ball_green_total_mass_is_exit_time_1d():
    spec = ProcessSpec(1, 0.5)
    x = 0.3
    g = lambda y: float(ball_green(spec, 1.0, [x], [y]))
    total = (integrate.quad(g, -1, x, limit=200)[0] + integrate.quad(g, x, 1, limit=200)[0])
    assert total == pytest.approx(float(ball_exit_time(spec, 1.0, [x])), rel=1e-4)


def test_ball_green_total_mass_is_exit_time_2d():
    spec = ProcessSpec(2, 1.5)
    f = lambda rho: 2 * np.pi * rho * float(ball_green(spec, 1.0, [0.0, 0.0], [rho, 0.0]))
    total = integrate.quad(f, 0, 1, limit=200)[0]
    assert total == pytest.approx(float(ball_exit_time(spec, 1.0, [0.0, 0.0])), rel=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ball_green_symmetric(seed):
    spec = ProcessSpec(2, 1.5)
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(-0.6, 0.6, size=(2, 2))
    assert ball_green(spec, 1.0, x, y) == ball_green(spec, 1.0, y, x)


def test_ball_green_errors():
    with pytest.raises(CapabilityError):
        ball_green(ProcessSpec(1, 1.5), 1.0, [0.0], [0.5])
    with pytest.raises(SingularityError):
        ball_green(ProcessSpec(2, 1.0), 1.0, [0.1, 0.0], [0.1, 0.0])


@pytest.mark.parametrize("d,alpha,r,x,y", [
    (1, 0.5, 1.0, [0.3], [1.3]),
    (1, 0.5, 1.0, [-0.6], [-1.05]),
    (2, 1.5, 1.0, [0.3, 0.2], [1.3, 0.4]),
])
def test_ikeda_watanabe(d, alpha, r, x, y):
    _, _, gap = pt.ikeda_watanabe_check(ProcessSpec(d, alpha), r, np.array(x), np.array(y))
    assert gap < 1e-4


def test_process_spec_validation():
    for bad in [(0, 1.0), (1, 0.0), (1, 2.0), (1.5, 1.0)]:
        with pytest.raises(KernelDomainError):
            ProcessSpec(*bad)
