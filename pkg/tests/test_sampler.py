import numpy as np
import pytest
from scipy import integrate, stats

from martinlab import geometry as geo
from martinlab.kernels import (
    CapabilityError,
    KernelDomainError,
    ProcessSpec,
    ball_exit_radial_cdf,
    ball_exit_time,
    ball_green,
    ball_poisson_kernel,
)
from martinlab.mc import Estimate, workers
from martinlab.sampler import (
    estimate_exit_time,
    estimate_green,
    estimate_harmonic,
    walk_batch,
    walk_exit,
)

S05 = ProcessSpec(1, 0.5)
S15 = ProcessSpec(2, 1.5)
UNIT = geo.interval(0.0, 1.0)


def right_of_one(p):
    return (p[:, 0] >= 1.0).astype(float)


def test_single_ball_walk_is_one_exact_step():
    b = walk_batch(S15, geo.Ball([0.0, 0.0], 1.0), [0.0, 0.0], 100_000, seed=1)
    assert np.all(b.steps == 1)
    rad = np.linalg.norm(b.exit_points, axis=1)
    assert stats.kstest(rad, lambda t: ball_exit_radial_cdf(S15, t)).pvalue > 0.01


@pytest.mark.parametrize("dom,x", [
    (UNIT, [0.3]),
    (geo.punctured(geo.interval(-1.0, 1.0), [0.0]), [0.4]),
    (geo.punctured(geo.Ball([0.0, 0.0], 1.0), [0.0, 0.0]), [0.2, 0.1]),
    (geo.Union((geo.Ball([-0.5, 0.0], 0.8), geo.Ball([0.5, 0.0], 0.8))), [0.9, 0.2]),
])
def test_exits_leave_the_domain_and_terminate(dom, x):
    spec = ProcessSpec(dom.dim, 0.5 if dom.dim == 1 else 1.5)
    b = walk_batch(spec, dom, x, 100_000, seed=2, max_steps=10_000)
    assert b.capped.mean() < 1e-4
    done = b.ok & ~b.absorbed
    assert not np.any(dom.membership(b.exit_points[done]))
    # walks stopped within 1e-12 of the boundary count as exits at that point
    stuck = b.ok & b.absorbed
    assert stuck.mean() < 1e-2
    if stuck.any():
        assert np.all(dom.inscribed_radius(b.exit_points[stuck]) < 1e-11)
    assert np.all(b.time_weight >= 0) and np.all(b.steps >= 1)


def test_walk_exit_single():
    w = walk_exit(S05, UNIT, [0.5], np.random.default_rng(0))
    assert not UNIT.membership(w.exit_point)
    assert w.steps >= 1
    with pytest.raises(ValueError):
        walk_exit(S05, UNIT, [0.5], np.random.default_rng(0), max_steps=0)


def test_exit_side_probability_on_interval():
    # oracle: the Poisson kernel of (0, 1) itself, integrated over [1, inf)
    x = 0.3
    q = integrate.quad(lambda u: float(ball_poisson_kernel(S05, 0.5, [x - 0.5], [0.5 + u])),
                       0, np.inf, limit=400)[0]
    assert q == pytest.approx(0.4203862678576223, rel=1e-9)
    est = estimate_harmonic(S05, UNIT, right_of_one, [x], 100_000, seed=3)
    assert abs(est.mean - q) < 3 * est.stderr


def test_harmonic_constant_data():
    est = estimate_harmonic(S05, UNIT, lambda p: np.ones(len(p)), [0.3], 5000, seed=0)
    assert est.mean == 1.0 and est.stderr == 0.0


def test_harmonic_far_data_on_ball():
    x = 0.3
    g = lambda y: float(ball_poisson_kernel(S05, 1.0, [x], [y]))
    q = integrate.quad(g, 2, np.inf)[0] + integrate.quad(g, -np.inf, -2)[0]
    est = estimate_harmonic(S05, geo.Ball([0.0], 1.0),
                            lambda p: (np.abs(p[:, 0]) > 2).astype(float), [x], 100_000, seed=4)
    assert abs(est.mean - q) < 3 * est.stderr


def test_harmonic_linearity_under_shared_seed():
    h1 = right_of_one
    h2 = lambda p: np.abs(p[:, 0])
    e1 = estimate_harmonic(S05, UNIT, h1, [0.3], 20_000, seed=8)
    e2 = estimate_harmonic(S05, UNIT, h2, [0.3], 20_000, seed=8)
    e = estimate_harmonic(S05, UNIT, lambda p: 2 * h1(p) - 3 * h2(p), [0.3], 20_000, seed=8)
    assert e.mean == pytest.approx(2 * e1.mean - 3 * e2.mean, rel=1e-12)


def test_exit_time_single_step_is_exact():
    x = [0.2, -0.1]
    dom = geo.Ball(x, 1.0)
    est = estimate_exit_time(S15, dom, x, 1000, seed=0)
    assert est.mean == pytest.approx(float(ball_exit_time(S15, 1.0, [0.0, 0.0])), rel=1e-14)
    assert est.stderr == pytest.approx(0.0, abs=1e-15)


def test_exit_time_on_interval_matches_closed_form():
    est = estimate_exit_time(S05, UNIT, [0.3], 100_000, seed=5)
    exact = float(ball_exit_time(S05, 0.5, [-0.2]))
    assert abs(est.mean - exact) < 3 * est.stderr


def test_exit_time_scaling_with_matched_seeds():
    lam = 3.0
    e1 = estimate_exit_time(S05, UNIT, [0.3], 5000, seed=9)
    e2 = estimate_exit_time(S05, geo.interval(0.0, lam), [0.3 * lam], 5000, seed=9)
    assert e2.mean == pytest.approx(lam**0.5 * e1.mean, rel=1e-10)


def test_exit_time_monotone_in_truncation():
    # s_{D cap B(x0, 4r)} <= s_{D cap B(x0, 8r)}, shared seeds, and the ratio stays bounded
    x0 = np.array([0.0])
    ratios = []
    for r in (2.0**-4, 2.0**-6, 2.0**-8):
        x = [r]
        a = estimate_exit_time(S05, geo.truncate(UNIT, x0, 4 * r), x, 20_000, seed=10)
        b = estimate_exit_time(S05, geo.truncate(UNIT, x0, 8 * r), x, 20_000, seed=10)
        assert a.mean <= b.mean + 3 * np.hypot(a.stderr, b.stderr)
        ratios.append(b.mean / a.mean)
    assert max(ratios) < 2.0


def test_green_single_ball_exact():
    x, y = [0.1, 0.0], [0.4, 0.3]
    est = estimate_green(S15, geo.Ball(x, 1.0), x, y, 100, seed=0, cap=None)
    exact = float(ball_green(S15, 1.0, [0.0, 0.0], np.subtract(y, x)))
    assert est.mean == pytest.approx(exact, rel=1e-12)
    assert est.stderr == pytest.approx(0.0, abs=1e-15)


def test_green_off_center_matches_closed_form():
    x, y = [0.3, 0.1], [-0.2, 0.3]
    exact = float(ball_green(S15, 1.0, x, y))
    est = estimate_green(S15, geo.Ball([0.0, 0.0], 1.0), x, y, 100_000, seed=6, cap=None)
    assert abs(est.mean - exact) < 3 * est.stderr
    capped = estimate_green(S15, geo.Ball([0.0, 0.0], 1.0), x, y, 100_000, seed=6)
    assert capped.info["cap_excess"] >= 0
    assert abs(capped.mean + capped.info["cap_excess"] - exact) < 3 * capped.stderr


def test_green_errors():
    with pytest.raises(KernelDomainError):
        estimate_green(S15, geo.Ball([0.0, 0.0], 1.0), [0.0, 0.0], [2.0, 0.0], 10)
    with pytest.raises(CapabilityError):
        estimate_green(ProcessSpec(1, 1.5), UNIT, [0.5], [0.2], 10)


def test_seed_determinism_and_worker_independence():
    def run():
        return estimate_exit_time(S05, geo.punctured(geo.interval(-1, 1), [0.0]), [0.3],
                                  20_000, seed=42)
    with workers(1):
        a = run()
    with workers(4):
        b = run()
    assert (a.mean, a.stderr, a.n) == (b.mean, b.stderr, b.n)
    c = estimate_exit_time(S05, UNIT, [0.3], 20_000, seed=43)
    assert c.mean != a.mean


def test_estimate_from_samples():
    e = Estimate.from_samples([1.0, 2.0, 3.0, 4.0], seed=1)
    assert e.mean == 2.5
    assert e.stderr == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    lo, hi = e.interval()
    assert lo < 2.5 < hi
