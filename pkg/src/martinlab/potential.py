"""Boundary behaviour of positive harmonic functions, numerically.

The central objects are ring functionals

    M_{r,s}(f) = int_{r < |y - x0| < s} f(y) nu(x0, y) dy,

whose ratio for two harmonic functions f, g converges, as r -> 0, to the
boundary limit of f/g at x0. Harmonic functions are evaluated inside their
domain of harmonicity by walk-on-spheres and directly from data outside.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats

from . import geometry as geo
from .kernels import (
    CapabilityError,
    KernelDomainError,
    ProcessSpec,
    ball_green,
    ball_exit_interval_mass,
    ball_poisson_kernel,
    levy_density,
    levy_tail_mass,
    sample_directions,
)
from .mc import Estimate, ReliabilityError, map_blocks, ratio_estimate
from .sampler import CAP_FRACTION, MAX_STEPS, walk_batch

__all__ = [
    "HarmonicFn",
    "ExteriorData",
    "IntervalData",
    "ExitTime",
    "GreenSlice",
    "RingFunctional",
    "ring_functional",
    "ring_profile",
    "decompose",
    "dynkin_check",
    "ikeda_watanabe_check",
    "poisson_mass",
    "oscillation",
    "empirical_contraction",
    "classify_accessibility",
    "boundary_limit",
    "exterior_ring",
    "pointwise_ratio",
    "martin_kernel_green_ratio",
    "martin_kernel_inaccessible",
    "ball_martin_kernel",
]


# ---------------------------------------------------------------------------------------
# harmonic functions


class HarmonicFn:
    """A nonnegative function harmonic in ``dom`` and known explicitly outside it."""

    dom: geo.Domain

    def outside(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def from_walks(self, batch) -> np.ndarray:
        """One unbiased sample per walk of a batch started inside ``dom``."""
        raise NotImplementedError

    def targets(self):
        return None

    def samples(self, spec: ProcessSpec, pts, seed: int, n_inner: int = 1, key=()):
        return evaluate([self], spec, pts, seed, n_inner, key)[:, 0]


@dataclass(frozen=True, eq=False)
class ExteriorData(HarmonicFn):
    """Regular harmonic extension to ``dom`` of exterior data ``h``."""

    h: object
    dom: geo.Domain
    name: str = "h"

    def outside(self, pts):
        return np.asarray(self.h(pts), dtype=float)

    def from_walks(self, batch):
        return np.asarray(self.h(batch.exit_points), dtype=float)


@dataclass(frozen=True, eq=False)
class IntervalData(HarmonicFn):
    """d = 1 exterior data sum_i w_i 1_[lo_i, hi_i] supported off ``dom``.

    Evaluated by the expected-value walk estimator: each step scores the exact
    probability-weighted payoff of its ball-exit jump landing in the data, so
    the exit indicator noise is integrated out.
    """

    pieces: tuple
    dom: geo.Domain
    name: str = "h"

    def __post_init__(self):
        if self.dom.dim != 1:
            raise CapabilityError("IntervalData is one-dimensional")
        for lo, hi, _ in self.pieces:
            if not lo < hi:
                raise ValueError("interval pieces need lo < hi")
            probe = np.array([[lo], [hi], [0.5 * (lo + hi)]])
            probe = probe[np.isfinite(probe[:, 0])]
            if np.any(self.dom._contains(probe)):
                raise ValueError("interval data must vanish on the domain")

    def outside(self, pts):
        y = np.asarray(pts, dtype=float)[:, 0]
        out = np.zeros(len(y))
        for lo, hi, w in self.pieces:
            out += w * ((y >= lo) & (y <= hi))
        return out

    def from_walks(self, batch):
        return self.outside(batch.exit_points)

    def scorer(self, spec: ProcessSpec):
        def score(p, rho):
            c = p[:, 0]
            return sum(w * ball_exit_interval_mass(spec, rho, c, lo, hi)
                       for lo, hi, w in self.pieces)
        return score


@dataclass(frozen=True, eq=False)
class ExitTime(HarmonicFn):
    """y -> E_y tau_dom, zero outside ``dom``."""

    dom: geo.Domain
    name: str = "exit_time"

    def outside(self, pts):
        return np.zeros(len(pts))

    def from_walks(self, batch):
        return batch.time_weight


@dataclass(frozen=True, eq=False)
class GreenSlice(HarmonicFn):
    """y -> G_dom(y, pole) (= G_dom(pole, y) by symmetry), zero outside ``dom``."""

    dom: geo.Domain
    pole: np.ndarray
    cap: float | None = None
    name: str = "green"

    def outside(self, pts):
        return np.zeros(len(pts))

    def targets(self):
        return [np.atleast_1d(np.asarray(self.pole, dtype=float))]

    def from_walks(self, batch):
        return batch.green[:, 0]


def evaluate(fns, spec: ProcessSpec, pts, seed: int, n_inner: int = 1, key=(),
             max_steps: int = MAX_STEPS):
    """Sample several harmonic functions at ``pts``, sharing walks where possible.

    Returns an array (len(pts), len(fns)) of per-point averages over
    ``n_inner`` walks. Functions on the same domain object reuse one walk
    per start, so their samples are coupled.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    out = np.zeros((len(pts), len(fns)))
    groups: dict[int, list[int]] = {}
    for j, f in enumerate(fns):
        groups.setdefault(id(f.dom), []).append(j)
    for gi, idx in enumerate(groups.values()):
        dom = fns[idx[0]].dom
        inside = dom._contains(pts)
        for j in idx:
            if np.any(~inside):
                out[~inside, j] = fns[j].outside(pts[~inside])
        if not np.any(inside):
            continue
        starts = np.repeat(pts[inside], n_inner, axis=0)
        tg, sc, col = [], [], {}
        for j in idx:
            if isinstance(fns[j], GreenSlice):
                col[j] = ("green", len(tg))
                tg.extend(fns[j].targets())
            elif isinstance(fns[j], IntervalData):
                col[j] = ("scores", len(sc))
                sc.append(fns[j].scorer(spec))
        caps = [fns[j].cap for j in idx if isinstance(fns[j], GreenSlice)]
        cap = min((c for c in caps if c is not None), default=None)
        batch = walk_batch(spec, dom, starts, seed=seed, targets=tg or None, cap=cap,
                           key=(*key, gi), max_steps=max_steps,
                           scorers=sc or None).check(CAP_FRACTION)
        ok = batch.ok
        for j in idx:
            f = fns[j]
            if j in col:
                vals = getattr(batch, col[j][0])[:, col[j][1]]
            else:
                vals = f.from_walks(batch)
            vals = np.where(ok, vals, 0.0).reshape(-1, n_inner)
            cnt = ok.reshape(-1, n_inner).sum(axis=1)
            out[inside, j] = vals.sum(axis=1) / np.maximum(cnt, 1)
    return out


# ---------------------------------------------------------------------------------------
# ring functionals


@dataclass(frozen=True)
class RingFunctional:
    r: float
    s: float
    value: Estimate


def sample_ring_radii(alpha: float, r: float, s: float, u: np.ndarray) -> np.ndarray:
    """Inverse CDF of the density proportional to t^(-1-alpha) on (r, s)."""
    lo = r ** (-alpha)
    hi = 0.0 if math.isinf(s) else s ** (-alpha)
    return (lo - u * (lo - hi)) ** (-1.0 / alpha)


def _ring_points(spec, x0, r, s, n, rng):
    rad = sample_ring_radii(spec.alpha, r, s, rng.random(n))
    return np.asarray(x0, dtype=float) + sample_directions(spec.d, n, rng) * rad[:, None]


def ring_mass(spec: ProcessSpec, r: float, s: float) -> float:
    tail_s = 0.0 if math.isinf(s) else float(levy_tail_mass(spec, s))
    return float(levy_tail_mass(spec, r)) - tail_s


def _ring_samples(spec, fns, x0, r, s, n_outer, n_inner, seed, key):
    """Outer points drawn from nu(x0, .) on the ring and the functions sampled there."""
    pts = np.concatenate(map_blocks(lambda lo, hi, rng: _ring_points(spec, x0, r, s, hi - lo, rng),
                                    n_outer, seed, (*key, 1)))
    vals = evaluate(fns, spec, pts, seed, n_inner, key=(*key, 2))
    return pts, vals


def ring_functional(spec: ProcessSpec, f: HarmonicFn, x0, r: float, s: float,
                    n_outer: int, n_inner: int = 1, seed: int = 0, key=()) -> RingFunctional:
    """Importance-sampled M_{r,s}(f).

    Points are drawn from nu(x0, .) restricted to the ring (exact inverse CDF
    in the radius, uniform direction), so the estimator is the ring's nu-mass
    times the mean of f. The standard error uses the spread of the per-point
    averages, which contains both the outer and the inner variance.
    """
    if not 0 < r < s:
        raise KernelDomainError(f"ring functional needs 0 < r < s, got r={r}, s={s}")
    _, vals = _ring_samples(spec, [f], x0, r, s, n_outer, n_inner, seed, key)
    mass = ring_mass(spec, r, s)
    est = Estimate.from_samples(vals[:, 0], seed).scaled(mass)
    return RingFunctional(r, s, est)


@dataclass
class RingProfile:
    """Octave-stratified ring functionals of several functions.

    ``increments[k, j]`` estimates M_{radii[k], radii[k-1]}(f_j) (with
    ``radii[-1]`` read as ``outer``), and ``samples[k]`` keeps the per-point
    values so ratios can be formed with a stratified delta method.
    """

    radii: np.ndarray
    outer: float
    masses: np.ndarray
    samples: list
    seed: int

    @property
    def increments(self) -> np.ndarray:
        return np.array([m * v.mean(axis=0) for m, v in zip(self.masses, self.samples)])

    @property
    def increment_se(self) -> np.ndarray:
        return np.array([m * v.std(axis=0, ddof=1) / math.sqrt(len(v))
                         for m, v in zip(self.masses, self.samples)])

    def cumulative(self, j: int = 0, extra: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        """M_{radii[k], outer}(f_j) + extra and its standard error, for every k."""
        inc = self.increments[:, j]
        var = self.increment_se[:, j] ** 2
        return np.cumsum(inc) + extra, np.sqrt(np.cumsum(var))

    def ratio(self, k: int, num: int = 0, den: int = 1, extra=(0.0, 0.0)):
        """Ratio M_{radii[k],outer}(f_num)/M(f_den) with a stratified delta-method error."""
        a = sum(self.masses[i] * self.samples[i][:, num].mean() for i in range(k + 1)) + extra[0]
        b = sum(self.masses[i] * self.samples[i][:, den].mean() for i in range(k + 1)) + extra[1]
        if b <= 0:
            raise ReliabilityError("denominator ring functional is not positive")
        q = a / b
        var = 0.0
        for i in range(k + 1):
            v = self.samples[i]
            resid = v[:, num] - q * v[:, den]
            var += self.masses[i] ** 2 * resid.var(ddof=1) / len(v)
        return Estimate(q, math.sqrt(var) / b, sum(len(s) for s in self.samples[:k + 1]),
                        self.seed)


def ring_profile(spec: ProcessSpec, fns, x0, radii, outer: float, n_outer: int,
                 n_inner: int = 1, seed: int = 0) -> RingProfile:
    """Ring functionals of ``fns`` on the strata (radii[k], radii[k-1]), radii[-1] = outer."""
    radii = np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) >= 0) or radii[0] >= outer or radii[-1] <= 0:
        raise KernelDomainError("radii must decrease strictly and stay inside (0, outer)")
    edges = np.concatenate([[outer], radii])
    masses, samples = [], []
    for k in range(len(radii)):
        _, vals = _ring_samples(spec, list(fns), x0, edges[k + 1], edges[k], n_outer, n_inner,
                                seed, key=(k,))
        masses.append(ring_mass(spec, edges[k + 1], edges[k]))
        samples.append(vals)
    return RingProfile(radii, outer, np.array(masses), samples, seed)


# ---------------------------------------------------------------------------------------
# decomposition, Dynkin, oscillation


def decompose(spec: ProcessSpec, f: HarmonicFn, x0, r: float, s: float, x, n: int,
              seed: int = 0) -> tuple[Estimate, Estimate]:
    """f = f_{r,s} + ftilde_{r,s} at ``x`` in D_r = D cap B(x0, r).

    Walks run in D_r; at their exit Y the walk continues in D, and the final
    payoff is credited to the near part when |Y - x0| < s and to the far part
    otherwise.
    """
    if not 0 < r < s:
        raise KernelDomainError("decompose needs 0 < r < s")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    dom_r = geo.truncate(f.dom, x0, r)
    first = walk_batch(spec, dom_r, x, n, seed, key=(1,)).check()
    y = first.exit_points
    near = np.linalg.norm(y - x0, axis=1) < s
    vals = evaluate([f], spec, y, seed, 1, key=(2,))[:, 0]
    vals = np.where(first.ok, vals, 0.0)
    m = int(first.ok.sum())
    a = np.where(near, vals, 0.0)[first.ok]
    b = np.where(near, 0.0, vals)[first.ok]
    return Estimate.from_samples(a, seed), Estimate.from_samples(b, seed)


def dynkin_check(spec: ProcessSpec, r: float, x, h, tol: float = 1e-11):
    """Both sides of E_x h(X(tau_B)) = int_B G_B(x, v) int nu(v, y) h(y) dy dv on B(0, r).

    Only d = 1 is evaluated by nested adaptive quadrature; ``h`` is a scalar
    function on |y| > r given as ``(h, breakpoints)`` or a plain callable.
    Returns (lhs, rhs, relative gap).
    """
    if spec.d != 1:
        raise CapabilityError("dynkin_check is implemented for d = 1")
    if not spec.supports_green:
        raise CapabilityError("dynkin_check needs alpha < d")
    hfun, brk = h if isinstance(h, tuple) else (h, ())
    x = float(np.atleast_1d(x)[0])
    a = spec.alpha
    pts_pos = sorted(b for b in brk if b > r)
    pts_neg = sorted(-b for b in brk if b < -r)

    def side(sign, pts):
        # exterior integral over y = sign * t, t > r, with t = r / u to remove the infinite limit
        def integrand_u(u, kern):
            t = r / u
            return kern(sign * t) * hfun(sign * t) * r / (u * u)
        return integrand_u, sorted(r / p for p in pts)

    def exterior(kern):
        total = 0.0
        for sign, pts in ((1.0, pts_pos), (-1.0, pts_neg)):
            f_u, up = side(sign, pts)
            total += integrate.quad(f_u, 0.0, 1.0, args=(kern,), points=up or None,
                                    epsabs=tol, epsrel=1e-12, limit=500)[0]
        return total

    # quad's roundoff warnings near the kernel singularities are expected; the
    # returned gap is the accuracy check
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        return _dynkin_sides(spec, r, x, exterior, tol)


def _dynkin_sides(spec, r, x, exterior, tol):
    a = spec.alpha
    lhs = exterior(lambda y: float(ball_poisson_kernel(spec, r, [x], [y])))

    # rhs: int_B G(x, v) J(v) dv with J(v) = int_{|y|>r} nu(v, y) h(y) dy
    def jump_in(v):
        return exterior(lambda y: spec.levy_norm * abs(y - v) ** (-1 - a))

    def green_x(v):
        return float(ball_green(spec, r, [x], [v]))

    def inner(v):
        return green_x(v) * jump_in(v)

    # singularity of G at v = x and boundary behaviour at +-r: integrate piecewise
    rhs = 0.0
    for lo, hi in ((-r, x), (x, r)):
        rhs += integrate.quad(inner, lo, hi, epsabs=tol, epsrel=1e-10, limit=500)[0]
    gap = abs(lhs - rhs) / max(abs(lhs), 1e-300)
    return lhs, rhs, gap


def poisson_mass(spec: ProcessSpec, r: float, x) -> float:
    """int_{|y| > r} ball_poisson_kernel(r, x, y) dy by adaptive quadrature (d = 1, 2).

    Written in polar coordinates |y| = t, the kernel is the edge factor
    ((r^2 - |x|^2) / (t^2 - r^2))^(alpha/2) times an angular integral of
    |x - y|^(-d). On [r, 2r] the substitution t = r + w^k, k = 2 / (2 - alpha),
    makes the integrand bounded; beyond 2r, t = 2r/u removes the infinite limit.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    a = spec.alpha
    if x @ x >= r * r:
        raise KernelDomainError("poisson_mass needs |x| < r")
    if spec.d == 1:
        def angular(t):
            return abs(x[0] - t) ** -1 + abs(x[0] + t) ** -1
    elif spec.d == 2:
        def angular(t):
            f = lambda th: 1.0 / ((x[0] - t * math.cos(th)) ** 2 + (x[1] - t * math.sin(th)) ** 2)  # noqa: E731
            return t * integrate.quad(f, 0.0, 2 * math.pi, epsabs=1e-14, epsrel=1e-13,
                                      limit=200)[0]
    else:
        raise CapabilityError("poisson_mass is implemented for d = 1, 2")
    c = spec.poisson_const * (r * r - x @ x) ** (a / 2)
    k = 2.0 / (2.0 - a)

    def near_w(w):
        # (t^2 - r^2)^(-a/2) dt with t - r = w^k, written without cancellation
        wk = w**k
        return angular(r + wk) * (wk * (2 * r + wk)) ** (-a / 2) * k * w ** (k - 1)

    def far_u(u):
        t = 2 * r / u
        return angular(t) * (t * t - r * r) ** (-a / 2) * 2 * r / u**2

    near = integrate.quad(near_w, 0.0, r ** (1.0 / k), epsabs=1e-13, epsrel=1e-12, limit=200)[0]
    far = integrate.quad(far_u, 0.0, 1.0, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
    return c * (near + far)


def ikeda_watanabe_check(spec: ProcessSpec, r: float, x, y, tol: float = 1e-10):
    """Both sides of P_B(x, y) = int_B G_B(x, v) nu(v, y) dv on B = B(0, r), |y| > r.

    The right side is integrated in polar coordinates centred at x, which
    absorbs the |x - v|^(alpha - d) singularity of the Green function; d = 1
    and d = 2 are supported. Returns (lhs, rhs, relative gap).
    """
    if not spec.supports_green:
        raise CapabilityError("the Green-function side needs alpha < d")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    lhs = float(ball_poisson_kernel(spec, r, x, y))

    def integrand(rho, e):
        v = x + rho * e
        if rho == 0.0 or v @ v >= r * r:
            return 0.0
        return float(ball_green(spec, r, x, v)) * float(levy_density(spec, v, y)) * rho ** (spec.d - 1)

    def reach(e):
        # distance from x to the sphere |v| = r along direction e
        b = x @ e
        return -b + math.sqrt(b * b + r * r - x @ x)

    if spec.d == 1:
        rhs = sum(integrate.quad(integrand, 0.0, reach(np.array([sg])), args=(np.array([sg]),),
                                 epsabs=tol, epsrel=tol, limit=500)[0] for sg in (1.0, -1.0))
    elif spec.d == 2:
        def over_theta(th):
            e = np.array([math.cos(th), math.sin(th)])
            return integrate.quad(integrand, 0.0, reach(e), args=(e,), epsabs=tol, epsrel=tol,
                                  limit=500)[0]
        ang = math.atan2(y[1] - x[1], y[0] - x[0])
        # the integrand peaks in the direction of y; split there
        rhs = integrate.quad(over_theta, ang, ang + 2 * math.pi, epsabs=tol, epsrel=tol,
                             limit=500)[0]
    else:
        raise CapabilityError("ikeda_watanabe_check is implemented for d = 1, 2")
    return lhs, rhs, abs(lhs - rhs) / lhs


@dataclass
class Oscillation:
    r: float
    sup: float
    inf: float
    ratio: float
    ratio_err: float
    points: np.ndarray
    values: np.ndarray
    errors: np.ndarray
    excluded: int = 0
    vacuous: bool = False

    @property
    def spread(self) -> float:
        return self.sup - self.inf

    @property
    def spread_err(self) -> float:
        i, j = np.argmax(self.values), np.argmin(self.values)
        return float(math.hypot(self.errors[i], self.errors[j]))


def pointwise_ratio(spec: ProcessSpec, f: HarmonicFn, g: HarmonicFn, x, n: int,
                    seed: int = 0, key=()) -> tuple[Estimate, Estimate, Estimate]:
    """f(x), g(x) and f(x)/g(x) from one shared set of walks."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if f.dom is not g.dom:
        raise ValueError("pointwise_ratio needs f and g on the same domain object")
    starts = np.broadcast_to(x, (n, x.size))
    vals = evaluate([f, g], spec, starts, seed, 1, key=key)
    fe = Estimate.from_samples(vals[:, 0], seed)
    ge = Estimate.from_samples(vals[:, 1], seed)
    if ge.mean <= 0:
        raise ReliabilityError("denominator harmonic function estimated as zero")
    return fe, ge, ratio_estimate(vals[:, 0], vals[:, 1], seed)


def oscillation(spec: ProcessSpec, f: HarmonicFn, g: HarmonicFn, x0, r: float,
                m_points: int, n: int, seed: int = 0, points=None,
                min_snr: float = 5.0) -> Oscillation:
    """sup / inf of f/g over D cap B(x0, r), from ``m_points`` probe points.

    Probe points come from ``sample_region`` unless given. All points share
    the same walk streams, so the spread sup - inf is estimated with
    correlated rather than independent errors. Points where the g estimate is
    below ``min_snr`` standard errors are dropped and counted.
    """
    rng_pts = np.random.default_rng([seed, 77])
    if points is None:
        try:
            points = geo.sample_region(f.dom, m_points, rng_pts, ring=(x0, 0.0, r))
        except geo.EmptyRegionError:
            return Oscillation(r, 1.0, 1.0, 1.0, 0.0, np.empty((0, f.dom.dim)), np.empty(0),
                               np.empty(0), 0, True)
    points = np.atleast_2d(points)
    vals, errs, keep = [], [], []
    excluded = 0
    for i, p in enumerate(points):
        # common random numbers: every probe point reuses one set of streams
        fe, ge, q = pointwise_ratio(spec, f, g, p, n, seed, key=(3,))
        if ge.mean < min_snr * ge.stderr:
            excluded += 1
            continue
        vals.append(q.mean)
        errs.append(q.stderr)
        keep.append(i)
    if not vals:
        raise ReliabilityError("g is indistinguishable from 0 at every probe point")
    vals, errs = np.array(vals), np.array(errs)
    i, j = int(np.argmax(vals)), int(np.argmin(vals))
    sup, inf = vals[i], vals[j]
    ratio = sup / inf
    ratio_err = ratio * (errs[i] / sup + errs[j] / inf)
    return Oscillation(r, float(sup), float(inf), float(ratio), float(ratio_err),
                       points[keep], vals, errs, excluded)


def fit_contraction(radii, spreads, spread_errs):
    """Per-octave contraction factor from a weighted log-linear fit of spread against log2 r.

    Returns (factor, upper 95% bound, slope, slope stderr).
    """
    radii, spreads, spread_errs = map(np.asarray, (radii, spreads, spread_errs))
    ok = spreads > 0
    lx = np.log2(radii[ok])
    ly = np.log(spreads[ok])
    w = (spreads[ok] / np.maximum(spread_errs[ok], 1e-300)) ** 2
    W = w.sum()
    mx, my = (w * lx).sum() / W, (w * ly).sum() / W
    sxx = (w * (lx - mx) ** 2).sum()
    slope = (w * (lx - mx) * (ly - my)).sum() / sxx
    resid = ly - my - slope * (lx - mx)
    dof = max(ok.sum() - 2, 1)
    # scale by the residual dispersion when it exceeds the propagated errors
    chi2 = (w * resid**2).sum() / dof
    se = math.sqrt(max(chi2, 1.0) / sxx)
    # spread shrinks by 2^slope... per halving of r the factor is 2^(-slope) in log2 units
    factor = math.exp(-slope)
    upper = math.exp(-(slope - stats.t.ppf(0.95, dof) * se))
    return factor, upper, slope, se


@dataclass
class ContractionTable:
    rows: list = field(default_factory=list)
    factor: float = float("nan")
    factor_upper: float = float("nan")


def empirical_contraction(spec: ProcessSpec, f: HarmonicFn, g: HarmonicFn, x0, radii,
                          s: float, m_points: int, n: int, seed: int = 0) -> ContractionTable:
    """Oscillation of the decomposed ratio f_{8r,s}/g_{8r,s} over D_{2r} per scale.

    Each row records r, the spread (sup - inf) of f_{8r,s}/g_{8r,s} over
    probe points of D_{2r}, its error, and the spread of f/g over D_s for
    comparison. The fitted per-octave factor of the decomposed spreads and
    its one-sided 95% upper bound are stored on the table.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    radii = np.asarray(radii, dtype=float)
    if np.any(8 * radii >= s):
        raise KernelDomainError("empirical_contraction needs 8 r < s for every r")
    base = oscillation(spec, f, g, x0, s, m_points, n, seed)
    table = ContractionTable()
    spreads, errs = [], []
    rng = np.random.default_rng([seed, 78])
    for k, r in enumerate(radii):
        pts = geo.sample_region(f.dom, m_points, rng, ring=(x0, 0.0, 2 * r))
        qs, qe = [], []
        # common random numbers across probe points: the spread is a difference of
        # nearby ratios, and shared walks cancel most of its noise
        for p in pts:
            fn, _ = decompose(spec, f, x0, 8 * r, s, p, n, seed + 1000 * k)
            gn, _ = decompose(spec, g, x0, 8 * r, s, p, n, seed + 1000 * k)
            if gn.mean <= 5 * gn.stderr:
                continue
            q = fn.mean / gn.mean
            qs.append(q)
            qe.append(q * math.hypot(fn.stderr / max(fn.mean, 1e-300), gn.stderr / gn.mean))
        if len(qs) < 2:
            raise ReliabilityError(f"too few usable probe points at r={r}")
        qs, qe = np.array(qs), np.array(qe)
        i, j = int(np.argmax(qs)), int(np.argmin(qs))
        spread = float(qs[i] - qs[j])
        err = float(math.hypot(qe[i], qe[j]))
        spreads.append(spread)
        errs.append(err)
        factor = spread / base.spread if base.spread > 0 else float("nan")
        table.rows.append({"r": float(r), "spread": spread, "spread_err": err,
                           "base_spread": base.spread, "implied_factor": factor})
    if len(radii) >= 3 and all(sp > 0 for sp in spreads):
        table.factor, table.factor_upper, _, _ = fit_contraction(radii, spreads, errs)
    return table


# ---------------------------------------------------------------------------------------
# accessibility


@dataclass
class AccessibilityResult:
    verdict: str
    slope: float
    slope_se: float
    plateau_slope: float
    plateau_se: float
    radii: np.ndarray
    values: np.ndarray
    value_se: np.ndarray
    increments: np.ndarray
    increment_se: np.ndarray

    def rows(self):
        return [{"r": float(r), "M": float(v), "M_se": float(e), "increment": float(i),
                 "increment_se": float(ie)}
                for r, v, e, i, ie in zip(self.radii, self.values, self.value_se,
                                          self.increments, self.increment_se)]


def _wls_slope(x, y, se):
    w = 1.0 / np.maximum(se, 1e-300) ** 2
    W = w.sum()
    mx, my = (w * x).sum() / W, (w * y).sum() / W
    sxx = (w * (x - mx) ** 2).sum()
    slope = (w * (x - mx) * (y - my)).sum() / sxx
    resid = y - my - slope * (x - mx)
    chi2 = (w * resid**2).sum() / max(len(x) - 2, 1)
    return float(slope), float(math.sqrt(max(chi2, 1.0) / sxx))


ACCESSIBLE_SLOPE = -0.1
T_ACCESSIBLE = 3.0
T_PLATEAU = 1.0
PLATEAU_TOL = 0.05
FIT_OCTAVES = 4


def classify_accessibility(spec: ProcessSpec, dom: geo.Domain, x0, R: float, radii,
                           n_outer: int, n_inner: int = 1, seed: int = 0) -> AccessibilityResult:
    """Accessible / inaccessible verdict for x0 from M_{r,R}(s_{D cap B(x0,R)}).

    The ring integral is built from octave increments I_k = M_{r_k, r_{k-1}}.
    Its local divergence exponent is the log-log slope of I_k against r_k
    over the last ``FIT_OCTAVES`` + 1 scales (for M ~ r^-beta the increments
    scale the same way, while the cumulative slope approaches -beta only
    logarithmically slowly). Decision rules:

    * accessible: increment slope < -0.1 and |slope| / se > 3;
    * inaccessible: the cumulative values plateau, i.e. the slope of log M
      over the last octaves has |slope| / se < 1 or |slope| + 2 se < 0.05,
      or the increments decay significantly (slope / se > 3);
    * otherwise inconclusive.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    radii = np.asarray(radii, dtype=float)
    if len(radii) < FIT_OCTAVES + 1:
        raise KernelDomainError(f"need at least {FIT_OCTAVES + 1} cutoffs")
    f = ExitTime(geo.truncate(dom, x0, R))
    prof = ring_profile(spec, [f], x0, radii, R, n_outer, n_inner, seed)
    inc, inc_se = prof.increments[:, 0], prof.increment_se[:, 0]
    vals, val_se = prof.cumulative(0)
    tail = slice(len(radii) - FIT_OCTAVES - 1, None)
    lr = np.log(radii[tail])
    if np.all(inc[tail] > 0):
        slope, slope_se = _wls_slope(lr, np.log(inc[tail]), inc_se[tail] / inc[tail])
    else:
        slope, slope_se = float("inf"), float("nan")
    if vals[tail][0] > 0:
        pslope, pse = _wls_slope(lr, np.log(vals[tail]), val_se[tail] / vals[tail])
    else:
        pslope, pse = 0.0, 0.0
    if slope < ACCESSIBLE_SLOPE and abs(slope) / slope_se > T_ACCESSIBLE:
        verdict = "accessible"
    elif (abs(pslope) < T_PLATEAU * pse or abs(pslope) + 2 * pse < PLATEAU_TOL
          or (math.isfinite(slope) and slope / slope_se > T_ACCESSIBLE)
          or math.isinf(slope)):
        verdict = "inaccessible"
    else:
        verdict = "inconclusive"
    return AccessibilityResult(verdict, slope, slope_se, pslope, pse, radii, vals, val_se,
                               inc, inc_se)


# ---------------------------------------------------------------------------------------
# boundary limits


@dataclass
class BoundaryLimit:
    limit: Estimate
    stabilized: bool
    rows: list


def extrapolate(ts, values, errors, *, gap: int = 1):
    """Two-point Richardson step linear in ``ts`` toward t = 0.

    Uses the last point and the one ``gap`` entries earlier. If the ts do not
    shrink (ratio above 0.9) the last value is returned unchanged.
    """
    t1, t2 = ts[-1 - gap], ts[-1]
    v1, v2 = values[-1 - gap], values[-1]
    e1, e2 = errors[-1 - gap], errors[-1]
    if not (t2 < 0.9 * t1):
        return v2, e2
    w = t2 / (t1 - t2)
    return v2 + w * (v2 - v1), math.hypot((1 + w) * e2, w * e1)


def exterior_ring(spec: ProcessSpec, f: HarmonicFn, x0, R: float) -> float | None:
    """M_{R,inf}(f) from the data alone, when D lies inside B(x0, R) and d = 1.

    Interval data is integrated in closed form; other data by adaptive
    quadrature in u = R / |y - x0|. Returns None when the shortcut does not apply.
    """
    x0 = float(np.atleast_1d(x0)[0]) if spec.d == 1 else None
    if spec.d != 1:
        return None
    c, rad = f.dom.bounding_ball
    if abs(float(c[0]) - x0) + rad > R:
        return None
    a, A = spec.alpha, spec.levy_norm
    if isinstance(f, IntervalData):
        total = 0.0
        for lo, hi, w in f.pieces:
            for u, v in ((lo - x0, hi - x0), (x0 - hi, x0 - lo)):
                u, v = max(u, R), v
                if v > u:
                    top = 0.0 if math.isinf(v) else v ** (-a)
                    total += w * A * (u ** (-a) - top) / a
        return total
    if not isinstance(f, ExteriorData):
        return None

    def side(sign):
        def integrand(u):
            y = x0 + sign * R / u
            return float(f.outside(np.array([[y]]))[0]) * A * (R / u) ** (-1 - a) * R / u**2
        return integrate.quad(integrand, 0.0, 1.0, limit=500, epsabs=1e-12, epsrel=1e-10)[0]

    return side(1.0) + side(-1.0)


def boundary_limit(spec: ProcessSpec, f: HarmonicFn, g: HarmonicFn, x0, R: float, radii,
                   n_outer: int, n_inner: int = 1, seed: int = 0,
                   outer_octaves: int = 12) -> BoundaryLimit:
    """lim_{r->0} M_{r,inf}(f) / M_{r,inf}(g) from a dyadic schedule of cutoffs.

    The part of the ring integral beyond R comes from the data by quadrature
    when D lies inside B(x0, R) (see ``exterior_ring``); otherwise the
    importance sampler covers ``outer_octaves`` further octaves plus an
    unbounded last stratum, with its variance carried into every ratio.
    Limits are taken by a Richardson step linear in 1 / M_{r,inf}(g): the
    ratio approaches its limit like a bounded quantity over the diverging
    denominator at accessible points, while at inaccessible points 1/M stops
    shrinking and the last value is used.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    radii = np.asarray(radii, dtype=float)
    ext = (exterior_ring(spec, f, x0, R), exterior_ring(spec, g, x0, R))
    if None in ext:
        far = R * 2.0 ** np.arange(outer_octaves - 1, -1, -1)
        all_radii = np.concatenate([far, radii])
        outer, ext, skip = math.inf, (0.0, 0.0), len(far)
    else:
        all_radii, outer, skip = radii, R, 0
    prof = ring_profile(spec, [f, g], x0, all_radii, outer, n_outer, n_inner, seed)
    mf_all, _ = prof.cumulative(0, ext[0])
    mg_all, _ = prof.cumulative(1, ext[1])
    rows, vals, errs, ts = [], [], [], []
    for k, r in enumerate(radii):
        q = prof.ratio(skip + k, 0, 1, extra=ext)
        mf, mg = mf_all[skip + k], mg_all[skip + k]
        rows.append({"r": float(r), "ratio": q.mean, "ratio_se": q.stderr, "M_f": float(mf),
                     "M_g": float(mg)})
        vals.append(q.mean)
        errs.append(q.stderr)
        ts.append(1.0 / mg)
    gap = min(FIT_OCTAVES, len(radii) - 1)
    lim, lim_err = extrapolate(ts, vals, errs, gap=gap) if len(radii) > 1 else (vals[0], errs[0])
    stabilized = (len(vals) > 1
                  and abs(vals[-1] - vals[-2]) <= 2 * math.hypot(errs[-1], errs[-2]))
    n_used = sum(len(v) for v in prof.samples)
    return BoundaryLimit(Estimate(float(lim), float(lim_err), n_used, seed,
                                  {"raw_last": vals[-1], "raw_last_se": errs[-1]}),
                         bool(stabilized), rows)


# ---------------------------------------------------------------------------------------
# Martin kernels


def ball_martin_kernel(spec: ProcessSpec, x, xref, z, r: float = 1.0) -> float:
    """Martin kernel of B(0, r) at boundary point z, normalised at xref."""
    x, xref, z = (np.asarray(v, dtype=float) for v in (x, xref, z))
    a = spec.alpha
    num = (r * r - x @ x) ** (a / 2) / np.linalg.norm(x - z) ** spec.d
    den = (r * r - xref @ xref) ** (a / 2) / np.linalg.norm(xref - z) ** spec.d
    return float(num / den)


@dataclass
class MartinResult:
    kernel: Estimate
    rows: list
    stabilized: bool


def martin_kernel_green_ratio(spec: ProcessSpec, dom: geo.Domain, x, xref, z, approach,
                              n: int, seed: int = 0, cap=None) -> MartinResult:
    """M_D(x, z) = lim_{y->z} G_D(x, y) / G_D(xref, y).

    For each approach point y_j the walks start at y_j and accumulate the
    occupation density at both x and xref (symmetry of G_D), so numerator and
    denominator share every walk. The limit is a Richardson step linear in
    |y_j - z| between the last two points.
    """
    if not spec.supports_green:
        raise CapabilityError("Martin kernels via Green functions need alpha < d")
    x, xref, z = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (x, xref, z))
    approach = np.atleast_2d(np.asarray(approach, dtype=float))
    rows, vals, errs, ds = [], [], [], []
    for j, y in enumerate(approach):
        if not dom.membership(y):
            raise KernelDomainError("approach points must lie in the domain")
        if np.array_equal(x, xref):
            q = Estimate(1.0, 0.0, n, seed)
        else:
            b = walk_batch(spec, dom, y, n, seed, targets=[x, xref], cap=cap, key=(j,)).check()
            ok = b.ok
            q = ratio_estimate(b.green[ok, 0], b.green[ok, 1], seed)
        dist = float(np.linalg.norm(y - z))
        rows.append({"dist": dist, "ratio": q.mean, "ratio_se": q.stderr})
        vals.append(q.mean)
        errs.append(q.stderr)
        ds.append(dist)
    if len(vals) == 1:
        lim, err = vals[0], errs[0]
    else:
        lim, err = extrapolate(ds, vals, errs)
    stabilized = len(vals) > 1 and abs(vals[-1] - vals[-2]) <= 2 * math.hypot(errs[-1], errs[-2])
    return MartinResult(Estimate(float(lim), float(err), n * len(vals), seed), rows, stabilized)


def martin_kernel_inaccessible(spec: ProcessSpec, dom: geo.Domain, x, xref, z, n: int,
                               seed: int = 0, cutoff: float = 0.0, n_inner: int = 1,
                               cap=None) -> Estimate:
    """int_D nu(y, z) G_D(x, y) dy / int_D nu(y, z) G_D(xref, y) dy.

    With ``cutoff > 0`` the integrals run over D minus B(z, cutoff) and y is
    drawn from nu(z, .) on that ring (exact radial inverse CDF), so the
    weight is the indicator of D; with ``cutoff = 0`` y is uniform in D and
    weighted by nu(y, z). Both Green values come from shared walks started
    at y (symmetry of G_D). The normalising constant cancels in the ratio.
    """
    if not spec.supports_green:
        raise CapabilityError("Martin kernels via Green functions need alpha < d")
    x, xref, z = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (x, xref, z))
    if np.array_equal(x, xref):
        return Estimate(1.0, 0.0, n, seed)
    if cutoff < 0:
        raise KernelDomainError("cutoff must be >= 0")
    c, rad = dom.bounding_ball
    reach = float(np.linalg.norm(c - z)) + rad
    if cutoff > 0:
        if cutoff >= reach:
            raise KernelDomainError("cutoff leaves nothing of the domain")
        ys = np.concatenate(map_blocks(
            lambda lo, hi, rng: _ring_points(spec, z, cutoff, reach, hi - lo, rng), n, seed, (91,)))
        w = dom._contains(ys).astype(float)
    else:
        ys = geo.sample_region(dom, n, np.random.default_rng([seed, 91]))
        w = levy_density(spec, ys, np.broadcast_to(z, ys.shape))
    # a sample point on a pole carries no mass
    w = w * ((np.linalg.norm(ys - x, axis=1) > 0) & (np.linalg.norm(ys - xref, axis=1) > 0))
    fx = GreenSlice(dom, x, cap)
    fr = GreenSlice(dom, xref, cap)
    vals = np.zeros((len(ys), 2))
    use = w > 0
    vals[use] = evaluate([fx, fr], spec, ys[use], seed, n_inner, key=(92,))
    return ratio_estimate(w * vals[:, 0], w * vals[:, 1], seed, cutoff=cutoff)
