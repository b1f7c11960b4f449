"""Brownian motion plus a symmetric stable process on D = (-1, 1) minus {0}.

With a diffusion part the ratio f(x)/g(x) of the two positive harmonic
functions f = w + u and g = w - u (u(x) = x, w(x) = E_x|X(tau_D)|) has
no limit at 0. The simulator is an adaptive Euler scheme compiled with numba;
each path owns a SplitMix64 stream keyed by (seed, path index), so results do
not depend on how paths are scheduled.
"""
from __future__ import annotations

import math
import functools
from dataclasses import dataclass, replace

import numba as nb
import numpy as np
from scipy import integrate, interpolate, special

from .mc import Estimate, ReliabilityError, get_workers

# the TBB layer is probed first by default and warns when the installed TBB is old
if "NUMBA_THREADING_LAYER_PRIORITY" not in __import__("os").environ:
    nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

__all__ = [
    "MixtureSpec",
    "char_exponent",
    "compensated_potential",
    "simulate_mixture_exit",
    "simulate_exits",
    "gap_statistic",
    "GapResult",
    "payoffs",
    "simulate_paths",
    "sample_increments",
    "stable_tail",
]


@dataclass(frozen=True)
class MixtureSpec:
    """Levy process with exponent c1 xi^2 + c2 |xi|^alpha and its Euler scheme settings.

    At distance ``dist`` from the nearest barrier (-1, 0, 1) the time step is
    the largest one whose stable scale is at most ``kappa * dist`` and whose
    Gaussian standard deviation is at most ``kappa_bm * dist``, clipped to ``[dt_min, dt]`` and multiplied
    by ``step_scale``. ``eps0`` is the radius of the absorbing interval
    standing in for the puncture.
    """

    c1: float
    c2: float
    alpha: float
    dt: float = 1e-2
    dt_min: float = 1e-8
    kappa: float = 0.15
    kappa_bm: float = 0.5
    step_scale: float = 1.0
    eps0: float = 1e-4
    max_steps: int = 2_000_000

    def __post_init__(self):
        if not 1.0 < self.alpha < 2.0:
            raise ValueError("the mixture example needs alpha in (1, 2)")
        if self.c1 < 0 or self.c2 <= 0:
            raise ValueError("need c1 >= 0 and c2 > 0")
        if not 0 < self.dt_min <= self.dt:
            raise ValueError("need 0 < dt_min <= dt")

    def halved_dt(self) -> "MixtureSpec":
        return replace(self, step_scale=self.step_scale / 2)

    def halved_eps(self) -> "MixtureSpec":
        return replace(self, eps0=self.eps0 / 2)


def char_exponent(ms: MixtureSpec, xi):
    xi = np.asarray(xi, dtype=float)
    return ms.c1 * xi**2 + ms.c2 * np.abs(xi) ** ms.alpha


def compensated_potential(ms: MixtureSpec, x: float) -> float:
    """v(x) = (1/pi) int_0^inf (1 - cos(x xi)) / psi(xi) dxi.

    After the substitution u = |x| xi the integrand is
    (1 - cos u) / (c1 u^2 + c2 |x|^(2 - alpha) u^alpha); the range is split at
    u = 1, the head by plain adaptive quadrature and the tail as a
    non-oscillatory part minus a Fourier-weighted (QAWF) integral.
    """
    x = abs(float(x))
    if x == 0.0:
        return 0.0
    k2 = ms.c2 * x ** (2.0 - ms.alpha)
    den = lambda u: ms.c1 * u * u + k2 * u**ms.alpha  # noqa: E731
    head, err1 = integrate.quad(lambda u: 2.0 * math.sin(u / 2) ** 2 / den(u), 0, 1.0,
                                limit=200, epsabs=1e-14, epsrel=1e-11)
    flat, err2 = integrate.quad(lambda u: 1.0 / den(u), 1.0, np.inf, epsabs=1e-14, epsrel=1e-11)
    osc, err3 = integrate.quad(lambda u: 1.0 / den(u), 1.0, np.inf, weight="cos", wvar=1.0,
                               limlst=200)
    total = head + flat - osc
    if err1 + err2 + err3 > 1e-7 * abs(total) + 1e-14:
        raise ArithmeticError(f"compensated_potential quadrature did not converge at x={x}")
    return x * total / math.pi


# ---------------------------------------------------------------------------------------
# tail functionals of the standard symmetric stable law (characteristic function exp(-|t|^a))

TAIL_CMAX = 50.0
_TAIL_STEP = 0.0025


def _tail_series(alpha: float, c, terms: int = 3):
    """Asymptotic expansions of P(S > c) and E[(S - c)^+] for large c."""
    c = np.asarray(c, dtype=float)
    p = np.zeros_like(c)
    q = np.zeros_like(c)
    for k in range(1, terms + 1):
        coef = (-1) ** (k + 1) * special.gamma(k * alpha) / math.factorial(k) \
            * math.sin(k * math.pi * alpha / 2) / math.pi
        p += coef * c ** (-k * alpha)
        q += coef * c ** (1 - k * alpha) / (k * alpha - 1)
    return p, q


def stable_tail(alpha: float, c: float) -> tuple[float, float]:
    """P(S > c) and E[(S - c)^+] for c >= 0 by Fourier quadrature.

    P(S > c) = 1/2 - (1/pi) int sin(c t) exp(-t^a) / t dt and
    E|S - c| = (2/pi) [Gamma(1 - 1/a) + int exp(-t^a) (1 - cos c t) / t^2 dt],
    with E[(S - c)^+] = (E|S - c| - c) / 2 by symmetry.
    """
    if not 1.0 < alpha < 2.0:
        raise ValueError("stable_tail needs alpha in (1, 2)")
    if c < 0:
        raise ValueError("stable_tail needs c >= 0")
    top = 40.0 ** (1.0 / alpha)  # exp(-t^a) < 1e-17 beyond
    opts = dict(limit=4000, epsabs=1e-15, epsrel=1e-12)
    if c == 0.0:
        p = 0.5
    else:
        v = integrate.quad(lambda t: math.sin(c * t) / t * math.exp(-t**alpha), 0.0, top, **opts)[0]
        p = 0.5 - v / math.pi
    v = integrate.quad(lambda t: math.exp(-t**alpha) * 2.0 * math.sin(c * t / 2) ** 2 / t**2
                       if t > 0 else c * c / 2, 0.0, top, **opts)[0]
    e_abs = 2.0 / math.pi * (special.gamma(1.0 - 1.0 / alpha) + v)
    return p, (e_abs - c) / 2.0


@functools.lru_cache(maxsize=8)
def tail_table(alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """P(S > c) and E[(S - c)^+] on a uniform grid of [0, TAIL_CMAX].

    Quadrature runs on a quadratic node set and is carried to the fine grid by
    cubic splines; the simulator interpolates linearly on the fine grid.
    """
    nodes = TAIL_CMAX * np.linspace(0.0, 1.0, 401) ** 2
    vals = np.array([stable_tail(alpha, c) for c in nodes])
    grid = np.arange(0.0, TAIL_CMAX + _TAIL_STEP / 2, _TAIL_STEP)
    p = interpolate.CubicSpline(nodes, vals[:, 0])(grid)
    q = interpolate.CubicSpline(nodes, vals[:, 1])(grid)
    return p, q


def _series_coefs(alpha: float) -> np.ndarray:
    ks = np.arange(1, 4)
    return np.array([(-1) ** (k + 1) * special.gamma(k * alpha) / math.factorial(k)
                     * math.sin(k * math.pi * alpha / 2) / math.pi for k in ks])


# ---------------------------------------------------------------------------------------
# compiled path simulator

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


@nb.njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True, inline="always")
def _uniform(state):
    # state is a length-1 uint64 array; returns a double in (0, 1)
    state[0] += _GOLDEN
    return ((_mix(state[0]) >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


@nb.njit(cache=True, inline="always")
def _exit_payoff(c, s, alpha, ptab, qtab, coefs):
    # E[|y + s S| ; y + s S beyond the barrier] for a barrier at distance c * s
    if c < TAIL_CMAX:
        u = c / _TAIL_STEP
        i = int(u)
        w = u - i
        p = ptab[i] * (1.0 - w) + ptab[i + 1] * w
        q = qtab[i] * (1.0 - w) + qtab[i + 1] * w
    else:
        p = 0.0
        q = 0.0
        for k in range(coefs.size):
            ka = (k + 1) * alpha
            p += coefs[k] * c ** (-ka)
            q += coefs[k] * c ** (1.0 - ka) / (ka - 1.0)
    # y + s c = 1 at the barrier, so E[(y + s S) 1{S > c}] = P + s Q
    return p + s * q


@nb.njit(cache=True)
def _path(x, c1, c2, alpha, dt_max, dt_min, kappa, kappa_bm, scale, eps0, max_steps, mirror,
          state, ptab, qtab, coefs):
    """One path from x.

    Returns (exit position, steps, status, score_plus, score_minus) with
    status 0 exit, 1 absorbed, 2 capped. The scores accumulate, over steps,
    the expected value of |X| 1{X >= 1} (resp. 1{X <= -1}) at the end of the
    step's jump, plus the exact payoff of a Brownian hit of +1 (resp. -1).
    """
    sgn = -1.0 if mirror else 1.0
    inv_a = 1.0 / alpha
    pi = math.pi
    sp = 0.0
    sm = 0.0
    for step in range(max_steps):
        ax = abs(x)
        dist = min(ax, 1.0 - ax)
        dt = (kappa * dist) ** alpha / c2
        if c1 > 0.0:
            dt = min(dt, (kappa_bm * dist) ** 2 / (2.0 * c1))
        if dt > dt_max:
            dt = dt_max
        if dt < dt_min:
            dt = dt_min
        dt *= scale
        # barriers of the current component: (lo, hi)
        if x > 0.0:
            lo, hi = 0.0, 1.0
        else:
            lo, hi = -1.0, 0.0
        # diffusion part with Brownian-bridge hitting of both barriers
        if c1 > 0.0:
            u1 = _uniform(state)
            u2 = _uniform(state)
            g = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * pi * u2)
            y = x + sgn * math.sqrt(2.0 * c1 * dt) * g
            hit = 0.0
            hit_any = False
            if y <= lo:
                hit, hit_any = lo, True
            elif y >= hi:
                hit, hit_any = hi, True
            else:
                var = 2.0 * c1 * dt
                p_lo = math.exp(-2.0 * (x - lo) * (y - lo) / var)
                p_hi = math.exp(-2.0 * (hi - x) * (hi - y) / var)
                u = _uniform(state)
                if u < p_lo:
                    hit, hit_any = lo, True
                elif u < p_lo + p_hi:
                    hit, hit_any = hi, True
            if hit_any:
                if hit == 0.0:
                    return 0.0, step + 1, 1, sp, sm
                if hit > 0.0:
                    sp += 1.0
                else:
                    sm += 1.0
                return hit, step + 1, 0, sp, sm
            x = y
        # symmetric stable part (Chambers-Mallows-Stuck)
        s_scale = (c2 * dt) ** inv_a
        sp += _exit_payoff((1.0 - x) / s_scale, s_scale, alpha, ptab, qtab, coefs)
        sm += _exit_payoff((1.0 + x) / s_scale, s_scale, alpha, ptab, qtab, coefs)
        v = pi * (_uniform(state) - 0.5)
        w = -math.log(_uniform(state))
        s = (math.sin(alpha * v) / math.cos(v) ** inv_a
             * (math.cos(v - alpha * v) / w) ** ((1.0 - alpha) * inv_a))
        x = x + sgn * s_scale * s
        if x >= 1.0 or x <= -1.0:
            return x, step + 1, 0, sp, sm
        if abs(x) <= eps0:
            return 0.0, step + 1, 1, sp, sm
    return x, max_steps, 2, sp, sm


@nb.njit(cache=True)
def _increments(n, seed, c1, c2, alpha, dt):
    out = np.empty(n)
    inv_a = 1.0 / alpha
    pi = math.pi
    base = _mix(np.uint64(seed) * _GOLDEN + np.uint64(0x2545F4914F6CDD1D))
    for i in range(n):
        state = np.empty(1, dtype=np.uint64)
        state[0] = _mix(base ^ _mix(np.uint64(i) + _GOLDEN))
        z = 0.0
        if c1 > 0.0:
            u1 = _uniform(state)
            u2 = _uniform(state)
            z = math.sqrt(2.0 * c1 * dt) * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * pi * u2)
        v = pi * (_uniform(state) - 0.5)
        w = -math.log(_uniform(state))
        s = (math.sin(alpha * v) / math.cos(v) ** inv_a
             * (math.cos(v - alpha * v) / w) ** ((1.0 - alpha) * inv_a))
        out[i] = z + (c2 * dt) ** inv_a * s
    return out


@nb.njit(cache=True, parallel=True)
def _simulate(x0, n, seed, c1, c2, alpha, dt_max, dt_min, kappa, kappa_bm, scale, eps0,
              max_steps, mirror, ptab, qtab, coefs):
    out = np.empty(n)
    steps = np.empty(n, dtype=np.int64)
    status = np.empty(n, dtype=np.int8)
    scores = np.empty((n, 2))
    base = _mix(np.uint64(seed) * _GOLDEN + np.uint64(0x632BE59BD9B4E019))
    for i in nb.prange(n):
        state = np.empty(1, dtype=np.uint64)
        state[0] = _mix(base ^ _mix(np.uint64(i) + _GOLDEN))
        e, k, st, sp, sm = _path(x0, c1, c2, alpha, dt_max, dt_min, kappa, kappa_bm, scale,
                                 eps0, max_steps, mirror, state, ptab, qtab, coefs)
        out[i] = e
        steps[i] = k
        status[i] = st
        scores[i, 0] = sp
        scores[i, 1] = sm
    return out, steps, status, scores


@dataclass(frozen=True)
class ExitSample:
    """Per-path output of the simulator.

    ``exits`` holds exit positions (0.0 marks absorption at the puncture);
    ``scores[:, 0]`` and ``scores[:, 1]`` are the expected-value samples of
    E|X(tau)| 1{X(tau) >= 1} and E|X(tau)| 1{X(tau) <= -1}.
    """

    exits: np.ndarray
    steps: np.ndarray
    status: np.ndarray
    scores: np.ndarray


def simulate_paths(ms: MixtureSpec, x: float, n: int, seed: int = 0,
                   mirror: bool = False) -> ExitSample:
    """Run ``n`` paths from ``x``.

    With ``mirror=True`` every increment is negated, so path i is the
    reflection of path i of the unmirrored run from -x.
    """
    if not (0.0 < abs(x) < 1.0):
        raise ValueError("start point must lie in (-1, 1) minus {0}")
    ptab, qtab = tail_table(ms.alpha)
    nb.set_num_threads(min(get_workers(), nb.config.NUMBA_NUM_THREADS))
    out = _simulate(float(x), int(n), int(seed) & 0xFFFFFFFFFFFF,
                    ms.c1, ms.c2, ms.alpha, ms.dt, ms.dt_min, ms.kappa, ms.kappa_bm,
                    ms.step_scale, ms.eps0, int(ms.max_steps), bool(mirror),
                    ptab, qtab, _series_coefs(ms.alpha))
    return ExitSample(*out)


def sample_increments(ms: MixtureSpec, dt: float, n: int, seed: int = 0) -> np.ndarray:
    """``n`` free increments of the scheme over one step of length ``dt``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return _increments(int(n), int(seed) & 0xFFFFFFFFFFFF, ms.c1, ms.c2, ms.alpha, float(dt))


def simulate_exits(ms: MixtureSpec, x: float, n: int, seed: int = 0, mirror: bool = False):
    """Exit positions, step counts and status codes of ``n`` paths from ``x``.

    ``simulate_exits(ms, -x, n, s, True)[0] == -simulate_exits(ms, x, n, s)[0]``.
    """
    r = simulate_paths(ms, x, n, seed, mirror)
    return r.exits, r.steps, r.status


def simulate_mixture_exit(ms: MixtureSpec, x: float, rng: np.random.Generator) -> float:
    """Exit position of one path; the path stream is keyed by a draw from ``rng``."""
    seed = int(rng.integers(0, 2**48))
    exits, _, status = simulate_exits(ms, x, 1, seed)
    if status[0] == 2:
        raise ReliabilityError("mixture path exceeded its step budget")
    return float(exits[0])


@dataclass(frozen=True)
class GapResult:
    x: float
    f: Estimate
    g: Estimate
    gap: Estimate
    w: Estimate
    absorbed_fraction: float
    identity_gap: float
    theory_gap: float

    def row(self):
        return {"x": self.x, "f": self.f.mean, "g": self.g.mean, "gap": self.gap.mean,
                "gap_se": self.gap.stderr, "w": self.w.mean,
                "absorbed": self.absorbed_fraction}


def payoffs(ms: MixtureSpec, x: float, n: int, seed: int = 0, estimator: str = "expected"):
    """Per-path samples of f(x) and g(x) plus the simulator output.

    ``estimator="expected"`` uses the per-step expected exit payoffs, which
    have finite variance; ``"indicator"`` uses 2|X(tau)| 1{X(tau) >= 1} (and
    the mirror) directly, whose variance is infinite for alpha < 2 because
    of the overshoot.
    """
    r = simulate_paths(ms, x, n, seed)
    if np.mean(r.status == 2) > 1e-3:
        raise ReliabilityError("too many mixture paths exceeded their step budget")
    ok = r.status != 2
    if estimator == "expected":
        a, b = 2.0 * r.scores[ok, 0], 2.0 * r.scores[ok, 1]
    elif estimator == "indicator":
        e = r.exits[ok]
        a = 2.0 * np.abs(e) * (e >= 1.0)
        b = 2.0 * np.abs(e) * (e <= -1.0)
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    return a, b, r


def gap_statistic(ms: MixtureSpec, x: float, n: int, seed: int = 0,
                  estimator: str = "expected") -> GapResult:
    """f(x)/g(x) - f(-x)/g(-x) with f, g estimated from one set of paths started at x.

    Mirrored streams make the run from -x the reflection of the run from x, so
    f(-x) = g(x) and g(-x) = f(x) hold exactly and the gap is f/g - g/f. The
    standard error comes from the delta method on the paired per-path payoffs.
    """
    if not 0.0 < x < 0.5:
        raise ValueError("gap_statistic needs 0 < x < 1/2")
    a, b, r = payoffs(ms, x, n, seed, estimator)
    m = a.size
    fa, gb = a.mean(), b.mean()
    if gb == 0.0 or fa == 0.0:
        raise ReliabilityError("no path reached one side of the interval")
    gap = fa / gb - gb / fa
    # d gap = (1/gb + gb/fa^2) d fa - (fa/gb^2 + 1/fa) d gb
    ca = 1.0 / gb + gb / fa**2
    cb = fa / gb**2 + 1.0 / fa
    infl = ca * (a - fa) - cb * (b - gb)
    gse = float(infl.std(ddof=1) / math.sqrt(m))
    f = Estimate.from_samples(a, seed)
    g = Estimate.from_samples(b, seed)
    w = Estimate.from_samples((a + b) / 2.0, seed)
    # the algebraic form 4 u w / (w^2 - u^2) with w, u taken from the same sample
    what = (fa + gb) / 2.0
    uhat = (fa - gb) / 2.0
    identity = 4.0 * uhat * what / (what**2 - uhat**2)
    theory = 4.0 * x * what / (what**2 - x**2)
    return GapResult(x, f, g, Estimate(float(gap), gse, m, seed), w,
                     float(np.mean(r.status == 1)), float(identity - gap), float(theory))
