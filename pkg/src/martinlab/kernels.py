"""Closed-form kernels of the isotropic alpha-stable process in R^d.

Everything here is a pure function of a :class:`ProcessSpec` and points,
except :func:`sample_ball_exit`, which draws from an explicit generator.
Points are numpy arrays whose last axis has length ``d``; most functions
broadcast over leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

__all__ = [
    "ProcessSpec",
    "KernelDomainError",
    "SingularityError",
    "CapabilityError",
    "levy_density",
    "levy_tail_mass",
    "levy_comparability",
    "ball_poisson_kernel",
    "sample_ball_exit",
    "ball_exit_radial_cdf",
    "ball_exit_radial_sf",
    "ball_exit_interval_mass",
    "sample_directions",
    "ball_exit_time",
    "ball_green",
    "sphere_area",
]


class KernelDomainError(ValueError):
    """An argument lies outside the set where a kernel is defined."""


class SingularityError(KernelDomainError):
    """A kernel was evaluated on its diagonal singularity."""


class CapabilityError(NotImplementedError):
    """The requested (d, alpha) pair is not supported by a formula."""


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d (2 for d = 1)."""
    return 2.0 * np.pi ** (d / 2) / special.gamma(d / 2)


def _levy_norm(d: int, alpha: float) -> float:
    # A(d, alpha) such that the characteristic exponent is |xi|^alpha
    return (
        alpha
        * 2.0 ** (alpha - 1)
        * special.gamma((d + alpha) / 2)
        / (np.pi ** (d / 2) * special.gamma(1 - alpha / 2))
    )


@dataclass(frozen=True)
class ProcessSpec:
    d: int
    alpha: float
    levy_norm: float = field(init=False)

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise KernelDomainError(f"dimension must be a positive integer, got {self.d}")
        if not 0.0 < self.alpha < 2.0:
            raise KernelDomainError(f"alpha must lie in (0, 2), got {self.alpha}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "levy_norm", float(_levy_norm(self.d, self.alpha)))

    @property
    def supports_green(self) -> bool:
        return self.alpha < self.d

    # constants of the ball kernels, cached on first use
    @property
    def poisson_const(self) -> float:
        d, a = self.d, self.alpha
        return special.gamma(d / 2) * np.pi ** (-d / 2 - 1) * np.sin(np.pi * a / 2)

    @property
    def exit_time_const(self) -> float:
        d, a = self.d, self.alpha
        return special.gamma(d / 2) / (
            2.0**a * special.gamma(1 + a / 2) * special.gamma((d + a) / 2)
        )

    @property
    def green_const(self) -> float:
        d, a = self.d, self.alpha
        return special.gamma(d / 2) / (2.0**a * np.pi ** (d / 2) * special.gamma(a / 2) ** 2)


def _norm(v: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(v * v, axis=-1))


def _points(spec: ProcessSpec, *pts):
    out = []
    for p in pts:
        p = np.asarray(p, dtype=float)
        if p.ndim == 0:
            p = p[None]
        if p.shape[-1] != spec.d:
            raise KernelDomainError(f"expected points in R^{spec.d}, got shape {p.shape}")
        out.append(p)
    return out


def levy_density(spec: ProcessSpec, x, y):
    """Jump intensity A(d, alpha) |x - y|^(-d - alpha)."""
    x, y = _points(spec, x, y)
    dist = _norm(y - x)
    if np.any(dist == 0):
        raise SingularityError("levy_density is singular at x = y")
    return spec.levy_norm * dist ** (-spec.d - spec.alpha)


def levy_tail_mass(spec: ProcessSpec, r):
    """Total jump intensity of jumps longer than ``r``."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise KernelDomainError("levy_tail_mass needs r > 0")
    return spec.levy_norm * sphere_area(spec.d) * r ** (-spec.alpha) / spec.alpha


def levy_comparability(spec: ProcessSpec, r: float, R: float) -> float:
    """Tight comparability constant of nu(x, .) and nu(x0, .) for |x - x0| < r, |y - x0| >= R."""
    if not 0 < r < R:
        raise KernelDomainError(f"levy_comparability needs 0 < r < R, got r={r}, R={R}")
    return (R / (R - r)) ** (spec.d + spec.alpha)


def ball_poisson_kernel(spec: ProcessSpec, r: float, x, y):
    """Density of the exit position from B(0, r) started at ``x``, evaluated at ``y``."""
    x, y = _points(spec, x, y)
    nx2 = np.sum(x * x, axis=-1)
    ny2 = np.sum(y * y, axis=-1)
    if np.any(nx2 >= r * r) or np.any(ny2 <= r * r):
        raise KernelDomainError("ball_poisson_kernel needs |x| < r < |y|")
    a = spec.alpha
    ratio = (r * r - nx2) / (ny2 - r * r)
    return spec.poisson_const * ratio ** (a / 2) * _norm(x - y) ** (-spec.d)


def ball_exit_radial_cdf(spec: ProcessSpec, t):
    """P(|Y| / r <= t) for the exit position Y of B(0, r) started at the center."""
    t = np.asarray(t, dtype=float)
    a = spec.alpha
    arg = np.clip(1.0 - 1.0 / np.maximum(t, 1.0) ** 2, 0.0, 1.0)
    return special.betainc(1 - a / 2, a / 2, arg)


def ball_exit_radial_sf(spec: ProcessSpec, t):
    """P(|Y| / r > t), computed without cancellation for large t."""
    t = np.asarray(t, dtype=float)
    a = spec.alpha
    return special.betainc(a / 2, 1 - a / 2, 1.0 / np.maximum(t, 1.0) ** 2)


def ball_exit_interval_mass(spec: ProcessSpec, rho, c, lo: float, hi: float):
    """P(c + Y in [lo, hi]) for the exit position Y of B(0, rho) in d = 1.

    Vectorised over arrays of centers ``c`` and radii ``rho``; ``hi`` may be inf.
    """
    if spec.d != 1:
        raise CapabilityError("interval masses are only available in d = 1")
    rho = np.asarray(rho, dtype=float)
    c = np.asarray(c, dtype=float)

    def side(u, v):
        # mass of distances in [u, v] on one side, u <= v
        su = ball_exit_radial_sf(spec, np.maximum(u, 0.0) / rho)
        sv = np.where(np.isinf(v), 0.0, ball_exit_radial_sf(spec, np.maximum(v, 0.0) / rho))
        return 0.5 * np.where(v > rho, su - sv, 0.0)

    right = side(lo - c, hi - c)
    left = side(c - hi, c - lo)
    return right + left


def sample_directions(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` independent uniform unit vectors in R^d, shape (n, d)."""
    if d == 1:
        return np.where(rng.random(n) < 0.5, -1.0, 1.0)[:, None]
    v = rng.standard_normal((n, d))
    return v / _norm(v)[:, None]


def sample_exit_radius(alpha: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """|Y| / r for the exit position of a ball started at its center.

    (|Y|/r)^2 - 1 is Beta-prime(1 - alpha/2, alpha/2), i.e. a ratio of two
    independent Gamma variates, which avoids forming B / (1 - B).
    """
    g1 = rng.standard_gamma(1 - alpha / 2, n)
    g2 = rng.standard_gamma(alpha / 2, n)
    # for alpha near 2, g1 / g2 can fall below the float spacing at 1; keep |Y| > r
    return np.maximum(np.sqrt(1.0 + g1 / g2), np.nextafter(1.0, 2.0))


def sample_ball_exit(spec: ProcessSpec, r, rng: np.random.Generator, n: int | None = None):
    """Exit position(s) from B(0, r) for the process started at 0.

    With ``n`` given, returns an (n, d) array; ``r`` may then be a scalar or
    an array of n radii.
    """
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0):
        raise KernelDomainError("sample_ball_exit needs r > 0")
    m = 1 if n is None else n
    rad = sample_exit_radius(spec.alpha, m, rng) * (r_arr if r_arr.ndim else float(r_arr))
    out = sample_directions(spec.d, m, rng) * rad[:, None]
    return out[0] if n is None else out


def ball_exit_time(spec: ProcessSpec, r, x):
    """Expected exit time of B(0, r) from ``x``."""
    (x,) = _points(spec, x)
    r = np.asarray(r, dtype=float)
    nx2 = np.sum(x * x, axis=-1)
    if np.any(nx2 > r * r):
        raise KernelDomainError("ball_exit_time needs |x| <= r")
    return spec.exit_time_const * (r * r - nx2) ** (spec.alpha / 2)


def _green_profile(spec: ProcessSpec, z0):
    # int_0^z0 s^(a/2 - 1) (1 + s)^(-d/2) ds, via the substitution t = s/(1+s)
    a = spec.alpha / 2
    b = spec.d / 2 - a
    t = z0 / (1.0 + z0)
    return special.beta(a, b) * special.betainc(a, b, t)


def ball_green(spec: ProcessSpec, r: float, x, y):
    """Green function of B(0, r), valid for alpha < d."""
    if not spec.supports_green:
        raise CapabilityError(
            f"ball_green needs alpha < d (d={spec.d}, alpha={spec.alpha})"
        )
    x, y = _points(spec, x, y)
    nx2 = np.sum(x * x, axis=-1)
    ny2 = np.sum(y * y, axis=-1)
    if np.any(nx2 >= r * r) or np.any(ny2 >= r * r):
        raise KernelDomainError("ball_green needs |x| < r and |y| < r")
    dist = _norm(x - y)
    if np.any(dist == 0):
        raise SingularityError("ball_green is singular at x = y")
    z0 = (r * r - nx2) * (r * r - ny2) / (r * r * dist * dist)
    return spec.green_const * dist ** (spec.alpha - spec.d) * _green_profile(spec, z0)


def ball_green_center(spec: ProcessSpec, rho, v):
    """Green function of B(0, rho) with the pole at the center, for offsets ``v``.

    Vectorised over rows; returns 0 where |v| >= rho. Used by the walk
    estimators, where every step ball is centred at the current position.
    """
    rho = np.asarray(rho, dtype=float)
    dist = _norm(np.asarray(v, dtype=float))
    inside = dist < rho
    out = np.zeros(np.broadcast(dist, rho).shape)
    if not np.any(inside):
        return out
    dd = dist[inside] if dist.ndim else dist
    rr = np.broadcast_to(rho, out.shape)[inside]
    with np.errstate(divide="ignore"):
        z0 = (rr * rr - dd * dd) / (dd * dd)
        val = spec.green_const * dd ** (spec.alpha - spec.d) * _green_profile(spec, z0)
    out[inside] = val
    return out
