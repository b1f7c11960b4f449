"""Walk-on-spheres for the isotropic stable process.

Every step jumps from the current point x_k to an exact sample of the exit
position of the largest ball around x_k known to lie in D (scaled by
``gamma``). A jump process leaves each ball by a jump, so the walk stops
the first time it lands outside D, without any boundary layer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Domain
from .kernels import (
    CapabilityError,
    KernelDomainError,
    ProcessSpec,
    ball_green_center,
    sample_ball_exit,
)
from .mc import Estimate, ReliabilityError, map_blocks

__all__ = [
    "WalkResult",
    "WalkBatch",
    "walk_exit",
    "walk_batch",
    "estimate_harmonic",
    "estimate_exit_time",
    "estimate_green",
]

MAX_STEPS = 10_000
CAP_FRACTION = 1e-3


@dataclass(frozen=True)
class WalkResult:
    exit_point: np.ndarray
    time_weight: float
    steps: int
    capped: bool
    absorbed: bool = False


@dataclass
class WalkBatch:
    """Per-walk outputs of a batch of walks, in start order."""

    exit_points: np.ndarray
    time_weight: np.ndarray
    steps: np.ndarray
    capped: np.ndarray
    absorbed: np.ndarray
    green: np.ndarray | None = None
    green_excess: np.ndarray | None = None
    scores: np.ndarray | None = None

    @property
    def ok(self) -> np.ndarray:
        return ~self.capped

    def check(self, max_fraction: float = CAP_FRACTION):
        frac = self.capped.mean() if self.capped.size else 0.0
        if frac > max_fraction:
            raise ReliabilityError(
                f"{self.capped.sum()} of {self.capped.size} walks hit the step budget"
            )
        return self


def _absorb_level(dom: Domain) -> float:
    # below this inscribed radius a walk is treated as having reached the boundary;
    # only matters near points the process can hit (alpha > d)
    return 1e-12 * max(dom.bounding_ball[1], 1e-300)


def _run(spec, dom, starts, rng, max_steps, gamma, targets, cap, scorers=None):
    n, d = starts.shape
    pos = starts.copy()
    tw = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    absorbed = np.zeros(n, dtype=bool)
    active = np.arange(n)
    absorb = _absorb_level(dom)
    kconst = spec.exit_time_const
    a = spec.alpha
    if targets is not None:
        green = np.zeros((n, len(targets)))
        excess = np.zeros((n, len(targets)))
    if scorers:
        scores = np.zeros((n, len(scorers)))
    for _ in range(max_steps):
        if active.size == 0:
            break
        p = pos[active]
        rho = gamma * dom._inner(p)
        stop = rho <= absorb
        if np.any(stop):
            absorbed[active[stop]] = True
            keep = ~stop
            active, p, rho = active[keep], p[keep], rho[keep]
            if active.size == 0:
                break
        tw[active] += kconst * rho**a
        if targets is not None:
            for j, t in enumerate(targets):
                term = ball_green_center(spec, rho, t - p)
                if cap is not None:
                    over = np.maximum(term - cap, 0.0)
                    excess[active, j] += over
                    term = term - over
                green[active, j] += term
        if scorers:
            for j, sc in enumerate(scorers):
                scores[active, j] += sc(p, rho)
        new = p + sample_ball_exit(spec, rho, rng, n=active.size)
        pos[active] = new
        steps[active] += 1
        active = active[dom._contains(new)]
    capped = np.zeros(n, dtype=bool)
    capped[active] = True
    batch = WalkBatch(pos, tw, steps, capped, absorbed)
    if targets is not None:
        batch.green, batch.green_excess = green, excess
    if scorers:
        batch.scores = scores
    return batch


def _concat(parts: list[WalkBatch]) -> WalkBatch:
    fields = ["exit_points", "time_weight", "steps", "capped", "absorbed"]
    out = WalkBatch(*(np.concatenate([getattr(p, f) for p in parts]) for f in fields))
    if parts[0].green is not None:
        out.green = np.concatenate([p.green for p in parts])
        out.green_excess = np.concatenate([p.green_excess for p in parts])
    if parts[0].scores is not None:
        out.scores = np.concatenate([p.scores for p in parts])
    return out


def _starts(dom, x, n):
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1:
        x = np.broadcast_to(np.atleast_1d(x), (n, dom.dim))
    if not np.all(dom._contains(np.atleast_2d(x))):
        raise KernelDomainError("walks must start inside the domain")
    return np.ascontiguousarray(x, dtype=float)


def walk_batch(spec: ProcessSpec, dom: Domain, starts, n: int | None = None, seed: int = 0,
               *, gamma: float = 1.0, max_steps: int = MAX_STEPS, targets=None,
               cap: float | None = None, key: tuple = (), scorers=None) -> WalkBatch:
    """Run one walk per start point (or ``n`` walks from a single point).

    ``targets`` is an optional list of points y for which the walk accumulates
    the occupation-density contributions sum_k G_{B_k}(x_k, y); each term is
    truncated at ``cap`` and the removed mass is returned separately.

    ``scorers`` is an optional list of callables ``(centers, radii) -> values``
    summed over the steps of each walk into ``batch.scores``. A scorer giving
    the exact expected payoff of the next jump when it leaves D turns the walk
    into an expected-value estimator of the harmonic extension.
    """
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    starts_arr = np.asarray(starts, dtype=float)
    if starts_arr.ndim <= 1:
        if n is None:
            raise ValueError("n is required when walking from a single point")
    else:
        n = len(starts_arr)
    starts_arr = _starts(dom, starts_arr, n)
    if targets is not None:
        if not spec.supports_green:
            raise CapabilityError(f"Green functions need alpha < d (d={spec.d}, alpha={spec.alpha})")
        targets = [np.atleast_1d(np.asarray(t, dtype=float)) for t in targets]

    def block(lo, hi, rng):
        return _run(spec, dom, starts_arr[lo:hi], rng, max_steps, gamma, targets, cap, scorers)

    return _concat(map_blocks(block, n, seed, key))


def walk_exit(spec: ProcessSpec, dom: Domain, x, rng: np.random.Generator,
              max_steps: int = MAX_STEPS, gamma: float = 1.0) -> WalkResult:
    """A single walk from ``x`` driven by ``rng``."""
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    start = _starts(dom, x, 1)
    b = _run(spec, dom, start, rng, max_steps, gamma, None, None)
    return WalkResult(b.exit_points[0].copy(), float(b.time_weight[0]), int(b.steps[0]),
                      bool(b.capped[0]), bool(b.absorbed[0]))


def _payoff(h, pts):
    vals = np.asarray(h(pts), dtype=float)
    if vals.shape[0] != len(pts):
        raise ValueError("exterior data must return one value per exit point")
    return vals


def estimate_harmonic(spec: ProcessSpec, dom: Domain, h, x, n: int, seed: int = 0, *,
                      gamma: float = 1.0, max_steps: int = MAX_STEPS,
                      cap_fraction: float = CAP_FRACTION) -> Estimate:
    """Regular harmonic extension of exterior data ``h`` at ``x``.

    ``h`` maps an (m, d) array of exterior points to m values.
    """
    b = walk_batch(spec, dom, x, n, seed, gamma=gamma, max_steps=max_steps).check(cap_fraction)
    vals = _payoff(h, b.exit_points[b.ok])
    return Estimate.from_samples(vals, seed, discarded=int(b.capped.sum()))


def estimate_exit_time(spec: ProcessSpec, dom: Domain, x, n: int, seed: int = 0, *,
                       gamma: float = 1.0, max_steps: int = MAX_STEPS,
                       cap_fraction: float = CAP_FRACTION) -> Estimate:
    """E_x tau_D from the accumulated per-step ball exit times."""
    b = walk_batch(spec, dom, x, n, seed, gamma=gamma, max_steps=max_steps).check(cap_fraction)
    return Estimate.from_samples(b.time_weight[b.ok], seed, discarded=int(b.capped.sum()),
                                 mean_steps=float(b.steps.mean()))


def pilot_cap(spec, dom, starts, targets, seed, n_pilot=2000, q=99.9, gamma=1.0):
    """99.9th percentile of the per-walk Green contributions along a pilot run."""
    starts = np.asarray(starts, dtype=float)
    if starts.ndim > 1:
        starts = starts[:n_pilot]
        n_pilot = len(starts)
    b = walk_batch(spec, dom, starts, n_pilot, seed, gamma=gamma, targets=targets,
                   key=(0x9E37,))
    vals = b.green[b.green > 0]
    return float(np.percentile(vals, q)) if vals.size else np.inf


def estimate_green(spec: ProcessSpec, dom: Domain, x, y, n: int, seed: int = 0, *,
                   cap: float | None | str = "auto", gamma: float = 1.0,
                   max_steps: int = MAX_STEPS, cap_fraction: float = CAP_FRACTION) -> Estimate:
    """G_D(x, y) as the mean over walks from x of sum_k G_{B_k}(x_k, y).

    ``cap="auto"`` truncates every per-step contribution at the 99.9th
    percentile of per-walk totals from a pilot run; ``cap=None`` disables
    truncation. The truncated mass is
    reported in ``info["cap_excess"]`` (the estimate is low by about that much).
    """
    if not spec.supports_green:
        raise CapabilityError(f"Green functions need alpha < d (d={spec.d}, alpha={spec.alpha})")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if not dom.membership(y):
        raise KernelDomainError("estimate_green needs y inside the domain")
    if np.array_equal(np.atleast_1d(np.asarray(x, dtype=float)), y):
        raise KernelDomainError("estimate_green needs x != y")
    if cap == "auto":
        cap = pilot_cap(spec, dom, x, [y], seed, gamma=gamma)
    b = walk_batch(spec, dom, x, n, seed, gamma=gamma, max_steps=max_steps, targets=[y],
                   cap=cap).check(cap_fraction)
    ok = b.ok
    return Estimate.from_samples(b.green[ok, 0], seed, cap=cap,
                                 cap_excess=float(b.green_excess[ok, 0].mean()))
