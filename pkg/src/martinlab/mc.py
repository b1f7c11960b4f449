"""Monte Carlo plumbing: the Estimate type, seeded substreams, block-parallel map.

Stream-splitting policy: sample ``i`` of a run with seed ``s`` belongs to
block ``i // BLOCK`` and every block draws from its own generator seeded by
``SeedSequence([s, block])``. Blocks are the unit of parallel work and are
reassembled in index order, so results do not depend on the worker count.
"""
from __future__ import annotations

import contextlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

BLOCK = 4096

_workers = os.cpu_count() or 1


class ReliabilityError(RuntimeError):
    """An estimator could not produce a trustworthy value."""


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    n: int
    seed: int
    info: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_samples(cls, samples, seed: int, **info) -> "Estimate":
        samples = np.asarray(samples, dtype=float)
        n = samples.size
        mean = float(samples.mean()) if n else float("nan")
        stderr = float(samples.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return cls(mean, stderr, n, seed, info)

    def scaled(self, c: float) -> "Estimate":
        return Estimate(self.mean * c, self.stderr * abs(c), self.n, self.seed, dict(self.info))

    def interval(self, z: float = 1.96) -> tuple[float, float]:
        return self.mean - z * self.stderr, self.mean + z * self.stderr

    def __float__(self):
        return self.mean


def ratio_estimate(num, den, seed: int, **info) -> Estimate:
    """Ratio of means of paired samples with a delta-method standard error."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    n = num.size
    mden = den.mean()
    if mden == 0:
        raise ReliabilityError("ratio estimate with zero denominator")
    ratio = num.mean() / mden
    resid = num - ratio * den
    se = float(resid.std(ddof=1) / (np.sqrt(n) * abs(mden))) if n > 1 else 0.0
    return Estimate(float(ratio), se, n, seed, info)


def substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *key])))


def get_workers() -> int:
    return _workers


def set_workers(n: int) -> None:
    global _workers
    if n < 1:
        raise ValueError("worker count must be >= 1")
    _workers = int(n)


@contextlib.contextmanager
def workers(n: int):
    old = _workers
    set_workers(n)
    try:
        yield
    finally:
        set_workers(old)


def map_blocks(fn, n: int, seed: int, key: tuple = ()):
    """Call ``fn(lo, hi, rng)`` for each block of ``range(n)``; return results in order."""
    bounds = [(lo, min(lo + BLOCK, n)) for lo in range(0, n, BLOCK)]

    def one(b):
        lo, hi = bounds[b]
        return fn(lo, hi, substream(seed, *key, b))

    if _workers == 1 or len(bounds) == 1:
        return [one(b) for b in range(len(bounds))]
    with ThreadPoolExecutor(max_workers=_workers) as pool:
        return list(pool.map(one, range(len(bounds))))
