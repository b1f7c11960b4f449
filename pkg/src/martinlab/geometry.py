"""Bounded open sets in R^d built from balls, boxes and set operations.

Each node answers two vectorised distance bounds:

* ``_inner(x)``: a lower bound on dist(x, complement) for points inside,
* ``_outer(x)``: a lower bound on dist(x, set) for points outside.

Both are exact for balls, boxes and points, and sound (never too large) for
composite nodes. The walk-on-spheres sampler only needs soundness.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Domain",
    "Ball",
    "Box",
    "Point",
    "Union",
    "Intersection",
    "Difference",
    "BoundaryQuery",
    "DomainError",
    "EmptyRegionError",
    "from_json",
    "truncate",
    "interval",
    "punctured",
    "sample_region",
]


class DomainError(ValueError):
    pass


class EmptyRegionError(RuntimeError):
    """Rejection sampling found no point of the requested region."""


def _as_rows(x, d):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[-1] != d:
        raise DomainError(f"expected points in R^{d}, got shape {x.shape}")
    return x, single


class Domain:
    dim: int

    # public, point-or-array API -------------------------------------------------
    def membership(self, x):
        rows, single = _as_rows(x, self.dim)
        out = self._contains(rows)
        return bool(out[0]) if single else out

    def inscribed_radius(self, x):
        rows, single = _as_rows(x, self.dim)
        inside = self._contains(rows)
        if not np.all(inside):
            raise DomainError("inscribed_radius is only defined for points of the domain")
        out = self._inner(rows)
        return float(out[0]) if single else out

    @property
    def bounding_ball(self) -> tuple[np.ndarray, float]:
        bb = getattr(self, "_bb", None)
        if bb is None:
            bb = self._bounding()
            object.__setattr__(self, "_bb", bb)
        return bb

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        c, r = self.bounding_ball
        return c - r, c + r

    def to_json(self):
        raise NotImplementedError

    # set algebra sugar
    def __or__(self, other):
        return Union((self, other))

    def __and__(self, other):
        return Intersection((self, other))

    def __sub__(self, other):
        return Difference(self, (other,))

    # node API ---------------------------------------------------------------------
    def _contains(self, x: np.ndarray, closed: bool = False) -> np.ndarray:
        raise NotImplementedError

    def _inner(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _outer(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _bounding(self):
        raise NotImplementedError

    def _anchors(self) -> np.ndarray:
        # candidate interior points (primitive centres), used by boundary probing
        return np.empty((0, self.dim))


def _vec(v):
    return np.atleast_1d(np.asarray(v, dtype=float))


@dataclass(frozen=True, eq=False)
class Ball(Domain):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center))
        object.__setattr__(self, "radius", float(self.radius))
        if self.radius <= 0:
            raise DomainError("ball radius must be positive")

    @property
    def dim(self):
        return self.center.size

    def _dist(self, x):
        v = x - self.center
        return np.sqrt(np.einsum("ij,ij->i", v, v))

    def _contains(self, x, closed=False):
        dist = self._dist(x)
        return dist <= self.radius if closed else dist < self.radius

    def _inner(self, x):
        return np.maximum(self.radius - self._dist(x), 0.0)

    def _outer(self, x):
        return np.maximum(self._dist(x) - self.radius, 0.0)

    def _bounding(self):
        return self.center, self.radius

    def to_json(self):
        return {"ball": {"c": self.center.tolist(), "r": self.radius}}

    def _anchors(self):
        return self.center[None]


@dataclass(frozen=True, eq=False)
class Box(Domain):
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "low", _vec(self.low))
        object.__setattr__(self, "high", _vec(self.high))
        if self.low.shape != self.high.shape or np.any(self.high <= self.low):
            raise DomainError("box corners must satisfy low < high componentwise")

    @property
    def dim(self):
        return self.low.size

    def _contains(self, x, closed=False):
        if closed:
            return np.all((x >= self.low) & (x <= self.high), axis=1)
        return np.all((x > self.low) & (x < self.high), axis=1)

    def _inner(self, x):
        gap = np.minimum(x - self.low, self.high - x)
        return np.maximum(gap.min(axis=1), 0.0)

    def _outer(self, x):
        excess = np.maximum(np.maximum(self.low - x, x - self.high), 0.0)
        return np.sqrt(np.einsum("ij,ij->i", excess, excess))

    def _bounding(self):
        c = (self.low + self.high) / 2
        return c, float(np.linalg.norm(self.high - c))

    def to_json(self):
        return {"box": {"lo": self.low.tolist(), "hi": self.high.tolist()}}

    def _anchors(self):
        return ((self.low + self.high) / 2)[None]


@dataclass(frozen=True, eq=False)
class Point(Domain):
    """A single point. Lebesgue-null; only meaningful as a subtracted set."""

    location: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "location", _vec(self.location))

    @property
    def dim(self):
        return self.location.size

    def _dist(self, x):
        v = x - self.location
        return np.sqrt(np.einsum("ij,ij->i", v, v))

    def _contains(self, x, closed=False):
        # exact comparison; squaring tiny offsets would underflow to a false hit
        return np.all(x == self.location, axis=1)

    def _inner(self, x):
        return np.zeros(len(x))

    def _outer(self, x):
        return self._dist(x)

    def _bounding(self):
        return self.location, 0.0

    def to_json(self):
        return {"point": self.location.tolist()}


def _check_dims(children):
    dims = {c.dim for c in children}
    if len(dims) != 1:
        raise DomainError(f"children have mismatched dimensions {sorted(dims)}")
    return dims.pop()


@dataclass(frozen=True, eq=False)
class Union(Domain):
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if not self.children:
            raise DomainError("union needs at least one child")
        _check_dims(self.children)

    @property
    def dim(self):
        return self.children[0].dim

    def _contains(self, x, closed=False):
        out = np.zeros(len(x), dtype=bool)
        for c in self.children:
            out |= c._contains(x, closed)
        return out

    def _inner(self, x):
        best = np.zeros(len(x))
        for c in self.children:
            inside = c._contains(x)
            if np.any(inside):
                best[inside] = np.maximum(best[inside], c._inner(x[inside]))
        return best

    def _outer(self, x):
        return np.min([c._outer(x) for c in self.children], axis=0)

    def _bounding(self):
        balls = [c.bounding_ball for c in self.children]
        centers = np.array([b[0] for b in balls])
        c = centers.mean(axis=0)
        r = max(float(np.linalg.norm(bc - c)) + br for bc, br in balls)
        return c, r

    def to_json(self):
        return {"union": [c.to_json() for c in self.children]}

    def _anchors(self):
        return np.concatenate([c._anchors() for c in self.children])


@dataclass(frozen=True, eq=False)
class Intersection(Domain):
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if not self.children:
            raise DomainError("intersection needs at least one child")
        _check_dims(self.children)

    @property
    def dim(self):
        return self.children[0].dim

    def _contains(self, x, closed=False):
        out = np.ones(len(x), dtype=bool)
        for c in self.children:
            out &= c._contains(x, closed)
        return out

    def _inner(self, x):
        return np.min([c._inner(x) for c in self.children], axis=0)

    def _outer(self, x):
        return np.max([c._outer(x) for c in self.children], axis=0)

    def _bounding(self):
        return min((c.bounding_ball for c in self.children), key=lambda b: b[1])

    def to_json(self):
        return {"intersection": [c.to_json() for c in self.children]}

    def _anchors(self):
        return np.concatenate([c._anchors() for c in self.children])


@dataclass(frozen=True, eq=False)
class Difference(Domain):
    """``base`` minus the closures of ``subtracted``."""

    base: Domain
    subtracted: tuple

    def __post_init__(self):
        object.__setattr__(self, "subtracted", tuple(self.subtracted))
        _check_dims((self.base, *self.subtracted))

    @property
    def dim(self):
        return self.base.dim

    def _contains(self, x, closed=False):
        out = self.base._contains(x, closed)
        for s in self.subtracted:
            out &= ~s._contains(x, closed=not closed)
        return out

    def _inner(self, x):
        out = self.base._inner(x)
        for s in self.subtracted:
            out = np.minimum(out, s._outer(x))
        return out

    def _outer(self, x):
        return self.base._outer(x)

    def _bounding(self):
        return self.base.bounding_ball

    def to_json(self):
        return {"difference": [self.base.to_json(), *(s.to_json() for s in self.subtracted)]}

    def _anchors(self):
        return self.base._anchors()


def from_json(tree) -> Domain:
    """Build a domain from its JSON tree (inverse of ``Domain.to_json``)."""
    if not isinstance(tree, dict) or len(tree) != 1:
        raise DomainError(f"domain node must be a single-key object, got {tree!r}")
    ((kind, body),) = tree.items()
    if kind == "ball":
        return Ball(body["c"], body["r"])
    if kind == "box":
        return Box(body["lo"], body["hi"])
    if kind == "point":
        return Point(body)
    if kind == "union":
        return Union(tuple(from_json(c) for c in body))
    if kind == "intersection":
        return Intersection(tuple(from_json(c) for c in body))
    if kind == "difference":
        if len(body) < 2:
            raise DomainError("difference needs a base and at least one subtracted set")
        return Difference(from_json(body[0]), tuple(from_json(c) for c in body[1:]))
    raise DomainError(f"unknown domain node {kind!r}")


def interval(a: float, b: float) -> Ball:
    """The open interval (a, b) as a one-dimensional ball."""
    return Ball([(a + b) / 2], (b - a) / 2)


def punctured(dom: Domain, at) -> Difference:
    return Difference(dom, (Point(at),))


def truncate(dom: Domain, x0, r: float) -> Intersection:
    """D_r = D intersected with B(x0, r)."""
    if r <= 0:
        raise DomainError("truncation radius must be positive")
    return Intersection((dom, Ball(x0, r)))


def sample_region(dom: Domain, n: int, rng: np.random.Generator, ring=None,
                  budget: int = 200):
    """``n`` points uniform in ``dom`` (optionally intersected with a ring).

    ``ring = (x0, r, s)`` restricts to r < |x - x0| < s. Proposals are drawn in
    rounds from the bounding box; ``budget`` caps the number of rounds.
    """
    lo, hi = dom.bounding_box()
    if ring is not None:
        x0, r_in, r_out = ring
        x0 = _vec(x0)
        lo = np.maximum(lo, x0 - r_out)
        hi = np.minimum(hi, x0 + r_out)
        if np.any(hi <= lo):
            raise EmptyRegionError("ring does not meet the domain's bounding box")
    d = dom.dim
    found = []
    total = 0
    for _ in range(budget):
        batch = max(4 * (n - total), 256)
        cand = lo + (hi - lo) * rng.random((batch, d))
        keep = dom._contains(cand)
        if ring is not None:
            dist = np.linalg.norm(cand - x0, axis=1)
            keep &= (dist > r_in) & (dist < r_out)
        if np.any(keep):
            found.append(cand[keep])
            total += int(keep.sum())
        if total >= n:
            return np.concatenate(found)[:n]
    raise EmptyRegionError(
        f"rejection budget exhausted after {budget} rounds ({total} of {n} points)"
    )


@dataclass(frozen=True)
class BoundaryQuery:
    """A boundary point x0, working radius R and reference point xref in D."""

    x0: np.ndarray
    R: float
    xref: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x0", _vec(self.x0))
        object.__setattr__(self, "xref", _vec(self.xref))
        object.__setattr__(self, "R", float(self.R))

    def validate(self, dom: Domain, depth: int = 20, probes: int = 4000, seed: int = 0):
        """Raise DomainError unless x0 is a boundary point and xref a valid reference."""
        if self.R <= 0:
            raise DomainError("R must be positive")
        if dom.membership(self.x0):
            raise DomainError("x0 lies inside the domain")
        if not dom.membership(self.xref):
            raise DomainError("xref must lie in the domain")
        if np.linalg.norm(self.xref - self.x0) <= self.R:
            raise DomainError("xref must satisfy |xref - x0| > R")
        rng = np.random.default_rng(seed)
        for k in range(1, depth + 1):
            rad = 2.0**-k
            try:
                sample_region(dom, 1, rng, ring=(self.x0, 0.0, rad), budget=max(probes // 256, 1))
            except EmptyRegionError:
                # fall back to a deterministic scan: thin domains defeat the box proposal
                if not _scan_hits(dom, self.x0, rad):
                    raise DomainError(f"no point of D found within 2^-{k} of x0") from None
        return self


def _scan_hits(dom: Domain, x0, rad) -> bool:
    d = dom.dim
    anchors = dom._anchors()
    near = anchors[np.linalg.norm(anchors - x0, axis=1) < rad]
    if len(near) and np.any(dom._contains(near)):
        return True
    if d == 1:
        t = np.linspace(-rad, rad, 4001)[:, None]
        return bool(np.any(dom._contains(x0 + t)))
    rng = np.random.default_rng(1)
    u = rng.standard_normal((20000, d))
    u /= np.linalg.norm(u, axis=1)[:, None]
    pts = x0 + u * (rad * rng.random(20000) ** (1.0 / d))[:, None]
    return bool(np.any(dom._contains(pts)))
