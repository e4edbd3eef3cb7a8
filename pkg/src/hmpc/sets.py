"""Polyhedral sets {x : Hx <= h}."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

Array = np.ndarray


@dataclass(frozen=True)
class Polyhedron:
    """The set {x : Hx <= h}."""

    H: Array
    h: Array

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        h = np.asarray(self.h, dtype=float).reshape(-1)
        if H.shape[0] != h.size:
            raise ValueError(f"H has {H.shape[0]} rows but h has {h.size} entries")
        if not np.all(np.isfinite(h)):
            raise ValueError("h must be finite")
        if H.size and np.any(np.all(H == 0.0, axis=1)):
            raise ValueError("H contains a zero row")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "h", h)

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    @property
    def n_rows(self) -> int:
        return self.H.shape[0]

    @classmethod
    def box(cls, lower: Array, upper: Array) -> Polyhedron:
        """Axis-aligned box; infinite bounds produce no row."""
        lower = np.asarray(lower, dtype=float).reshape(-1)
        upper = np.asarray(upper, dtype=float).reshape(-1)
        n = lower.size
        rows, rhs = [], []
        for i in range(n):
            if np.isfinite(upper[i]):
                e = np.zeros(n)
                e[i] = 1.0
                rows.append(e)
                rhs.append(upper[i])
            if np.isfinite(lower[i]):
                e = np.zeros(n)
                e[i] = -1.0
                rows.append(e)
                rhs.append(-lower[i])
        H = np.array(rows) if rows else np.zeros((0, n))
        return cls(H, np.array(rhs))

    @classmethod
    def unbounded(cls, n: int) -> Polyhedron:
        """R^n, written with no rows."""
        return cls(np.zeros((0, n)), np.zeros(0))

    def residual(self, x: Array) -> Array:
        """Row-wise Hx - h (also for a stack of points, one per row)."""
        x = np.asarray(x, dtype=float)
        return x @ self.H.T - self.h

    def violation(self, x: Array) -> float:
        """Largest positive row residual (0 inside)."""
        if self.n_rows == 0:
            return 0.0
        return float(max(0.0, np.max(self.residual(x))))

    def contains(self, x: Array, tol: float = 1e-9) -> bool:
        if self.n_rows == 0:
            return True
        return bool(np.all(self.residual(x) <= tol))

    def intersect(self, other: Polyhedron) -> Polyhedron:
        return Polyhedron(np.vstack([self.H, other.H]), np.concatenate([self.h, other.h]))

    def product(self, other: Polyhedron) -> Polyhedron:
        """Cartesian product: constraints on the stacked vector (x, y)."""
        H = np.zeros((self.n_rows + other.n_rows, self.dim + other.dim))
        H[: self.n_rows, : self.dim] = self.H
        H[self.n_rows :, self.dim :] = other.H
        return Polyhedron(H, np.concatenate([self.h, other.h]))

    def preimage(self, M: Array) -> Polyhedron:
        """{z : M z in self}; rows that vanish under M are dropped."""
        H = self.H @ np.atleast_2d(M)
        keep = ~np.all(np.abs(H) <= 1e-14, axis=1)
        return Polyhedron(H[keep], self.h[keep])

    def axis_bounds(self) -> tuple[Array, Array]:
        """Per-coordinate (lower, upper) from the single-variable rows; +-inf where no such row."""
        lower = np.full(self.dim, -np.inf)
        upper = np.full(self.dim, np.inf)
        for row, rhs in zip(self.H, self.h):
            nonzero = np.flatnonzero(row)
            if nonzero.size != 1:
                continue
            i = int(nonzero[0])
            if row[i] > 0:
                upper[i] = min(upper[i], rhs / row[i])
            else:
                lower[i] = max(lower[i], rhs / row[i])
        return lower, upper

    def to_json(self) -> dict[str, Any]:
        return {"H": self.H.tolist(), "h": self.h.tolist()}

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> Polyhedron:
        return cls(np.array(data["H"], dtype=float), np.array(data["h"], dtype=float))


def hit_and_run(
    poly: Polyhedron,
    n_samples: int,
    seed: int = 0,
    start: Array | None = None,
    burn_in: int = 20,
) -> Array:
    """Sample points of a bounded polyhedron by hit-and-run from `start`.

    Starts at the origin unless told otherwise; the start must be interior.
    """
    rng = np.random.default_rng(seed)
    n = poly.dim
    x = np.zeros(n) if start is None else np.asarray(start, dtype=float).copy()
    if not poly.contains(x):
        raise ValueError("hit-and-run start point is outside the set")

    samples = np.empty((n_samples, n))
    total = burn_in + n_samples
    for k in range(total):
        d = rng.standard_normal(n)
        d /= np.linalg.norm(d)
        Hd = poly.H @ d
        slack = poly.h - poly.H @ x
        with np.errstate(divide="ignore"):
            ratios = slack / Hd
        upper = ratios[Hd > 1e-14]
        lower = ratios[Hd < -1e-14]
        if upper.size == 0 or lower.size == 0:
            raise ValueError("hit-and-run needs a bounded polyhedron")
        t_hi = max(float(np.min(upper)), 0.0)
        t_lo = min(float(np.max(lower)), 0.0)
        x = x + rng.uniform(t_lo, t_hi) * d
        if k >= burn_in:
            samples[k - burn_in] = x
    return samples
