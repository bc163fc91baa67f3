"""Clamped B-spline bases, their tensor products and design matrices."""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from splinecos.errors import DomainError, ValidationError

logger = logging.getLogger(__name__)

# Supports are turned into design rows in chunks of this many rows.
_ROW_CHUNK = 2048


class SupportKind(str, Enum):
    POINT = "point"
    RECT = "rect"


class Weight(str, Enum):
    """Aggregation convention for a rectangular support."""
    AVERAGE = "average"
    TOTAL = "total"


def _inverse_spacing(diff: np.ndarray) -> np.ndarray:
    """1/diff where diff > 0, else 0 (the 0/0 convention at repeated knots)."""
    out = np.zeros_like(diff, dtype=float)
    positive = diff > 0
    out[positive] = 1.0 / diff[positive]
    return out


def _cox_de_boor(knots: np.ndarray, order: int, x: np.ndarray) -> np.ndarray:
    """All order-`order` B-splines on `knots` at every x, shape (len(x), len(knots) - order)."""
    t = knots
    x = np.asarray(x, dtype=float)[:, None]
    left, right = t[:-1], t[1:]
    values = ((x >= left) & (x < right)).astype(float)

    # The last non-empty span is closed on the right so hi is inside the domain.
    hi = t[-1]
    last_span = np.flatnonzero((left < hi) & (right == hi))
    at_hi = x[:, 0] == hi
    if last_span.size and at_hi.any():
        values[at_hi, last_span[-1]] = 1.0

    for m in range(2, order + 1):
        n = len(t) - m
        inv_left = _inverse_spacing(t[m - 1:m - 1 + n] - t[:n])
        inv_right = _inverse_spacing(t[m:m + n] - t[1:1 + n])
        values = ((x - t[:n]) * inv_left * values[:, :n]
                  + (t[m:m + n] - x) * inv_right * values[:, 1:n + 1])
    return values


@dataclass(frozen=True, eq=False)
class KnotVector:
    """A clamped knot sequence of order k (polynomial degree k - 1)."""
    knots: np.ndarray
    order: int

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        k = int(self.order)
        if k < 1:
            raise ValidationError(f"spline order must be >= 1, got {self.order}")
        if knots.ndim != 1 or len(knots) < 2 * k:
            raise ValidationError(f"need at least {2 * k} knots for order {k}, got {knots.size}")
        if not np.all(np.isfinite(knots)):
            raise ValidationError("knots must be finite")
        if np.any(np.diff(knots) < 0):
            raise ValidationError("knots must be nondecreasing")
        lo, hi = knots[0], knots[-1]
        if not hi > lo:
            raise ValidationError(f"empty knot domain [{lo}, {hi}]")
        if np.any(knots[:k] != lo) or np.any(knots[-k:] != hi):
            raise ValidationError(f"end knots must be repeated exactly {k} times")
        interior = knots[k:len(knots) - k]
        if np.any(interior <= lo) or np.any(interior >= hi):
            raise ValidationError("interior knots must lie strictly inside the domain")
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "order", k)

    @property
    def n_basis(self) -> int:
        return len(self.knots) - self.order

    @property
    def domain(self) -> Tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    def _check_inside(self, x: np.ndarray, what: str = "point"):
        lo, hi = self.domain
        outside = np.flatnonzero((x < lo) | (x > hi) | ~np.isfinite(x))
        if outside.size:
            i = int(outside[0])
            raise DomainError(f"{what} {x[i]!r} (index {i}) outside basis domain [{lo}, {hi}]",
                              row=i, extent=(float(x[i]),))

    def evaluate(self, x: Sequence[float]) -> np.ndarray:
        """B_{j,k}(x) for all j, one row per x."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        self._check_inside(x)
        return _cox_de_boor(self.knots, self.order, x)

    def derivative(self, x: Sequence[float]) -> np.ndarray:
        """First derivatives of all basis functions, one row per x."""
        k = self.order
        if k < 2:
            raise ValidationError("derivative of an order-1 basis is not a function")
        x = np.atleast_1d(np.asarray(x, dtype=float))
        self._check_inside(x)
        t = self.knots
        q = self.n_basis
        lower = _cox_de_boor(t, k - 1, x)
        inv_left = _inverse_spacing(t[k - 1:k - 1 + q] - t[:q])
        inv_right = _inverse_spacing(t[k:k + q] - t[1:1 + q])
        return (k - 1) * (lower[:, :q] * inv_left - lower[:, 1:q + 1] * inv_right)

    def _antiderivative(self, x: np.ndarray) -> np.ndarray:
        """∫_lo^x B_{j,k} for all j via the order-(k+1) basis on the augmented knots."""
        t = self.knots
        k = self.order
        q = self.n_basis
        augmented = np.append(t, t[-1])
        higher = _cox_de_boor(augmented, k + 1, x)
        tail_sums = np.cumsum(higher[:, ::-1], axis=1)[:, ::-1]
        scale = (t[k:k + q] - t[:q]) / k
        values = tail_sums * scale
        xs = x[:, None]
        values = np.where(xs <= t[:q], 0.0, values)
        values = np.where(xs >= t[k:k + q], scale, values)
        return values

    def integrate(self, a: Sequence[float], b: Sequence[float]) -> np.ndarray:
        """∫_a^b B_{j,k}(t) dt for all j, one row per (a, b) pair."""
        a = np.atleast_1d(np.asarray(a, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        if a.shape != b.shape:
            raise ValidationError("integration bounds must have matching shapes")
        self._check_inside(a, "lower bound")
        self._check_inside(b, "upper bound")
        reversed_rows = np.flatnonzero(a > b)
        if reversed_rows.size:
            i = int(reversed_rows[0])
            raise ValidationError(f"integration bounds reversed at index {i}: {a[i]} > {b[i]}")
        return np.maximum(self._antiderivative(b) - self._antiderivative(a), 0.0)

    def to_dict(self) -> Dict:
        return {"knots": self.knots.tolist(), "order": self.order}

    @classmethod
    def from_dict(cls, data: Dict) -> "KnotVector":
        return cls(np.asarray(data["knots"], dtype=float), int(data["order"]))


def make_clamped_knots(domain: Tuple[float, float], n_interior: int, k: int) -> KnotVector:
    """Uniform interior knots with k-fold knots at both ends; q = n_interior + k."""
    lo, hi = float(domain[0]), float(domain[1])
    if not hi > lo:
        raise ValidationError(f"empty domain [{lo}, {hi}]")
    if k < 1:
        raise ValidationError(f"spline order must be >= 1, got {k}")
    if n_interior < 0:
        raise ValidationError(f"n_interior must be >= 0, got {n_interior}")
    interior = lo + (hi - lo) * np.arange(1, n_interior + 1) / (n_interior + 1)
    knots = np.concatenate([np.full(k, lo), interior, np.full(k, hi)])
    return KnotVector(knots, k)


def eval_all(kv: KnotVector, x: float) -> np.ndarray:
    return kv.evaluate([x])[0]


def eval_derivative_all(kv: KnotVector, x: float) -> np.ndarray:
    return kv.derivative([x])[0]


def integral_all(kv: KnotVector, a: float, b: float) -> np.ndarray:
    return kv.integrate([a], [b])[0]


@dataclass(frozen=True)
class SupportGeometry:
    """A point (lo == hi on both axes) or an axis-aligned rectangle, plus its weight."""
    kind: SupportKind
    lo1: float
    hi1: float
    lo2: float
    hi2: float
    weight: Weight = Weight.AVERAGE

    def __post_init__(self):
        coords = (self.lo1, self.hi1, self.lo2, self.hi2)
        if not all(np.isfinite(c) for c in coords):
            raise ValidationError(f"support coordinates must be finite: {coords}")
        if self.kind is SupportKind.RECT:
            if not (self.hi1 > self.lo1 and self.hi2 > self.lo2):
                raise ValidationError(f"degenerate rectangle {coords}")
        elif self.lo1 != self.hi1 or self.lo2 != self.hi2:
            raise ValidationError(f"point support must have lo == hi: {coords}")

    @classmethod
    def point(cls, s1: float, s2: float) -> "SupportGeometry":
        return cls(SupportKind.POINT, float(s1), float(s1), float(s2), float(s2))

    @classmethod
    def rect(cls, lo1: float, hi1: float, lo2: float, hi2: float,
             weight: Weight = Weight.AVERAGE) -> "SupportGeometry":
        return cls(SupportKind.RECT, float(lo1), float(hi1), float(lo2), float(hi2), Weight(weight))

    @property
    def is_point(self) -> bool:
        return self.kind is SupportKind.POINT

    @property
    def area(self) -> float:
        return (self.hi1 - self.lo1) * (self.hi2 - self.lo2)

    @property
    def centroid(self) -> Tuple[float, float]:
        return 0.5 * (self.lo1 + self.hi1), 0.5 * (self.lo2 + self.hi2)

    @property
    def extent(self) -> Tuple[float, float, float, float]:
        return self.lo1, self.hi1, self.lo2, self.hi2

    def as_point(self) -> "SupportGeometry":
        return SupportGeometry.point(*self.centroid)

    def with_weight(self, weight: Weight) -> "SupportGeometry":
        if self.is_point:
            return self
        return SupportGeometry(self.kind, self.lo1, self.hi1, self.lo2, self.hi2, Weight(weight))

    def contains(self, other: "SupportGeometry") -> bool:
        return (self.lo1 <= other.lo1 and other.hi1 <= self.hi1
                and self.lo2 <= other.lo2 and other.hi2 <= self.hi2)


def support_areas(supports: Sequence[SupportGeometry]) -> np.ndarray:
    return np.array([s.area for s in supports], dtype=float)


@dataclass(frozen=True, eq=False)
class TensorBasis:
    """Tensor product of two 1D bases; (j, l) lives at flat index j * q2 + l."""
    basis1: KnotVector
    basis2: KnotVector = field(default_factory=lambda: make_clamped_knots((0.0, 1.0), 0, 1))

    @classmethod
    def from_config(cls, domain: Sequence[Sequence[float]], n_basis: Sequence[int],
                    order: Sequence[int]) -> "TensorBasis":
        bases = []
        for axis, (dom, q, k) in enumerate(zip(domain, n_basis, order)):
            if q < k:
                raise ValidationError(f"axis {axis + 1}: need n_basis >= order, got {q} < {k}")
            bases.append(make_clamped_knots(tuple(dom), q - k, k))
        return cls(*bases)

    @property
    def q1(self) -> int:
        return self.basis1.n_basis

    @property
    def q2(self) -> int:
        return self.basis2.n_basis

    @property
    def n_basis(self) -> int:
        return self.q1 * self.q2

    @property
    def domain(self) -> Tuple[Tuple[float, float], Tuple[float, float]]:
        return self.basis1.domain, self.basis2.domain

    def full_domain(self, weight: Weight = Weight.AVERAGE) -> SupportGeometry:
        (lo1, hi1), (lo2, hi2) = self.domain
        return SupportGeometry.rect(lo1, hi1, lo2, hi2, weight)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Dense b(s) rows for an (n, 2) array of points."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        b1 = self.basis1.evaluate(points[:, 0])
        b2 = self.basis2.evaluate(points[:, 1])
        return (b1[:, :, None] * b2[:, None, :]).reshape(len(points), self.n_basis)

    def check_supports(self, supports: Sequence[SupportGeometry], label: str = "support"):
        """Raise DomainError naming the first support outside the tensor domain."""
        domain = self.full_domain()
        (lo1, hi1), (lo2, hi2) = self.domain
        for i, s in enumerate(supports):
            if not domain.contains(s):
                raise DomainError(
                    f"{label} row {i} with extent {s.extent} lies outside the basis domain "
                    f"[{lo1}, {hi1}] x [{lo2}, {hi2}]",
                    row=i, extent=s.extent)

    def to_dict(self) -> Dict:
        return {"basis1": self.basis1.to_dict(), "basis2": self.basis2.to_dict()}

    @classmethod
    def from_dict(cls, data: Dict) -> "TensorBasis":
        return cls(KnotVector.from_dict(data["basis1"]), KnotVector.from_dict(data["basis2"]))


def _dense_rows(tb: TensorBasis, supports: Sequence[SupportGeometry]) -> np.ndarray:
    n = len(supports)
    extents = np.array([s.extent for s in supports], dtype=float).reshape(n, 4)
    is_point = np.array([s.is_point for s in supports], dtype=bool)
    left = np.empty((n, tb.q1))
    right = np.empty((n, tb.q2))
    if is_point.any():
        left[is_point] = tb.basis1.evaluate(extents[is_point, 0])
        right[is_point] = tb.basis2.evaluate(extents[is_point, 2])
    rect = ~is_point
    if rect.any():
        left[rect] = tb.basis1.integrate(extents[rect, 0], extents[rect, 1])
        right[rect] = tb.basis2.integrate(extents[rect, 2], extents[rect, 3])
        average = np.array([s.weight is Weight.AVERAGE for s in supports], dtype=bool) & rect
        if average.any():
            areas = (extents[:, 1] - extents[:, 0]) * (extents[:, 3] - extents[:, 2])
            left[average] /= areas[average, None]
    return (left[:, :, None] * right[:, None, :]).reshape(n, tb.n_basis)


def design_matrix(tb: TensorBasis, supports: Sequence[SupportGeometry],
                  weight_override: Optional[Weight] = None, label: str = "support") -> sp.csr_matrix:
    """Sparse (n_supports x q) matrix of point evaluations and rectangle integrals."""
    supports = list(supports)
    if weight_override is not None:
        supports = [s.with_weight(weight_override) for s in supports]
    tb.check_supports(supports, label)
    if not supports:
        return sp.csr_matrix((0, tb.n_basis))
    blocks: List[sp.csr_matrix] = []
    for start in range(0, len(supports), _ROW_CHUNK):
        dense = _dense_rows(tb, supports[start:start + _ROW_CHUNK])
        block = sp.csr_matrix(dense)
        block.eliminate_zeros()
        blocks.append(block)
    matrix = blocks[0] if len(blocks) == 1 else sp.vstack(blocks, format="csr")
    logger.debug("design matrix %s x %s with %s nonzeros", *matrix.shape, matrix.nnz)
    return matrix
