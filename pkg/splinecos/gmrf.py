"""Intrinsic GMRF priors on basis weights and Gaussian sampling in canonical form."""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from sksparse.cholmod import CholmodError, analyze

from splinecos.errors import FactorizationError, ValidationError

logger = logging.getLogger(__name__)

GMRF_JITTER = 1e-8
SYMMETRY_TOL = 1e-12

Matrix = Union[np.ndarray, sp.spmatrix]


def _path_laplacian(n: int) -> sp.csr_matrix:
    if n == 1:
        return sp.csr_matrix((1, 1))
    degree = np.full(n, 2.0)
    degree[[0, -1]] = 1.0
    off = -np.ones(n - 1)
    return sp.diags([off, degree, off], [-1, 0, 1], format="csr")


def structure_matrix_grid(q1: int, q2: int) -> sp.csr_matrix:
    """First-order structure P = D - A of the 4-neighbour q1 x q2 lattice."""
    if q1 < 1 or q2 < 1:
        raise ValidationError(f"lattice dimensions must be >= 1, got {q1} x {q2}")
    structure = (sp.kron(_path_laplacian(q1), sp.identity(q2))
                 + sp.kron(sp.identity(q1), _path_laplacian(q2)))
    structure = sp.csr_matrix(structure)
    structure.eliminate_zeros()
    return structure


@dataclass(frozen=True, eq=False)
class GmrfPrior:
    """Intrinsic GMRF with precision κP on a connected lattice."""
    structure: sp.csr_matrix
    scale: float = 1.0
    rank_deficiency: int = 1
    order: int = 1

    def __post_init__(self):
        if not self.scale > 0:
            raise ValidationError(f"GMRF scale must be positive, got {self.scale}")
        if self.order != 1:
            raise ValidationError("only first-order GMRF structures are supported")
        if self.rank_deficiency not in (0, 1):
            raise ValidationError(f"unsupported rank deficiency {self.rank_deficiency}")
        object.__setattr__(self, "structure", sp.csr_matrix(self.structure, dtype=float))

    @classmethod
    def grid(cls, q1: int, q2: int, scale: float = 1.0) -> "GmrfPrior":
        return cls(structure_matrix_grid(q1, q2), float(scale))

    def with_scale(self, scale: float) -> "GmrfPrior":
        other = GmrfPrior(self.structure, float(scale), self.rank_deficiency, self.order)
        # factorizations depend only on the structure
        for name in ("_reduced_lu", "log_gendet_structure"):
            if name in self.__dict__:
                other.__dict__[name] = self.__dict__[name]
        return other

    @property
    def n(self) -> int:
        return self.structure.shape[0]

    @property
    def rank(self) -> int:
        return self.n - self.rank_deficiency

    @cached_property
    def _reduced_lu(self) -> Optional[spla.SuperLU]:
        """LU of P with its last row and column removed (or of P itself when proper)."""
        reduced = self.structure[:self.rank, :self.rank] if self.rank_deficiency else self.structure
        if reduced.shape[0] == 0:
            return None
        try:
            return spla.splu(sp.csc_matrix(reduced))
        except RuntimeError as e:
            raise FactorizationError(f"GMRF structure is not connected: {e}") from e

    @cached_property
    def log_gendet_structure(self) -> float:
        """log of the product of the nonzero eigenvalues of P."""
        lu = self._reduced_lu
        if lu is None:
            return 0.0
        log_det = float(np.sum(np.log(np.abs(lu.U.diagonal()))))
        if self.rank_deficiency:
            # matrix-tree theorem: gendet(P) = n * det(P reduced)
            log_det += float(np.log(self.n))
        return log_det

    def quadratic_form(self, delta: np.ndarray) -> float:
        return float(delta @ (self.structure @ delta))

    def precision(self, jitter: float = GMRF_JITTER) -> sp.csc_matrix:
        return sp.csc_matrix(self.scale * self.structure + jitter * sp.identity(self.n))

    def pinv_solve(self, rhs: np.ndarray) -> np.ndarray:
        """P⁺ rhs for right-hand sides already orthogonal to the null space."""
        rhs = np.asarray(rhs, dtype=float)
        if not self.rank_deficiency:
            return self._reduced_lu.solve(rhs)
        out = np.zeros_like(rhs)
        if self._reduced_lu is not None:
            out[:self.rank] = self._reduced_lu.solve(rhs[:self.rank])
        return out - out.mean(axis=0)


def log_density(prior: GmrfPrior, delta: np.ndarray) -> float:
    """Log density of the intrinsic GMRF using the generalized determinant."""
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (prior.n,):
        raise ValidationError(f"delta has shape {delta.shape}, expected ({prior.n},)")
    rank = prior.rank
    log_gendet = rank * np.log(prior.scale) + prior.log_gendet_structure
    return float(-0.5 * rank * np.log(2 * np.pi) + 0.5 * log_gendet
                 - 0.5 * prior.scale * prior.quadratic_form(delta))


def sample_prior(prior: GmrfPrior, rng: np.random.Generator) -> np.ndarray:
    """One sum-centred draw from the intrinsic prior."""
    factor = PrecisionFactor().factorize(prior.precision())
    draw = factor.draw(rng.standard_normal(prior.n))
    if prior.rank_deficiency:
        draw = draw - draw.mean()
    return draw


def marginal_variance(prior: GmrfPrior, rows: Matrix) -> np.ndarray:
    """Prior variance of each row of rows @ δ under the intrinsic prior."""
    dense = rows.toarray() if sp.issparse(rows) else np.atleast_2d(np.asarray(rows, dtype=float))
    if prior.rank_deficiency:
        dense = dense - dense.mean(axis=1, keepdims=True)
    solved = prior.pinv_solve(dense.T)
    return np.sum(dense * solved.T, axis=1) / prior.scale


def calibrate_scale(structure: sp.spmatrix, rows: Matrix, target: float = 1.0) -> float:
    """Scale κ giving mean prior marginal variance `target` over the given rows."""
    unit = GmrfPrior(structure, 1.0)
    mean_variance = float(np.mean(marginal_variance(unit, rows)))
    if mean_variance <= 0:
        logger.warning("field has no free variance on the probe rows; using scale 1")
        return 1.0
    return mean_variance / target


class PrecisionFactor:
    """Cholesky factor of a precision matrix whose sparsity pattern does not change.

    Sparse inputs go through CHOLMOD: the fill-reducing ordering and symbolic analysis
    are computed once per sparsity pattern and each update only refactors numerically.
    Dense inputs, and every input when `use_cholmod` is false, use scipy.linalg.
    """

    def __init__(self, use_cholmod: bool = True):
        self.use_cholmod = use_cholmod
        self._symbolic = None
        self._pattern = None
        self._dense = None
        self.n = 0

    @staticmethod
    def check_symmetric(precision: Matrix):
        asym = precision - precision.T
        asym = abs(asym).max() if sp.issparse(asym) else np.max(np.abs(asym), initial=0.0)
        size = abs(precision).max() if sp.issparse(precision) else np.max(np.abs(precision), initial=0.0)
        if asym > SYMMETRY_TOL * max(1.0, float(size)):
            raise FactorizationError(f"precision matrix is not symmetric (max asymmetry {asym:.3e})")

    def factorize(self, precision: Matrix) -> "PrecisionFactor":
        self.check_symmetric(precision)
        self.n = precision.shape[0]
        if self.use_cholmod and sp.issparse(precision):
            self._factorize_cholmod(sp.csc_matrix(precision))
        else:
            dense = precision.toarray() if sp.issparse(precision) else np.asarray(precision, dtype=float)
            try:
                self._dense = sla.cholesky(dense, lower=True)
            except sla.LinAlgError as e:
                raise FactorizationError(f"precision matrix is not positive definite: {e}") from e
            self._symbolic = None
        return self

    def _factorize_cholmod(self, precision: sp.csc_matrix):
        precision.sum_duplicates()
        pattern = (precision.indptr.tobytes(), precision.indices.tobytes())
        try:
            if self._symbolic is None or pattern != self._pattern:
                self._symbolic = analyze(precision, ordering_method="best")
                self._pattern = pattern
            self._symbolic.cholesky_inplace(precision)
        except CholmodError as e:
            self._symbolic = None
            raise FactorizationError(f"precision matrix is not positive definite: {e}") from e
        self._dense = None

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._symbolic is not None:
            return self._symbolic(rhs)
        return sla.cho_solve((self._dense, True), rhs)

    def draw(self, z: np.ndarray) -> np.ndarray:
        """Map standard normals z to a N(0, Q⁻¹) draw."""
        if self._symbolic is not None:
            return self._symbolic.apply_Pt(self._symbolic.solve_Lt(z, use_LDLt_decomposition=False))
        return sla.solve_triangular(self._dense, z, lower=True, trans="T")

    def logdet(self) -> float:
        if self._symbolic is not None:
            return float(self._symbolic.logdet())
        return float(2.0 * np.sum(np.log(np.diag(self._dense))))


class GaussianConditional:
    """N(Q⁻¹b, Q⁻¹) in canonical form, optionally conditioned on 1ᵀx = 0."""

    def __init__(self, precision: Matrix, linear: np.ndarray, sum_to_zero: bool = False,
                 factor: Optional[PrecisionFactor] = None):
        self.precision = precision
        self.linear = np.asarray(linear, dtype=float)
        self.sum_to_zero = sum_to_zero
        self.factor = (factor or PrecisionFactor()).factorize(precision)
        self._free_mean = self.factor.solve(self.linear)
        if sum_to_zero:
            self._kriging = self.factor.solve(np.ones(len(self.linear)))
            self._kriging_norm = float(self._kriging.sum())

    def _constrain(self, x: np.ndarray) -> np.ndarray:
        if not self.sum_to_zero:
            return x
        return x - self._kriging * (x.sum() / self._kriging_norm)

    @property
    def mean(self) -> np.ndarray:
        return self._constrain(self._free_mean)

    def covariance(self) -> np.ndarray:
        """Dense covariance; meant for small problems and checks."""
        dense = self.precision.toarray() if sp.issparse(self.precision) else np.asarray(self.precision)
        cov = np.linalg.inv(dense)
        if self.sum_to_zero:
            cov = cov - np.outer(self._kriging, self._kriging) / self._kriging_norm
        return cov

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal(len(self.linear))
        return self._constrain(self._free_mean + self.factor.draw(z))
