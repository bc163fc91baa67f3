"""Hierarchical model assembly: data sources, priors, bases and cached designs."""
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from splinecos.basis import (SupportGeometry, TensorBasis, design_matrix,
                             support_areas)
from splinecos.errors import DomainError, ValidationError
from splinecos.gmrf import GmrfPrior, calibrate_scale

logger = logging.getLogger(__name__)

PROBE_GRID = 20


class Family(str, Enum):
    GAUSSIAN = "gaussian"
    BERNOULLI = "bernoulli"


class VarianceFunction(str, Enum):
    """Shape of the per-unit noise variance, as multiples of the source variance."""
    CONSTANT = "constant"
    LOG_AREA = "log_area"
    INVERSE_AREA = "inverse_area"


def variance_weights(fn: VarianceFunction, areas: np.ndarray, label: str) -> np.ndarray:
    """Diagonal of D for one source."""
    fn = VarianceFunction(fn)
    if fn is VarianceFunction.CONSTANT:
        return np.ones(len(areas))
    if fn is VarianceFunction.LOG_AREA:
        if np.any(areas <= 1):
            raise ValidationError(f"{label}: log_area variance needs every unit area > 1")
        return np.log(areas)
    if np.any(areas <= 0):
        raise ValidationError(f"{label}: inverse_area variance needs rectangular units")
    return 1.0 / areas


@dataclass(eq=False)
class ObservationSource:
    id: str
    supports: List[SupportGeometry]
    values: np.ndarray
    variance_fn: VarianceFunction = VarianceFunction.CONSTANT
    unit_areas: Optional[np.ndarray] = None

    kind = "source"

    def __post_init__(self):
        self.id = str(self.id)
        self.supports = list(self.supports)
        self.values = np.asarray(self.values, dtype=float)
        self.variance_fn = VarianceFunction(self.variance_fn)
        if not self.supports:
            raise ValidationError(f"{self.label}: no observations")
        if self.values.shape != (len(self.supports),):
            raise ValidationError(f"{self.label}: {len(self.supports)} supports but "
                                  f"{self.values.size} values")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError(f"{self.label}: values must be finite")
        if self.unit_areas is None:
            self.unit_areas = support_areas(self.supports)
        self.unit_areas = np.asarray(self.unit_areas, dtype=float)
        self.variance_diag = variance_weights(self.variance_fn, self.unit_areas, self.label)

    @property
    def label(self) -> str:
        return f"{self.kind} '{self.id}'"

    @property
    def n(self) -> int:
        return len(self.supports)

    def _centroid_kwargs(self) -> Dict:
        return dict(id=self.id, supports=[s.as_point() for s in self.supports],
                    values=self.values, variance_fn=self.variance_fn,
                    unit_areas=self.unit_areas)


@dataclass(eq=False)
class ResponseSource(ObservationSource):
    family: Family = Family.GAUSSIAN
    reliable: bool = False

    kind = "response"

    def __post_init__(self):
        super().__post_init__()
        self.family = Family(self.family)
        if self.family is Family.BERNOULLI and not np.all(np.isin(self.values, (0.0, 1.0))):
            raise ValidationError(f"{self.label}: bernoulli values must be 0 or 1")

    def as_centroids(self) -> "ResponseSource":
        return ResponseSource(family=self.family, reliable=self.reliable, **self._centroid_kwargs())


@dataclass(eq=False)
class PredictorSource(ObservationSource):
    kind = "predictor"

    def as_centroids(self) -> "PredictorSource":
        return PredictorSource(**self._centroid_kwargs())


@dataclass(frozen=True)
class BasisConfig:
    n_basis: Tuple[int, int] = (20, 20)
    order: Tuple[int, int] = (3, 3)


@dataclass(frozen=True)
class PriorConfig:
    beta_variance: float = 100.0
    alpha_variance: float = 100.0
    variance_shape: float = 0.01
    variance_rate: float = 0.01
    kappa_shape: float = 0.01
    kappa_rate: float = 0.01

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValidationError(f"priors.{name} must be positive, got {value}")


@dataclass(frozen=True)
class ModelConfig:
    domain: Tuple[Tuple[float, float], Tuple[float, float]]
    basis: BasisConfig = field(default_factory=BasisConfig)
    # None shares the residual basis; one entry is shared by every predictor
    predictor_basis: Optional[Tuple[BasisConfig, ...]] = None
    priors: PriorConfig = field(default_factory=PriorConfig)
    kappa_w: Optional[float] = None
    sample_kappa_w: Optional[bool] = None
    threshold: float = 0.0

    def to_dict(self) -> Dict:
        return json.loads(json.dumps(asdict(self)))

    def predictor_basis_for(self, j: int, n_predictors: int) -> BasisConfig:
        if self.predictor_basis is None:
            return self.basis
        if len(self.predictor_basis) == 1:
            return self.predictor_basis[0]
        if len(self.predictor_basis) != n_predictors:
            raise ValidationError(f"predictor_basis has {len(self.predictor_basis)} entries "
                                  f"for {n_predictors} predictors")
        return self.predictor_basis[j]


@dataclass(frozen=True, eq=False)
class ModelLayout:
    """Bases and ids: everything prediction needs from a fitted model."""
    w_basis: TensorBasis
    predictor_bases: Tuple[TensorBasis, ...]
    predictor_ids: Tuple[str, ...]
    response_ids: Tuple[str, ...]
    reliable_id: str
    families: Tuple[Family, ...]

    @property
    def bias_ids(self) -> Tuple[str, ...]:
        return tuple(r for r in self.response_ids if r != self.reliable_id)

    @property
    def beta_names(self) -> List[str]:
        return (["beta0"] + [f"bias[{r}]" for r in self.bias_ids]
                + [f"beta[{p}]" for p in self.predictor_ids])

    @property
    def n_beta(self) -> int:
        return 1 + len(self.bias_ids) + len(self.predictor_ids)

    @property
    def n_predictors(self) -> int:
        return len(self.predictor_ids)

    def bias_index(self, response_id: str) -> Optional[int]:
        if response_id == self.reliable_id:
            return None
        return 1 + self.bias_ids.index(response_id)

    def slope_index(self, j: int) -> int:
        return 1 + len(self.bias_ids) + j

    def predictor_index(self, predictor_id: str) -> int:
        try:
            return self.predictor_ids.index(predictor_id)
        except ValueError:
            raise ValidationError(f"unknown predictor '{predictor_id}'; "
                                  f"known: {', '.join(self.predictor_ids) or 'none'}") from None

    @property
    def has_bernoulli(self) -> bool:
        return Family.BERNOULLI in self.families

    def to_dict(self) -> Dict:
        return {
            "w_basis": self.w_basis.to_dict(),
            "predictor_bases": [b.to_dict() for b in self.predictor_bases],
            "predictor_ids": list(self.predictor_ids),
            "response_ids": list(self.response_ids),
            "reliable_id": self.reliable_id,
            "families": [f.value for f in self.families],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "ModelLayout":
        return cls(
            w_basis=TensorBasis.from_dict(data["w_basis"]),
            predictor_bases=tuple(TensorBasis.from_dict(b) for b in data["predictor_bases"]),
            predictor_ids=tuple(data["predictor_ids"]),
            response_ids=tuple(data["response_ids"]),
            reliable_id=data["reliable_id"],
            families=tuple(Family(f) for f in data["families"]),
        )


def gram(design: sp.csr_matrix, d_inv: np.ndarray) -> sp.csc_matrix:
    """Symmetric BᵀD⁻¹B."""
    product = design.T @ sp.diags(d_inv) @ design
    return sp.csc_matrix(0.5 * (product + product.T))


@dataclass(eq=False)
class ResponseDesign:
    """Cached matrices for one response source."""
    source: ResponseSource
    w: sp.csr_matrix
    v: List[sp.csr_matrix]
    d_inv: np.ndarray
    gram_w: sp.csc_matrix
    gram_v: List[sp.csc_matrix]
    bias_index: Optional[int]

    @property
    def n(self) -> int:
        return self.source.n


@dataclass(eq=False)
class PredictorDesign:
    """Cached matrices for one predictor source."""
    source: PredictorSource
    v: sp.csr_matrix
    d_inv: np.ndarray
    gram: sp.csc_matrix

    @property
    def n(self) -> int:
        return self.source.n

    @property
    def total_precision(self) -> float:
        return float(self.d_inv.sum())


@dataclass(eq=False)
class ModelSpec:
    config: ModelConfig
    layout: ModelLayout
    responses: List[ResponseSource]
    predictors: List[PredictorSource]
    w_prior: GmrfPrior
    v_priors: List[GmrfPrior]
    sample_kappa_w: bool
    response_designs: List[ResponseDesign]
    predictor_designs: List[PredictorDesign]
    hash: str

    @property
    def priors(self) -> PriorConfig:
        return self.config.priors

    @property
    def kappa_w(self) -> float:
        return self.w_prior.scale

    @property
    def has_bernoulli(self) -> bool:
        return self.layout.has_bernoulli

    @property
    def n_beta(self) -> int:
        return self.layout.n_beta

    def design_star(self, k: int, delta_v: Sequence[np.ndarray]) -> np.ndarray:
        """V*_k = [1 | A_k | V_k] for response source k."""
        design = self.response_designs[k]
        columns = np.zeros((design.n, self.n_beta))
        columns[:, 0] = 1.0
        if design.bias_index is not None:
            columns[:, design.bias_index] = 1.0
        for j, delta in enumerate(delta_v):
            columns[:, self.layout.slope_index(j)] = design.v[j] @ delta
        return columns


def probe_supports(tb: TensorBasis, n: int = PROBE_GRID) -> List[SupportGeometry]:
    """Cell-centre points of an n x n grid over the basis domain."""
    (lo1, hi1), (lo2, hi2) = tb.domain
    s1 = lo1 + (np.arange(n) + 0.5) * (hi1 - lo1) / n
    s2 = lo2 + (np.arange(n) + 0.5) * (hi2 - lo2) / n
    return [SupportGeometry.point(a, b) for a in s1 for b in s2]


def _model_hash(config: ModelConfig, responses: Sequence[ResponseSource],
                predictors: Sequence[PredictorSource]) -> str:
    digest = hashlib.sha256()
    digest.update(json.dumps(config.to_dict(), sort_keys=True).encode())
    for source in list(responses) + list(predictors):
        header = {"kind": source.kind, "id": source.id, "variance": source.variance_fn.value,
                  "family": getattr(source, "family", Family.GAUSSIAN).value,
                  "reliable": getattr(source, "reliable", False),
                  "weights": [s.weight.value for s in source.supports]}
        digest.update(json.dumps(header, sort_keys=True).encode())
        digest.update(np.array([s.extent for s in source.supports], dtype=float).tobytes())
        digest.update(source.values.tobytes())
        digest.update(source.unit_areas.tobytes())
    return digest.hexdigest()


def check_bernoulli(config: ModelConfig, prefix: str = ""):
    """Probit identifiability: threshold fixed at 0 and κ_w never sampled."""
    if config.threshold != 0:
        raise ValidationError(f"{prefix}threshold: bernoulli models fix the threshold at 0")
    if config.sample_kappa_w:
        raise ValidationError(f"{prefix}sample_kappa_w: bernoulli models fix kappa_w; it cannot be sampled")


def _check_ids(sources: Sequence[ObservationSource], kind: str):
    seen = set()
    for source in sources:
        if source.id in seen:
            raise ValidationError(f"duplicate {kind} id '{source.id}'")
        seen.add(source.id)


def _design(tb: TensorBasis, source: ObservationSource) -> sp.csr_matrix:
    try:
        return design_matrix(tb, source.supports, label=source.label)
    except DomainError:
        raise
    except ValidationError as e:
        raise ValidationError(f"{source.label}: {e}") from e


def build(config: ModelConfig, responses: Sequence[ResponseSource],
          predictors: Sequence[PredictorSource] = ()) -> ModelSpec:
    """Validate the sources and cache every design matrix and Gram product."""
    responses = list(responses)
    predictors = list(predictors)
    if not responses:
        raise ValidationError("at least one response source is required")
    _check_ids(responses, "response")
    _check_ids(predictors, "predictor")
    reliable = [r.id for r in responses if r.reliable]
    if len(reliable) != 1:
        raise ValidationError(f"exactly one reliable response source is required, got {len(reliable)}")

    bernoulli = any(r.family is Family.BERNOULLI for r in responses)
    if bernoulli:
        check_bernoulli(config)
    if config.kappa_w is not None and not config.kappa_w > 0:
        raise ValidationError(f"kappa_w must be positive, got {config.kappa_w}")

    w_basis = TensorBasis.from_config(config.domain, config.basis.n_basis, config.basis.order)
    predictor_bases = []
    for j in range(len(predictors)):
        bc = config.predictor_basis_for(j, len(predictors))
        predictor_bases.append(TensorBasis.from_config(config.domain, bc.n_basis, bc.order))

    layout = ModelLayout(
        w_basis=w_basis,
        predictor_bases=tuple(predictor_bases),
        predictor_ids=tuple(p.id for p in predictors),
        response_ids=tuple(r.id for r in responses),
        reliable_id=reliable[0],
        families=tuple(r.family for r in responses),
    )

    if config.sample_kappa_w is None:
        sample_kappa_w = not bernoulli and config.kappa_w is None
    else:
        sample_kappa_w = bool(config.sample_kappa_w)
    structure_w = GmrfPrior.grid(w_basis.q1, w_basis.q2).structure
    if config.kappa_w is not None:
        kappa_w = float(config.kappa_w)
    elif sample_kappa_w:
        kappa_w = 1.0
    else:
        probe = design_matrix(w_basis, probe_supports(w_basis))
        kappa_w = calibrate_scale(structure_w, probe)
        logger.info("calibrated kappa_w = %.6g for unit mean prior variance", kappa_w)
    w_prior = GmrfPrior(structure_w, kappa_w)
    v_priors = [GmrfPrior.grid(tb.q1, tb.q2) for tb in predictor_bases]

    response_designs = []
    for source in responses:
        w = _design(w_basis, source)
        v = [_design(tb, source) for tb in predictor_bases]
        d_inv = 1.0 / source.variance_diag
        response_designs.append(ResponseDesign(
            source=source, w=w, v=v, d_inv=d_inv,
            gram_w=gram(w, d_inv), gram_v=[gram(m, d_inv) for m in v],
            bias_index=layout.bias_index(source.id)))
        logger.info("response '%s': %d rows, W design %s, %d predictor designs",
                    source.id, source.n, w.shape, len(v))

    predictor_designs = []
    for source, tb in zip(predictors, predictor_bases):
        v = _design(tb, source)
        d_inv = 1.0 / source.variance_diag
        predictor_designs.append(PredictorDesign(source=source, v=v, d_inv=d_inv, gram=gram(v, d_inv)))
        logger.info("predictor '%s': %d rows, design %s", source.id, source.n, v.shape)

    return ModelSpec(
        config=config,
        layout=layout,
        responses=responses,
        predictors=predictors,
        w_prior=w_prior,
        v_priors=v_priors,
        sample_kappa_w=sample_kappa_w,
        response_designs=response_designs,
        predictor_designs=predictor_designs,
        hash=_model_hash(config, responses, predictors),
    )


def eta_from_designs(beta: np.ndarray, w_design: sp.spmatrix, delta_w: np.ndarray,
                     v_designs: Sequence[sp.spmatrix], delta_v: Sequence[np.ndarray],
                     slope_offset: int) -> np.ndarray:
    eta = np.full(w_design.shape[0], float(beta[0]))
    eta += w_design @ delta_w
    for j, (design, delta) in enumerate(zip(v_designs, delta_v)):
        eta += beta[slope_offset + j] * (design @ delta)
    return eta


def latent_eta(spec: ModelSpec, beta: np.ndarray, delta_w: np.ndarray,
               delta_v: Sequence[np.ndarray], supports: Sequence[SupportGeometry]) -> np.ndarray:
    """η = β₀ + Σ β_j B_j δ_vj + B_w δ_w on the given supports (no source biases)."""
    layout = spec.layout
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (layout.n_beta,):
        raise ValidationError(f"beta has shape {beta.shape}, expected ({layout.n_beta},)")
    if len(delta_v) != layout.n_predictors:
        raise ValidationError(f"expected {layout.n_predictors} predictor fields, got {len(delta_v)}")
    if np.shape(delta_w) != (layout.w_basis.n_basis,):
        raise ValidationError(f"delta_w has shape {np.shape(delta_w)}, "
                              f"expected ({layout.w_basis.n_basis},)")
    for tb, delta in zip(layout.predictor_bases, delta_v):
        if np.shape(delta) != (tb.n_basis,):
            raise ValidationError(f"predictor field has shape {np.shape(delta)}, expected ({tb.n_basis},)")
    w_design = design_matrix(layout.w_basis, supports)
    v_designs = [design_matrix(tb, supports) for tb in layout.predictor_bases]
    return eta_from_designs(beta, w_design, delta_w, v_designs, delta_v, layout.slope_index(0))
