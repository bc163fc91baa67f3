"""Synthetic scenarios: sampling-unit layouts, latent fields and noisy observations."""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from splinecos.basis import SupportGeometry, TensorBasis, Weight, design_matrix, support_areas
from splinecos.errors import SimulationError, ValidationError
from splinecos.gmrf import GmrfPrior, calibrate_scale, sample_prior
from splinecos.model import (BasisConfig, Family, ModelConfig, PredictorSource,
                             ResponseSource, VarianceFunction, probe_supports)

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 10000
COVERAGE_TOLERANCE = 0.02


class ScenarioKind(str, Enum):
    REGULAR_GRID = "regular-grid"
    IRREGULAR_GRID = "irregular-grid"
    SPARSE = "sparse"
    OVERLAPPING = "overlapping"
    FULL_BINARY = "full-binary"


def scenario_names() -> List[str]:
    return [k.value for k in ScenarioKind]


# (dims, kind) -> defaults not given explicitly
_DEFAULTS = {
    2: {"n_basis": 20, "kappa": 0.09, "n_units": {ScenarioKind.REGULAR_GRID: 10,
                                                 ScenarioKind.IRREGULAR_GRID: 100,
                                                 ScenarioKind.SPARSE: 60,
                                                 ScenarioKind.OVERLAPPING: 0}},
    1: {"n_basis": 100, "kappa": 1.0, "n_units": {ScenarioKind.REGULAR_GRID: 20,
                                                 ScenarioKind.IRREGULAR_GRID: 20,
                                                 ScenarioKind.SPARSE: 15,
                                                 ScenarioKind.OVERLAPPING: 0}},
}


@dataclass(frozen=True)
class ScenarioConfig:
    """One of the four aggregated-Gaussian scenarios.

    n_units counts cells per axis for a regular grid and units in total otherwise;
    the overlapping layout instead adds units until `coverage` is reached.
    """
    kind: ScenarioKind = ScenarioKind.REGULAR_GRID
    dims: int = 2
    domain: Tuple[float, float] = (0.0, 100.0)
    n_basis: Optional[int] = None
    order: int = 3
    kappa: Optional[float] = None
    noise_variance: float = 1.0
    n_units: Optional[int] = None
    coverage: Optional[float] = None
    min_side: float = 0.05
    max_side: float = 0.2
    weight: Weight = Weight.TOTAL
    n_truth: Optional[int] = None

    def __post_init__(self):
        kind = ScenarioKind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "weight", Weight(self.weight))
        object.__setattr__(self, "domain", tuple(float(v) for v in self.domain))
        if kind is ScenarioKind.FULL_BINARY:
            raise ValidationError("use FullBinaryConfig for the full-binary scenario")
        if self.dims not in (1, 2):
            raise ValidationError(f"dims must be 1 or 2, got {self.dims}")
        defaults = _DEFAULTS[self.dims]
        if self.n_basis is None:
            n_basis = 15 if kind is ScenarioKind.OVERLAPPING and self.dims == 2 else defaults["n_basis"]
            object.__setattr__(self, "n_basis", n_basis)
        if self.kappa is None:
            object.__setattr__(self, "kappa", defaults["kappa"])
        if self.n_units is None:
            object.__setattr__(self, "n_units", defaults["n_units"][kind])
        if self.coverage is None:
            object.__setattr__(self, "coverage", {ScenarioKind.SPARSE: 0.5,
                                                  ScenarioKind.OVERLAPPING: 0.7}.get(kind, 1.0))
        if self.n_truth is None:
            object.__setattr__(self, "n_truth", 50 if self.dims == 2 else 200)
        lo, hi = self.domain
        if not hi > lo:
            raise ValidationError(f"empty scenario domain {self.domain}")
        if self.n_basis < self.order or self.kappa <= 0 or self.noise_variance < 0:
            raise ValidationError("scenario needs n_basis >= order, kappa > 0 and noise_variance >= 0")
        if kind is not ScenarioKind.OVERLAPPING and self.n_units < 1:
            raise ValidationError(f"n_units must be positive, got {self.n_units}")
        if kind in (ScenarioKind.SPARSE, ScenarioKind.OVERLAPPING) and not 0 < self.coverage < 1:
            raise ValidationError(f"coverage must be in (0, 1), got {self.coverage}")
        if not 0 < self.min_side <= self.max_side <= 1:
            raise ValidationError("need 0 < min_side <= max_side <= 1 (fractions of the domain side)")

    @property
    def bounds(self) -> Tuple[Tuple[float, float], Tuple[float, float]]:
        lo, hi = float(self.domain[0]), float(self.domain[1])
        return ((lo, hi), (lo, hi)) if self.dims == 2 else ((lo, hi), (0.0, 1.0))

    @property
    def basis_config(self) -> BasisConfig:
        if self.dims == 2:
            return BasisConfig((self.n_basis, self.n_basis), (self.order, self.order))
        return BasisConfig((self.n_basis, 1), (self.order, 1))

    def tensor_basis(self) -> TensorBasis:
        bc = self.basis_config
        return TensorBasis.from_config(self.bounds, bc.n_basis, bc.order)

    @property
    def heteroscedastic(self) -> bool:
        return self.kind is not ScenarioKind.REGULAR_GRID


@dataclass(frozen=True)
class FullBinaryConfig:
    """Two binary sources and two aggregated predictors, all at different resolutions.

    Unit counts are per axis. On the default 80 x 80 square the unit sides are 5.71 and
    2.22 for the predictors and 4 and 2.86 for the responses. Small domains leave the
    probit scale unidentified: β and σ²_y then grow together.
    """
    dims: int = 2
    length: float = 80.0
    predictor_units: Tuple[int, int] = (14, 36)
    response_units: Tuple[int, int] = (20, 28)
    beta0: float = 0.0
    beta: Tuple[float, float] = (0.7, -0.6)
    bias: Tuple[float, float] = (0.0, 0.3)
    alpha: Tuple[float, float] = (0.0, 0.5)
    predictor_noise: float = 0.01
    response_noise: float = 0.1
    n_basis: int = 20
    order: int = 3
    kappa_v: float = 1.0
    kappa_w: Optional[float] = None
    n_truth: Optional[int] = None

    def __post_init__(self):
        if self.dims not in (1, 2):
            raise ValidationError(f"dims must be 1 or 2, got {self.dims}")
        if len(self.predictor_units) != len(self.beta) or len(self.predictor_units) != len(self.alpha):
            raise ValidationError("predictor_units, beta and alpha must have equal lengths")
        if len(self.response_units) != len(self.bias):
            raise ValidationError("response_units and bias must have equal lengths")
        if self.n_truth is None:
            object.__setattr__(self, "n_truth", 50 if self.dims == 2 else 200)

    @property
    def kind(self) -> ScenarioKind:
        return ScenarioKind.FULL_BINARY

    @property
    def bounds(self) -> Tuple[Tuple[float, float], Tuple[float, float]]:
        return ((0.0, self.length), (0.0, self.length)) if self.dims == 2 else ((0.0, self.length), (0.0, 1.0))

    @property
    def basis_config(self) -> BasisConfig:
        if self.dims == 2:
            return BasisConfig((self.n_basis, self.n_basis), (self.order, self.order))
        return BasisConfig((self.n_basis, 1), (self.order, 1))

    def tensor_basis(self) -> TensorBasis:
        bc = self.basis_config
        return TensorBasis.from_config(self.bounds, bc.n_basis, bc.order)


@dataclass(eq=False)
class ScenarioData:
    """A simulated dataset together with the truth it was generated from."""
    name: str
    responses: List[ResponseSource]
    predictors: List[PredictorSource]
    truth_targets: List[SupportGeometry]
    truth: np.ndarray
    true_delta: Dict[str, np.ndarray]
    parameters: Dict = field(default_factory=dict)


def _rect(bounds, lo1, hi1, lo2=None, hi2=None, weight=Weight.AVERAGE) -> SupportGeometry:
    if lo2 is None:
        lo2, hi2 = bounds[1]
    return SupportGeometry.rect(lo1, hi1, lo2, hi2, weight)


def regular_grid(bounds, n: int, dims: int, weight: Weight) -> List[SupportGeometry]:
    """n cells per axis tiling the domain, row-major in the first coordinate."""
    (lo1, hi1), (lo2, hi2) = bounds
    e1 = np.linspace(lo1, hi1, n + 1)
    if dims == 1:
        return [_rect(bounds, e1[i], e1[i + 1], weight=weight) for i in range(n)]
    e2 = np.linspace(lo2, hi2, n + 1)
    return [_rect(bounds, e1[i], e1[i + 1], e2[j], e2[j + 1], weight)
            for i in range(n) for j in range(n)]


def grid_points(bounds, n: int, dims: int) -> List[SupportGeometry]:
    """Cell-centre points of a regular grid."""
    (lo1, hi1), (lo2, hi2) = bounds
    s1 = lo1 + (np.arange(n) + 0.5) * (hi1 - lo1) / n
    if dims == 1:
        return [SupportGeometry.point(a, 0.5 * (lo2 + hi2)) for a in s1]
    s2 = lo2 + (np.arange(n) + 0.5) * (hi2 - lo2) / n
    return [SupportGeometry.point(a, b) for a in s1 for b in s2]


def _irregular_grid(cfg: ScenarioConfig, rng: np.random.Generator) -> List[SupportGeometry]:
    """Guillotine partition: repeatedly cut the largest cell across its longer side."""
    (lo1, hi1), (lo2, hi2) = cfg.bounds
    cells = [[lo1, hi1, lo2, hi2]]
    while len(cells) < cfg.n_units:
        areas = [(c[1] - c[0]) * (c[3] - c[2]) for c in cells]
        cell = cells.pop(int(np.argmax(areas)))
        axis = 0 if cfg.dims == 1 or (cell[1] - cell[0]) >= (cell[3] - cell[2]) else 1
        lo, hi = cell[2 * axis], cell[2 * axis + 1]
        cut = lo + rng.uniform(0.25, 0.75) * (hi - lo)
        first, second = list(cell), list(cell)
        first[2 * axis + 1] = cut
        second[2 * axis] = cut
        cells.extend([first, second])
    cells.sort(key=lambda c: (c[0], c[2]))
    return [SupportGeometry.rect(*c, cfg.weight) for c in cells]


def interiors_overlap(a: SupportGeometry, b: SupportGeometry) -> bool:
    return a.lo1 < b.hi1 and b.lo1 < a.hi1 and a.lo2 < b.hi2 and b.lo2 < a.hi2


def union_area(rects: Sequence[SupportGeometry]) -> float:
    """Exact area of a union of rectangles by coordinate compression."""
    if not rects:
        return 0.0
    ext = np.array([r.extent for r in rects])
    xs = np.unique(ext[:, :2])
    ys = np.unique(ext[:, 2:])
    covered = np.zeros((len(xs) - 1, len(ys) - 1), dtype=bool)
    i0 = np.searchsorted(xs, ext[:, 0])
    i1 = np.searchsorted(xs, ext[:, 1])
    j0 = np.searchsorted(ys, ext[:, 2])
    j1 = np.searchsorted(ys, ext[:, 3])
    for a, b, c, d in zip(i0, i1, j0, j1):
        covered[a:b, c:d] = True
    cell_areas = np.outer(np.diff(xs), np.diff(ys))
    return float(np.sum(cell_areas[covered]))


def _random_rect(cfg: ScenarioConfig, rng: np.random.Generator, side1: float,
                 side2: Optional[float]) -> SupportGeometry:
    (lo1, hi1), (lo2, hi2) = cfg.bounds
    start1 = rng.uniform(lo1, hi1 - side1)
    if cfg.dims == 1:
        return SupportGeometry.rect(start1, start1 + side1, lo2, hi2, cfg.weight)
    start2 = rng.uniform(lo2, hi2 - side2)
    return SupportGeometry.rect(start1, start1 + side1, start2, start2 + side2, cfg.weight)


def _sparse_units(cfg: ScenarioConfig, rng: np.random.Generator) -> List[SupportGeometry]:
    """Non-overlapping random rectangles covering about `coverage` of the domain."""
    (lo1, hi1), (lo2, hi2) = cfg.bounds
    width = hi1 - lo1
    target = cfg.coverage * width * (hi2 - lo2) / cfg.n_units
    units: List[SupportGeometry] = []
    for _ in range(cfg.n_units):
        for _ in range(MAX_ATTEMPTS):
            area = target * rng.uniform(0.5, 1.5)
            if cfg.dims == 1:
                side1, side2 = min(area / (hi2 - lo2), width), None
            else:
                aspect = np.exp(rng.uniform(np.log(0.5), np.log(2.0)))
                side1 = min(np.sqrt(area * aspect), width)
                side2 = min(area / side1, hi2 - lo2)
            candidate = _random_rect(cfg, rng, side1, side2)
            if not any(interiors_overlap(candidate, u) for u in units):
                units.append(candidate)
                break
        else:
            raise SimulationError(f"could not place sparse unit {len(units) + 1} of {cfg.n_units} "
                                  f"after {MAX_ATTEMPTS} attempts; lower coverage or n_units")
    return units


def _overlapping_units(cfg: ScenarioConfig, rng: np.random.Generator) -> List[SupportGeometry]:
    """Random, possibly overlapping rectangles until the union reaches the target coverage."""
    (lo1, hi1), (lo2, hi2) = cfg.bounds
    domain_area = (hi1 - lo1) * (hi2 - lo2)
    units: List[SupportGeometry] = []
    coverage = 0.0
    for _ in range(MAX_ATTEMPTS):
        side1 = rng.uniform(cfg.min_side, cfg.max_side) * (hi1 - lo1)
        side2 = rng.uniform(cfg.min_side, cfg.max_side) * (hi2 - lo2) if cfg.dims == 2 else None
        candidate = _random_rect(cfg, rng, side1, side2)
        proposed = union_area(units + [candidate]) / domain_area
        if proposed > cfg.coverage + COVERAGE_TOLERANCE:
            continue
        units.append(candidate)
        coverage = proposed
        if coverage >= cfg.coverage - COVERAGE_TOLERANCE:
            return units
    raise SimulationError(f"overlapping units reached coverage {coverage:.3f} of "
                          f"{cfg.coverage:.3f} after {MAX_ATTEMPTS} attempts")


def gen_units(cfg: ScenarioConfig, rng: np.random.Generator) -> List[SupportGeometry]:
    """Sampling units for the configured layout."""
    if cfg.kind is ScenarioKind.REGULAR_GRID:
        units = regular_grid(cfg.bounds, cfg.n_units, cfg.dims, cfg.weight)
    elif cfg.kind is ScenarioKind.IRREGULAR_GRID:
        units = _irregular_grid(cfg, rng)
    elif cfg.kind is ScenarioKind.SPARSE:
        units = _sparse_units(cfg, rng)
    else:
        units = _overlapping_units(cfg, rng)
    logger.info("%s: %d units", cfg.kind.value, len(units))
    return units


def noise_variances(cfg: ScenarioConfig, units: Sequence[SupportGeometry]) -> np.ndarray:
    """σ² on a regular grid, σ²/|c| on every other layout."""
    if not cfg.heteroscedastic:
        return np.full(len(units), cfg.noise_variance)
    return cfg.noise_variance / support_areas(units)


def gen_data(cfg: ScenarioConfig, units: Sequence[SupportGeometry],
             rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Draw δ from the GMRF prior and aggregate it over the units with noise."""
    tb = cfg.tensor_basis()
    prior = GmrfPrior.grid(tb.q1, tb.q2, cfg.kappa)
    delta = sample_prior(prior, rng)
    noiseless = design_matrix(tb, units) @ delta
    noise = np.sqrt(noise_variances(cfg, units)) * rng.standard_normal(len(units))
    return delta, noiseless + noise


def gen_truth(cfg, delta: np.ndarray, targets: Optional[Sequence[SupportGeometry]] = None):
    """Noiseless W at the evaluation targets (cell-centre points by default)."""
    if targets is None:
        targets = grid_points(cfg.bounds, cfg.n_truth, cfg.dims)
    targets = list(targets)
    return targets, design_matrix(cfg.tensor_basis(), targets) @ delta


def model_variants(kind: ScenarioKind) -> Dict[str, Dict]:
    """Models fitted to a scenario: name -> centroid flag and variance function."""
    kind = ScenarioKind(kind)
    if kind is ScenarioKind.FULL_BINARY:
        return {"support": {"as_centroids": False, "variance": VarianceFunction.CONSTANT}}
    if kind is ScenarioKind.REGULAR_GRID:
        return {
            "naive": {"as_centroids": True, "variance": VarianceFunction.CONSTANT},
            "support": {"as_centroids": False, "variance": VarianceFunction.CONSTANT},
        }
    return {
        "naive": {"as_centroids": True, "variance": VarianceFunction.CONSTANT},
        "heteroscedastic": {"as_centroids": True, "variance": VarianceFunction.INVERSE_AREA},
        "support": {"as_centroids": False, "variance": VarianceFunction.INVERSE_AREA},
    }


def simulate_scenario(cfg: ScenarioConfig, rng: np.random.Generator) -> ScenarioData:
    units = gen_units(cfg, rng)
    delta, y = gen_data(cfg, units, rng)
    targets, truth = gen_truth(cfg, delta)
    response = ResponseSource(id="y", supports=units, values=y, reliable=True)
    return ScenarioData(
        name=cfg.kind.value,
        responses=[response],
        predictors=[],
        truth_targets=targets,
        truth=truth,
        true_delta={"w": delta},
        parameters={"kappa": cfg.kappa, "noise_variance": cfg.noise_variance,
                    "n_units": len(units), "weight": cfg.weight.value},
    )


def scenario_model_config(cfg: ScenarioConfig) -> ModelConfig:
    return ModelConfig(domain=cfg.bounds, basis=cfg.basis_config)


def gen_full_binary(rng: np.random.Generator, cfg: Optional[FullBinaryConfig] = None) -> ScenarioData:
    """Binary responses from η = β₀ + Σβ_j V_j + W observed through two biased sources."""
    cfg = cfg or FullBinaryConfig()
    bounds = cfg.bounds
    tb = cfg.tensor_basis()
    structure = GmrfPrior.grid(tb.q1, tb.q2).structure
    kappa_w = cfg.kappa_w or calibrate_scale(structure, design_matrix(tb, probe_supports(tb)))
    v_prior = GmrfPrior(structure, cfg.kappa_v)
    delta_v = [sample_prior(v_prior, rng) for _ in cfg.predictor_units]
    delta_w = sample_prior(GmrfPrior(structure, kappa_w), rng)

    predictors = []
    for j, n in enumerate(cfg.predictor_units):
        units = regular_grid(bounds, n, cfg.dims, Weight.AVERAGE)
        latent = cfg.alpha[j] + design_matrix(tb, units) @ delta_v[j]
        x = latent + np.sqrt(cfg.predictor_noise) * rng.standard_normal(len(units))
        predictors.append(PredictorSource(id=f"x{j + 1}", supports=units, values=x))

    def eta(supports):
        design = design_matrix(tb, supports)
        value = cfg.beta0 + design @ delta_w
        for coef, delta in zip(cfg.beta, delta_v):
            value = value + coef * (design @ delta)
        return value

    responses = []
    for k, n in enumerate(cfg.response_units):
        units = regular_grid(bounds, n, cfg.dims, Weight.AVERAGE)
        z = eta(units) + cfg.bias[k] + np.sqrt(cfg.response_noise) * rng.standard_normal(len(units))
        responses.append(ResponseSource(id=f"y{k + 1}", supports=units, values=(z > 0).astype(float),
                                        family=Family.BERNOULLI, reliable=k == 0))

    targets = grid_points(bounds, cfg.n_truth, cfg.dims)
    true_delta = {"w": delta_w}
    true_delta.update({f"x{j + 1}": d for j, d in enumerate(delta_v)})
    return ScenarioData(
        name=ScenarioKind.FULL_BINARY.value,
        responses=responses,
        predictors=predictors,
        truth_targets=targets,
        truth=eta(targets),
        true_delta=true_delta,
        parameters={"beta0": cfg.beta0, "beta": list(cfg.beta), "bias": list(cfg.bias),
                    "alpha": list(cfg.alpha), "kappa_w": kappa_w, "kappa_v": cfg.kappa_v,
                    "predictor_noise": cfg.predictor_noise, "response_noise": cfg.response_noise},
    )


def full_binary_model_config(cfg: FullBinaryConfig, kappa_w: Optional[float] = None) -> ModelConfig:
    return ModelConfig(domain=cfg.bounds, basis=cfg.basis_config, kappa_w=kappa_w)


def scenario_config(name: str, dims: Optional[int] = None, overrides: Optional[Dict] = None):
    """Scenario config for a named scenario with JSON-style overrides applied."""
    try:
        kind = ScenarioKind(name)
    except ValueError:
        raise ValidationError(f"unknown scenario '{name}'; valid scenarios: {', '.join(scenario_names())}") from None
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in (overrides or {}).items()}
    if dims is not None:
        kwargs["dims"] = dims
    try:
        if kind is ScenarioKind.FULL_BINARY:
            return FullBinaryConfig(**kwargs)
        return ScenarioConfig(kind=kind, **kwargs)
    except TypeError as e:
        raise ValidationError(f"invalid scenario override: {e}") from e
