"""Gibbs sampler for the joint posterior of fields, coefficients and variances."""
import logging
import threading
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import ndtr, ndtri
from tqdm import tqdm

from splinecos.errors import FactorizationError, SamplerError, ValidationError
from splinecos.gmrf import GMRF_JITTER, GaussianConditional, PrecisionFactor
from splinecos.model import Family, ModelSpec
from splinecos.predict import PosteriorSamples, parameter_columns

logger = logging.getLogger(__name__)

# Standardized truncation bound above which exponential rejection replaces inverse CDF.
TAIL_SWITCH = 4.0


@dataclass(frozen=True)
class SamplerConfig:
    n_iter: int = 10000
    burn_in: int = 2000
    thin: int = 5
    chains: int = 1
    seed: int = 0
    threads: Optional[int] = None
    progress: bool = False

    def __post_init__(self):
        if self.burn_in < 0:
            raise ValidationError(f"burn_in must be >= 0, got {self.burn_in}")
        if not self.n_iter > self.burn_in:
            raise ValidationError(f"n_iter ({self.n_iter}) must exceed burn_in ({self.burn_in})")
        if self.thin < 1:
            raise ValidationError(f"thin must be >= 1, got {self.thin}")
        if self.chains < 1:
            raise ValidationError(f"chains must be >= 1, got {self.chains}")
        if self.threads is not None and self.threads < 1:
            raise ValidationError(f"threads must be >= 1, got {self.threads}")
        if self.seed < 0:
            raise ValidationError(f"seed must be >= 0, got {self.seed}")

    @property
    def n_kept(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin

    def keeps(self, iteration: int) -> bool:
        return iteration > self.burn_in and (iteration - self.burn_in) % self.thin == 0


@dataclass(eq=False)
class ChainState:
    z: List[np.ndarray]
    delta_w: np.ndarray
    delta_v: List[np.ndarray]
    beta: np.ndarray
    alpha: np.ndarray
    sigma2_y: np.ndarray
    sigma2_x: np.ndarray
    kappa_v: np.ndarray
    kappa_w: float
    iteration: int = 0
    rng: Optional[np.random.Generator] = None
    # one factor per field; factors are mutated on every refactorization
    factors: Dict[str, PrecisionFactor] = field(default_factory=dict)

    def factor(self, name: str) -> PrecisionFactor:
        if name not in self.factors:
            self.factors[name] = PrecisionFactor()
        return self.factors[name]

    def to_row(self) -> np.ndarray:
        return np.concatenate([
            self.beta, self.alpha, self.sigma2_y, self.sigma2_x, self.kappa_v,
            [self.kappa_w], self.delta_w, *self.delta_v,
        ])


def init_state(spec: ModelSpec, rng: Optional[np.random.Generator] = None) -> ChainState:
    """Zero coefficients and fields, unit variances and scales, z at ±0.5 by label."""
    z = []
    for source in spec.responses:
        if source.family is Family.BERNOULLI:
            z.append(np.where(source.values > 0, 0.5, -0.5))
        else:
            z.append(source.values.copy())
    p = len(spec.predictors)
    return ChainState(
        z=z,
        delta_w=np.zeros(spec.layout.w_basis.n_basis),
        delta_v=[np.zeros(tb.n_basis) for tb in spec.layout.predictor_bases],
        beta=np.zeros(spec.n_beta),
        alpha=np.zeros(p),
        sigma2_y=np.ones(len(spec.responses)),
        sigma2_x=np.ones(p),
        kappa_v=np.ones(p),
        kappa_w=spec.kappa_w,
        rng=rng,
    )


def _response_residual(state: ChainState, spec: ModelSpec, k: int) -> np.ndarray:
    """z_k - V*_k β* - B_w δ_w."""
    design = spec.response_designs[k]
    fitted = spec.design_star(k, state.delta_v) @ state.beta + design.w @ state.delta_w
    return state.z[k] - fitted


def _predictor_residual(state: ChainState, spec: ModelSpec, j: int) -> np.ndarray:
    design = spec.predictor_designs[j]
    return design.source.values - state.alpha[j] - design.v @ state.delta_v[j]


def sample_truncated_normal(mean: np.ndarray, sd: np.ndarray, positive: np.ndarray,
                            rng: np.random.Generator) -> np.ndarray:
    """N(mean, sd²) truncated to (0, ∞) where positive, else to (-∞, 0]."""
    mean = np.asarray(mean, dtype=float)
    sd = np.broadcast_to(np.asarray(sd, dtype=float), mean.shape)
    positive = np.asarray(positive, dtype=bool)
    # reflect the y=0 cases so every draw is a lower-truncated standard normal
    shift = np.where(positive, mean, -mean)
    lower = -shift / sd
    x = np.empty_like(lower)

    body = lower <= TAIL_SWITCH
    if body.any():
        u = rng.uniform(np.finfo(float).tiny, 1.0, size=int(body.sum()))
        x[body] = -ndtri(u * ndtr(-lower[body]))

    pending = np.flatnonzero(~body)
    while pending.size:
        a = lower[pending]
        rate = 0.5 * (a + np.sqrt(a * a + 4.0))
        proposal = a + rng.exponential(size=pending.size) / rate
        accept = rng.random(pending.size) <= np.exp(-0.5 * (proposal - rate) ** 2)
        x[pending[accept]] = proposal[accept]
        pending = pending[~accept]

    value = shift + sd * x
    value = np.where(positive, value, -value)
    return np.where(positive, np.maximum(value, np.finfo(float).tiny), np.minimum(value, 0.0))


def step_z(state: ChainState, spec: ModelSpec, rng: np.random.Generator):
    """Redraw the latent Gaussian of every Bernoulli source given its sign."""
    for k, design in enumerate(spec.response_designs):
        if design.source.family is not Family.BERNOULLI:
            continue
        mean = spec.design_star(k, state.delta_v) @ state.beta + design.w @ state.delta_w
        sd = np.sqrt(state.sigma2_y[k] * design.source.variance_diag)
        state.z[k] = sample_truncated_normal(mean, sd, design.source.values > 0, rng)


def delta_w_conditional(state: ChainState, spec: ModelSpec) -> GaussianConditional:
    prior = spec.w_prior.with_scale(state.kappa_w)
    precision = prior.precision(GMRF_JITTER)
    linear = np.zeros(prior.n)
    for k, design in enumerate(spec.response_designs):
        s = 1.0 / state.sigma2_y[k]
        residual = state.z[k] - spec.design_star(k, state.delta_v) @ state.beta
        precision = precision + s * design.gram_w
        linear += s * (design.w.T @ (design.d_inv * residual))
    return GaussianConditional(precision.tocsc(), linear, sum_to_zero=bool(prior.rank_deficiency),
                               factor=state.factor("w"))


def step_delta_w(state: ChainState, spec: ModelSpec, rng: np.random.Generator):
    try:
        state.delta_w = delta_w_conditional(state, spec).draw(rng)
    except FactorizationError as e:
        raise FactorizationError(f"delta_w update: {e}") from e


def delta_v_conditional(state: ChainState, spec: ModelSpec, j: int) -> GaussianConditional:
    prior = spec.v_priors[j].with_scale(state.kappa_v[j])
    slope = state.beta[spec.layout.slope_index(j)]
    precision = prior.precision(GMRF_JITTER)
    linear = np.zeros(prior.n)
    if slope != 0:
        for k, design in enumerate(spec.response_designs):
            s = 1.0 / state.sigma2_y[k]
            # residual with every term except β_j V_j removed
            residual = _response_residual(state, spec, k) + slope * (design.v[j] @ state.delta_v[j])
            precision = precision + (s * slope * slope) * design.gram_v[j]
            linear += (s * slope) * (design.v[j].T @ (design.d_inv * residual))
    pdesign = spec.predictor_designs[j]
    t = 1.0 / state.sigma2_x[j]
    precision = precision + t * pdesign.gram
    linear += t * (pdesign.v.T @ (pdesign.d_inv * (pdesign.source.values - state.alpha[j])))
    return GaussianConditional(precision.tocsc(), linear, sum_to_zero=bool(prior.rank_deficiency),
                               factor=state.factor(f"v{j}"))


def step_delta_v(state: ChainState, spec: ModelSpec, rng: np.random.Generator, j: int):
    try:
        state.delta_v[j] = delta_v_conditional(state, spec, j).draw(rng)
    except FactorizationError as e:
        raise FactorizationError(f"delta_v[{spec.layout.predictor_ids[j]}] update: {e}") from e


def beta_conditional(state: ChainState, spec: ModelSpec) -> GaussianConditional:
    n_beta = spec.n_beta
    precision = np.eye(n_beta) / spec.priors.beta_variance
    linear = np.zeros(n_beta)
    for k, design in enumerate(spec.response_designs):
        s = 1.0 / state.sigma2_y[k]
        v_star = spec.design_star(k, state.delta_v)
        weighted = v_star * design.d_inv[:, None]
        precision += s * (v_star.T @ weighted)
        linear += s * (weighted.T @ (state.z[k] - design.w @ state.delta_w))
    precision = 0.5 * (precision + precision.T)
    return GaussianConditional(precision, linear)


def step_beta(state: ChainState, spec: ModelSpec, rng: np.random.Generator):
    state.beta = beta_conditional(state, spec).draw(rng)


def alpha_conditional(state: ChainState, spec: ModelSpec, j: int) -> Tuple[float, float]:
    """Mean and variance of the scalar normal conditional of α_j."""
    design = spec.predictor_designs[j]
    t = 1.0 / state.sigma2_x[j]
    variance = 1.0 / (t * design.total_precision + 1.0 / spec.priors.alpha_variance)
    centred = design.source.values - design.v @ state.delta_v[j]
    mean = variance * t * float(design.d_inv @ centred)
    return mean, variance


def step_alpha(state: ChainState, spec: ModelSpec, rng: np.random.Generator, j: int):
    mean, variance = alpha_conditional(state, spec, j)
    state.alpha[j] = mean + np.sqrt(variance) * rng.standard_normal()


def _inverse_gamma(shape: float, rate: float, rng: np.random.Generator) -> float:
    return 1.0 / rng.gamma(shape, 1.0 / rate)


def variance_conditionals(state: ChainState, spec: ModelSpec) -> Tuple[List[Tuple[float, float]],
                                                                      List[Tuple[float, float]]]:
    """Inverse-gamma (shape, rate) for every response and predictor variance."""
    a, b = spec.priors.variance_shape, spec.priors.variance_rate
    responses = []
    for k, design in enumerate(spec.response_designs):
        r = _response_residual(state, spec, k)
        responses.append((a + 0.5 * design.n, b + 0.5 * float(r @ (design.d_inv * r))))
    predictors = []
    for j, design in enumerate(spec.predictor_designs):
        r = _predictor_residual(state, spec, j)
        predictors.append((a + 0.5 * design.n, b + 0.5 * float(r @ (design.d_inv * r))))
    return responses, predictors


def step_variances(state: ChainState, spec: ModelSpec, rng: np.random.Generator):
    responses, predictors = variance_conditionals(state, spec)
    for k, (shape, rate) in enumerate(responses):
        state.sigma2_y[k] = _inverse_gamma(shape, rate, rng)
    for j, (shape, rate) in enumerate(predictors):
        state.sigma2_x[j] = _inverse_gamma(shape, rate, rng)


def kappa_conditional(prior, delta: np.ndarray, shape: float, rate: float) -> Tuple[float, float]:
    """Gamma (shape, rate) of a GMRF scale given its field."""
    return shape + 0.5 * prior.rank, rate + 0.5 * prior.quadratic_form(delta)


def step_kappa(state: ChainState, spec: ModelSpec, rng: np.random.Generator, j: int):
    shape, rate = kappa_conditional(spec.v_priors[j], state.delta_v[j],
                                    spec.priors.kappa_shape, spec.priors.kappa_rate)
    state.kappa_v[j] = rng.gamma(shape, 1.0 / rate)


def step_kappa_w(state: ChainState, spec: ModelSpec, rng: np.random.Generator):
    """Redraw κ_w; a no-op whenever the model fixes it."""
    if not spec.sample_kappa_w:
        return
    shape, rate = kappa_conditional(spec.w_prior, state.delta_w,
                                    spec.priors.kappa_shape, spec.priors.kappa_rate)
    state.kappa_w = rng.gamma(shape, 1.0 / rate)


def sweep(state: ChainState, spec: ModelSpec, rng: np.random.Generator):
    """One full Gibbs scan in the fixed update order."""
    p = len(spec.predictors)
    step_z(state, spec, rng)
    step_delta_w(state, spec, rng)
    for j in range(p):
        step_delta_v(state, spec, rng, j)
    step_beta(state, spec, rng)
    for j in range(p):
        step_alpha(state, spec, rng, j)
    step_variances(state, spec, rng)
    for j in range(p):
        step_kappa(state, spec, rng, j)
    step_kappa_w(state, spec, rng)
    state.iteration += 1


def chain_seeds(seed: int, n_chains: int) -> List[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n_chains)


class ChainRunner:
    """Runs independent chains on worker threads and collects their draws."""

    def __init__(self, spec: ModelSpec, config: SamplerConfig):
        self.spec = spec
        self.config = config
        self.columns = parameter_columns(spec.layout)
        self.results: Dict[int, np.ndarray] = {}
        self.errors: Dict[int, BaseException] = {}
        self.lock = threading.Lock()
        self.slots = threading.BoundedSemaphore(config.threads or config.chains)

    def run_chain(self, chain: int, seed: np.random.SeedSequence) -> np.ndarray:
        """Run one chain to completion and return its thinned draws."""
        config = self.config
        rng = np.random.Generator(np.random.PCG64(seed))
        state = init_state(self.spec, rng)
        draws = np.empty((config.n_kept, len(self.columns)), order="F")
        kept = 0
        logger.info("chain %d starting (entropy %s, spawn key %s)", chain, seed.entropy, seed.spawn_key)
        with tqdm(total=config.n_iter, desc=f"chain {chain}", position=chain,
                  disable=not config.progress, leave=False) as bar:
            for iteration in range(1, config.n_iter + 1):
                try:
                    sweep(state, self.spec, rng)
                except FactorizationError as e:
                    logger.error("chain %d failed at iteration %d: %s", chain, iteration, e)
                    raise SamplerError(f"chain {chain}, iteration {iteration}: {e}",
                                       chain=chain, iteration=iteration) from e
                if config.keeps(iteration):
                    draws[kept] = state.to_row()
                    kept += 1
                bar.update()
        logger.info("chain %d finished with %d draws", chain, kept)
        return draws

    def _worker(self, chain: int, seed: np.random.SeedSequence):
        with self.slots:
            try:
                draws = self.run_chain(chain, seed)
            except BaseException as e:
                with self.lock:
                    self.errors[chain] = e
                return
            with self.lock:
                self.results[chain] = draws

    def run(self) -> List[np.ndarray]:
        seeds = chain_seeds(self.config.seed, self.config.chains)
        if self.config.chains == 1:
            return [self.run_chain(0, seeds[0])]
        workers = [threading.Thread(target=self._worker, args=(c, seeds[c]), daemon=True)
                   for c in range(self.config.chains)]
        for worker in workers:
            worker.start()
        for worker in workers:
            worker.join()
        if self.errors:
            first = min(self.errors)
            error = self.errors[first]
            if isinstance(error, SamplerError):
                raise error
            raise SamplerError(f"chain {first}: {error}", chain=first) from error
        return [self.results[c] for c in range(self.config.chains)]


def run(spec: ModelSpec, config: SamplerConfig) -> PosteriorSamples:
    """Run every chain and return the thinned post-burn-in draws."""
    runner = ChainRunner(spec, config)
    chains = runner.run()
    metadata = {
        "seed": config.seed,
        "model_hash": spec.hash,
        "sampler": {"n_iter": config.n_iter, "burn_in": config.burn_in,
                    "thin": config.thin, "chains": config.chains},
        "kappa_w": spec.kappa_w,
        "sample_kappa_w": spec.sample_kappa_w,
    }
    return PosteriorSamples(runner.columns, chains, spec.layout, metadata)
