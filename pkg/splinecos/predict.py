"""Posterior sample store, latent-field prediction and posterior summaries."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.special import ndtr

from splinecos.basis import SupportGeometry, design_matrix
from splinecos.errors import ValidationError
from splinecos.model import ModelLayout

logger = logging.getLogger(__name__)

DRAW_BLOCK = 512
TARGET_BLOCK = 4096

SUMMARY_COLUMNS = ["mean", "sd", "q2.5", "q25", "q50", "q75", "q97.5", "ci_lower", "ci_upper"]


def column_blocks(layout: ModelLayout) -> Dict[str, slice]:
    """Position of each parameter block in a stored draw."""
    sizes = [
        ("beta", layout.n_beta),
        ("alpha", layout.n_predictors),
        ("sigma2_y", len(layout.response_ids)),
        ("sigma2_x", layout.n_predictors),
        ("kappa_v", layout.n_predictors),
        ("kappa_w", 1),
        ("delta_w", layout.w_basis.n_basis),
    ] + [(f"delta_v[{p}]", tb.n_basis) for p, tb in zip(layout.predictor_ids, layout.predictor_bases)]
    blocks = {}
    start = 0
    for name, size in sizes:
        blocks[name] = slice(start, start + size)
        start += size
    return blocks


def parameter_columns(layout: ModelLayout) -> List[str]:
    columns = list(layout.beta_names)
    columns += [f"alpha[{p}]" for p in layout.predictor_ids]
    columns += [f"sigma2_y[{r}]" for r in layout.response_ids]
    columns += [f"sigma2_x[{p}]" for p in layout.predictor_ids]
    columns += [f"kappa_v[{p}]" for p in layout.predictor_ids]
    columns.append("kappa_w")
    columns += [f"delta_w[{i}]" for i in range(layout.w_basis.n_basis)]
    for p, tb in zip(layout.predictor_ids, layout.predictor_bases):
        columns += [f"delta_v[{p}][{i}]" for i in range(tb.n_basis)]
    return columns


@dataclass(eq=False)
class PosteriorSamples:
    """Thinned draws of every chain, one row per kept iteration."""
    columns: List[str]
    chains: List[np.ndarray]
    layout: ModelLayout
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.columns = list(self.columns)
        expected = parameter_columns(self.layout)
        if self.columns != expected:
            raise ValidationError("sample columns do not match the model layout")
        self.chains = [np.asarray(c, dtype=float) for c in self.chains]
        if not self.chains:
            raise ValidationError("no chains")
        for c, draws in enumerate(self.chains):
            if draws.ndim != 2 or draws.shape[1] != len(self.columns):
                raise ValidationError(f"chain {c} has shape {draws.shape}, "
                                      f"expected (n, {len(self.columns)})")
        self._index = {name: i for i, name in enumerate(self.columns)}
        self._blocks = column_blocks(self.layout)
        self._stacked: Optional[np.ndarray] = None

    @property
    def n_chains(self) -> int:
        return len(self.chains)

    @property
    def n_draws(self) -> int:
        return sum(len(c) for c in self.chains)

    @property
    def draws(self) -> np.ndarray:
        if self._stacked is None:
            self._stacked = self.chains[0] if self.n_chains == 1 else np.vstack(self.chains)
        return self._stacked

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ValidationError(f"unknown parameter '{name}'") from None

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.index(name)]

    def by_chain(self, name: str) -> np.ndarray:
        """(n_chains, n_draws_per_chain) draws of one parameter."""
        i = self.index(name)
        return np.stack([c[:, i] for c in self.chains])

    def block(self, name: str) -> np.ndarray:
        return self.draws[:, self._blocks[name]]

    @property
    def beta(self) -> np.ndarray:
        return self.block("beta")

    @property
    def delta_w(self) -> np.ndarray:
        return self.block("delta_w")

    def delta_v(self, j: int) -> np.ndarray:
        return self.block(f"delta_v[{self.layout.predictor_ids[j]}]")

    @property
    def scalar_columns(self) -> List[str]:
        return [c for c in self.columns if not c.startswith("delta_")]


def _layout(model) -> ModelLayout:
    return model if isinstance(model, ModelLayout) else model.layout


def _parse_field(layout: ModelLayout, name: str):
    if name in ("eta", "W", "LS"):
        return name, None
    kind, _, predictor = name.partition(":")
    if kind in ("V", "X") and predictor:
        return kind, layout.predictor_index(predictor)
    raise ValidationError(f"unknown field '{name}'; use eta, W, LS, V:<id> or X:<id>")


def _field_values(samples: PosteriorSamples, layout: ModelLayout, kind: str, j: Optional[int],
                  w_design, v_designs, rows: slice) -> np.ndarray:
    """Field values for draws `rows` at the targets of the given designs."""
    offset = layout.slope_index(0)
    beta = samples.beta[rows]
    out = np.zeros((beta.shape[0], w_design.shape[0]))
    if kind in ("eta", "W"):
        out += (w_design @ samples.delta_w[rows].T).T
    if kind in ("eta", "LS"):
        for i, design in enumerate(v_designs):
            out += beta[:, offset + i, None] * (design @ samples.delta_v(i)[rows].T).T
    if kind == "eta":
        out += beta[:, :1]
    if kind in ("V", "X"):
        out += (v_designs[j] @ samples.delta_v(j)[rows].T).T
    if kind == "X":
        out += samples.block("alpha")[rows, j, None]
    return out


def _predict(samples: PosteriorSamples, layout: ModelLayout, kind: str, j: Optional[int],
             targets: Sequence[SupportGeometry], threads: Optional[int]) -> np.ndarray:
    targets = list(targets)
    w_design = design_matrix(layout.w_basis, targets, label="target")
    v_designs = [design_matrix(tb, targets, label="target") for tb in layout.predictor_bases]
    n = samples.n_draws
    result = np.empty((n, len(targets)))

    def fill(start: int):
        stop = min(start + TARGET_BLOCK, len(targets))
        w_block = w_design[start:stop]
        v_block = [d[start:stop] for d in v_designs]
        for first in range(0, n, DRAW_BLOCK):
            rows = slice(first, min(first + DRAW_BLOCK, n))
            result[rows, start:stop] = _field_values(samples, layout, kind, j, w_block, v_block, rows)

    starts = range(0, len(targets), TARGET_BLOCK)
    if len(starts) <= 1:
        for start in starts:
            fill(start)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, starts))
    return result


def predict_eta(samples: PosteriorSamples, model, targets: Sequence[SupportGeometry],
                threads: Optional[int] = None) -> np.ndarray:
    """Posterior draws (n_draws x n_targets) of η on the targets."""
    return _predict(samples, _layout(model), "eta", None, targets, threads)


def predict_field(samples: PosteriorSamples, model, field_name: str,
                  targets: Sequence[SupportGeometry], threads: Optional[int] = None) -> np.ndarray:
    """Posterior draws of eta, W, LS, V:<id> or X:<id> on the targets."""
    layout = _layout(model)
    kind, j = _parse_field(layout, field_name)
    return _predict(samples, layout, kind, j, targets, threads)


def predict_probability(samples: PosteriorSamples, model, targets: Sequence[SupportGeometry],
                        source_id: Optional[str] = None, threads: Optional[int] = None) -> np.ndarray:
    """Posterior mean success probability Φ((η + b_k) / σ_k) of a binary source."""
    layout = _layout(model)
    source_id = source_id or layout.reliable_id
    if source_id not in layout.response_ids:
        raise ValidationError(f"unknown response source '{source_id}'")
    eta = predict_eta(samples, layout, targets, threads)
    bias_index = layout.bias_index(source_id)
    if bias_index is not None:
        eta = eta + samples.beta[:, bias_index, None]
    sd = np.sqrt(samples.column(f"sigma2_y[{source_id}]"))
    return ndtr(eta / sd[:, None]).mean(axis=0)


def prob_overprediction(samples: PosteriorSamples, model, truth: np.ndarray,
                        targets: Sequence[SupportGeometry], field_name: str = "eta",
                        threads: Optional[int] = None) -> np.ndarray:
    """Fraction of draws whose predicted value exceeds the known truth at each target."""
    truth = np.asarray(truth, dtype=float)
    targets = list(targets)
    if truth.shape != (len(targets),):
        raise ValidationError(f"{truth.size} truth values for {len(targets)} targets")
    predicted = predict_field(samples, model, field_name, targets, threads)
    return overprediction_from_draws(predicted, truth)


def overprediction_from_draws(predicted: np.ndarray, truth: np.ndarray) -> np.ndarray:
    return np.mean(predicted > truth[None, :], axis=0)


def summarize(draws: Union[PosteriorSamples, np.ndarray], names: Optional[Sequence[str]] = None,
              level: float = 0.95) -> pd.DataFrame:
    """Mean, sd, quartiles and central credible interval for each column.

    `draws` is either a sample store (summarizing the named parameters, by default
    every scalar parameter) or an (n_draws x n_targets) prediction matrix.
    """
    if not 0 < level < 1:
        raise ValidationError(f"credible level must be in (0, 1), got {level}")
    if isinstance(draws, PosteriorSamples):
        names = list(names) if names is not None else draws.scalar_columns
        matrix = draws.draws[:, [draws.index(n) for n in names]]
    else:
        matrix = np.atleast_2d(np.asarray(draws, dtype=float))
        names = list(names) if names is not None else list(range(matrix.shape[1]))
        if len(names) != matrix.shape[1]:
            raise ValidationError(f"{len(names)} names for {matrix.shape[1]} columns")
    tail = 0.5 * (1 - level)
    probs = [0.025, 0.25, 0.5, 0.75, 0.975, tail, 1 - tail]
    quantiles = np.quantile(matrix, probs, axis=0, method="linear")
    ddof = 1 if matrix.shape[0] > 1 else 0
    table = pd.DataFrame({
        "mean": matrix.mean(axis=0),
        "sd": matrix.std(axis=0, ddof=ddof),
        "q2.5": quantiles[0],
        "q25": quantiles[1],
        "q50": quantiles[2],
        "q75": quantiles[3],
        "q97.5": quantiles[4],
        "ci_lower": quantiles[5],
        "ci_upper": quantiles[6],
    }, index=pd.Index(names, name="name"))
    return table[SUMMARY_COLUMNS]


def overprediction_histogram(p: np.ndarray, bins: int = 10):
    """Counts of overprediction probabilities in equal bins on [0, 1]."""
    return np.histogram(np.asarray(p, dtype=float), bins=bins, range=(0.0, 1.0))


def central_fraction(p: np.ndarray, lo: float = 0.1, hi: float = 0.9) -> float:
    p = np.asarray(p, dtype=float)
    return float(np.mean((p >= lo) & (p <= hi)))


def mean_absolute_error(predicted: np.ndarray, truth: np.ndarray) -> float:
    return float(np.mean(np.abs(np.asarray(predicted) - np.asarray(truth))))
