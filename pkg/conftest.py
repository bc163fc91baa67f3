"""Shared fixtures: small bases, models and chain stores."""
import numpy as np
import pytest

from splinecos import model, sampler
from splinecos.basis import SupportGeometry, TensorBasis, Weight
from splinecos.model import ModelConfig, BasisConfig, PredictorSource, ResponseSource


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def basis_2d():
    return TensorBasis.from_config(((0.0, 100.0), (0.0, 100.0)), (8, 6), (3, 3))


@pytest.fixture
def basis_1d():
    return TensorBasis.from_config(((0.0, 10.0), (0.0, 1.0)), (12, 1), (3, 1))


def rect_grid_1d(n, lo=0.0, hi=10.0, weight=Weight.AVERAGE):
    edges = np.linspace(lo, hi, n + 1)
    return [SupportGeometry.rect(edges[i], edges[i + 1], 0.0, 1.0, weight) for i in range(n)]


@pytest.fixture
def gaussian_spec(rng):
    """One Gaussian response on 20 cells of [0, 10] and one predictor on 15 cells."""
    config = ModelConfig(domain=((0.0, 10.0), (0.0, 1.0)),
                         basis=BasisConfig((8, 1), (3, 1)))
    y_units = rect_grid_1d(20)
    x_units = rect_grid_1d(15)
    centres = np.array([u.centroid[0] for u in y_units])
    y = np.sin(centres / 2.0) + 0.1 * rng.standard_normal(len(y_units))
    x = np.cos(np.array([u.centroid[0] for u in x_units]) / 3.0) + 0.1 * rng.standard_normal(len(x_units))
    responses = [ResponseSource(id="y", supports=y_units, values=y, reliable=True)]
    predictors = [PredictorSource(id="x", supports=x_units, values=x)]
    return model.build(config, responses, predictors)


@pytest.fixture
def bernoulli_spec(rng):
    """Two binary sources with one predictor on [0, 10]."""
    config = ModelConfig(domain=((0.0, 10.0), (0.0, 1.0)),
                         basis=BasisConfig((8, 1), (3, 1)))
    a_units = rect_grid_1d(16)
    b_units = rect_grid_1d(10)
    x_units = rect_grid_1d(12)
    a = (np.sin(np.array([u.centroid[0] for u in a_units])) > 0).astype(float)
    b = (np.sin(np.array([u.centroid[0] for u in b_units])) > 0.2).astype(float)
    x = np.sin(np.array([u.centroid[0] for u in x_units])) + 0.1 * rng.standard_normal(len(x_units))
    responses = [
        ResponseSource(id="a", supports=a_units, values=a, family="bernoulli", reliable=True),
        ResponseSource(id="b", supports=b_units, values=b, family="bernoulli"),
    ]
    predictors = [PredictorSource(id="x", supports=x_units, values=x)]
    return model.build(config, responses, predictors)


@pytest.fixture
def short_run():
    return sampler.SamplerConfig(n_iter=60, burn_in=20, thin=2, chains=2, seed=7)


@pytest.fixture
def gaussian_samples(gaussian_spec, short_run):
    return sampler.run(gaussian_spec, short_run)
