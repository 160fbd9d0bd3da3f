import logging
import math

import numpy as np
import pytest
import scipy.stats as ss

from .context import integrator, measure, model


def stationary_quantiles(params, size=2001, seed=7):
    """Mid-quantiles of N(0, 1/(2k)) in a fixed random order, so contiguous batches are unbiased."""
    levels = (np.arange(size) + 0.5) / size
    samples = ss.norm.ppf(levels, scale=math.sqrt(params.stationary_variance))
    return measure.EmpiricalMeasure(np.random.default_rng(seed).permutation(samples).reshape(-1, 1))


@pytest.fixture
def params():
    return model.ExampleParams()


@pytest.fixture
def example(params):
    return model.build_example_model(params)


@pytest.fixture
def eta(params):
    return stationary_quantiles(params)


@pytest.fixture
def small_grid():
    return integrator.GridSpec(h=0.05, rho_fast=4.0, record_frames=0)


@pytest.fixture
def small_scale():
    return integrator.ScaleParams(eps=0.25, T=0.25)


@pytest.fixture
def reset_logging():
    yield
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_slowfast", False):
            root.removeHandler(handler)
            handler.close()
