"""Python interface to the lapref C++ core.

Experiment drivers return the same JSON documents the CLI writes, decoded
into dicts.
"""

import json

from . import _lapref
from ._lapref import (
    LaprefError,
    RefinedPosterior,
    __version__,
    accuracy,
    brier,
    ece,
    fit_laplace,
    fpr95,
    gen_mixture_classes,
    gen_toy_logreg,
    gen_toy_regression,
    load_posterior,
    logistic_gaussian_quadrature,
    mmd,
    mpa,
    nll,
    probit_binary,
)


def refine(mean, covariance, x, y, **kwargs):
    """Refine N(mean, covariance) with a radial flow; returns (posterior, trace dict)."""
    posterior, trace = _lapref.refine(mean, covariance, x, y, **kwargs)
    return posterior, json.loads(trace)


def run_mc_grid(**kwargs):
    return json.loads(_lapref.run_mc_grid(**kwargs))


def run_compare(x, y, methods, **kwargs):
    return json.loads(_lapref.run_compare(x, y, list(methods), **kwargs))


def run_toy2d(**kwargs):
    return json.loads(_lapref.run_toy2d(**kwargs))


__all__ = [
    "LaprefError",
    "RefinedPosterior",
    "__version__",
    "accuracy",
    "brier",
    "ece",
    "fit_laplace",
    "fpr95",
    "gen_mixture_classes",
    "gen_toy_logreg",
    "gen_toy_regression",
    "load_posterior",
    "logistic_gaussian_quadrature",
    "mmd",
    "mpa",
    "nll",
    "probit_binary",
    "refine",
    "run_compare",
    "run_mc_grid",
    "run_toy2d",
]
