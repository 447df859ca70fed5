"""Data-generating truth, sigmoid regression model, prior box, and sampling.

The experiment estimates a piecewise-linear "tent" regression function with
a single sigmoid unit under Gaussian noise. The truth and the model share
the noise scale, inputs are uniform on a symmetric interval, and the prior
is uniform on a rectangle in (a, b). Both the truth and the input law are
even in x, while the sigmoid mean satisfies mean(x; a, b) = mean(-x; -a, b),
which is exactly the symmetry that produces two optimal parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import expit

__all__ = [
    "Parameter",
    "ModelSpec",
    "Dataset",
    "sigmoid",
    "true_regression",
    "log_model_density",
    "sample_dataset",
    "dataset_rng",
    "load_model_config",
    "model_config_dict",
]


class Parameter(NamedTuple):
    """A point w = (a, b) in the two-dimensional parameter space."""

    a: float
    b: float


def sigmoid(t):
    """Logistic function 1 / (1 + exp(-t)); saturates without overflow."""
    return expit(t)


def _tent(x: np.ndarray) -> np.ndarray:
    # x+2 on [-2,-1), 1 on [-1,1), -x+2 on [1,2]
    return np.where(x < -1.0, x + 2.0, np.where(x < 1.0, 1.0, 2.0 - x))


def _sigmoid_mean(x, a, b):
    return expit(np.add(np.multiply(a, x), b))


def _tent_mean(x, a, b):
    # Degenerate family whose mean ignores w and equals the truth; used to
    # exercise the zero-gap limit of the population functionals.
    return _tent(np.asarray(x, dtype=float)) + np.zeros_like(np.multiply(a, 0.0))


@dataclass(frozen=True)
class RegressionFamily:
    truth: Callable[[np.ndarray], np.ndarray]
    model_mean: Callable[..., np.ndarray]
    kinks: tuple[float, ...]  # interior breakpoints of the truth


REGRESSION_FAMILIES: dict[str, RegressionFamily] = {
    "tent-sigmoid": RegressionFamily(_tent, _sigmoid_mean, (-1.0, 1.0)),
    # zero-gap reference family: the model reproduces the truth exactly
    "tent-exact": RegressionFamily(_tent, _tent_mean, (-1.0, 1.0)),
}


@dataclass(frozen=True)
class ModelSpec:
    """Statistical model, true distribution, and prior box.

    noise_sigma is shared between the truth q(y|x) and the model p(y|x,w).
    The input density q(x) is uniform on x_support. The prior is uniform on
    prior_a x prior_b. regression_kind selects the (truth, model-mean) pair
    from REGRESSION_FAMILIES.
    """

    noise_sigma: float = 0.2
    x_support: tuple[float, float] = (-2.0, 2.0)
    prior_a: tuple[float, float] = (-20.0, 20.0)
    prior_b: tuple[float, float] = (-20.0, 20.0)
    regression_kind: str = "tent-sigmoid"

    def __post_init__(self):
        if not self.noise_sigma > 0:
            raise ValueError(f"noise_sigma must be positive, got {self.noise_sigma}")
        for name in ("x_support", "prior_a", "prior_b"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} must be an interval with lo < hi, got ({lo}, {hi})")
        if self.regression_kind not in REGRESSION_FAMILIES:
            raise ValueError(
                f"unknown regression_kind {self.regression_kind!r}; "
                f"known: {sorted(REGRESSION_FAMILIES)}"
            )

    @property
    def family(self) -> RegressionFamily:
        return REGRESSION_FAMILIES[self.regression_kind]

    @property
    def x_density(self) -> float:
        lo, hi = self.x_support
        return 1.0 / (hi - lo)

    @property
    def prior_density(self) -> float:
        (a_lo, a_hi), (b_lo, b_hi) = self.prior_a, self.prior_b
        return 1.0 / ((a_hi - a_lo) * (b_hi - b_lo))

    @property
    def x_breakpoints(self) -> tuple[float, ...]:
        """Panel edges for x-quadrature: support endpoints plus truth kinks."""
        lo, hi = self.x_support
        interior = [k for k in self.family.kinks if lo < k < hi]
        return tuple([lo] + interior + [hi])

    def model_mean(self, x, w) -> np.ndarray:
        a, b = w
        return self.family.model_mean(x, a, b)

    def in_prior_box(self, w) -> bool:
        a, b = w
        return (
            self.prior_a[0] <= a <= self.prior_a[1]
            and self.prior_b[0] <= b <= self.prior_b[1]
        )


@dataclass(frozen=True)
class Dataset:
    """n i.i.d. draws (x_j, y_j) from the true distribution."""

    x: np.ndarray
    y: np.ndarray
    seed: tuple
    n: int = field(init=False)

    def __post_init__(self):
        if self.x.shape != self.y.shape or self.x.ndim != 1:
            raise ValueError("x and y must be 1-D arrays of equal length")
        object.__setattr__(self, "n", int(self.x.size))


def true_regression(x, spec: ModelSpec | None = None):
    """Piecewise-linear regression truth f(x); domain-checked.

    Continuous on the support, even in x, with kinks at the interior
    breakpoints.
    """
    spec = spec if spec is not None else ModelSpec()
    x = np.asarray(x, dtype=float)
    lo, hi = spec.x_support
    if np.any(x < lo) or np.any(x > hi):
        raise ValueError(f"x outside support [{lo}, {hi}]")
    out = spec.family.truth(x)
    return float(out) if out.ndim == 0 else out


def log_model_density(x, y, w, spec: ModelSpec):
    """log p(y | x, w) for the Gaussian regression model.

    Equals -log(sqrt(2 pi) sigma) - (y - mean(x; w))^2 / (2 sigma^2); finite
    for all finite inputs.
    """
    sigma = spec.noise_sigma
    resid = np.asarray(y, dtype=float) - spec.model_mean(x, w)
    out = -np.log(np.sqrt(2.0 * np.pi) * sigma) - resid**2 / (2.0 * sigma**2)
    return float(out) if np.ndim(out) == 0 else out


def dataset_rng(master_seed: int, n: int, replication: int) -> np.random.Generator:
    """Independent, reproducible stream for replication r of sample size n.

    Seeding a SeedSequence with the (master_seed, n, r) triple gives
    parallel-safe determinism: streams never collide and do not depend on
    execution order.
    """
    return np.random.default_rng([int(master_seed), int(n), int(replication)])


def sample_dataset(n: int, seed, spec: ModelSpec) -> Dataset:
    """Draw x uniform on the support and y = f(x) + sigma * eps.

    ``seed`` is either an integer or a (master_seed, n, replication) triple;
    the same seed always reproduces the same dataset.
    """
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    seed_tuple = tuple(int(s) for s in np.atleast_1d(seed))
    rng = np.random.default_rng(list(seed_tuple))
    lo, hi = spec.x_support
    x = rng.uniform(lo, hi, size=n)
    y = spec.family.truth(x) + spec.noise_sigma * rng.standard_normal(n)
    return Dataset(x=x, y=y, seed=seed_tuple)


_CONFIG_KEYS = ("noise_sigma", "x_support", "prior_a", "prior_b", "regression_kind")


def model_config_dict(spec: ModelSpec) -> dict:
    return {
        "noise_sigma": spec.noise_sigma,
        "x_support": list(spec.x_support),
        "prior_a": list(spec.prior_a),
        "prior_b": list(spec.prior_b),
        "regression_kind": spec.regression_kind,
    }


def load_model_config(path) -> ModelSpec:
    """Build a ModelSpec from a JSON file; unknown keys are rejected."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    unknown = set(raw) - set(_CONFIG_KEYS)
    if unknown:
        raise ValueError(f"unknown model config keys: {sorted(unknown)}")
    kwargs = dict(raw)
    for key in ("x_support", "prior_a", "prior_b"):
        if key in kwargs:
            kwargs[key] = tuple(float(v) for v in kwargs[key])
    return ModelSpec(**kwargs)
