"""Coefficients of the free-energy and generalization-loss expansions.

The limiting object is a mean-zero Gaussian vector whose components are the
centered, sqrt(n)-scaled empirical log losses at the optima. This module
evaluates the expected maximum of that vector (closed form for two
branches, Monte Carlo in general), the probability that each branch attains
the maximum, the resulting weighted exponents, and the predicted curves for
the expected free energy and generalization loss.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .population import validate_covariance

__all__ = [
    "GaussianMaxProblem",
    "AsymptoticCoefficients",
    "mu_closed_form_two",
    "expected_max_mc",
    "branch_probabilities",
    "argmax_with_tiebreak",
    "predicted_free_energy",
    "predicted_gen_loss",
    "build_coefficients",
]


@dataclass(frozen=True)
class GaussianMaxProblem:
    """Mean-zero Gaussian vector with covariance V; optional per-component
    exponents used only to break exact ties in the argmax."""

    V: np.ndarray
    lambdas: tuple[float, ...] | None = None
    multiplicities: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "V", validate_covariance(self.V))

    @property
    def m(self) -> int:
        return self.V.shape[0]


def mu_closed_form_two(V: np.ndarray, tol: float = 1e-10) -> float:
    """Expected maximum of a mean-zero bivariate Gaussian.

    Equals sqrt(Var(Z_1 - Z_2) / (2 pi)) = sqrt((V_11 + V_22 - 2 V_12) / (2 pi)).
    """
    V = np.asarray(V, dtype=float)
    if V.shape != (2, 2):
        raise ValueError(f"closed form needs a 2x2 covariance, got shape {V.shape}")
    gap_var = V[0, 0] + V[1, 1] - V[0, 1] - V[1, 0]
    scale = max(abs(V).max(), 1.0)
    if gap_var < -tol * scale:
        raise ValueError(f"V_11 + V_22 - 2 V_12 = {gap_var:.3e} < 0: invalid covariance")
    return math.sqrt(max(gap_var, 0.0) / (2.0 * math.pi))


def _symmetric_sqrt(V: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh(V)
    if eigvals.min() < -tol * max(1.0, eigvals.max()):
        raise ValueError(f"covariance not PSD within tolerance (min eig {eigvals.min():.3e})")
    root = eigvecs @ np.diag(np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T
    return root


def _draw_components(problem: GaussianMaxProblem, draws: int, seed) -> np.ndarray:
    root = _symmetric_sqrt(problem.V)
    rng = np.random.default_rng(seed)
    return rng.standard_normal((draws, problem.m)) @ root


def expected_max_mc(problem: GaussianMaxProblem, draws: int, seed=0):
    """Monte Carlo estimate of E[max_i Z_i] and its standard error.

    General-m evaluator; also the independent oracle for the two-branch
    closed form.
    """
    if draws < 10_000:
        raise ValueError(f"need at least 1e4 draws for a stable estimate, got {draws}")
    maxima = _draw_components(problem, draws, seed).max(axis=1)
    estimate = float(maxima.mean())
    se = float(maxima.std(ddof=1) / math.sqrt(draws))
    return estimate, se


def argmax_with_tiebreak(values, lambdas=None, multiplicities=None) -> int:
    """Index of the largest value; exact ties go to the smallest lambda,
    then the largest multiplicity, then the smallest index."""
    values = np.asarray(values, dtype=float)
    m = values.size
    lambdas = np.ones(m) if lambdas is None else np.asarray(lambdas, dtype=float)
    multiplicities = (
        np.ones(m, dtype=int) if multiplicities is None else np.asarray(multiplicities)
    )
    tied = np.nonzero(values == values.max())[0]
    order = sorted(tied, key=lambda i: (lambdas[i], -multiplicities[i], i))
    return int(order[0])


def _tiebreak_rank(problem: GaussianMaxProblem) -> np.ndarray:
    m = problem.m
    lambdas = np.ones(m) if problem.lambdas is None else np.asarray(problem.lambdas)
    mults = (
        np.ones(m, dtype=int)
        if problem.multiplicities is None
        else np.asarray(problem.multiplicities)
    )
    order = sorted(range(m), key=lambda i: (lambdas[i], -mults[i], i))
    rank = np.empty(m)
    rank[order] = np.arange(m)
    return rank


def branch_probabilities(problem: GaussianMaxProblem, draws: int, seed=0) -> np.ndarray:
    """Fraction of draws in which each component attains the maximum.

    Ties (exact float equality, probability zero unless V is degenerate)
    are resolved by the smallest-lambda-then-largest-multiplicity rule.
    The returned probabilities sum to exactly one.
    """
    if draws < 10_000:
        raise ValueError(f"need at least 1e4 draws for a stable estimate, got {draws}")
    samples = _draw_components(problem, draws, seed)
    rank = _tiebreak_rank(problem)
    masked = np.where(samples == samples.max(axis=1, keepdims=True), rank[None, :], np.inf)
    winners = np.argmin(masked, axis=1)
    counts = np.bincount(winners, minlength=problem.m)
    alpha = counts.astype(float) / draws
    alpha[-1] = 1.0 - alpha[:-1].sum()
    return alpha


@dataclass(frozen=True)
class AsymptoticCoefficients:
    """Everything needed to evaluate the predicted expansion curves."""

    L0: float
    V: np.ndarray
    mu: float
    alpha: tuple[float, ...]
    lambda_hat: float
    m_hat: float
    beta: float = 1.0
    mu_se: float = 0.0  # nonzero when mu came from Monte Carlo

    def __post_init__(self):
        validate_covariance(self.V)
        if self.mu < 0:
            raise ValueError(f"mu must be nonnegative, got {self.mu}")
        if abs(sum(self.alpha) - 1.0) > 1e-12 or any(not 0 <= a <= 1 for a in self.alpha):
            raise ValueError(f"alpha must be probabilities summing to 1, got {self.alpha}")
        if not self.lambda_hat > 0:
            raise ValueError(f"lambda_hat must be positive, got {self.lambda_hat}")
        if self.m_hat < 1:
            raise ValueError(f"m_hat must be >= 1, got {self.m_hat}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")

    def to_json_dict(self) -> dict:
        return {
            "L0": self.L0,
            "V": np.asarray(self.V).tolist(),
            "mu": self.mu,
            "mu_se": self.mu_se,
            "alpha": list(self.alpha),
            "lambda_hat": self.lambda_hat,
            "m_hat": self.m_hat,
            "beta": self.beta,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "AsymptoticCoefficients":
        return cls(
            L0=float(d["L0"]),
            V=np.asarray(d["V"], dtype=float),
            mu=float(d["mu"]),
            alpha=tuple(float(a) for a in d["alpha"]),
            lambda_hat=float(d["lambda_hat"]),
            m_hat=float(d["m_hat"]),
            beta=float(d["beta"]),
            mu_se=float(d.get("mu_se", 0.0)),
        )


def predicted_free_energy(n: int, coeff: AsymptoticCoefficients) -> float:
    """Expected free energy without its unknown O(1) constant.

    n L0 - sqrt(n) mu + (lambda_hat / beta) log n
    - ((m_hat - 1) / beta) log log n, defined for n >= 3.
    """
    if n < 3:
        raise ValueError(f"need n >= 3 so that log log n is positive, got {n}")
    return (
        n * coeff.L0
        - math.sqrt(n) * coeff.mu
        + (coeff.lambda_hat / coeff.beta) * math.log(n)
        - ((coeff.m_hat - 1.0) / coeff.beta) * math.log(math.log(n))
    )


def predicted_gen_loss(n: int, coeff: AsymptoticCoefficients) -> float:
    """Expected generalization loss L0 - mu / (2 sqrt(n)); beta = 1 only."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    if coeff.beta != 1.0:
        raise ValueError("the generalization-loss expansion is derived for beta = 1 only")
    return coeff.L0 - coeff.mu / (2.0 * math.sqrt(n))


def build_coefficients(
    opt,
    V: np.ndarray,
    beta: float = 1.0,
    mc_draws: int = 400_000,
    seed=0,
) -> AsymptoticCoefficients:
    """Assemble the expansion coefficients for a located optimum set.

    Two branches use the closed-form expected maximum and the exact
    argmax probabilities (1/2 each for a nondegenerate mean-zero pair);
    other branch counts fall back to Monte Carlo.
    """
    V = validate_covariance(V)
    m = V.shape[0]
    mu_se = 0.0
    if m == 1:
        mu, alpha = 0.0, (1.0,)
    elif m == 2:
        mu = mu_closed_form_two(V)
        if mu > 0.0:
            # P(Z_1 > Z_2) = 1/2 exactly: Z_1 - Z_2 is symmetric about zero
            alpha = (0.5, 0.5)
        else:
            winner = argmax_with_tiebreak(np.zeros(2), opt.lambdas, opt.multiplicities)
            alpha = tuple(1.0 if i == winner else 0.0 for i in range(2))
    else:
        problem = GaussianMaxProblem(V, opt.lambdas, opt.multiplicities)
        mu, mu_se = expected_max_mc(problem, mc_draws, seed)
        alpha = tuple(branch_probabilities(problem, mc_draws, seed))
    lambda_hat = float(np.dot(alpha, opt.lambdas))
    m_hat = float(np.dot(alpha, opt.multiplicities))
    return AsymptoticCoefficients(
        L0=opt.L0,
        V=V,
        mu=float(mu),
        alpha=alpha,
        lambda_hat=lambda_hat,
        m_hat=m_hat,
        beta=beta,
        mu_se=mu_se,
    )
