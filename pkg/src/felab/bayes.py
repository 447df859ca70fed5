"""Finite-n Bayesian quantities for a single dataset.

The parameter space is two-dimensional and the experiment needs tens of
thousands of marginal likelihoods, so posterior integrals use a fixed
deterministic grid: a coarse tiling of the prior box plus a fine patch
around each optimum, every node carrying its exact cell area. All
likelihood accumulation happens in log space with max-shifted exponential
sums; raw products are never formed. Each estimate carries the per-branch
decomposition of the marginal likelihood: the branch-local normalized
mass, its near-optimum and tail parts split at the population error level
epsilon(n), the finite-n branch weights, and the winning branch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .asymptotics import argmax_with_tiebreak
from .model import Dataset, ModelSpec, Parameter, log_model_density
from .population import ConfigurationError, OptimumSet

__all__ = [
    "GridConfig",
    "QuadratureGrid",
    "FreeEnergyEstimate",
    "default_epsilon",
    "empirical_log_loss",
    "build_grid",
    "node_empirical_losses",
    "free_energy",
    "free_energy_from_losses",
    "branch_weights",
    "gen_loss_direct",
    "max_statistic",
    "laplace_branch_check",
    "estimate_csv_header",
    "estimate_to_row",
]


def default_epsilon(n: int) -> float:
    """Shell radius epsilon(n) = n^(-1/4).

    Monotonically decreasing with epsilon -> 0 and sqrt(n) * epsilon ->
    infinity; the symmetric midpoint choice in exponent space.
    """
    return float(n) ** -0.25


def _logsumexp(values: np.ndarray) -> float:
    """Max-shifted log of a sum of exponentials; -inf for an empty set."""
    if values.size == 0:
        return -math.inf
    hi = values.max()
    if not np.isfinite(hi):
        return float(hi)
    return float(hi + np.log(np.exp(values - hi).sum()))


# ---------------------------------------------------------------------------
# Grid construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridConfig:
    """Two-level resolution: coarse cells per axis over the whole box, fine
    cells per axis inside each optimum patch of the given radius."""

    coarse_resolution: int = 200
    patch_resolution: int = 80
    patch_radius: float = 1.5

    def doubled(self) -> "GridConfig":
        return GridConfig(
            coarse_resolution=2 * self.coarse_resolution,
            patch_resolution=2 * self.patch_resolution,
            patch_radius=self.patch_radius,
        )


@dataclass(frozen=True)
class QuadratureGrid:
    """Midpoint nodes tiling the prior box, partitioned by branch.

    pop_error holds the population error K at each node (used for the
    near/tail split); log_prior_mass is log(prior density * cell area).
    """

    a: np.ndarray
    b: np.ndarray
    weight: np.ndarray
    branch_index: np.ndarray
    pop_error: np.ndarray
    log_prior_mass: np.ndarray
    n_branches: int
    config: GridConfig

    @property
    def n_nodes(self) -> int:
        return self.a.size

    def branch_mask(self, i: int) -> np.ndarray:
        return self.branch_index == i


def _rect_cells(a_lo, a_hi, b_lo, b_hi, spacing_a, spacing_b):
    """Midpoint nodes and exact cell areas tiling a rectangle."""
    width, height = a_hi - a_lo, b_hi - b_lo
    if width <= 0 or height <= 0:
        return None
    n_a = max(1, int(math.ceil(width / spacing_a - 1e-12)))
    n_b = max(1, int(math.ceil(height / spacing_b - 1e-12)))
    da, db = width / n_a, height / n_b
    ca = a_lo + da * (np.arange(n_a) + 0.5)
    cb = b_lo + db * (np.arange(n_b) + 0.5)
    A, B = np.meshgrid(ca, cb, indexing="ij")
    return A.ravel(), B.ravel(), np.full(n_a * n_b, da * db)


def build_grid(opt: OptimumSet, spec: ModelSpec, config: GridConfig = GridConfig()) -> QuadratureGrid:
    """Tile each branch with coarse cells plus a fine patch at its optimum.

    The patch rectangle is clipped to its branch, the rest of the branch is
    decomposed into coarse strips, and the cells of every rectangle tile it
    exactly, so the prior integrates to one on the grid up to rounding.
    """
    (box_a_lo, box_a_hi), (box_b_lo, box_b_hi) = spec.prior_a, spec.prior_b
    coarse_da = (box_a_hi - box_a_lo) / config.coarse_resolution
    coarse_db = (box_b_hi - box_b_lo) / config.coarse_resolution

    all_a, all_b, all_w, all_idx = [], [], [], []
    for i, (w0, branch) in enumerate(zip(opt.optima, opt.branches)):
        r = config.patch_radius
        # patch clipped to its branch rectangle
        p_a_lo = max(w0.a - r, branch.a_lo)
        p_a_hi = min(w0.a + r, branch.a_hi)
        p_b_lo = max(w0.b - r, branch.b_lo)
        p_b_hi = min(w0.b + r, branch.b_hi)
        patch = _rect_cells(
            p_a_lo, p_a_hi, p_b_lo, p_b_hi,
            (p_a_hi - p_a_lo) / config.patch_resolution,
            (p_b_hi - p_b_lo) / config.patch_resolution,
        )
        strips = [
            (branch.a_lo, p_a_lo, branch.b_lo, branch.b_hi),   # left of patch
            (p_a_hi, branch.a_hi, branch.b_lo, branch.b_hi),   # right of patch
            (p_a_lo, p_a_hi, branch.b_lo, p_b_lo),             # below patch
            (p_a_lo, p_a_hi, p_b_hi, branch.b_hi),             # above patch
        ]
        pieces = [patch] + [_rect_cells(*s, coarse_da, coarse_db) for s in strips]
        pieces = [p for p in pieces if p is not None]
        if not pieces:
            raise ConfigurationError(f"branch {i} is empty after clipping")
        for pa, pb, pw in pieces:
            all_a.append(pa)
            all_b.append(pb)
            all_w.append(pw)
            all_idx.append(np.full(pa.size, i, dtype=np.int32))

    a = np.concatenate(all_a)
    b = np.concatenate(all_b)
    weight = np.concatenate(all_w)
    branch_index = np.concatenate(all_idx)

    sigma = spec.noise_sigma
    gaps = _node_mean_square_gaps(a, b, spec)
    gap_opt = (opt.L0 - math.log(math.sqrt(2.0 * math.pi) * sigma)) * 2.0 * sigma**2 - sigma**2
    pop_error = (gaps - gap_opt) / (2.0 * sigma**2)
    log_prior_mass = np.log(weight) + math.log(spec.prior_density)
    return QuadratureGrid(
        a=a,
        b=b,
        weight=weight,
        branch_index=branch_index,
        pop_error=pop_error,
        log_prior_mass=log_prior_mass,
        n_branches=opt.m,
        config=config,
    )


def _node_mean_square_gaps(a, b, spec: ModelSpec, nodes_per_panel: int = 48, chunk: int = 8192):
    from .quad import gauss_legendre_panels

    x, wq = gauss_legendre_panels(spec.x_breakpoints, nodes_per_panel)
    qw = spec.x_density * wq
    truth = spec.family.truth(x)
    out = np.empty(a.size)
    for i in range(0, a.size, chunk):
        means = spec.family.model_mean(x[None, :], a[i : i + chunk, None], b[i : i + chunk, None])
        out[i : i + chunk] = (truth[None, :] - means) ** 2 @ qw
    return out


# ---------------------------------------------------------------------------
# Empirical losses
# ---------------------------------------------------------------------------


def empirical_log_loss(data: Dataset, w, spec: ModelSpec) -> float:
    """L_n(w): mean negative log density of the sample at w."""
    if data.n < 1:
        raise ValueError("dataset is empty")
    return float(-np.mean(log_model_density(data.x, data.y, w, spec)))


def node_empirical_losses(data: Dataset, grid: QuadratureGrid, spec: ModelSpec, chunk: int = 8192) -> np.ndarray:
    """L_n at every grid node, vectorized over nodes in fixed-size chunks.

    The reduction over sample points happens inside each node row, so the
    result is bit-identical for any chunk size.
    """
    sigma = spec.noise_sigma
    const = math.log(math.sqrt(2.0 * math.pi) * sigma)
    x, y = data.x, data.y
    out = np.empty(grid.n_nodes)
    mean_fn = spec.family.model_mean
    for i in range(0, grid.n_nodes, chunk):
        resid = mean_fn(x[None, :], grid.a[i : i + chunk, None], grid.b[i : i + chunk, None])
        resid -= y[None, :]
        np.square(resid, out=resid)
        out[i : i + chunk] = resid.mean(axis=1)
    out /= 2.0 * sigma**2
    out += const
    return out


# ---------------------------------------------------------------------------
# Free energy with branch decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FreeEnergyEstimate:
    """One dataset's free energy and its per-branch decomposition."""

    n: int
    beta: float
    F: float
    log_Z: float
    L_n_at_optima: tuple[float, ...]
    log_Z0: tuple[float, ...]
    log_Z1: tuple[float, ...]
    log_Z2: tuple[float, ...]
    a_weights: tuple[float, ...]
    i_max: int
    epsilon: float
    seed: tuple = ()

    @property
    def m(self) -> int:
        return len(self.L_n_at_optima)


def _branch_weight_vector(n, beta, L_n_optima, lambdas, multiplicities) -> np.ndarray:
    if n < 3:
        raise ValueError(f"branch weights need n >= 3 (log log n), got {n}")
    L = np.asarray(L_n_optima, dtype=float)
    lam = np.asarray(lambdas, dtype=float)
    mult = np.asarray(multiplicities, dtype=float)
    score = -n * beta * L - lam * math.log(n) + (mult - 1.0) * math.log(math.log(n))
    score -= score.max()
    weights = np.exp(score)
    weights /= weights.sum()
    if weights.size:
        weights[-1] = 1.0 - weights[:-1].sum()
    return weights


def free_energy_from_losses(
    node_losses: np.ndarray,
    n: int,
    grid: QuadratureGrid,
    opt: OptimumSet,
    spec: ModelSpec,
    beta: float,
    L_n_optima,
    epsilon: float | None = None,
    seed: tuple = (),
) -> FreeEnergyEstimate:
    """Assemble the free-energy decomposition from precomputed node losses.

    Separated from the loss computation so that several beta values can
    reuse one pass over the grid.
    """
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    eps = default_epsilon(n) if epsilon is None else float(epsilon)
    score = -n * beta * node_losses + grid.log_prior_mass

    log_Z = _logsumexp(score)
    log_Z0, log_Z1, log_Z2 = [], [], []
    for i in range(grid.n_branches):
        mask = grid.branch_mask(i)
        if not mask.any():
            raise ConfigurationError(f"branch {i} has no grid nodes")
        shift = n * beta * L_n_optima[i]
        near = mask & (grid.pop_error < eps)
        tail = mask & (grid.pop_error >= eps)
        log_Z0.append(_logsumexp(score[mask]) + shift)
        log_Z1.append(_logsumexp(score[near]) + shift)
        log_Z2.append(_logsumexp(score[tail]) + shift)

    a_weights = _branch_weight_vector(n, beta, L_n_optima, opt.lambdas, opt.multiplicities)
    i_max = argmax_with_tiebreak(
        [-L for L in L_n_optima], opt.lambdas, opt.multiplicities
    )
    return FreeEnergyEstimate(
        n=n,
        beta=beta,
        F=-log_Z / beta,
        log_Z=log_Z,
        L_n_at_optima=tuple(float(L) for L in L_n_optima),
        log_Z0=tuple(log_Z0),
        log_Z1=tuple(log_Z1),
        log_Z2=tuple(log_Z2),
        a_weights=tuple(float(a) for a in a_weights),
        i_max=i_max,
        epsilon=eps,
        seed=tuple(seed),
    )


def free_energy(
    data: Dataset,
    grid: QuadratureGrid,
    opt: OptimumSet,
    spec: ModelSpec,
    beta: float = 1.0,
    epsilon: float | None = None,
) -> FreeEnergyEstimate:
    """Free energy of one dataset with the full branch decomposition."""
    losses = node_empirical_losses(data, grid, spec)
    L_n_optima = [empirical_log_loss(data, w, spec) for w in opt.optima]
    return free_energy_from_losses(
        losses, data.n, grid, opt, spec, beta, L_n_optima, epsilon=epsilon, seed=data.seed
    )


def branch_weights(est: FreeEnergyEstimate, opt: OptimumSet) -> np.ndarray:
    """Finite-n branch weights recomputed from the estimate's fields."""
    return _branch_weight_vector(
        est.n, est.beta, est.L_n_at_optima, opt.lambdas, opt.multiplicities
    )


def max_statistic(data: Dataset, opt: OptimumSet, spec: ModelSpec):
    """Winning-branch statistic and the centered, scaled losses at the optima.

    Returns (-n * L_n at the winning optimum, vector of
    sqrt(n) * (L0 - L_n(w_0i))).
    """
    L_n = np.array([empirical_log_loss(data, w, spec) for w in opt.optima])
    i_max = argmax_with_tiebreak(-L_n, opt.lambdas, opt.multiplicities)
    scripts = math.sqrt(data.n) * (opt.L0 - L_n)
    return float(-data.n * L_n[i_max]), scripts


# ---------------------------------------------------------------------------
# Direct generalization loss
# ---------------------------------------------------------------------------


def gen_loss_direct(
    data: Dataset,
    grid: QuadratureGrid,
    opt: OptimumSet,
    spec: ModelSpec,
    node_losses: np.ndarray | None = None,
    x_nodes_per_panel: int = 24,
    hermite_nodes: int = 40,
    keep_mass: float = 1.0 - 1e-10,
) -> float:
    """G_n = -E[log predictive] for the standard (beta = 1) posterior.

    Posterior node weights are proportional to exp(-n L_n) times prior
    mass; the predictive density is their weighted model-density average.
    Nodes carrying the top ``keep_mass`` of posterior mass are kept, the
    rest contribute below quadrature tolerance and are dropped.
    """
    from .quad import gauss_hermite_standard_normal, gauss_legendre_panels

    if node_losses is None:
        node_losses = node_empirical_losses(data, grid, spec)
    log_post = -data.n * node_losses + grid.log_prior_mass
    log_post = log_post - _logsumexp(log_post)

    order = np.argsort(log_post)[::-1]
    cum = np.cumsum(np.exp(log_post[order]))
    kept = order[: int(np.searchsorted(cum, keep_mass) + 1)]
    lw = log_post[kept]
    lw = lw - _logsumexp(lw)

    x, wx = gauss_legendre_panels(spec.x_breakpoints, x_nodes_per_panel)
    eps, weps = gauss_hermite_standard_normal(hermite_nodes)
    qx = spec.x_density * wx
    truth = spec.family.truth(x)
    sigma = spec.noise_sigma
    const = math.log(math.sqrt(2.0 * math.pi) * sigma)

    a, b = grid.a[kept], grid.b[kept]
    total = 0.0
    for k in range(x.size):
        means = spec.family.model_mean(x[k], a, b)  # (kept,)
        resid = truth[k] + sigma * eps[None, :] - means[:, None]
        logp = -const - resid**2 / (2.0 * sigma**2) + lw[:, None]
        hi = logp.max(axis=0)
        log_pred = hi + np.log(np.exp(logp - hi[None, :]).sum(axis=0))
        total += qx[k] * float(np.dot(weps, log_pred))
    return -total


def laplace_branch_check(
    data: Dataset,
    grid: QuadratureGrid,
    opt: OptimumSet,
    spec: ModelSpec,
    beta: float = 1.0,
    fd_step: float = 1e-4,
):
    """Sanity diagnostic: branch mass vs its Laplace approximation.

    For each branch, locates the empirical minimizer of L_n, expands to
    second order, and returns (grid log Z0, Laplace log Z0) pairs. The two
    agree up to O(1/n) corrections, so the gap should shrink as n grows;
    a large gap flags an under-resolved grid.
    """
    from scipy.optimize import minimize

    est = free_energy(data, grid, opt, spec, beta=beta)
    n = data.n
    pairs = []
    for i, (w0, branch) in enumerate(zip(opt.optima, opt.branches)):
        res = minimize(
            lambda ab: empirical_log_loss(data, Parameter(*ab), spec),
            np.asarray(w0, dtype=float),
            method="Nelder-Mead",
            bounds=[(branch.a_lo, branch.a_hi), (branch.b_lo, branch.b_hi)],
            options={"xatol": 1e-9, "fatol": 1e-13, "maxiter": 4000},
        )
        w_hat = res.x
        L_hat = float(res.fun)
        hessian = _fd_hessian(
            lambda ab: empirical_log_loss(data, Parameter(*ab), spec), w_hat, fd_step
        )
        det = float(np.linalg.det(hessian))
        if det <= 0:
            raise ConfigurationError(f"branch {i}: empirical Hessian not positive definite")
        log_laplace = (
            -n * beta * (L_hat - est.L_n_at_optima[i])
            + math.log(spec.prior_density)
            + math.log(2.0 * math.pi / (n * beta))
            - 0.5 * math.log(det)
        )
        pairs.append((est.log_Z0[i], log_laplace))
    return pairs


def _fd_hessian(fn, point, step):
    point = np.asarray(point, dtype=float)
    d = point.size
    H = np.empty((d, d))
    f0 = fn(point)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = step
        H[i, i] = (fn(point + ei) - 2.0 * f0 + fn(point - ei)) / step**2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = step
            H[i, j] = H[j, i] = (
                fn(point + ei + ej) - fn(point + ei - ej) - fn(point - ei + ej) + fn(point - ei - ej)
            ) / (4.0 * step**2)
    return H


# ---------------------------------------------------------------------------
# CSV schema
# ---------------------------------------------------------------------------


def estimate_csv_header(m: int = 2) -> list[str]:
    cols = ["n", "seed", "beta", "F"]
    cols += [f"L_n{i}" for i in range(1, m + 1)]
    for stem in ("logZ0", "logZ1", "logZ2"):
        cols += [f"{stem}{i}" for i in range(1, m + 1)]
    cols += [f"a_{i}" for i in range(1, m + 1)]
    cols += ["i_max", "epsilon"]
    return cols


def estimate_to_row(est: FreeEnergyEstimate) -> list[str]:
    seed = "-".join(str(s) for s in est.seed)
    cells = [str(est.n), seed, repr(est.beta), repr(est.F)]
    cells += [repr(v) for v in est.L_n_at_optima]
    for group in (est.log_Z0, est.log_Z1, est.log_Z2):
        cells += [repr(v) for v in group]
    cells += [repr(v) for v in est.a_weights]
    cells += [str(est.i_max + 1), repr(est.epsilon)]
    return cells
