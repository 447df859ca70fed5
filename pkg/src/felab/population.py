"""Population (infinite-sample) functionals of the regression model.

Everything here is an expectation under the true distribution, evaluated by
deterministic quadrature: the log loss L(w), the error function K(w) =
L(w) - L0, the set of optimal parameters with its branch partition, and the
covariance matrix of the log densities at the optima. The inner Gaussian
integral over y is closed form for the log loss, so only a 1-D panel rule
over x remains; the covariance uses an x-panel rule crossed with
Gauss-Hermite in the noise.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .model import ModelSpec, Parameter
from .quad import (
    QuadratureError,
    gauss_hermite_standard_normal,
    gauss_legendre_panels,
    refine_panel_rule,
)

__all__ = [
    "ConfigurationError",
    "Branch",
    "OptimumSet",
    "log_loss",
    "mean_square_gap",
    "avg_error",
    "find_optima",
    "covariance",
    "variance_condition_check",
    "validate_covariance",
    "log_density_centered",
]


class ConfigurationError(RuntimeError):
    """Model/optimizer configuration cannot produce a valid optimum set."""


# ---------------------------------------------------------------------------
# Branches and the optimum set
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Branch:
    """Axis-aligned rectangle in (a, b); the region owning one optimum.

    Internal boundaries are half-open on the upper a side so that branches
    partition the prior box exactly; closed_a_hi marks an upper edge that
    coincides with the box boundary (and is therefore closed).
    """

    a_lo: float
    a_hi: float
    b_lo: float
    b_hi: float
    closed_a_hi: bool

    def contains(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        in_a = (a >= self.a_lo) & ((a < self.a_hi) | (self.closed_a_hi & (a == self.a_hi)))
        in_b = (b >= self.b_lo) & (b <= self.b_hi)
        out = in_a & in_b
        return bool(out) if out.ndim == 0 else out

    def to_dict(self) -> dict:
        return {
            "a_lo": self.a_lo,
            "a_hi": self.a_hi,
            "b_lo": self.b_lo,
            "b_hi": self.b_hi,
            "closed_a_hi": self.closed_a_hi,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Branch":
        return cls(
            a_lo=float(d["a_lo"]),
            a_hi=float(d["a_hi"]),
            b_lo=float(d["b_lo"]),
            b_hi=float(d["b_hi"]),
            closed_a_hi=bool(d["closed_a_hi"]),
        )


@dataclass(frozen=True)
class OptimumSet:
    """Optimal parameters, branch partition, and per-branch exponents.

    optima[i] lies in branches[i]; lambdas/multiplicities are the log n and
    log log n exponents of each branch (1 and 1 for the regular branches of
    the sigmoid experiment, overridable from config). L0 is the common
    minimal log loss.
    """

    optima: tuple[Parameter, ...]
    branches: tuple[Branch, ...]
    lambdas: tuple[float, ...]
    multiplicities: tuple[int, ...]
    L0: float

    def __post_init__(self):
        m = len(self.optima)
        if not (len(self.branches) == len(self.lambdas) == len(self.multiplicities) == m):
            raise ValueError("optima, branches, lambdas, multiplicities must align")
        if any(lam <= 0 for lam in self.lambdas):
            raise ValueError("lambdas must be positive")
        if any(mult < 1 for mult in self.multiplicities):
            raise ValueError("multiplicities must be >= 1")

    @property
    def m(self) -> int:
        return len(self.optima)

    def to_json_dict(self) -> dict:
        return {
            "optima": [[w.a, w.b] for w in self.optima],
            "branches": [br.to_dict() for br in self.branches],
            "lambdas": list(self.lambdas),
            "multiplicities": list(self.multiplicities),
            "L0": self.L0,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "OptimumSet":
        return cls(
            optima=tuple(Parameter(float(a), float(b)) for a, b in d["optima"]),
            branches=tuple(Branch.from_dict(br) for br in d["branches"]),
            lambdas=tuple(float(v) for v in d["lambdas"]),
            multiplicities=tuple(int(v) for v in d["multiplicities"]),
            L0=float(d["L0"]),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "OptimumSet":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Log loss and error function
# ---------------------------------------------------------------------------


def _gauss_entropy(spec: ModelSpec) -> float:
    return float(np.log(np.sqrt(2.0 * np.pi) * spec.noise_sigma))


def mean_square_gap(w, spec: ModelSpec, rel_tol: float = 1e-12) -> float:
    """E_x[(f(x) - mean(x; w))^2] under q(x), by panel quadrature."""
    truth = spec.family.truth

    def integrand(x):
        return spec.x_density * (truth(x) - spec.model_mean(x, w)) ** 2

    return refine_panel_rule(integrand, spec.x_breakpoints, rel_tol=rel_tol)


def log_loss(w, spec: ModelSpec, rel_tol: float = 1e-12) -> float:
    """L(w) = -E[log p(X | w)] with the y-integral in closed form.

    For Gaussian noise, E_{y|x}[-log p] = log(sqrt(2 pi) sigma)
    + ((f(x) - mean(x; w))^2 + sigma^2) / (2 sigma^2), leaving a 1-D
    x-quadrature.
    """
    sigma = spec.noise_sigma
    gap = mean_square_gap(w, spec, rel_tol=rel_tol)
    return _gauss_entropy(spec) + (gap + sigma**2) / (2.0 * sigma**2)


def avg_error(w, opt: OptimumSet, spec: ModelSpec) -> float:
    """K(w) = L(w) - L0; nonnegative up to quadrature tolerance."""
    return log_loss(w, spec) - opt.L0


def _gap_on_grid(a, b, spec: ModelSpec, nodes_per_panel: int = 48) -> np.ndarray:
    """Vectorized E_x[(f - mean)^2] for arrays of parameters."""
    x, wq = gauss_legendre_panels(spec.x_breakpoints, nodes_per_panel)
    qw = spec.x_density * wq
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    means = spec.family.model_mean(x[None, :], a[..., None], b[..., None])
    resid = spec.family.truth(x)[None, :] - means
    return resid**2 @ qw


# ---------------------------------------------------------------------------
# Optimum search
# ---------------------------------------------------------------------------


def _basin_bottoms(mask: np.ndarray, values: np.ndarray) -> list[tuple[int, int]]:
    """Distinct grid cells that the masked cells flow to by steepest descent.

    Each cell in the mask is followed downhill (8-neighborhood, strict
    descent) until a cell with no lower neighbor; the unique terminals are
    the basin bottoms, one per attraction basin touching the mask.
    """
    rows, cols = values.shape
    terminal_of: dict[tuple[int, int], tuple[int, int]] = {}

    def lower_neighbor(cell):
        # widen the search ring gradually: curved narrow valleys can leave a
        # cell without a strictly lower 8-neighbor short of the basin bottom
        i, j = cell
        for radius in (1, 2, 3):
            lo_i, hi_i = max(i - radius, 0), min(i + radius + 1, rows)
            lo_j, hi_j = max(j - radius, 0), min(j + radius + 1, cols)
            window = values[lo_i:hi_i, lo_j:hi_j]
            k = np.unravel_index(np.argmin(window), window.shape)
            if window[k] < values[i, j]:
                return (lo_i + k[0], lo_j + k[1])
        return None

    def descend(cell):
        path = []
        while cell not in terminal_of:
            path.append(cell)
            nxt = lower_neighbor(cell)
            if nxt is None:
                terminal_of[cell] = cell
                break
            cell = nxt
        terminal = terminal_of[cell]
        for visited in path:
            terminal_of[visited] = terminal
        return terminal

    bottoms = []
    for start in zip(*np.nonzero(mask)):
        term = descend(tuple(start))
        if term not in bottoms:
            bottoms.append(term)
    return bottoms


def _make_branches(optima, spec: ModelSpec) -> tuple[Branch, ...]:
    (a_lo, a_hi), (b_lo, b_hi) = spec.prior_a, spec.prior_b
    if len(optima) == 1:
        return (Branch(a_lo, a_hi, b_lo, b_hi, closed_a_hi=True),)
    signs = [w.a >= 0 for w in optima]
    if len(optima) != 2 or signs[0] == signs[1]:
        raise ConfigurationError(
            "branch assignment splits at a = 0 and requires one optimum per sign; "
            f"got optima {list(optima)}"
        )
    branches = []
    for w in optima:
        if w.a >= 0:
            branches.append(Branch(0.0, a_hi, b_lo, b_hi, closed_a_hi=True))
        else:
            branches.append(Branch(a_lo, 0.0, b_lo, b_hi, closed_a_hi=False))
    return tuple(branches)


def find_optima(
    spec: ModelSpec,
    scan_points: int = 121,
    merge_radius: float = 1e-3,
    acceptance_band: float = 1e-8,
    lambdas=None,
    multiplicities=None,
) -> OptimumSet:
    """Locate all global minimizers of K(w) inside the prior box.

    Coarse grid scan of the mean-square gap followed by Nelder-Mead
    refinement from each near-optimal grid basin. Returns every distinct
    local minimizer attaining the global minimum within ``acceptance_band``
    of log-loss, with branches split at a = 0 and per-branch exponents
    lambda = 1, m = 1 unless overridden.
    """
    (a_lo, a_hi), (b_lo, b_hi) = spec.prior_a, spec.prior_b
    aa = np.linspace(a_lo, a_hi, scan_points)
    bb = np.linspace(b_lo, b_hi, scan_points)
    A, B = np.meshgrid(aa, bb, indexing="ij")
    gaps = _gap_on_grid(A, B, spec)

    # seeds = bottoms of every attraction basin whose cells reach the
    # near-optimal band (one Nelder-Mead start per basin)
    g_min, g_max = float(gaps.min()), float(gaps.max())
    band = max(0.05 * (g_max - g_min), 1e-9)
    mask = gaps <= g_min + band
    seeds = [(aa[i], bb[j]) for i, j in _basin_bottoms(mask, gaps)]
    if not seeds:
        raise ConfigurationError("grid scan found no candidate minima in the prior box")

    def objective(ab):
        return _gap_on_grid(ab[0], ab[1], spec, nodes_per_panel=80).item()

    refined = []
    for seed in seeds:
        res = minimize(
            objective,
            np.asarray(seed, dtype=float),
            method="Nelder-Mead",
            bounds=[(a_lo, a_hi), (b_lo, b_hi)],
            options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 5000},
        )
        refined.append((Parameter(*map(float, res.x)), float(res.fun)))

    # keep global minimizers only (acceptance band in log-loss units)
    sigma = spec.noise_sigma
    best_gap = min(fun for _, fun in refined)
    loss_band = acceptance_band * (2.0 * sigma**2)
    survivors = [(w, fun) for w, fun in refined if fun <= best_gap + loss_band]

    merged: list[tuple[Parameter, float]] = []
    for w, fun in sorted(survivors, key=lambda t: t[1]):
        dup = next(
            (v for v, _ in merged if np.hypot(v.a - w.a, v.b - w.b) < merge_radius), None
        )
        if dup is not None:
            warnings.warn(
                f"minimizers {tuple(w)} and {tuple(dup)} closer than merge radius "
                f"{merge_radius}; merged",
                stacklevel=2,
            )
            continue
        merged.append((w, fun))

    eps = 1e-9
    interior = [
        (w, fun)
        for w, fun in merged
        if a_lo + eps < w.a < a_hi - eps and b_lo + eps < w.b < b_hi - eps
    ]
    if not interior:
        raise ConfigurationError("no minimizer found inside the prior box interior")

    optima = tuple(w for w, _ in sorted(interior, key=lambda t: -t[0].a))
    m = len(optima)
    lambdas = tuple(float(v) for v in (lambdas if lambdas is not None else [1.0] * m))
    multiplicities = tuple(int(v) for v in (multiplicities if multiplicities is not None else [1] * m))
    L0 = log_loss(optima[0], spec)
    return OptimumSet(
        optima=optima,
        branches=_make_branches(optima, spec),
        lambdas=lambdas,
        multiplicities=multiplicities,
        L0=L0,
    )


# ---------------------------------------------------------------------------
# Covariance of centered log densities at the optima
# ---------------------------------------------------------------------------


def log_density_centered(x, eps, w, spec: ModelSpec, L0: float):
    """log p(y|x,w) + L0 evaluated at y = f(x) + sigma * eps.

    The centered log density whose second moments form the covariance
    matrix; broadcasts over x and eps.
    """
    sigma = spec.noise_sigma
    gap = spec.family.truth(x) - spec.model_mean(x, w)
    return (
        -np.log(np.sqrt(2.0 * np.pi) * sigma)
        - (gap + sigma * eps) ** 2 / (2.0 * sigma**2)
        + L0
    )


def _joint_rule(spec: ModelSpec, nodes_per_panel: int, hermite_nodes: int):
    x, wx = gauss_legendre_panels(spec.x_breakpoints, nodes_per_panel)
    eps, weps = gauss_hermite_standard_normal(hermite_nodes)
    wgt = (spec.x_density * wx)[:, None] * weps[None, :]
    return x[:, None], eps[None, :], wgt


def covariance(
    opt: OptimumSet,
    spec: ModelSpec,
    hermite_nodes: int = 41,
    rel_tol: float = 1e-11,
    max_doublings: int = 6,
) -> np.ndarray:
    """V_ij = E[(log p(X|w_i) + L0)(log p(X|w_j) + L0)] by 2-D quadrature.

    x-panel Gauss-Legendre crossed with Gauss-Hermite in the noise,
    with node doubling in x until the matrix stabilizes.
    """

    def evaluate(nodes_per_panel: int) -> np.ndarray:
        x, eps, wgt = _joint_rule(spec, nodes_per_panel, hermite_nodes)
        g = [log_density_centered(x, eps, w, spec, opt.L0) for w in opt.optima]
        m = len(g)
        V = np.empty((m, m))
        for i in range(m):
            for j in range(i, m):
                V[i, j] = V[j, i] = float(np.sum(wgt * g[i] * g[j]))
        return V

    nodes = 20
    V = evaluate(nodes)
    for _ in range(max_doublings):
        nodes *= 2
        V_new = evaluate(nodes)
        scale = max(np.abs(V_new).max(), 1.0)
        if np.abs(V_new - V).max() <= rel_tol * scale:
            return 0.5 * (V_new + V_new.T)
        V = V_new
    raise QuadratureError("covariance quadrature did not stabilize under node doubling")


def validate_covariance(V: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Check symmetry and positive semidefiniteness; returns V unchanged."""
    V = np.asarray(V, dtype=float)
    if V.ndim != 2 or V.shape[0] != V.shape[1]:
        raise ValueError(f"covariance must be square, got shape {V.shape}")
    if not np.allclose(V, V.T, atol=tol, rtol=0.0):
        raise ValueError("covariance matrix is not symmetric")
    eigvals = np.linalg.eigvalsh(0.5 * (V + V.T))
    if eigvals.min() < -tol * max(1.0, eigvals.max()):
        raise ValueError(f"covariance matrix is not PSD (min eigenvalue {eigvals.min():.3e})")
    return V


def variance_condition_check(
    w01,
    w02,
    spec: ModelSpec,
    nodes_per_panel: int = 80,
    hermite_nodes: int = 41,
    mean_tol: float = 1e-6,
    moment_tol: float = 1e-8,
):
    """First and second moments of the log density ratio between two points.

    Returns (mean, second_moment, holds). ``holds`` is False exactly when
    the mean vanishes while the second moment stays positive, i.e. when the
    pair falsifies the relatively-finite-variance condition; for a generic
    pair with nonzero mean no judgement is made and holds stays True.
    """
    if not (spec.in_prior_box(w01) and spec.in_prior_box(w02)):
        raise ValueError("both parameters must lie in the prior box")
    x, eps, wgt = _joint_rule(spec, nodes_per_panel, hermite_nodes)
    ratio = log_density_centered(x, eps, w01, spec, 0.0) - log_density_centered(
        x, eps, w02, spec, 0.0
    )
    mean = float(np.sum(wgt * ratio))
    second = float(np.sum(wgt * ratio**2))
    violated = abs(mean) < mean_tol and second > moment_tol
    return mean, second, not violated
