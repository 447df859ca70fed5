"""Deterministic quadrature rules used throughout the package.

The input-space integrals all have the same structure: a smooth integrand in
x except at the kink points of the piecewise-linear regression truth, and a
Gaussian integral in the observation noise. Gauss-Legendre panels split at
the kinks restore spectral accuracy; Gauss-Hermite handles the noise
dimension when no closed form is available.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "QuadratureError",
    "gauss_legendre_panels",
    "gauss_hermite_standard_normal",
    "refine_panel_rule",
]


class QuadratureError(RuntimeError):
    """Raised when node doubling fails to stabilize an integral."""


def gauss_legendre_panels(breakpoints, nodes_per_panel: int):
    """Composite Gauss-Legendre rule on consecutive panels.

    Parameters
    ----------
    breakpoints: increasing sequence of panel edges, e.g. (-2, -1, 1, 2).
    nodes_per_panel: Gauss-Legendre order used inside each panel.

    Returns (nodes, weights) as flat arrays covering all panels.
    """
    breakpoints = np.asarray(breakpoints, dtype=float)
    if breakpoints.ndim != 1 or breakpoints.size < 2:
        raise ValueError("need at least two breakpoints")
    if np.any(np.diff(breakpoints) <= 0):
        raise ValueError("breakpoints must be strictly increasing")
    ref_nodes, ref_weights = np.polynomial.legendre.leggauss(nodes_per_panel)
    xs, ws = [], []
    for lo, hi in zip(breakpoints[:-1], breakpoints[1:]):
        half = 0.5 * (hi - lo)
        xs.append(half * ref_nodes + 0.5 * (hi + lo))
        ws.append(half * ref_weights)
    return np.concatenate(xs), np.concatenate(ws)


def gauss_hermite_standard_normal(n_nodes: int):
    """Nodes and weights integrating E[g(Z)] for Z ~ N(0, 1).

    Rescales numpy's physicists' Hermite rule so that
    sum(w_k * g(z_k)) approximates the standard-normal expectation.
    """
    t, w = np.polynomial.hermite.hermgauss(n_nodes)
    return np.sqrt(2.0) * t, w / np.sqrt(np.pi)


def refine_panel_rule(
    integrand,
    breakpoints,
    start_nodes: int = 20,
    rel_tol: float = 1e-10,
    max_doublings: int = 8,
):
    """Integrate with node doubling until successive refinements agree.

    ``integrand`` maps an array of x nodes to integrand values. Doubles the
    per-panel node count until the relative change drops below ``rel_tol``
    (absolute change for near-zero values). Raises QuadratureError when the
    doubling budget is exhausted without convergence.
    """
    nodes = start_nodes
    x, w = gauss_legendre_panels(breakpoints, nodes)
    value = float(np.dot(w, integrand(x)))
    for _ in range(max_doublings):
        nodes *= 2
        x, w = gauss_legendre_panels(breakpoints, nodes)
        new_value = float(np.dot(w, integrand(x)))
        scale = max(abs(new_value), abs(value), 1.0)
        if abs(new_value - value) <= rel_tol * scale:
            return new_value
        value = new_value
    raise QuadratureError(
        f"panel rule did not stabilize after {max_doublings} doublings "
        f"(last change {abs(new_value - value):.3e})"
    )
