"""Von-Mises flow rule: projection, Yosida approximation and C^1 smoothing.

Everything here is pointwise on symmetric tensors (weighted Voigt storage,
see :mod:`plastodyn.tensors`) and vectorized over leading axes, so a field
of quadrature-point values is just an array of shape (npoints, m).

The admissible set is K = { tau : |tau^D| <= gamma }.  The projection onto
K is the resolvent of A = dI_K; the smoothed resolvent R_s replaces the
max in the radial-return formula by a C^1 quadratic blend max_s.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensors import deviator, dev_projector

__all__ = [
    "FlowRuleParams",
    "project_K",
    "yosida_A",
    "smooth_max",
    "smooth_resolvent",
    "smooth_resolvent_deriv",
    "smooth_resolvent_deriv_matrices",
    "project_K_deriv_matrices",
    "yosida_gap_bound",
]


@dataclass(frozen=True)
class FlowRuleParams:
    """Yield stress gamma, Yosida parameter lambda and smoothing width s."""

    gamma: float
    lam: float
    s: float = 0.5

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("yield stress gamma must be positive")
        if self.lam <= 0:
            raise ValueError("regularization parameter lambda must be positive")
        if not 0.0 < self.s < 1.0:
            raise ValueError("smoothing parameter s must lie in (0, 1)")


def _dev_and_norm(t: np.ndarray, dim: int):
    td = deviator(t, dim)
    nd = np.linalg.norm(td, axis=-1)
    return td, nd


def project_K(t: np.ndarray, gamma: float, dim: int) -> np.ndarray:
    """Radial return: t - max(0, 1 - gamma/|t^D|) t^D."""
    t = np.asarray(t, dtype=float)
    td, nd = _dev_and_norm(t, dim)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(nd > gamma, 1.0 - gamma / np.where(nd > 0, nd, 1.0), 0.0)
    return t - factor[..., None] * td


def yosida_A(t: np.ndarray, params: FlowRuleParams, dim: int) -> np.ndarray:
    """(t - project_K(t)) / lambda, evaluated directly from the radial factor."""
    t = np.asarray(t, dtype=float)
    td, nd = _dev_and_norm(t, dim)
    factor = np.where(nd > params.gamma, 1.0 - params.gamma / np.where(nd > 0, nd, 1.0), 0.0)
    return (factor / params.lam)[..., None] * td


def smooth_max(r, s: float):
    """C^1 smoothing of max(0, .) with quadratic blend on (-s, s).

    Returns (value, derivative).  value = max(0, r) for |r| >= s and
    (r+s)^2/(4s) inside the band; the derivative is the classical one.
    """
    if not 0.0 < s < 1.0:
        raise ValueError("smoothing parameter s must lie in (0, 1)")
    r = np.asarray(r, dtype=float)
    inside = np.abs(r) < s
    value = np.where(inside, (r + s) ** 2 / (4.0 * s), np.maximum(0.0, r))
    deriv = np.where(inside, (r + s) / (2.0 * s), (r > 0).astype(float))
    if value.ndim == 0:
        return float(value), float(deriv)
    return value, deriv


def _smooth_factors(t: np.ndarray, gamma: float, s: float, dim: int):
    """Deviator, its norm and the (max_s value, derivative) of the radial argument.

    Points with |t^D| <= gamma/(1+s) sit in the identity region; there the
    formal argument 1 - gamma/|t^D| is <= -s (or -inf) and both factors
    vanish, which is enforced explicitly to avoid the 1/|t^D| singularity.
    """
    td, nd = _dev_and_norm(t, dim)
    identity_region = nd * (1.0 + s) <= gamma
    safe = np.where(identity_region, 1.0, nd)
    r = 1.0 - gamma / safe
    inside = (np.abs(r) < s) & ~identity_region
    value = np.where(inside, (r + s) ** 2 / (4.0 * s), np.maximum(0.0, r))
    deriv = np.where(inside, (r + s) / (2.0 * s), (r > 0).astype(float))
    value = np.where(identity_region, 0.0, value)
    deriv = np.where(identity_region, 0.0, deriv)
    return td, nd, value, deriv, identity_region


def smooth_resolvent(t: np.ndarray, gamma: float, s: float, dim: int) -> np.ndarray:
    """R_s(t) = t - max_s(1 - gamma/|t^D|) t^D."""
    t = np.asarray(t, dtype=float)
    td, _, value, _, _ = _smooth_factors(t, gamma, s, dim)
    return t - value[..., None] * td


def smooth_resolvent_deriv(
    t: np.ndarray,
    h: np.ndarray,
    gamma: float,
    s: float,
    dim: int,
    mode: str = "jvp",
) -> np.ndarray:
    """Directional derivative R_s'(t) h (or its adjoint applied to h).

    R_s'(t) h = h - max_s'(r) (gamma/|t^D|^3) (t^D : h^D) t^D - max_s(r) h^D
    with r = 1 - gamma/|t^D|.  The operator is self adjoint, so both modes
    return the same value; "vjp" is kept for interface symmetry.
    """
    if mode not in ("jvp", "vjp"):
        raise ValueError(f"unknown mode {mode!r}")
    t = np.asarray(t, dtype=float)
    h = np.asarray(h, dtype=float)
    td, nd, value, deriv, identity_region = _smooth_factors(t, gamma, s, dim)
    hd = deviator(h, dim)
    safe = np.where(identity_region, 1.0, nd)
    coef = np.where(identity_region, 0.0, deriv * gamma / safe**3)
    dot = np.einsum("...i,...i->...", td, hd)
    return h - (coef * dot)[..., None] * td - value[..., None] * hd


def smooth_resolvent_deriv_matrices(
    t: np.ndarray, gamma: float, s: float, dim: int
) -> np.ndarray:
    """Pointwise m x m matrices of R_s'(t), for sparse assembly."""
    t = np.asarray(t, dtype=float)
    td, nd, value, deriv, identity_region = _smooth_factors(t, gamma, s, dim)
    m = t.shape[-1]
    P = dev_projector(dim)
    safe = np.where(identity_region, 1.0, nd)
    coef = np.where(identity_region, 0.0, deriv * gamma / safe**3)
    eye = np.broadcast_to(np.eye(m), t.shape[:-1] + (m, m))
    outer = td[..., :, None] * td[..., None, :]
    return eye - value[..., None, None] * P - coef[..., None, None] * outer


def project_K_deriv_matrices(t: np.ndarray, gamma: float, dim: int) -> np.ndarray:
    """A.e. generalized derivative of the projection, for semismooth Newton.

    Inside K the projection is the identity; outside it is smooth with the
    same structure as the smoothed derivative.  On the yield surface the
    inside branch is selected.
    """
    t = np.asarray(t, dtype=float)
    td, nd = _dev_and_norm(t, dim)
    m = t.shape[-1]
    P = dev_projector(dim)
    active = nd > gamma
    safe = np.where(active, nd, 1.0)
    value = np.where(active, 1.0 - gamma / safe, 0.0)
    coef = np.where(active, gamma / safe**3, 0.0)
    eye = np.broadcast_to(np.eye(m), t.shape[:-1] + (m, m))
    outer = td[..., :, None] * td[..., None, :]
    return eye - value[..., None, None] * P - coef[..., None, None] * outer


def yosida_gap_bound(params: FlowRuleParams) -> float:
    """Pointwise bound on |A_lambda(t) - A_s(t)|: gamma*s / (4*lambda*(1-s))."""
    return params.gamma * params.s / (4.0 * params.lam * (1.0 - params.s))
