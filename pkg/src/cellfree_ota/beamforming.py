"""Receive combiners: the closed-form MOP solution and an MRC baseline."""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

log = logging.getLogger(__name__)


@dataclass
class BeamformingInputs:
    u: np.ndarray  # (..., L*N_r) stacked sum_k h_{k,l} p_hat_k
    u_k: np.ndarray  # (..., K, L*N_r) stacked h_{k,l} p_hat_k


def build_inputs(h, p_hat):
    h = np.asarray(h)
    u_k = h * np.asarray(p_hat)[..., :, None, None]
    u_k = u_k.reshape(h.shape[:-2] + (h.shape[-2] * h.shape[-1],))
    return BeamformingInputs(u_k.sum(axis=-2), u_k)


def phi_from_inputs(inputs, v, coeffs, sigma2, q):
    """Same surrogate as ``ota_link.phi``, evaluated through v^H u and v^H u_k."""
    K = inputs.u_k.shape[-2]
    vu = np.einsum("...n,...n->...", v.conj(), inputs.u)
    vuk = np.einsum("...n,...kn->...k", v.conj(), inputs.u_k)
    return (coeffs.A * np.abs(vu - 1.0) ** 2
            + coeffs.C * np.sum(np.abs(vuk - 1.0 / K) ** 2, axis=-1)
            + coeffs.B * q * sigma2 * np.sum(np.abs(v) ** 2, axis=-1))


def _coef(x):
    return np.asarray(x, dtype=float)[..., None, None]


def mop_system(inputs, coeffs, sigma2, q):
    """System matrix and right-hand side of the stationarity condition."""
    u, u_k = inputs.u, inputs.u_k
    K, n = u_k.shape[-2:]
    outer_u = u[..., :, None] * u[..., None, :].conj()
    outer_k = np.einsum("...ki,...kj->...ij", u_k, u_k.conj())
    reg = _coef(coeffs.B) * q * sigma2 * np.eye(n)
    mat = _coef(coeffs.A) * outer_u + _coef(coeffs.C) * outer_k + reg
    rhs = _coef(coeffs.A)[..., 0] * u + _coef(coeffs.C)[..., 0] / K * u_k.sum(axis=-2)
    return mat, rhs


def mop_beamformer(inputs, coeffs, sigma2, q):
    """Global minimiser of phi over v for fixed amplitudes.

    Solves (A u u^H + C sum_k u_k u_k^H + B q sigma^2 I) v = A u + (C/K) sum_k u_k.
    Single instances go through a Cholesky factorisation; stacked instances
    (leading batch axes) use a batched LU solve.
    """
    if not np.all(np.asarray(coeffs.B) * q * sigma2 > 0):
        raise np.linalg.LinAlgError("MOP system is singular without a positive noise regulariser")
    mat, rhs = mop_system(inputs, coeffs, sigma2, q)
    if mat.ndim == 2:
        factor = scipy.linalg.cho_factor(mat, lower=True, check_finite=False)
        return scipy.linalg.cho_solve(factor, rhs, check_finite=False)
    return np.linalg.solve(mat, rhs[..., None])[..., 0]


def mrc_direction(h, beta):
    """Per-AP sum of UE channels weighted by 1/beta, stacked over APs."""
    d = (h / np.asarray(beta)[..., None]).sum(axis=-3)
    return d.reshape(d.shape[:-2] + (d.shape[-2] * d.shape[-1],))


def optimal_scale(d, inputs, coeffs, sigma2, q):
    """Real c minimising phi(c d): a 1-D quadratic with a closed-form minimiser."""
    K = inputs.u_k.shape[-2]
    a = np.einsum("...n,...n->...", d.conj(), inputs.u)
    a_k = np.einsum("...n,...kn->...k", d.conj(), inputs.u_k)
    dd = np.sum(np.abs(d) ** 2, axis=-1)
    num = coeffs.A * a.real + coeffs.C / K * a_k.real.sum(axis=-1)
    den = coeffs.A * np.abs(a) ** 2 + coeffs.C * np.sum(np.abs(a_k) ** 2, axis=-1) + coeffs.B * q * sigma2 * dd
    return num / den


def mrc_beamformer(h, beta, inputs, coeffs, sigma2, q):
    """Inverse-large-scale-weighted MRC direction, scaled optimally for phi."""
    beta = np.asarray(beta)
    if np.any(beta <= 0):
        raise ValueError("large-scale gains must be positive")
    d = mrc_direction(h, beta)
    dd = np.sum(np.abs(d) ** 2, axis=-1)
    if np.any(dd == 0):
        log.warning("MRC direction vanished; falling back to v = 0")
    with np.errstate(invalid="ignore", divide="ignore"):
        c = optimal_scale(d, inputs, coeffs, sigma2, q)
    c = np.where(np.isfinite(c), c, 0.0)
    return c[..., None] * d
