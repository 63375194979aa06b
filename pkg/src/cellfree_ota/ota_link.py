"""Analog uplink aggregation, its error bounds and the per-round gap surrogate.

Array conventions used throughout the package:

* ``h``: channels, shape ``(..., K, L, N_r)``
* ``v``: stacked receive combiner ``[r_1; ...; r_L]``, shape ``(..., L * N_r)``
* ``p_hat``: transmit amplitudes sqrt(p), shape ``(..., K)``

Leading batch dimensions (e.g. rounds) broadcast.
"""

from dataclasses import dataclass, field

import numpy as np


def dbm_to_watts(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class NoiseModel:
    sigma2: float  # per-antenna complex noise power, W

    def __post_init__(self):
        if not self.sigma2 >= 0:
            raise ValueError("sigma2 must be nonnegative")

    @classmethod
    def from_dbm(cls, dbm):
        return cls(dbm_to_watts(dbm))


@dataclass(frozen=True)
class PowerBudget:
    p_max: np.ndarray
    p_ave: np.ndarray

    def __post_init__(self):
        p_max = np.atleast_1d(np.asarray(self.p_max, dtype=float))
        p_ave = np.atleast_1d(np.asarray(self.p_ave, dtype=float))
        if p_max.shape != p_ave.shape:
            raise ValueError("p_max and p_ave must have the same shape")
        if np.any(p_ave <= 0) or np.any(p_ave > p_max):
            raise ValueError("need 0 < p_ave <= p_max elementwise")
        object.__setattr__(self, "p_max", p_max)
        object.__setattr__(self, "p_ave", p_ave)

    @classmethod
    def uniform(cls, K, p_ave, p_max):
        return cls(np.full(K, float(p_max)), np.full(K, float(p_ave)))

    @classmethod
    def from_raw(cls, raw_p_ave, raw_p_max, q, G):
        """Map per-symbol budgets on p ||w||^2 / q into budgets on p alone (scale q / G^2)."""
        scale = q / G**2
        return cls(np.asarray(raw_p_max, dtype=float) * scale, np.asarray(raw_p_ave, dtype=float) * scale)

    @property
    def K(self):
        return self.p_ave.shape[0]

    @property
    def amp_max(self):
        return np.sqrt(self.p_max)


@dataclass(frozen=True)
class PowerAllocation:
    p: np.ndarray

    @classmethod
    def from_amplitudes(cls, p_hat):
        return cls(np.asarray(p_hat, dtype=float) ** 2)

    @property
    def p_hat(self):
        return np.sqrt(self.p)


@dataclass(frozen=True)
class GapHyperparams:
    """Constants of the convergence bound; A/B/C overrides bypass the formulas."""

    G: float = 1.0
    S: float = 1.0
    mu: float = 0.0
    omega: int = 1
    eta: float = 0.05
    T: int = 300
    N: float = 0.0
    W: float = 0.0
    A: float = None
    B: float = None
    C: float = None


@dataclass(frozen=True)
class GapCoefficients:
    A: float
    B: float
    C: float
    t: int = 1
    M: float = 1.0
    J: float = 1.0
    hyper: GapHyperparams = field(default=None, repr=False)


def contraction(hyper, t):
    return 1.0 - (hyper.omega - 1) * hyper.mu * hyper.eta


def gap_coefficients(hyper, t, T=None):
    """A_t, B_t, C_t for round t of a T-round run (fixed learning rate)."""
    T = hyper.T if T is None else T
    if not 1 <= t <= T:
        raise ValueError(f"round {t} outside 1..{T}")
    M_t = contraction(hyper, t)
    J_t = float(np.prod([contraction(hyper, i) for i in range(t, T + 1)])) / M_t
    eta_prev = hyper.eta
    A = J_t * hyper.G**2 / (2.0 * eta_prev)
    B = hyper.S**2 * eta_prev * hyper.omega + hyper.S
    C = B * hyper.G**2
    A = A if hyper.A is None else float(hyper.A)
    B = B if hyper.B is None else float(hyper.B)
    C = C if hyper.C is None else float(hyper.C)
    return GapCoefficients(A, B, C, t, M_t, J_t, hyper)


def per_ap(v, L):
    v = np.asarray(v)
    return v.reshape(v.shape[:-1] + (L, v.shape[-1] // L))


def combined_gains(h, v):
    """r_l^H h_{k,l} for every (k, l), shape (..., K, L)."""
    L = h.shape[-2]
    r = per_ap(v, L)
    return np.einsum("...ln,...kln->...kl", r.conj(), h)


def effective_channel(h, v):
    """H_k = sum_l r_l^H h_{k,l}."""
    return combined_gains(h, v).sum(axis=-1)


def residuals(h, v, p_hat):
    """m_{k,l} = r_l^H h_{k,l} p_hat_k - 1/(LK), and the effective channel H."""
    g = combined_gains(h, v)
    K, L = g.shape[-2:]
    m = g * np.asarray(p_hat)[..., :, None] - 1.0 / (L * K)
    return m, g.sum(axis=-1)


def noise_penalty(v, sigma2, q):
    """gamma_t = q sigma^2 ||v||^2."""
    v = np.asarray(v)
    return q * sigma2 * np.sum(np.abs(v) ** 2, axis=-1)


@dataclass
class AggregationOutcome:
    z: np.ndarray
    w_bar: np.ndarray
    epsilon: np.ndarray
    m: np.ndarray
    H: np.ndarray
    gamma: float

    @property
    def global_model(self):
        return self.z.real


def draw_noise(gen, L, n_rx, q, sigma2):
    """N_l for every AP: (L, N_r, q) with i.i.d. CN(0, sigma2) entries."""
    shape = (L, n_rx, q)
    return np.sqrt(sigma2 / 2.0) * (gen.standard_normal(shape) + 1j * gen.standard_normal(shape))


def aggregate(models, h, v, p_hat, noise, gen=None, noise_sample=None):
    """Superpose the K analog transmissions and combine at the CPU.

    ``models`` is (K, q).  Noise comes from ``noise_sample`` (L, N_r, q) if
    given, otherwise from ``gen``.
    """
    models = np.asarray(models, dtype=float)
    K, L, n_rx = h.shape
    if models.shape[0] != K:
        raise ValueError(f"expected {K} models, got {models.shape[0]}")
    q = models.shape[1]
    p_hat = np.asarray(p_hat, dtype=float)
    m, H = residuals(h, v, p_hat)
    z = (H * p_hat) @ models
    if noise.sigma2 > 0:
        if noise_sample is None:
            if gen is None:
                raise ValueError("a random generator or noise sample is required when sigma2 > 0")
            noise_sample = draw_noise(gen, L, n_rx, q, noise.sigma2)
        r = per_ap(v, L)
        z = z + np.einsum("ln,lnq->q", r.conj(), noise_sample)
    w_bar = models.mean(axis=0)
    return AggregationOutcome(z, w_bar, z - w_bar, m, H, float(noise_penalty(v, noise.sigma2, q)))


def error_bounds(m, gamma, G):
    """Bounds on ||E eps||^2 and E ||eps||^2 for models with E||w_k||^2 <= G^2."""
    if not G > 0:
        raise ValueError("G must be positive")
    bias = G**2 * np.abs(m.sum(axis=(-2, -1))) ** 2
    mse = G**2 * np.sum(np.abs(m.sum(axis=-1)) ** 2, axis=-1) + gamma
    return bias, mse


def phi(h, v, p_hat, coeffs, sigma2, q):
    """Per-round gap surrogate A|sum m|^2 + C sum_k |sum_l m_kl|^2 + B gamma."""
    m, _ = residuals(h, v, p_hat)
    bias = np.abs(m.sum(axis=(-2, -1))) ** 2
    spread = np.sum(np.abs(m.sum(axis=-1)) ** 2, axis=-1)
    return coeffs.A * bias + coeffs.C * spread + coeffs.B * noise_penalty(v, sigma2, q)


def phi_from_effective(H, p_hat, coeffs, gamma):
    """phi written in effective channels: A|sum p_k H_k - 1|^2 + C sum|p_k H_k - 1/K|^2 + B gamma."""
    s = np.asarray(p_hat) * H
    K = s.shape[-1]
    return (coeffs.A * np.abs(s.sum(axis=-1) - 1.0) ** 2
            + coeffs.C * np.sum(np.abs(s - 1.0 / K) ** 2, axis=-1)
            + coeffs.B * gamma)
