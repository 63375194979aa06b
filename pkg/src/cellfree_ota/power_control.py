"""Transmit power strategies: Lyapunov online control (LOFPC), Fixed, Ci, Lgr."""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .ota_link import PowerAllocation

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LyapunovConfig:
    V: float = 10.0
    max_sweeps: int = 100
    tol: float = 1e-8

    def __post_init__(self):
        if not self.V > 0:
            raise ValueError("penalty factor V must be positive")


@dataclass(frozen=True)
class VirtualQueueState:
    q: np.ndarray
    round: int = 0

    @classmethod
    def zeros(cls, K):
        return cls(np.zeros(K), 0)


def update_queue(state, p, budget):
    """q_k[t] = max(q_k[t-1] + p_k - P_ave_k, 0)."""
    p = p.p if isinstance(p, PowerAllocation) else np.asarray(p, dtype=float)
    return VirtualQueueState(np.maximum(state.q + p - budget.p_ave, 0.0), state.round + 1)


def drift_bound(p, q_prev, p_ave):
    """Upper bound on the one-step drift (q[t]^2 - q[t-1]^2)/2."""
    x = np.asarray(p) - p_ave
    return 0.5 * x**2 + q_prev * x


# ---------------------------------------------------------------------------
# Per-user cubic: d/dx [xi_k + V phi] = 2 (x^3 + a x + b)

@dataclass(frozen=True)
class CubicCoefficients:
    a: float
    b: float

    @property
    def D(self):
        return (self.b / 2.0) ** 2 + (self.a / 3.0) ** 3

    @property
    def r(self):
        return 2.0 * math.sqrt(-self.a / 3.0) if self.a < 0 else float("nan")

    @property
    def theta(self):
        # cos(3 phi) = -4 b / r^3 for x = r cos(phi)
        if not self.a < 0:
            return float("nan")
        return math.acos(max(-1.0, min(1.0, -4.0 * self.b / self.r**3)))


def _cubic_ab(k, p_hat, H, A, C, V, qk, p_ave_k):
    K = len(H)
    Hk = H[k]
    others = sum(p_hat[i] * H[i] for i in range(K) if i != k)
    a = qk - p_ave_k + V * (A + C) * (Hk.real**2 + Hk.imag**2)
    b = V * (A * (Hk * others.conjugate()).real - (C / K + A) * Hk.real)
    return a, b


def cubic_coefficients(k, p_hat, H, coeffs, cfg, queue, budget):
    """Coefficients of user k's stationarity cubic, others' amplitudes held fixed."""
    H = [complex(x) for x in np.asarray(H)]
    q = queue.q if isinstance(queue, VirtualQueueState) else queue
    a, b = _cubic_ab(k, [float(x) for x in p_hat], H, coeffs.A, coeffs.C, cfg.V, float(q[k]),
                     float(budget.p_ave[k]))
    return CubicCoefficients(a, b)


def _polish(x, a, b):
    d = 3.0 * x * x + a
    if d != 0.0:
        step = (x**3 + a * x + b) / d
        if abs(step) <= 1e-6 * max(1.0, abs(x)):
            return x - step
    return x


def _cbrt(x):
    return math.copysign(abs(x) ** (1.0 / 3.0), x)


def cubic_roots(a, b):
    """Real roots of x^3 + a x + b (Cardano for D >= 0, trigonometric for D < 0)."""
    c = CubicCoefficients(a, b)
    D = c.D
    if D >= 0:
        s = math.sqrt(D)
        x1 = _polish(_cbrt(-b / 2.0 + s) + _cbrt(-b / 2.0 - s), a, b)
        roots = [x1]
        # deflate to x^2 + x1 x + (x1^2 + a); real only when D is (numerically) zero
        disc = -3.0 * x1 * x1 - 4.0 * a
        if disc >= -1e-12 * (x1 * x1 + abs(a)):
            s2 = math.sqrt(max(disc, 0.0))
            roots += [_polish((-x1 + s2) / 2.0, a, b), _polish((-x1 - s2) / 2.0, a, b)]
        return roots
    r, theta = c.r, c.theta
    return [_polish(r * math.cos((theta + 2.0 * math.pi * n) / 3.0), a, b) for n in range(3)]


def quartic_objective(x, a, b):
    """User objective x^4/2 + a x^2 + 2 b x (up to an x-independent constant)."""
    return 0.5 * x**4 + a * x**2 + 2.0 * b * x


def solve_power_cubic(c, amp_max):
    """Best amplitude in [0, amp_max] among the clamped stationary points and both ends."""
    candidates = [min(max(x, 0.0), amp_max) for x in cubic_roots(c.a, c.b)]
    candidates += [0.0, amp_max]
    return min(candidates, key=lambda x: quartic_objective(x, c.a, c.b))


def lyapunov_penalty(p_hat, queue, budget):
    """xi[t] = sum_k (p_k - P_ave)^2 / 2 + q_k[t-1] (p_k - P_ave)."""
    q = queue.q if isinstance(queue, VirtualQueueState) else np.asarray(queue)
    return float(np.sum(drift_bound(np.asarray(p_hat) ** 2, q, budget.p_ave)))


def drift_plus_penalty(p_hat, H, coeffs, cfg, queue, budget, gamma=0.0):
    s = np.asarray(p_hat) * H
    K = s.shape[0]
    phi = (coeffs.A * abs(s.sum() - 1.0) ** 2 + coeffs.C * float(np.sum(np.abs(s - 1.0 / K) ** 2))
           + coeffs.B * gamma)
    return lyapunov_penalty(p_hat, queue, budget) + cfg.V * phi


def lofpc_sweeps(H, queue, coeffs, cfg, budget, p_hat_init):
    """Gauss-Seidel over users in ascending order; returns (amplitudes, sweeps)."""
    amp_max = [float(x) for x in budget.amp_max]
    p_ave = [float(x) for x in budget.p_ave]
    q = queue.q if isinstance(queue, VirtualQueueState) else queue
    q = [float(x) for x in q]
    H = [complex(x) for x in np.asarray(H)]
    p_hat = [min(max(float(x), 0.0), m) for x, m in zip(np.asarray(p_hat_init, dtype=float), amp_max)]
    A, C, V = float(coeffs.A), float(coeffs.C), float(cfg.V)
    for sweep in range(1, cfg.max_sweeps + 1):
        change = 0.0
        for k in range(len(p_hat)):
            a, b = _cubic_ab(k, p_hat, H, A, C, V, q[k], p_ave[k])
            new = solve_power_cubic(CubicCoefficients(a, b), amp_max[k])
            change = max(change, abs(new - p_hat[k]))
            p_hat[k] = new
        if change < cfg.tol:
            break
    return np.array(p_hat), sweep


def lofpc_round(H, queue, coeffs, cfg, budget, p_hat_init):
    p_hat, _ = lofpc_sweeps(H, queue, coeffs, cfg, budget, p_hat_init)
    return PowerAllocation.from_amplitudes(p_hat)


def fixed_power(budget):
    return PowerAllocation(budget.p_ave.copy())


def ci_power(H, budget):
    """Channel inversion toward 1/K: p_k = min((Re H_k / (K |H_k|^2))^2, P_max)."""
    H = np.asarray(H)
    K = H.shape[-1]
    mag2 = np.abs(H) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(mag2 > 0, (H.real / (K * mag2)) ** 2, 0.0)
    return PowerAllocation(np.minimum(p, budget.p_max))


# ---------------------------------------------------------------------------
# Offline Lagrangian baseline (needs every round's channels up front)

@dataclass(frozen=True)
class DualConfig:
    step: float = 0.1  # initial multiplier step, relative to the mean objective per unit power
    max_iters: int = 500
    tol: float = 1e-3
    max_sweeps: int = 100
    sweep_tol: float = 1e-8
    grow: float = 1.2
    shrink: float = 0.5


def lgr_inner(H, lam, coeffs, amp_max, p_hat_init=None, max_sweeps=100, tol=1e-8):
    """Minimise phi[t] + sum_k lam_k p_hat_k^2 per round by exact coordinate updates.

    ``H`` is (T, K); coefficient fields may be scalars or length-T arrays.
    """
    H = np.atleast_2d(H)
    T, K = H.shape
    A = np.broadcast_to(np.asarray(coeffs.A, dtype=float), (T,))
    C = np.broadcast_to(np.asarray(coeffs.C, dtype=float), (T,))
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (K,))
    amp_max = np.broadcast_to(np.asarray(amp_max, dtype=float), (K,))
    p_hat = np.zeros((T, K)) if p_hat_init is None else np.array(p_hat_init, dtype=float).reshape(T, K)
    mag2 = np.abs(H) ** 2
    for _ in range(max_sweeps):
        old = p_hat.copy()
        for k in range(K):
            rest = (p_hat * H).sum(axis=1) - p_hat[:, k] * H[:, k]
            num = (A + C / K) * H[:, k].real - A * (H[:, k] * rest.conj()).real
            den = lam[k] + (A + C) * mag2[:, k]
            with np.errstate(divide="ignore", invalid="ignore"):
                x = np.where(den > 0, num / den, amp_max[k])
            p_hat[:, k] = np.clip(x, 0.0, amp_max[k])
        if np.max(np.abs(p_hat - old)) < tol:
            break
    return p_hat


def dual_subgradient(best_response, budget, cfg=DualConfig(), objective_scale=1.0):
    """Projected subgradient ascent on the long-term-constraint multipliers.

    ``best_response(lam)`` returns a (T, K) array of powers minimising the
    Lagrangian for fixed ``lam``.  Each user's step starts at
    ``cfg.step * objective_scale / P_ave`` and adapts per coordinate: it is
    halved whenever that user's violation changes sign and grown while the
    sign persists.  Stops at the first iterate whose worst violation is at
    most ``cfg.tol``.  Returns (powers, lam, iterations).
    """
    K = budget.K
    lam = np.zeros(K)
    step = np.full(K, cfg.step * float(objective_scale)) / budget.p_ave
    prev = None
    best = None
    for it in range(1, cfg.max_iters + 1):
        p = best_response(lam)
        violation = p.mean(axis=0) - budget.p_ave
        worst = float(violation.max())
        if best is None or worst < best[0]:
            best = (worst, p, lam.copy(), it)
        if worst <= cfg.tol:
            return p, lam, it
        if prev is not None:
            flipped = np.sign(violation) != np.sign(prev)
            step = np.where(flipped, step * cfg.shrink, step * cfg.grow)
        prev = violation
        lam = np.maximum(0.0, lam + step * violation / budget.p_ave)
    log.warning("dual iteration did not reach feasibility in %d steps (violation %.3g)",
                cfg.max_iters, best[0])
    return best[1], best[2], cfg.max_iters


def lgr_objective(H, p_hat, coeffs, gamma=0.0):
    """Per-round phi for a (T, K) tape; coefficient fields scalar or length T."""
    s = p_hat * H
    K = s.shape[-1]
    return (np.asarray(coeffs.A) * np.abs(s.sum(axis=-1) - 1.0) ** 2
            + np.asarray(coeffs.C) * np.sum(np.abs(s - 1.0 / K) ** 2, axis=-1)
            + np.asarray(coeffs.B) * gamma)


def lgr_power(effective_channels, coeffs, budget, cfg=DualConfig()):
    """Offline dual baseline for fixed beamformers.

    ``effective_channels`` is (T, K) with H_k^t for each round's combiner.
    Returns one PowerAllocation per round.
    """
    H = np.asarray(effective_channels)
    state = {"p_hat": None}
    scale = float(np.mean(lgr_objective(H, lgr_inner(H, 0.0, coeffs, budget.amp_max), coeffs)))

    def respond(lam):
        state["p_hat"] = lgr_inner(H, lam, coeffs, budget.amp_max, state["p_hat"], cfg.max_sweeps, cfg.sweep_tol)
        return state["p_hat"] ** 2

    p, _, _ = dual_subgradient(respond, budget, cfg, scale)
    return [PowerAllocation(row) for row in p]
