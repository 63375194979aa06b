"""Network geometry and per-round Rayleigh/log-distance channels."""

from dataclasses import dataclass

import numpy as np

from . import rng

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class PathLossParams:
    carrier_hz: float = 2.4e9
    d0: float = 1.0
    exponent: float = 3.0


@dataclass(frozen=True)
class Topology:
    ue_positions: np.ndarray  # (K, 2) meters
    ap_positions: np.ndarray  # (L, 2) meters
    area_side: float
    n_rx_antennas: int = 4

    @property
    def K(self):
        return self.ue_positions.shape[0]

    @property
    def L(self):
        return self.ap_positions.shape[0]

    def distances(self):
        diff = self.ue_positions[:, None, :] - self.ap_positions[None, :, :]
        return np.linalg.norm(diff, axis=-1)


@dataclass
class ChannelRealization:
    h: np.ndarray  # (K, L, N_r) complex
    round_index: int


def place_nodes(seed, area_side, K, L, n_rx_antennas=4):
    """Drop K UEs and L APs uniformly at random in a square of side ``area_side``."""
    if K < 1 or L < 1:
        raise ValueError(f"need at least one UE and one AP, got K={K}, L={L}")
    if n_rx_antennas < 1:
        raise ValueError("n_rx_antennas must be >= 1")
    if not area_side > 0:
        raise ValueError(f"area_side must be positive, got {area_side}")
    gen = rng.stream(seed, rng.PLACEMENT)
    ue = gen.uniform(0.0, area_side, size=(K, 2))
    ap = gen.uniform(0.0, area_side, size=(L, 2))
    return Topology(ue, ap, float(area_side), int(n_rx_antennas))


def free_space_loss_db(distance, carrier_hz):
    return 20.0 * np.log10(4.0 * np.pi * distance * carrier_hz / SPEED_OF_LIGHT)


def path_loss_db(distance, params=PathLossParams()):
    """Log-distance path loss anchored to free-space loss at ``d0``.

    Distances below ``d0`` are clamped to ``d0``.
    """
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    d = np.maximum(d, params.d0)
    pl = free_space_loss_db(params.d0, params.carrier_hz) + 10.0 * params.exponent * np.log10(d / params.d0)
    return pl if pl.ndim else float(pl)


def large_scale_gains(topology, params=PathLossParams()):
    """K x L matrix of linear path gains beta = 10^(-PL/10)."""
    return 10.0 ** (-path_loss_db(topology.distances(), params) / 10.0)


def sample_channel(beta, n_rx_antennas, seed, round_index):
    """h_{k,l} = sqrt(beta_{k,l}) * g with g ~ CN(0, I_{N_r})."""
    beta = np.asarray(beta, dtype=float)
    if beta.ndim != 2:
        raise ValueError(f"beta must be K x L, got shape {beta.shape}")
    gen = rng.stream(seed, rng.FADING, round_index)
    shape = beta.shape + (int(n_rx_antennas),)
    g = (gen.standard_normal(shape) + 1j * gen.standard_normal(shape)) / np.sqrt(2.0)
    return ChannelRealization(np.sqrt(beta)[..., None] * g, int(round_index))


def channel_tape(beta, n_rx_antennas, seed, rounds):
    """Stack rounds 1..rounds into a (T, K, L, N_r) array."""
    return np.stack([sample_channel(beta, n_rx_antennas, seed, t).h for t in range(1, rounds + 1)])


def save_channels(path, beta, tape):
    np.savez(path, beta=beta, h=tape)
