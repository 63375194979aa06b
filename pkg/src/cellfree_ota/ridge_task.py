"""Federated ridge regression: synthetic data, losses, gradients, local SGD."""

from dataclasses import dataclass

import numpy as np

from . import rng

# 1-based component -> weight in the label rule tau = x(2) + 3 x(5) + 0.2 z
LABEL_WEIGHTS = {2: 1.0, 5: 3.0}
LABEL_NOISE_STD = 0.2


@dataclass(frozen=True)
class RidgeDataset:
    inputs: np.ndarray  # (D, q)
    labels: np.ndarray  # (D,)
    owner: int = 0
    noise: np.ndarray = None  # stored z draws

    @property
    def size(self):
        return self.labels.shape[0]


@dataclass(frozen=True)
class TaskHyperparams:
    rho: float = 5e-5
    eta: float = 0.05
    omega: int = 1
    q: int = 10
    batch_size: int = None  # None = full batch

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be >= 0")
        if not self.eta >= 0:
            raise ValueError("eta must be >= 0")
        if self.omega < 1:
            raise ValueError("omega must be >= 1")


def label_rule(x, z, weights=LABEL_WEIGHTS, noise_std=LABEL_NOISE_STD):
    x = np.asarray(x, dtype=float)
    tau = noise_std * np.asarray(z, dtype=float)
    for component, weight in weights.items():
        tau = tau + weight * x[..., component - 1]
    return tau


def generate_dataset(seed, D=1000, q=10, owner=0, weights=LABEL_WEIGHTS, noise_std=LABEL_NOISE_STD):
    need = max(weights)
    if q < need:
        raise ValueError(f"label rule reads component {need} (1-based); q={q} is too small")
    gen = rng.stream(seed, rng.DATA, owner)
    x = gen.standard_normal((D, q))
    z = gen.standard_normal(D)
    return RidgeDataset(x, label_rule(x, z, weights, noise_std), owner, z)


def generate_datasets(seed, K, D=1000, q=10, **kw):
    return [generate_dataset(seed, D, q, owner=k, **kw) for k in range(K)]


def local_loss(w, data, rho):
    r = data.inputs @ w - data.labels
    return 0.5 * float(r @ r) / data.size + rho * float(w @ w)


def local_gradient(w, data, rho):
    r = data.inputs @ w - data.labels
    return data.inputs.T @ r / data.size + 2.0 * rho * w


def global_loss(w, datasets, rho):
    """Sample-weighted mean of the local losses (equal to the plain mean for equal D_k)."""
    total = sum(d.size for d in datasets)
    return sum(d.size * local_loss(w, d, rho) for d in datasets) / total


def global_gradient(w, datasets, rho):
    total = sum(d.size for d in datasets)
    return sum(d.size * local_gradient(w, d, rho) for d in datasets) / total


def local_update(w_global, data, hyper, gen=None):
    """Run ``hyper.omega`` gradient epochs from the broadcast model.

    Full-batch by default; with ``hyper.batch_size`` set, each epoch takes one
    step on a minibatch drawn from ``gen``.
    """
    w = np.array(w_global, dtype=float, copy=True)
    for _ in range(hyper.omega):
        if hyper.batch_size is None or hyper.batch_size >= data.size:
            g = local_gradient(w, data, hyper.rho)
        else:
            if gen is None:
                raise ValueError("minibatch updates need a random generator")
            idx = gen.choice(data.size, size=hyper.batch_size, replace=False)
            g = local_gradient(w, RidgeDataset(data.inputs[idx], data.labels[idx], data.owner), hyper.rho)
        w = w - hyper.eta * g
    return w


def optimal_model(datasets, rho):
    x = np.concatenate([d.inputs for d in datasets])
    tau = np.concatenate([d.labels for d in datasets])
    if x.shape[0] == 0:
        raise ValueError("pooled dataset is empty")
    gram = x.T @ x / x.shape[0] + 2.0 * rho * np.eye(x.shape[1])
    if rho == 0 and np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise np.linalg.LinAlgError("rank-deficient data with rho = 0 has no unique optimum")
    return np.linalg.solve(gram, x.T @ tau / x.shape[0])


def optimal_loss(datasets, rho):
    """F* = F(w*) for the pooled ridge problem."""
    return global_loss(optimal_model(datasets, rho), datasets, rho)
