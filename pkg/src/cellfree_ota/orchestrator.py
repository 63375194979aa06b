"""Per-round joint beamforming/power optimisation inside the FL training loop."""

import dataclasses
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from . import beamforming, channel_env, ota_link, power_control, ridge_task, rng
from .config import SimulationConfig


@dataclass
class RoundRecord:
    t: int
    loss: float
    gap: float
    power: np.ndarray
    avg_power: np.ndarray
    queue: np.ndarray
    phi: float
    bias_bound: float
    mse_bound: float
    error_sq: float
    alt_iters: int

    def row(self):
        return dataclasses.asdict(self)


@dataclass
class RunResult:
    config: SimulationConfig
    records: list
    f_star: float
    initial_loss: float
    G: float
    lgr_lambda: np.ndarray = None
    lgr_iters: int = None

    @property
    def final_loss(self):
        return self.records[-1].loss

    @property
    def power_tape(self):
        return np.array([r.power for r in self.records])

    @property
    def queue_tape(self):
        return np.array([r.queue for r in self.records])

    def convergence_round(self, slack=0.05):
        return power_convergence_round(self.power_tape, self.config.budget.p_ave, slack)


def power_convergence_round(powers, p_ave, slack=0.05):
    """First round after which every running-average power stays <= p_ave (1 + slack).

    Returns None if the last round still violates.
    """
    powers = np.asarray(powers)
    avg = np.cumsum(powers, axis=0) / np.arange(1, powers.shape[0] + 1)[:, None]
    ok = np.all(avg <= p_ave * (1.0 + slack), axis=1)
    if not ok[-1]:
        return None
    bad = np.flatnonzero(~ok)
    return int(bad[-1] + 2) if bad.size else 1


# ---------------------------------------------------------------------------
# one round of the joint optimisation

@dataclass
class RoundProblem:
    """Everything the per-round optimiser may look at (current round only)."""

    h: np.ndarray
    beta: np.ndarray
    coeffs: object
    sigma2: float
    q: int
    budget: ota_link.PowerBudget


def beamform(kind, prob, p_hat):
    inputs = beamforming.build_inputs(prob.h, p_hat)
    if kind == "MOP":
        return beamforming.mop_beamformer(inputs, prob.coeffs, prob.sigma2, prob.q)
    if kind == "MRC":
        return beamforming.mrc_beamformer(prob.h, prob.beta, inputs, prob.coeffs, prob.sigma2, prob.q)
    raise ValueError(f"unknown beamformer {kind!r}")


def _rel_change(new, old):
    scale = max(np.linalg.norm(old), np.finfo(float).tiny)
    return np.linalg.norm(new - old) / scale


def alternate(prob, beamformer, power_step, p_hat_init, max_iters=20, tol=1e-6, trace=None):
    """Alternate beamforming and power updates from ``p_hat_init``.

    ``power_step(H, p_hat)`` returns new amplitudes given effective channels.
    Stops when both blocks change by less than ``tol`` (relative) or after
    ``max_iters``.  Returns (p_hat, v, iterations).
    """
    p_hat = np.asarray(p_hat_init, dtype=float).copy()
    v = None
    for it in range(1, max_iters + 1):
        v_new = beamform(beamformer, prob, p_hat)
        H = ota_link.effective_channel(prob.h, v_new)
        p_new = power_step(H, p_hat)
        if trace is not None:
            trace.append((p_new.copy(), v_new.copy()))
        done = v is not None and max(_rel_change(v_new, v), _rel_change(p_new, p_hat)) < tol
        p_hat, v = p_new, v_new
        if done:
            break
    return p_hat, v, it


def power_step_for(kind, prob, queue=None, lyapunov=None):
    if kind == "LOFPC":
        def step(H, p_hat):
            p, _ = power_control.lofpc_sweeps(H, queue, prob.coeffs, lyapunov, prob.budget, p_hat)
            return p
    elif kind == "Ci":
        def step(H, p_hat):
            return power_control.ci_power(H, prob.budget).p_hat
    elif kind == "Fixed":
        def step(H, p_hat):
            return power_control.fixed_power(prob.budget).p_hat
    else:
        raise ValueError(f"{kind!r} is not a causal per-round strategy")
    return step


def alternate_round(prob, queue, strategy, lyapunov=power_control.LyapunovConfig(),
                    max_iters=20, tol=1e-6, trace=None):
    """Alternating beamformer and power optimisation for one round, starting from p = P_ave.

    ``strategy`` is ``(beamformer, power)``; Fixed power needs a single
    beamformer pass.
    """
    beamformer, power = strategy
    p0 = np.sqrt(prob.budget.p_ave)
    if power == "Fixed":
        max_iters = 1
    step = power_step_for(power, prob, queue, lyapunov)
    p_hat, v, iters = alternate(prob, beamformer, step, p0, max_iters, tol, trace)
    if power == "Fixed":
        return power_control.fixed_power(prob.budget), v, iters  # exact P_ave, no sqrt round trip
    return ota_link.PowerAllocation.from_amplitudes(p_hat), v, iters


# ---------------------------------------------------------------------------
# offline Lagrangian schedule

def lgr_schedule(tape, beta, coeff_list, beamformer, budget, sigma2, q, dual_cfg, max_iters=20, tol=1e-6):
    """Dual iteration over the whole channel tape (non-causal).

    For each multiplier vector every round runs the alternation with the
    multiplier-penalised power update, batched across rounds.  Returns
    (p_hat (T, K), v (T, N), lam, dual iterations).
    """
    T = tape.shape[0]
    coeffs = SimpleNamespace(
        A=np.array([c.A for c in coeff_list]),
        B=np.array([c.B for c in coeff_list]),
        C=np.array([c.C for c in coeff_list]),
    )
    prob = RoundProblem(tape, beta, coeffs, sigma2, q, budget)
    p0 = np.broadcast_to(np.sqrt(budget.p_ave), (T, budget.K)).copy()
    last = {}

    def respond(lam):
        def step(H, p_hat):
            return power_control.lgr_inner(H, lam, coeffs, budget.amp_max, p_hat,
                                           dual_cfg.max_sweeps, dual_cfg.sweep_tol)
        p_hat, v, _ = alternate(prob, beamformer, step, p0, max_iters, tol)
        last["p_hat"], last["v"] = p_hat, v
        return p_hat**2

    respond(np.zeros(budget.K))
    gamma = ota_link.noise_penalty(last["v"], sigma2, q)
    H = ota_link.effective_channel(tape, last["v"])
    scale = float(np.mean(power_control.lgr_objective(H, last["p_hat"], coeffs, gamma)))
    p, lam, iters = power_control.dual_subgradient(respond, budget, dual_cfg, scale)
    if not np.array_equal(p, last["p_hat"] ** 2):
        # best iterate was an earlier one; recover its beamformers
        respond(lam)
    return np.sqrt(p), last["v"], lam, iters


# ---------------------------------------------------------------------------
# full run

def gap_hyper(cfg, G):
    g = cfg.gap
    return ota_link.GapHyperparams(G=G, S=g.S, mu=g.mu, omega=cfg.task.omega, eta=cfg.task.eta,
                                   T=cfg.run.T, N=g.N, W=g.W, A=g.A, B=g.B, C=g.C)


def task_hyper(cfg):
    t = cfg.task
    return ridge_task.TaskHyperparams(rho=t.rho, eta=t.eta, omega=t.omega, q=t.q, batch_size=t.batch_size)


def local_models(w, datasets, hyper, seed, t):
    out = []
    for d in datasets:
        gen = rng.stream(seed, rng.BATCH, t, d.owner) if hyper.batch_size is not None else None
        out.append(ridge_task.local_update(w, d, hyper, gen))
    return np.array(out)


def reference_norm(cfg, w0, datasets, hyper):
    """Model norm that the default bound G is scaled from."""
    if cfg.gap.G_reference == "first_update":
        first = local_models(w0, datasets, hyper, cfg.run.seed, 1)
        return float(np.max(np.linalg.norm(first, axis=1)))
    return float(np.linalg.norm(ridge_task.optimal_model(datasets, cfg.task.rho)))


def build_environment(cfg):
    seed = cfg.run.seed
    topo = channel_env.place_nodes(seed, cfg.topology.area_side, cfg.topology.K, cfg.topology.L,
                                   cfg.topology.n_rx)
    pl = channel_env.PathLossParams(cfg.channel.carrier_hz, cfg.channel.d0, cfg.channel.exponent)
    beta = channel_env.large_scale_gains(topo, pl)
    weights = {2: cfg.task.label_weight_2, 5: cfg.task.label_weight_5}
    datasets = ridge_task.generate_datasets(seed, cfg.topology.K, cfg.task.D, cfg.task.q, weights=weights,
                                            noise_std=cfg.task.label_noise_std)
    return topo, beta, datasets


def run_simulation(cfg, progress=None):
    """Train for ``cfg.run.T`` rounds and return a RunResult with one record per round."""
    seed, T, K = cfg.run.seed, cfg.run.T, cfg.topology.K
    beamformer, power = cfg.strategy.beamformer, cfg.strategy.power
    topo, beta, datasets = build_environment(cfg)
    hyper = task_hyper(cfg)
    q = cfg.task.q
    rho = cfg.task.rho
    f_star = ridge_task.optimal_loss(datasets, rho)
    noise = ota_link.NoiseModel.from_dbm(cfg.channel.noise_dbm)
    budget = ota_link.PowerBudget.uniform(K, cfg.budget.p_ave, cfg.budget.p_max)
    lyap = power_control.LyapunovConfig(cfg.lyapunov.V, cfg.lyapunov.max_sweeps, cfg.lyapunov.tol)
    dual = power_control.DualConfig(cfg.dual.step, cfg.dual.max_iters, cfg.dual.tol)

    w = np.zeros(q)
    initial_loss = ridge_task.global_loss(w, datasets, rho)
    G = cfg.gap.G
    if G is None:
        G = cfg.gap.G_safety * reference_norm(cfg, w, datasets, hyper)
    gh = gap_hyper(cfg, G)
    coeff_list = [ota_link.gap_coefficients(gh, t, T) for t in range(1, T + 1)]

    lgr = None
    if power == "Lgr":
        tape = channel_env.channel_tape(beta, topo.n_rx_antennas, seed, T)
        lgr = lgr_schedule(tape, beta, coeff_list, beamformer, budget, noise.sigma2, q, dual,
                           cfg.alternation.max_iters, cfg.alternation.tol)

    queue = power_control.VirtualQueueState.zeros(K)
    total_power = np.zeros(K)
    records = []
    for t in range(1, T + 1):
        coeffs = coeff_list[t - 1]
        h = channel_env.sample_channel(beta, topo.n_rx_antennas, seed, t).h
        models = local_models(w, datasets, hyper, seed, t)
        if lgr is not None:
            p_hat, v, iters = lgr[0][t - 1], lgr[1][t - 1], 0
            alloc = ota_link.PowerAllocation.from_amplitudes(p_hat)
        else:
            prob = RoundProblem(h, beta, coeffs, noise.sigma2, q, budget)
            alloc, v, iters = alternate_round(prob, queue, (beamformer, power), lyap,
                                              cfg.alternation.max_iters, cfg.alternation.tol)
        p_hat = alloc.p_hat
        if cfg.run.perfect_aggregation:
            w_bar = models.mean(axis=0)
            out = ota_link.AggregationOutcome(w_bar.astype(complex), w_bar, np.zeros(q, complex),
                                              np.zeros((K, cfg.topology.L), complex), np.zeros(K, complex), 0.0)
        else:
            out = ota_link.aggregate(models, h, v, p_hat, noise, rng.stream(seed, rng.NOISE, t))
        w = out.global_model
        queue = power_control.update_queue(queue, alloc, budget)
        total_power += alloc.p
        bias, mse = ota_link.error_bounds(out.m, out.gamma, G)
        phi = float(ota_link.phi_from_effective(out.H, p_hat, coeffs, out.gamma))
        loss = ridge_task.global_loss(w, datasets, rho)
        records.append(RoundRecord(t, loss, loss - f_star, alloc.p.copy(), total_power / t, queue.q.copy(),
                                   phi, float(bias), float(mse), float(np.sum(np.abs(out.epsilon) ** 2)), iters))
        if progress is not None:
            progress(t)
    res = RunResult(cfg, records, f_star, initial_loss, G)
    if lgr is not None:
        res.lgr_lambda, res.lgr_iters = lgr[2], lgr[3]
    return res


def sweep_v(cfg, v_values, slack=0.05):
    """One run per penalty factor, all other seeds and settings shared."""
    if not len(v_values):
        raise ValueError("v_values must be nonempty")
    rows = []
    for V in v_values:
        res = run_simulation(cfg.replace(**{"lyapunov.V": V}))
        rows.append({"V": float(V), "final_loss": res.final_loss, "convergence_round": res.convergence_round(slack),
                     "result": res})
    return rows
