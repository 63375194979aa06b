"""Command-line front end: presets for the three figures plus a single run.

Every preset writes CSV data files and a JSON metadata file holding the
resolved config and seeds, so each output can be regenerated from itself.
"""

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, orchestrator
from .config import BEAMFORMERS, POWER_STRATEGIES, ConfigError, load

log = logging.getLogger("cellfree_ota")

OUT_ENV = "CELLFREE_OTA_OUT"
PRESETS = ("fig1", "fig2", "fig3", "single")
FIG1_STRATEGIES = ("LOFPC", "Lgr", "Ci", "Fixed")
FIG3_V = (1.0, 10.0, 100.0)

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_INVARIANT = 0, 1, 2, 3


class InvariantError(RuntimeError):
    pass


def fmt(x):
    """Locale-independent, round-trippable text for CSV cells."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([fmt(x) for x in row])


def write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def check_invariants(res):
    """Hard per-run assertions; raise InvariantError on the first failure."""
    cfg = res.config
    p, qt = res.power_tape, res.queue_tape
    label = f"{cfg.strategy.beamformer}-{cfg.strategy.power} seed {cfg.run.seed}"
    if not np.all(np.isfinite([r.loss for r in res.records])):
        raise InvariantError(f"{label}: non-finite loss")
    if np.any(p < 0) or np.any(p > cfg.budget.p_max * (1 + 1e-12)):
        raise InvariantError(f"{label}: transmit power outside [0, P_max]")
    if np.any(qt < 0):
        raise InvariantError(f"{label}: negative virtual queue")
    T = len(res.records)
    if np.any(p.mean(axis=0) - cfg.budget.p_ave > qt[-1] / T + 1e-12):
        raise InvariantError(f"{label}: telescoped queue bound violated")


def run_checked(cfg):
    log.info("running %s-%s seed=%d T=%d", cfg.strategy.beamformer, cfg.strategy.power, cfg.run.seed, cfg.run.T)
    res = orchestrator.run_simulation(cfg)
    check_invariants(res)
    return res


def parse_seeds(text):
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"--seeds expects comma-separated integers, got {text!r}") from exc
    if not seeds:
        raise ConfigError("--seeds is empty")
    return seeds


def parse_v_values(text):
    try:
        values = [float(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"--v-values expects comma-separated numbers, got {text!r}") from exc
    if not values or any(not v > 0 for v in values):
        raise ConfigError("--v-values must be nonempty and positive")
    return values


def metadata(preset, cfg, seeds, **extra):
    meta = {"preset": preset, "version": __version__, "seeds": seeds, "config": cfg.to_flat()}
    meta.update(extra)
    return meta


# ---------------------------------------------------------------------------
# presets

def preset_fig1(cfg, seeds, out):
    rows = []
    means = {}
    for seed in seeds:
        for power in FIG1_STRATEGIES:
            res = run_checked(cfg.replace(**{"run.seed": seed, "strategy.beamformer": "MOP",
                                              "strategy.power": power}))
            means[f"MOP-{power}/seed{seed}"] = res.power_tape.mean(axis=0)
            for rec in res.records:
                for k, avg in enumerate(rec.avg_power):
                    rows.append((rec.t, f"MOP-{power}", k, avg) if len(seeds) == 1
                                else (rec.t, f"MOP-{power}", k, avg, seed))
    header = ["round", "strategy", "ue", "avg_power"] + ([] if len(seeds) == 1 else ["seed"])
    write_csv(out / "fig1_power.csv", header, rows)
    write_json(out / "fig1_power.json", metadata("fig1", cfg, seeds, mean_power=means))
    return [out / "fig1_power.csv", out / "fig1_power.json"]


def preset_fig2(cfg, seeds, out):
    rows, finals = [], {}
    for seed in seeds:
        for bf in BEAMFORMERS:
            for power in POWER_STRATEGIES:
                res = run_checked(cfg.replace(**{"run.seed": seed, "strategy.beamformer": bf,
                                                  "strategy.power": power}))
                finals.setdefault(f"{bf}-{power}", []).append(res.final_loss)
                rows += [(rec.t, f"{bf}-{power}", seed, rec.loss, rec.gap) for rec in res.records]
    write_csv(out / "fig2_loss.csv", ["round", "strategy", "seed", "loss", "gap"], rows)
    summary = {k: float(np.mean(v)) for k, v in finals.items()}
    write_json(out / "fig2_loss.json", metadata("fig2", cfg, seeds, mean_final_loss=summary))
    return [out / "fig2_loss.csv", out / "fig2_loss.json"]


def preset_fig3(cfg, seeds, out, v_values=FIG3_V):
    T = cfg.run.T
    rows = []
    for V in v_values:
        losses, rounds = [], []
        for seed in seeds:
            res = run_checked(cfg.replace(**{"run.seed": seed, "lyapunov.V": V}))
            losses.append(res.final_loss)
            rounds.append(res.convergence_round())
        converged = [r for r in rounds if r is not None]
        # runs that never settle count as T + 1 in the mean
        mean_round = float(np.mean([T + 1 if r is None else r for r in rounds]))
        rows.append((V, float(np.mean(losses)), mean_round, len(converged), len(seeds),
                     ";".join(str(s) for s in seeds)))
    header = ["V", "mean_final_loss", "mean_convergence_round", "converged_runs", "runs", "seeds"]
    write_csv(out / "fig3_vsweep.csv", header, rows)
    write_json(out / "fig3_vsweep.json",
               metadata("fig3", cfg, seeds, v_values=list(v_values), shared_seeds=True,
                        convergence_slack=0.05, unconverged_round_value=T + 1))
    return [out / "fig3_vsweep.csv", out / "fig3_vsweep.json"]


RECORD_HEADER = ["round", "loss", "gap", "phi", "bias_bound", "mse_bound", "error_sq", "alt_iters"]


def preset_single(cfg, seeds, out):
    written = []
    for seed in seeds:
        c = cfg.replace(**{"run.seed": seed})
        res = run_checked(c)
        K = c.topology.K
        header = RECORD_HEADER + [f"{name}_{k}" for name in ("power", "avg_power", "queue") for k in range(K)]
        rows = [[r.t, r.loss, r.gap, r.phi, r.bias_bound, r.mse_bound, r.error_sq, r.alt_iters,
                 *r.power, *r.avg_power, *r.queue] for r in res.records]
        stem = f"single_{c.strategy.beamformer}-{c.strategy.power}_seed{seed}"
        write_csv(out / f"{stem}.csv", header, rows)
        summary = metadata("single", c, [seed], final_loss=res.final_loss, final_gap=res.records[-1].gap,
                           f_star=res.f_star, initial_loss=res.initial_loss, G=res.G,
                           convergence_round=res.convergence_round(), mean_power=res.power_tape.mean(axis=0),
                           rounds=len(res.records))
        if res.lgr_lambda is not None:
            summary.update(lgr_lambda=res.lgr_lambda, lgr_dual_iterations=res.lgr_iters)
        write_json(out / f"{stem}.json", summary)
        written += [out / f"{stem}.csv", out / f"{stem}.json"]
    return written


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="cellfree-ota",
                                description="Over-the-air federated learning simulator for cell-free MIMO.")
    p.add_argument("--config", metavar="PATH", help="flat dotted-key JSON config file")
    p.add_argument("--preset", choices=PRESETS, default="single")
    p.add_argument("--seed", type=int, help="master seed (run.seed)")
    p.add_argument("--seeds", help="comma-separated seeds to run and average, e.g. 0,1,2,3,4")
    p.add_argument("--rounds", type=int, help="number of rounds T (run.T)")
    p.add_argument("--out", metavar="DIR", help=f"output directory (overrides ${OUT_ENV} and run.out_dir)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; repeatable, applied after the file")
    p.add_argument("--v-values", default=",".join(str(v) for v in FIG3_V), help="fig3 penalty factors")
    p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    p.add_argument("-q", "--quiet", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def resolve(args):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.rounds is not None:
        overrides.append(f"run.T={args.rounds}")
    env_out = os.environ.get(OUT_ENV)
    if env_out:
        overrides.append(f"run.out_dir={env_out}")
    if args.out is not None:
        overrides.append(f"run.out_dir={args.out}")
    cfg = load(args.config, overrides)
    seeds = parse_seeds(args.seeds) if args.seeds else [cfg.run.seed]
    return cfg, seeds


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg, seeds = resolve(args)
        v_values = parse_v_values(args.v_values)
    except FileNotFoundError as exc:
        print(f"error: config file not found: {exc.filename}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.print_config:
        sys.stdout.write(cfg.to_json() + "\n")
        return EXIT_OK
    try:
        out = Path(cfg.run.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if args.preset == "fig3":
            written = preset_fig3(cfg, seeds, out, v_values)
        else:
            written = {"fig1": preset_fig1, "fig2": preset_fig2, "single": preset_single}[args.preset](cfg, seeds, out)
    except InvariantError as exc:
        print(f"error: invariant check failed: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    for path in written:
        log.info("wrote %s", path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
