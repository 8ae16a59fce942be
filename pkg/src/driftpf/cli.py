"""Command-line front end.

    driftpf generate-truth --config c.yaml --seed 1 --out run/
    driftpf spinup         --config c.yaml --seed 1 --out run/
    driftpf assimilate     --config c.yaml --out run/ --checkpoint run/ --observations run/observations.csv
    driftpf forecast       --config c.yaml --out run/ --checkpoint run/ --observations run/observations.csv
    driftpf forecast-error --out run/ --trajectories run/trajectories.csv --observations run/observations.csv
    driftpf collapse       --config c.yaml --out run/ --checkpoint run/ --observations run/observations.csv
    driftpf rank-histogram --config c.yaml --seed 1 --out run/
    driftpf bench          --config c.yaml
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from . import ensemble as en
from . import experiments as ex
from . import model_error as me
from .config import Setup, dump_config, load_config
from . import iewpf
from .iewpf import FilterOperators
from .observations import DRIFTER, MOORING, ObservationRecord, drifter_lattice, generate_truth, read_observations
from .rng import ParticleStreams, stream
from .swe import init_double_jet, model_step


class UsageError(Exception):
    pass


def _setup(args) -> Setup:
    setup = load_config(args.config)
    if args.seed is not None:
        setup.raw["seed"] = int(args.seed)
    return setup


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(args, *names):
    for n in names:
        if getattr(args, n) is None:
            raise UsageError(f"{args.command}: --{n.replace('_', '-')} is required")


def _workers(args, setup: Setup) -> int:
    return int(args.workers if args.workers is not None else setup.experiment["workers"])


def _plan(setup: Setup, args) -> en.ExperimentPlan:
    over = {}
    if getattr(args, "observe", None):
        over["observe"] = args.observe
    return en.ExperimentPlan.from_setup(setup, **over)


def _load_ensemble(args) -> en.EnsembleState:
    ck = Path(args.checkpoint)
    if not (ck / "ensemble" / "meta.txt").exists() and not (ck / "meta.txt").exists():
        raise UsageError(f"{args.command}: no ensemble checkpoint in {ck}")
    return en.load_checkpoint(ck)


def _read_obs(args) -> list[ObservationRecord]:
    p = Path(args.observations)
    if not p.is_file():
        raise UsageError(f"{args.command}: observation file {p} not found")
    return read_observations(p)


# ----------------------------------------------------------------------------- subcommands


def cmd_generate_truth(args) -> int:
    setup = _setup(args)
    out = _out(args)
    generate_truth(setup.truth_config(), out_dir=out)
    (out / "config.yaml").write_text(dump_config(setup), encoding="utf-8")
    return 0


def cmd_spinup(args) -> int:
    setup = _setup(args)
    out = _out(args)
    plan = _plan(setup, args)
    ens = en.run_spinup(plan, setup, _workers(args, setup))
    en.save_checkpoint(ens, out, plan)
    return 0


def cmd_assimilate(args) -> int:
    _require(args, "observations", "checkpoint")
    setup = _setup(args)
    records = _read_obs(args)
    ens = _load_ensemble(args)
    out = _out(args)
    plan = _plan(setup, args)
    diag: list[str] = []
    ens = en.run_assimilation(ens, records, plan, setup, workers=_workers(args, setup), diagnostics=diag, stop_at=args.until)
    en.save_checkpoint(ens, out, plan)
    if diag:
        (out / "iewpf_diagnostics.csv").write_text(
            "cycle,particle,c,gamma,zeta,alpha,beta,w_target\n" + "".join(s + "\n" for s in diag), encoding="utf-8"
        )
    return 0


def cmd_forecast(args) -> int:
    _require(args, "observations", "checkpoint")
    setup = _setup(args)
    records = _read_obs(args)
    ens = _load_ensemble(args)
    out = _out(args)
    plan = _plan(setup, args)
    drifters = en.drifters_at(records, ens.t)
    if not drifters:
        raise UsageError(f"forecast: no drifter positions recorded at t={ens.t!r}")
    ens, traj = en.run_forecast(ens, drifters, plan, setup, _workers(args, setup))
    traj.write(out / "trajectories.csv")
    en.save_checkpoint(ens, out, plan)
    return 0


def cmd_forecast_error(args) -> int:
    _require(args, "observations", "trajectories")
    setup = _setup(args)
    records = _read_obs(args)
    out = _out(args)
    traj = en.Trajectories.read(args.trajectories)
    tx, ty = dg.truth_positions(records, traj.times, traj.drifter_ids)
    dg.forecast_error(traj, tx, ty, setup.grid.Lx, setup.grid.Ly).write(out / "error_series.csv")
    return 0


def cmd_collapse(args) -> int:
    _require(args, "observations", "checkpoint")
    setup = _setup(args)
    records = _read_obs(args)
    ens = _load_ensemble(args)
    out = _out(args)
    t = ens.t if args.time is None else float(args.time)
    kind = DRIFTER if args.platforms == "drifters" else MOORING
    obs = sorted((r for r in records if r.time == t and r.kind == kind), key=lambda r: r.id)
    sizes = [int(s) for s in args.sizes.split(",")]
    rows = []
    for r_scale in (float(s) for s in args.r_scales.split(",")):
        rng = stream(setup.seed, 0, "resample")
        rows += dg.collapse_experiment(ens.states, obs, sizes, args.trials, r_scale, rng, setup.phys, setup.grid,
                                       setup.obs_error)
    dg.write_collapse(out / "collapse.csv", rows)
    return 0


def cmd_rank_histogram(args) -> int:
    setup = _setup(args)
    out = _out(args)
    cfg = ex.RankConfig(
        n_e=args.ensemble_size, n_experiments=args.experiments, n_cycles=args.cycles,
        pool_size=args.pool_size, spinup=args.spinup,
    )
    g = setup.grid
    cfg.cells = [(g.nx // 5, k) for k in range(0, g.ny, max(1, g.ny // 6))][:6]
    res = ex.rank_experiment(setup, cfg, setup.seed, _workers(args, setup))
    dg.write_rank_hist(out / "rank_hist.csv", res.counts)
    return 0


def bench(setup: Setup, n_particles: int = 4, n_steps: int = 5, seed: int = 0) -> dict[str, float]:
    """Wall time per stage, summed over particles, for stochastic steps plus one filter cycle."""
    grid, phys = setup.grid, setup.phys
    base = init_double_jet(grid, phys, setup.jet)
    streams = [ParticleStreams(seed, i) for i in range(n_particles)]
    states = [base.copy() for _ in range(n_particles)]
    times = {"model_step": 0.0, "model_error": 0.0, "filter_pull": 0.0, "filter_sampling": 0.0,
             "filter_barrier": 0.0, "filter_posterior": 0.0}
    # warm-up compiles every kernel
    me.perturb_state(model_step(base, phys, setup.scheme, grid), streams[0].model_error, setup.error, phys)
    for i in range(n_particles):
        s = states[i]
        for _ in range(n_steps):
            t0 = time.perf_counter()
            s = model_step(s, phys, setup.scheme, grid)
            t1 = time.perf_counter()
            s = me.perturb_state(s, streams[i].model_error, setup.error, phys)
            t2 = time.perf_counter()
            times["model_step"] += t1 - t0
            times["model_error"] += t2 - t1
        states[i] = s
    ops = FilterOperators.build(grid, phys, setup.error, setup.obs_error)
    o = setup.raw["observations"]
    rng = stream(seed, 0, "observation")
    obs = [ObservationRecord(states[0].t, DRIFTER, d.id, d.x, d.y, *rng.standard_normal(2))
           for d in drifter_lattice(o["drifters"][0], o["drifters"][1], grid)]
    t0 = time.perf_counter()
    pulled = [iewpf.optimal_proposal_pull(s, obs, ops) for s in states]
    t1 = time.perf_counter()
    pairs = [iewpf.sample_perp_pair(st.filter, setup.error.coarse, grid.n_state) for st in streams]
    t2 = time.perf_counter()
    c = [p[1] + np.log(n_particles) for p in pulled]
    sync = iewpf.sync_target_beta(c, [p.zeta for p in pairs])
    t3 = time.perf_counter()
    for (a, _), pair, ci in zip(pulled, pairs, c):
        prep = iewpf.PreparedParticle(a, pair, iewpf.ParticleDiagnostics(ci, ci - np.log(n_particles), pair.gamma, pair.zeta))
        iewpf.stage_finish(prep, obs, ops, sync)
    t4 = time.perf_counter()
    times["filter_pull"] = t1 - t0
    times["filter_sampling"] = t2 - t1
    times["filter_barrier"] = t3 - t2
    times["filter_posterior"] = t4 - t3
    return times


def throughput(setup: Setup, workers: int, n_particles: int = 8, n_steps: int = 3, seed: int = 0) -> float:
    """Particle model steps (with model error) per second using `workers` threads."""
    base = init_double_jet(setup.grid, setup.phys, setup.jet)
    streams = [ParticleStreams(seed, i) for i in range(n_particles)]
    en.advance_particle(base, streams[0].model_error, 1, setup)
    t0 = time.perf_counter()
    with en.worker_pool(workers) as pool:
        en._map(lambda i: en.advance_particle(base.copy(), streams[i].model_error, n_steps, setup), n_particles, pool)
    return n_particles * n_steps / (time.perf_counter() - t0)


def cmd_bench(args) -> int:
    setup = _setup(args)
    times = bench(setup, args.particles, args.steps, setup.seed)
    total = sum(times.values())
    step = times["model_step"] + times["model_error"]
    print(f"grid {setup.grid.nx}x{setup.grid.ny}, {args.particles} particles x {args.steps} steps + one filter cycle")
    print(f"{'stage':<18}{'seconds':>10}{'share':>9}")
    for k, v in times.items():
        print(f"{k:<18}{v:>10.4f}{100 * v / total:>8.1f}%")
    print(f"{'total':<18}{total:>10.4f}{100.0:>8.1f}%")
    print(f"model-error share of per-step compute: {100 * times['model_error'] / step:.1f}%")
    if args.scaling:
        ws = [int(w) for w in args.scaling.split(",")]
        base = None
        for w in ws:
            tp = throughput(setup, w)
            base = base or tp
            print(f"workers {w}: {tp:.2f} particle-steps/s (x{tp / base:.2f})")
    return 0


# ----------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="driftpf", description=__doc__.splitlines()[0] if __doc__ else None)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file (defaults built in)")
    common.add_argument("--seed", type=int, help="master seed (overrides the configuration)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--workers", type=int, help="worker threads (overrides the configuration)")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("generate-truth", parents=[common], help="run the truth and synthesize observations")
    s = sub.add_parser("spinup", parents=[common], help="spin up the ensemble and checkpoint it")
    s.add_argument("--observe")
    s = sub.add_parser("assimilate", parents=[common], help="IEWPF cycles up to the end of the DA window")
    s.add_argument("--checkpoint")
    s.add_argument("--observations")
    s.add_argument("--observe", help="observation subset selector")
    s.add_argument("--until", type=float, help="stop early at this time (s)")
    s = sub.add_parser("forecast", parents=[common], help="stochastic drift forecast from a checkpoint")
    s.add_argument("--checkpoint")
    s.add_argument("--observations")
    s = sub.add_parser("forecast-error", parents=[common], help="E(t) and RMSE(t) of a trajectory file")
    s.add_argument("--trajectories")
    s.add_argument("--observations")
    s = sub.add_parser("collapse", parents=[common], help="standard-PF weight collapse on a checkpoint")
    s.add_argument("--checkpoint")
    s.add_argument("--observations")
    s.add_argument("--time", type=float)
    s.add_argument("--sizes", default="0,1,2,4,8")
    s.add_argument("--trials", type=int, default=50)
    s.add_argument("--r-scales", default="1,10")
    s.add_argument("--platforms", choices=("drifters", "moorings"), default="drifters")
    s = sub.add_parser("rank-histogram", parents=[common], help="rank histograms from independent DA experiments")
    s.add_argument("--experiments", type=int, default=200)
    s.add_argument("--ensemble-size", type=int, default=20)
    s.add_argument("--cycles", type=int, default=6)
    s.add_argument("--pool-size", type=int, default=60)
    s.add_argument("--spinup", type=float, default=86400.0)
    s = sub.add_parser("bench", parents=[common], help="per-stage wall time split")
    s.add_argument("--particles", type=int, default=4)
    s.add_argument("--steps", type=int, default=5)
    s.add_argument("--scaling", help="comma-separated worker counts for a throughput scan")
    return p


COMMANDS = {
    "generate-truth": cmd_generate_truth,
    "spinup": cmd_spinup,
    "assimilate": cmd_assimilate,
    "forecast": cmd_forecast,
    "forecast-error": cmd_forecast_error,
    "collapse": cmd_collapse,
    "rank-histogram": cmd_rank_histogram,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"driftpf: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, LookupError, TypeError) as exc:
        print(f"driftpf: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
