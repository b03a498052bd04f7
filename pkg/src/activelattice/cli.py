"""Command-line front end: ``activelattice <command> [options]``.

Commands write CSV/JSON artifacts plus a manifest into an output directory
(``--output``, the config's ``run.output``, or ``$ACTIVELATTICE_OUTPUT/<command>``);
``--plot`` also renders PNG figures next to them. Exit codes: 0 success,
2 configuration error, 3 runtime error, with a JSON error object on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io
from .config import RunConfig, load_config, parse_value, validate
from .errors import ActiveLatticeError, ConfigError, FitWindowTooShort, ParameterMismatch
from .fields import CoarseField, coarse_grain, default_block_radius, l1_distance
from .hydro import HydroModel, HydroState, PDEConfig, Scheme, solve
from .kmc import CurrentLedger, ModelSpec, TrajectoryRecorder, simulate
from .lattice import RngStream, init_exclusion, init_zero_range_poisson

log = logging.getLogger("activelattice")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}", field=None)


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects section.key=value, got {item!r}", field=item)
        out[key.strip()] = parse_value(value.strip())
    if getattr(args, "seed", None) is not None:
        out["run.seed"] = args.seed
    if getattr(args, "ensemble", None) is not None:
        out["run.ensemble"] = args.ensemble
    return out


def _load(args, require=("model", "run")) -> RunConfig:
    return load_config(args.config, _overrides(args), require)


def _outdir(args, cfg: Optional[RunConfig], command: str) -> Path:
    configured = cfg.run["output"] if cfg is not None else ""
    path = io.resolve_output(configured, command, args.output)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _portable(cfg: RunConfig) -> dict:
    """Config as stored in manifests; the output location is not part of the run."""
    d = cfg.as_dict()
    d["run"]["output"] = ""
    if cfg.initial["preset"] == "file":
        d["initial"]["file"] = str((Path(cfg.source).parent / cfg.initial["file"]).resolve())
    return d


def _block_radius(cfg: RunConfig) -> int:
    N = cfg.model["N"]
    return cfg.run["ell"] or max(1, min(default_block_radius(N), N // 4))


def _model_spec(cfg: RunConfig) -> ModelSpec:
    m = cfg.model
    return ModelSpec(m["kind"], m["N"], m["D"], m["lambda"], m["gamma"], m["beta"], m["dimension"])


# ----------------------------------------------------------------------------
# simulate


def _simulate_member(job) -> dict:
    cfg_dict, source, index, directory = job
    cfg = validate(cfg_dict, source=source)
    spec = _model_spec(cfg)
    rng = RngStream(cfg.run["seed"]).spawn(cfg.run["ensemble"])[index]
    lattice = spec.lattice
    profile = cfg.profile(Path(source).parent if source else Path("."))
    if spec.kind.value == "flock":
        initial = init_zero_range_poisson(profile, lattice, rng)
    else:
        initial = init_exclusion(profile, lattice, rng)
    times = cfg.snapshot_times
    recorder = TrajectoryRecorder(times)
    ledger = CurrentLedger.for_lattice(lattice)
    final = simulate(initial, spec, cfg.run["T"], recorder=recorder, ledger=ledger, rng=rng)
    snaps = [initial] + recorder.snapshots
    snap_t = [0.0] + times
    ell = _block_radius(cfg)
    d = Path(directory)
    io.write_snapshots(d / "snapshots.csv", snaps, snap_t)
    io.write_ledger(d / "ledger.csv", ledger)
    io.write_coarse(d / "coarse.csv", [coarse_grain(s, ell, t) for s, t in zip(snaps, snap_t)], spec.N)
    summary = {
        "member": index,
        "seed": rng.seed,
        "continuity_residual": ledger.continuity_residual(initial, final),
        "accepted": ledger.accepted.tolist(),
    }
    io.write_json(d / "summary.json", summary)
    return summary


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _outdir(args, cfg, "simulate")
    n = cfg.run["ensemble"]
    portable = _portable(cfg)
    jobs = [(portable, cfg.source, i, str(out / f"run_{i:03d}")) for i in range(n)]
    summaries = _map(_simulate_member, jobs, args.workers)
    io.write_manifest(out, io.manifest(
        "simulate", portable,
        {"master": cfg.run["seed"], "members": [s["seed"] for s in summaries]},
        {"members": [f"run_{i:03d}" for i in range(n)], "ell": _block_radius(cfg)},
    ))
    if args.plot:
        from . import plotting

        fields = io.read_coarse(out / "run_000" / "coarse.csv")
        N = cfg.model["N"]
        u = np.arange(N) / N
        plotting.plot_profiles(out / "coarse_fields.png", [(f"t={f.t:g}", u, f.rho, f.m) for f in fields],
                               "coarse-grained fields, member 0")
    bad = [s for s in summaries if s["continuity_residual"] != 0]
    if bad:
        raise RuntimeError(f"ledger continuity violated in members {[s['member'] for s in bad]}")
    print(out)
    return EXIT_OK


def _map(fn, jobs, workers: int):
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


# ----------------------------------------------------------------------------
# hydro


def _hydro_setup(cfg: RunConfig, model_override: Optional[str]):
    m = cfg.model
    kind = model_override or m["kind"]
    if kind == "aep":
        raise ConfigError("the hydrodynamic solver covers mips, mips_peclet and flock", field="model.kind")
    model = HydroModel(kind)
    pcfg = PDEConfig(
        model, cfg.hydro_M, D=m["D"], lam=m["lambda"], gamma=m["gamma"], beta=m["beta"],
        Pe=m["lambda"], dimension=m["dimension"], scheme=Scheme(cfg.hydro["scheme"]),
        safety=cfg.hydro["safety"],
        check_bounds=model is not HydroModel.FLOCK,
    )
    grid = HydroState.uniform(pcfg.M, 0.0, dimension=pcfg.dimension)
    rp, rm = cfg.profile().evaluate(grid.coordinates())
    initial = HydroState.from_species(rp, rm)
    if model is HydroModel.FLOCK:
        pcfg = pcfg.with_dt_for(initial)
    return model, pcfg, initial


def cmd_hydro(args) -> int:
    cfg = _load(args)
    out = _outdir(args, cfg, "hydro")
    model, pcfg, initial = _hydro_setup(cfg, args.model)
    states = [initial.copy()] + solve(initial, pcfg, cfg.run["T"], cfg.snapshot_times)
    io.write_hydro(out / "hydro.csv", states, [f"model={model.value}", f"dt={pcfg.dt:.10g}"])
    io.write_manifest(out, io.manifest("hydro", _portable(cfg), {"master": cfg.run["seed"]},
                                       {"model": model.value, "M": pcfg.M, "dt": pcfg.dt}))
    if args.plot:
        from . import plotting

        plotting.plot_profiles(out / "hydro_fields.png",
                               [(f"t={s.t:g}", s.coordinates()[0] if s.dimension == 1 else np.arange(s.M) * s.du,
                                 s.rho, s.m) for s in states], f"{model.value} PDE")
    print(out)
    return EXIT_OK


# ----------------------------------------------------------------------------
# spde


def cmd_spde(args) -> int:
    from .spde import (
        FluctState, NoiseMode, SPDEConfig, evolve_fluct, solve_fluctuating, stationary_spatial_variance,
    )

    overrides = {}
    if args.noise_mode:
        overrides["spde.noise_mode"] = args.noise_mode
    if args.no_flip_noise:
        overrides["spde.flip_noise"] = False
    cfg = load_config(args.config, {**_overrides(args), **overrides})
    if cfg.model["kind"] != "mips" or cfg.model["dimension"] != 1:
        raise ConfigError("fluctuating hydrodynamics is implemented for the 1D mips model", field="model.kind")
    out = _outdir(args, cfg, "spde")
    mode = NoiseMode(cfg.spde["noise_mode"])
    meta = [f"noise_mode={mode.value}", f"flip_noise={str(cfg.spde['flip_noise']).lower()}"]
    _, pcfg, background = _hydro_setup(cfg, "mips")
    rng = RngStream(cfg.run["seed"])
    n = cfg.run["ensemble"]
    extra = {"noise_mode": mode.value, "flip_noise": cfg.spde["flip_noise"], "nonlinear": args.nonlinear}
    if args.nonlinear:
        runs = []
        for i, child in enumerate(rng.spawn(n)):
            state, counter = background.copy(), None
            snaps = [state.copy()]
            clamped = cells = 0
            t_prev = 0.0
            for t in cfg.snapshot_times:
                state, counter = solve_fluctuating(state, pcfg, cfg.model["N"], t - t_prev, child, mode,
                                                   cfg.spde["flip_noise"])
                clamped, cells = clamped + counter.clamped, cells + counter.cell_steps
                snaps.append(state.copy())
                t_prev = t
            io.write_hydro(out / f"member_{i:03d}.csv", snaps, meta)
            runs.append({"member": i, "clamped": clamped, "cell_steps": cells,
                         "unreliable": bool(cells and clamped / cells > 1e-3)})
        extra["members"] = runs
    else:
        m = cfg.model
        scfg = SPDEConfig(pcfg.M, m["D"], m["lambda"], m["gamma"], noise_mode=mode, safety=cfg.spde["safety"])
        state = FluctState.zeros(background, batch=(n,))
        flat = bool(np.ptp(background.rho) < 1e-12 and np.ptp(background.m) < 1e-12)
        bg_cfg = None if flat else pcfg
        pred = stationary_spatial_variance(scfg, float(background.rho[0]), float(background.m[0])) if flat else (math.nan, math.nan)
        rows, fields = [], []
        t_prev = 0.0
        for t in cfg.snapshot_times:
            state, _ = evolve_fluct(state, scfg, t - t_prev, rng, background_cfg=bg_cfg)
            t_prev = t
            var_R = float(np.mean(state.R**2) * scfg.du)
            var_M = float(np.mean(state.M**2) * scfg.du)
            rows.append((t, var_R, var_M, pred[0], pred[1]))
            fields.append((t, state.R[0].copy(), state.M[0].copy()))
        io.write_csv(out / "spde_variance.csv", ["t", "var_R", "var_M", "pred_var_R", "pred_var_M"], rows, meta)
        io.write_csv(
            out / "spde_fields.csv", ["t", "i0", "u0", "R", "M"],
            ((t, i, i * scfg.du, R[i], Mf[i]) for t, R, Mf in fields for i in range(scfg.M)), meta,
        )
        extra["dt"] = scfg.dt
    io.write_manifest(out, io.manifest("spde", _portable(cfg), {"master": cfg.run["seed"]}, extra))
    print(out)
    return EXIT_OK


# ----------------------------------------------------------------------------
# stability


def cmd_stability(args) -> int:
    from . import stability as st

    out = _outdir(args, None, "stability")
    extra = {"model": args.model, "sweep": args.sweep}
    if args.model == "mips":
        if args.sweep:
            rho = np.round(np.arange(0.51, 0.995, args.drho), 10)
            rows = []
            for r in rho:
                num = st.spinodal_mips(float(r))
                cf = st.spinodal_mips_closed_form(float(r))
                rows.append((r, num, cf, abs(num - cf) / cf))
            io.write_csv(out / "mips_spinodal.csv", ["rho0", "pe_spinodal", "pe_closed_form", "rel_diff"], rows)
            pes = np.linspace(0.5, args.pe_max, args.n_pe)
            grid = [{"rho0": float(r), "Pe": float(p)} for r in np.linspace(0.02, 0.98, args.n_rho) for p in pes]
            pts = st.phase_diagram_sweep("MIPS_PECLET", grid, binodal=args.binodal, workers=args.workers)
            _write_points(out / "mips_phase_grid.csv", pts)
            if args.plot:
                from . import plotting

                unstable = [(p.params["rho0"], p.params["Pe"]) for p in pts if p.verdict is st.Verdict.UNSTABLE]
                plotting.plot_mips_phase_diagram(out / "mips_phase_diagram.png", rho, [r[1] for r in rows],
                                                 [r[2] for r in rows], unstable)
        else:
            q, s = st.mips_growth(args.rho0, args.pe)
            extra["point"] = {"rho0": args.rho0, "Pe": args.pe, "q_star": q, "growth_rate": s,
                              "verdict": st.mips_verdict(args.rho0, args.pe).value}
    else:
        if args.sweep:
            temps = np.linspace(args.t_min, args.t_max, args.n_t)
            sp = st.spinodal_flock(1.0 / temps, args.D, args.lam)
            io.write_csv(out / "flock_spinodals.csv", ["T", "beta", "rho_gaseous", "rho_liquid"],
                         zip(temps, 1.0 / temps, sp.gaseous, sp.liquid))
            if args.binodal:
                grid = [{"rho0": float(r), "beta": float(b), "D": args.D, "lam": args.lam}
                        for b in 1.0 / temps for r in (1.1 * g for g in sp.gaseous) if np.isfinite(r)]
                _write_points(out / "flock_binodal_points.csv",
                              st.phase_diagram_sweep("FLOCK", grid, binodal=True, workers=args.workers))
            if args.plot:
                from . import plotting

                plotting.plot_flock_spinodals(out / "flock_spinodals.png", temps, sp.gaseous, sp.liquid)
        else:
            m0 = st.self_consistent_m(args.rho0, args.beta)
            q, s = st.flock_growth(args.rho0, m0, args.beta, args.D, args.lam)
            extra["point"] = {"rho0": args.rho0, "beta": args.beta, "m0": m0, "q_star": q, "growth_rate": s,
                              "verdict": st.flock_verdict(args.rho0, m0, args.beta, args.D, args.lam).value}
    io.write_manifest(out, io.manifest("stability", {"args": _arg_dict(args)}, {}, extra))
    if "point" in extra:
        print(json.dumps(io._plain(extra["point"]), sort_keys=True))
    print(out)
    return EXIT_OK


def _write_points(path: Path, pts):
    rows = [p.row() for p in pts]
    header = list(rows[0].keys())
    io.write_csv(path, header, ([str(r[k]) if isinstance(r[k], str) else r[k] for k in header] for r in rows))


def _arg_dict(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "output", "plot", "workers", "verbose")}


# ----------------------------------------------------------------------------
# self-diffusion and mixing


def _ds_job(job):
    from .nongradient import estimate_self_diffusion

    rho, dim, L, budget, ensemble, seed, index, n = job
    rng = RngStream(seed).spawn(n)[index]
    try:
        e = estimate_self_diffusion(rho, dim, L, budget, ensemble, rng)
        return {"rho": e.rho, "d_s": e.d_s, "stderr": e.stderr, "exponent": e.exponent, "flag": "",
                "times": e.times.tolist(), "msd": e.msd.tolist()}
    except FitWindowTooShort as exc:
        return {"rho": rho, "d_s": math.nan, "stderr": math.nan, "exponent": exc.exponent,
                "flag": "subdiffusive", "times": [], "msd": []}


def cmd_selfdiffusion(args) -> int:
    from .nongradient import segregation_relaxation_experiment

    out = _outdir(args, None, "selfdiffusion")
    rhos = [float(r) for r in args.rho.split(",")]
    n = len(rhos)
    jobs = [(r, args.dimension, args.L, args.budget, args.ensemble, args.seed, i, n) for i, r in enumerate(rhos)]
    res = _map(_ds_job, jobs, args.workers)
    io.write_csv(out / "ds_table.csv", ["rho", "d_s", "stderr", "L", "budget", "exponent", "flag"],
                 ((r["rho"], r["d_s"], r["stderr"], args.L, args.budget, r["exponent"], r["flag"]) for r in res),
                 [f"dimension={args.dimension}", f"ensemble={args.ensemble}"])
    io.write_csv(out / "msd.csv", ["rho", "t", "msd"],
                 ((r["rho"], t, m) for r in res for t, m in zip(r["times"], r["msd"])))
    extra = {}
    if args.relaxation:
        times = [float(t) for t in args.times.split(",")]
        cases = [(1, args.N, True), (1, args.N, False), (2, args.N2d, False)]
        reports = [
            segregation_relaxation_experiment(args.c, d, N, times, swap, child).as_dict()
            for (d, N, swap), child in zip(cases, RngStream(args.seed + 1).spawn(len(cases)))
        ]
        io.write_json(out / "relaxation.json", reports)
        extra["relaxation_cases"] = len(reports)
        if args.plot:
            from . import plotting

            plotting.plot_relaxation(out / "relaxation.png", reports)
    if args.plot:
        from . import plotting

        curves = [(f"rho={r['rho']:.3g}", np.array(r["times"]), np.array(r["msd"])) for r in res if r["times"]]
        if curves:
            plotting.plot_msd(out / "msd.png", curves, args.dimension)
    io.write_manifest(out, io.manifest("selfdiffusion", {"args": _arg_dict(args)}, {"master": args.seed}, extra))
    print(out)
    return EXIT_OK


# ----------------------------------------------------------------------------
# compare


_MATCH_KEYS = ("kind", "D", "lambda", "gamma", "beta", "dimension")


def compare_dirs(micro: Path, hydro: Path) -> list[dict]:
    """L1 distance between micro coarse fields and PDE fields at shared times.

    ``l1_rho``/``l1_m`` use the ensemble-averaged coarse field; the
    ``member_*`` columns average the per-member distances.
    """
    mm, hm = io.read_manifest(micro), io.read_manifest(hydro)
    if mm["command"] != "simulate" or hm["command"] != "hydro":
        raise ParameterMismatch("compare needs a simulate directory and a hydro directory")
    a, b = mm["config"], hm["config"]
    for key in _MATCH_KEYS:
        if key == "kind" and hm.get("model") == "mips_peclet":
            continue
        if a["model"][key] != b["model"][key]:
            raise ParameterMismatch(f"model.{key} differs: micro {a['model'][key]!r}, hydro {b['model'][key]!r}")
    if a["initial"] != b["initial"]:
        raise ParameterMismatch("initial profiles differ")
    states = {round(s.t, 12): s for s in io.read_hydro(hydro / "hydro.csv")}
    per_t: dict[float, list] = {}
    for member in mm["members"]:
        for cf in io.read_coarse(micro / member / "coarse.csv"):
            key = round(cf.t, 12)
            if key not in states:
                raise ParameterMismatch(f"hydro output has no snapshot at t={cf.t:g}")
            per_t.setdefault(key, []).append(cf)
    rows = []
    for t in sorted(per_t):
        fields = per_t[t]
        mean = CoarseField(np.mean([f.rho_plus for f in fields], axis=0),
                           np.mean([f.rho_minus for f in fields], axis=0), fields[0].ell, t)
        d_rho, d_m = l1_distance(mean, states[t])
        d = np.array([l1_distance(f, states[t]) for f in fields])
        se = d.std(axis=0, ddof=1) / math.sqrt(len(d)) if len(d) > 1 else np.full(2, math.nan)
        rows.append({"t": t, "l1_rho": d_rho, "l1_m": d_m,
                     "member_l1_rho": float(d[:, 0].mean()), "member_l1_m": float(d[:, 1].mean()),
                     "member_l1_rho_se": float(se[0]), "member_l1_m_se": float(se[1]), "members": len(d)})
    return rows


def cmd_compare(args) -> int:
    rows = compare_dirs(Path(args.micro), Path(args.hydro))
    out = _outdir(args, None, "compare")
    header = ["t", "l1_rho", "l1_m", "member_l1_rho", "member_l1_m", "member_l1_rho_se", "member_l1_m_se", "members"]
    io.write_csv(out / "compare.csv", header, ([r[k] for k in header] for r in rows))
    io.write_json(out / "compare.json", {"micro": str(args.micro), "hydro": str(args.hydro), "snapshots": rows})
    if args.plot:
        from . import plotting

        plotting.plot_compare(out / "compare.png", [r["t"] for r in rows], [r["l1_rho"] for r in rows],
                              [r["l1_m"] for r in rows])
    print(out)
    return EXIT_OK


# ----------------------------------------------------------------------------
# sweep


def _sweep_job(job):
    argv = job
    try:
        return main(argv, _nested=True)
    except SystemExit as exc:  # pragma: no cover
        return int(exc.code or 0)


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = _outdir(args, cfg, "sweep")
    values = [parse_value(v.strip()) for v in args.values.split(",")]
    jobs, names = [], []
    for v in values:
        name = f"{args.param}={v}"
        argv = [args.target, "--config", str(args.config), "--output", str(out / name), "--set", f"{args.param}={v}"]
        argv += [x for s in (args.set or []) for x in ("--set", s)]
        if args.seed is not None:
            argv += ["--seed", str(args.seed)]
        jobs.append(argv)
        names.append(name)
    codes = _map(_sweep_job, jobs, args.workers)
    io.write_csv(out / "sweep.csv", ["param", "value", "directory", "exit_code"],
                 ((args.param, str(v), n, c) for v, n, c in zip(values, names, codes)))
    io.write_manifest(out, io.manifest("sweep", _portable(cfg), {"master": cfg.run["seed"]},
                                       {"target": args.target, "param": args.param, "values": values}))
    print(out)
    return EXIT_OK if all(c == 0 for c in codes) else EXIT_RUNTIME


# ----------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="activelattice", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", type=Path, help="TOML run file")
            sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
        sp.add_argument("--output", help="output directory")
        sp.add_argument("--workers", type=int, default=1, help="parallel worker processes")
        sp.add_argument("--plot", action="store_true", help="also render PNG figures")
        sp.add_argument("-v", "--verbose", action="store_true")

    s = sub.add_parser("simulate", help="kinetic Monte Carlo ensemble")
    common(s)
    s.add_argument("--seed", type=int)
    s.add_argument("--ensemble", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("hydro", help="deterministic hydrodynamic PDE")
    common(s)
    s.add_argument("--seed", type=int)
    s.add_argument("--model", choices=[m.value for m in HydroModel], help="override model.kind")
    s.set_defaults(func=cmd_hydro)

    s = sub.add_parser("spde", help="fluctuating hydrodynamics (1D mips)")
    common(s)
    s.add_argument("--seed", type=int)
    s.add_argument("--ensemble", type=int)
    s.add_argument("--noise-mode", choices=["conservative", "additive"])
    s.add_argument("--no-flip-noise", action="store_true")
    s.add_argument("--nonlinear", action="store_true", help="finite-N nonlinear system instead of the linear one")
    s.set_defaults(func=cmd_spde)

    s = sub.add_parser("stability", help="linear stability, spinodals and phase-diagram layers")
    common(s, config=False)
    s.add_argument("--model", choices=["mips", "flock"], required=True)
    s.add_argument("--sweep", action="store_true")
    s.add_argument("--binodal", action="store_true", help="also relax PDE steady states (slow)")
    s.add_argument("--rho0", type=float, default=0.75)
    s.add_argument("--pe", type=float, default=6.0)
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--D", type=float, default=1.0)
    s.add_argument("--lam", type=float, default=1.0)
    s.add_argument("--drho", type=float, default=0.01)
    s.add_argument("--n-rho", type=int, default=49)
    s.add_argument("--n-pe", type=int, default=40)
    s.add_argument("--pe-max", type=float, default=20.0)
    s.add_argument("--t-min", type=float, default=0.2)
    s.add_argument("--t-max", type=float, default=1.5)
    s.add_argument("--n-t", type=int, default=14)
    s.set_defaults(func=cmd_stability)

    s = sub.add_parser("selfdiffusion", help="tagged-particle d_s table and mixing experiments")
    common(s, config=False)
    s.add_argument("--rho", default="0.2,0.5,0.8", help="comma-separated densities")
    s.add_argument("--dimension", type=int, choices=[1, 2], default=2)
    s.add_argument("--L", type=int, default=64)
    s.add_argument("--budget", type=float, default=100.0)
    s.add_argument("--ensemble", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--relaxation", action="store_true", help="run the segregated-types experiments")
    s.add_argument("--c", type=float, default=0.5)
    s.add_argument("--N", type=int, default=512, help="1D lattice size for the mixing runs")
    s.add_argument("--N2d", type=int, default=64, help="2D lattice size for the mixing runs")
    s.add_argument("--times", default="0.01,0.03,0.09")
    s.set_defaults(func=cmd_selfdiffusion)

    s = sub.add_parser("compare", help="micro vs PDE L1 distance")
    common(s, config=False)
    s.add_argument("--micro", required=True, help="simulate output directory")
    s.add_argument("--hydro", required=True, help="hydro output directory")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("sweep", help="run a command over values of one config field")
    common(s)
    s.add_argument("--target", choices=["simulate", "hydro", "spde"], required=True)
    s.add_argument("--param", required=True, help="dotted field, e.g. model.lambda")
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_sweep)
    return p


def _error(code: int, exc: BaseException) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, ConfigError):
        payload["field"] = exc.field
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def main(argv: Optional[Sequence[str]] = None, _nested: bool = False) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        return _error(EXIT_CONFIG, exc)
    if not _nested:
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        return _error(EXIT_CONFIG, exc)
    except (ActiveLatticeError, ValueError, RuntimeError, OSError, ArithmeticError) as exc:
        log.debug("runtime failure", exc_info=True)
        return _error(EXIT_RUNTIME, exc)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
