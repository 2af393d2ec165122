"""Command-line entry point: ``slfvlab <command> [--config PATH] [--seed U64] ...``.

Exit codes: 0 when every check passes (or the command has no checks),
1 on a statistical failure, 2 on a configuration error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, bridges
from .ancestry import MarkedPartition, build_parental_skeleton, run_annealed, run_quenched, trace_ancestral_line
from .config import COMMANDS, ConfigError, RunConfig
from .environment import Environment, extend_with_parents, generate_environment, read_environment, write_environment
from .harness import (DualitySetup, TestFunction, bridge_identity_check, cdi_experiment, convergence_diagnostic,
                      duality_check, jump_rate_check, lookdown_vs_coalescent_check, pair_merge_check,
                      poisson_conservation_check, theta_diagnostic, variation_bound_check)
from .harness.report import ExperimentReport
from .lookdown import BoxFunction, evolve, init_state
from .seeding import SeedKey

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat TOML run configuration")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit), overrides the config")
    common.add_argument("--out", type=Path, help="output directory, overrides the config")
    common.add_argument("--workers", type=int, help="worker processes for replicates")
    common.add_argument("--replicates", type=int, help="replicate count, overrides the config")
    p = argparse.ArgumentParser(prog="slfvlab", description="Spatial Lambda-Fleming-Viot simulation and checks")
    p.add_argument("--version", action="version", version=f"slfvlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for c in COMMANDS:
        sub.add_parser(c, parents=[common])
    return p


def load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig.from_mapping({})
    if cfg["command"] is not None and cfg["command"] != args.command and args.command != "validate-config":
        raise ConfigError(f"config is for {cfg['command']!r}, not {args.command!r}", "command",
                          cfg.lines.get("command"))
    return cfg.with_overrides(seed=args.seed, out=None if args.out is None else str(args.out),
                              workers=args.workers, replicates=args.replicates)


def _environment(cfg: RunConfig, key: SeedKey) -> Environment:
    path = cfg["environment_file"]
    if path is not None:
        p = Path(path)
        if not p.is_absolute() and cfg.source is not None:
            p = Path(cfg.source).parent / p
        try:
            return read_environment(p)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot load environment: {exc}", "environment_file",
                              cfg.lines.get("environment_file")) from None
    return generate_environment(cfg.model(), cfg.window(), cfg.domain(), key.child("environment"))


def _marked(env: Environment, key: SeedKey) -> Environment:
    return env if env.marked else extend_with_parents(env, key.child("marks"))


def _center(cfg: RunConfig) -> list:
    return (cfg.domain().L / 2.0).tolist()


def _point(cfg: RunConfig) -> list:
    return [float(c) for c in cfg["x"]] if cfg["x"] is not None else _center(cfg)


def _write_report(report: ExperimentReport, out: Path) -> None:
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    # wall time is printed, and kept in timing.json, but not written here
    (out / "report.txt").write_text(report.text(runtime=False), encoding="utf-8")
    (out / "raw.csv").write_text(report.to_csv(), encoding="utf-8")


def _write_run(out: Path, info: dict) -> None:
    (out / "run.json").write_text(json.dumps(info, sort_keys=True, indent=2) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# plain runs (artifacts only)


def cmd_gen_env(cfg, key, out):
    env = _environment(cfg, key)
    write_environment(env, out / "environment.txt")
    _write_run(out, {"command": "gen-env", "events": len(env), "environment_sha256": env.digest()})


def cmd_forward(cfg, key, out):
    env = _environment(cfg, key)
    t0, t1 = env.window
    t1 = min(cfg.t_sample(), t1)
    state = init_state(env.domain, cfg["n_per_area"], cfg.kernel(), key.child("init"), time=t0)
    run = evolve(state, env, t0, t1, cfg.mutation(), key.child("evolve"))
    (out / "state.csv").write_text(state.to_csv(), encoding="utf-8")
    (out / "events.jsonl").write_text(run.to_jsonl(), encoding="utf-8")
    _write_run(out, {"command": "forward", "environment_sha256": env.digest(), "particles": len(state),
                     "events": len(run.outcomes), "t_end": t1, "config": cfg.to_dict(execution=False)})


def cmd_backward(cfg, key, out):
    pts = np.array(cfg.point_list([_center(cfg)]), dtype=np.float64)
    start = MarkedPartition.singletons(pts)
    if cfg["backward_mode"] == "annealed":
        traj = run_annealed(start, cfg.model(), cfg.domain(), cfg.horizon(), key.child("coalescent"))
        digest = None
    else:
        env = _environment(cfg, key)
        traj = run_quenched(start, env, cfg.t_sample(), cfg.horizon(), key.child("coalescent"))
        digest = env.digest()
    (out / "trajectory.jsonl").write_text(traj.to_jsonl(), encoding="utf-8")
    _write_run(out, {"command": "backward", "mode": cfg["backward_mode"], "environment_sha256": digest,
                     "final_blocks": traj.final.N, "records": len(traj.records), "config": cfg.to_dict(execution=False)})


def cmd_skeleton(cfg, key, out):
    env = _marked(_environment(cfg, key), key)
    sk = build_parental_skeleton(env, key.child("skeleton"))
    lines = ["event,parent"] + [f"{i},{int(p)}" for i, p in enumerate(sk.parent)]
    (out / "skeleton.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    path = trace_ancestral_line(np.array(_point(cfg)), cfg.t_sample(), env, sk, key.child("line"))
    rows = ["h,event," + ",".join(f"x{a}" for a in range(env.domain.dim))]
    for h, e, loc in zip(path.jump_h, path.events, path.locations):
        rows.append(",".join([repr(float(h)), str(int(e))] + [repr(float(c)) for c in loc]))
    (out / "line.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    _write_run(out, {"command": "skeleton", "environment_sha256": env.digest(), "events": len(env),
                     "roots": int(sk.roots.size), "line_jumps": int(len(path.events))})


# --------------------------------------------------------------------------
# experiments (report + exit status)


def cmd_bridge(cfg, key, out):
    env = _marked(_environment(cfg, key), key)
    x = _point(cfg)
    b = bridges.build(env, np.array(x), env.t_begin, env.t_end)
    (out / "bridge.json").write_text(b.to_json() + "\n", encoding="utf-8")
    return bridge_identity_check(env, x, key.child("bridge"), cfg["grid_points"], cfg["draws"], cfg["min_events"],
                                 cfg["z_band_se"])


def cmd_duality(cfg, key, out):
    kern = cfg.kernel()
    pts = cfg.point_list()
    g = cfg["g"] if cfg["g"] is not None else [[1.0] + [0.0] * (kern.q - 1)] * len(pts)
    t = cfg.t_sample() - cfg.window()[0]
    setup = DualitySetup(cfg.domain(), cfg.model(), kern, pts, g, t, cfg["n_per_area"], cfg["epsilon_length"],
                         cfg.mutation())
    return duality_check(setup, cfg["environments"], cfg["replicates"], key.child("duality"), cfg["workers"],
                         cfg["duality_mode"], cfg["z_band_se"])


def cmd_cdi(cfg, key, out):
    c_values = [float(c) for c in cfg["c_values_per_area"]]
    return cdi_experiment(cfg.model(), cfg.domain(), cfg.t_sample() - cfg.window()[0], c_values, cfg["replicates"],
                          key.child("cdi"), cfg["workers"], cfg["c_main_per_area"], cfg["main_replicates"],
                          cfg["z_band_se"])


def _test_function(cfg) -> TestFunction:
    dom = cfg.domain()
    center = cfg["box_center"] if cfg["box_center"] is not None else _center(cfg)
    half = cfg["box_half_widths"] if cfg["box_half_widths"] is not None else (dom.L / 5.0).tolist()
    q = cfg.kernel().q
    g = cfg["g"][0] if cfg["g"] is not None else [1.0] + [0.0] * (q - 1)
    return TestFunction(BoxFunction(tuple(map(float, center)), tuple(map(float, half)), cfg["box_shape"]), g)


def cmd_variation(cfg, key, out):
    env = _environment(cfg, key)
    return variation_bound_check(env, _test_function(cfg), cfg["n_per_area"], min(cfg.t_sample(), env.t_end),
                                 cfg["replicates"], key.child("variation"), cfg.kernel(), cfg.mutation(),
                                 cfg["workers"])


def cmd_lookdown_vs_coalescent(cfg, key, out):
    env = _environment(cfg, key)
    pts = cfg.point_list()
    return lookdown_vs_coalescent_check(env, pts, cfg.t_sample(), cfg.horizon(), cfg["n_per_area"],
                                        cfg["replicates"], key.child("genealogy"), cfg["workers"],
                                        cfg["significance_level"])


def cmd_jump_rate(cfg, key, out):
    return jump_rate_check(cfg.model(), cfg.domain(), cfg["replicates"], key.child("jump-rate"), _point(cfg),
                           cfg["workers"], cfg["significance_level"], cfg["z_band_se"])


def cmd_pair_merge(cfg, key, out):
    env = _environment(cfg, key)
    return pair_merge_check(env, cfg["replicates"], key.child("pair-merge"), _point(cfg), cfg["workers"],
                            cfg["z_band_se"])


def cmd_poisson(cfg, key, out):
    env = _environment(cfg, key)
    return poisson_conservation_check(env, cfg["n_per_area"], cfg["n_events"], key.child("poisson"),
                                      cfg["cells_per_axis"], alpha=cfg["significance_level"])


def cmd_convergence(cfg, key, out):
    env = _environment(cfg, key)
    return convergence_diagnostic(env, cfg.kernel(), cfg["n_values_per_area"], min(cfg.t_sample(), env.t_end),
                                  cfg["replicates"], key.child("convergence"), cfg["basis_terms"], cfg["workers"])


def cmd_theta(cfg, key, out):
    env = _environment(cfg, key)
    f = _test_function(cfg)
    return theta_diagnostic(env, f.F.lo, f.F.hi, min(cfg.t_sample(), env.t_end), cfg["samples"], key.child("theta"))


HANDLERS = {
    "gen-env": cmd_gen_env, "forward": cmd_forward, "backward": cmd_backward, "skeleton": cmd_skeleton,
    "bridge": cmd_bridge, "duality": cmd_duality, "cdi": cmd_cdi, "variation": cmd_variation,
    "lookdown-vs-coalescent": cmd_lookdown_vs_coalescent, "jump-rate": cmd_jump_rate,
    "pair-merge": cmd_pair_merge, "poisson": cmd_poisson, "convergence": cmd_convergence, "theta": cmd_theta,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_CONFIG if exc.code else EXIT_PASS
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print(f"slfvlab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate-config":
        print(f"{args.config or '<defaults>'}: ok")
        return EXIT_PASS

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    key = SeedKey(cfg["seed"])
    t0 = time.perf_counter()
    try:
        report = HANDLERS[args.command](cfg, key, out)
    except ConfigError as exc:
        print(f"slfvlab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # a parameter combination rejected by a library precondition
        print(f"slfvlab: invalid parameters: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    elapsed = time.perf_counter() - t0
    # wall time lives in its own file so the reports stay byte-reproducible
    (out / "timing.json").write_text(json.dumps({"command": args.command, "seconds": elapsed}) + "\n",
                                     encoding="utf-8")
    if report is None:
        print(f"{args.command}: wrote {out}")
        return EXIT_PASS
    _write_report(report, out)
    print(report.text(), end="")
    return EXIT_PASS if report.passed else EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
