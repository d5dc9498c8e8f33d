"""Command-line pipeline: ground-state -> solve -> verify/expand -> evolve.

Exit codes: 0 success, 1 runtime error (including missing upstream
artifacts), 2 an asserted estimate failed or the contraction broke down.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, parse_speed
from .field import Field, GridError, make_grid, read_zkf, write_zkf
from .ground_state import GroundState, compute_Q, nls_residual, q_decay_check
from .solver import (
    ContractionError, SolitonProfile, assemble_profile, contraction_scan, rescale_profile, rotate_frame, solve_eta,
    stationary_residuals,
)

log = logging.getLogger("zsf")

SUBCOMMANDS = ("ground-state", "solve", "verify", "expand", "evolve", "all")
EXIT_OK, EXIT_ERROR, EXIT_FAILED = 0, 1, 2


class MissingArtifact(RuntimeError):
    pass


class VerificationFailed(RuntimeError):
    pass


# --- artifact helpers -------------------------------------------------------

def file_hash(paths) -> str:
    h = hashlib.sha256()
    for p in sorted(map(str, paths)):
        h.update(Path(p).name.encode())
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def _require(paths):
    missing = [str(p) for p in paths if not Path(p).exists()]
    if missing:
        raise MissingArtifact("missing upstream artifact(s): " + ", ".join(missing))


def report_header(cfg: RunConfig, inputs) -> dict:
    return {"config": cfg.as_dict(), "input_hash": file_hash(inputs) if inputs else
            hashlib.sha256(cfg.to_text().encode()).hexdigest()}


def load_ground_state(out: Path) -> GroundState:
    _require([out / "Q.zkf"])
    Q = read_zkf(out / "Q.zkf")
    q = Q.values
    from .field import sobolev_norm
    return GroundState(Q=Q, residual=sobolev_norm(nls_residual(q, Q.grid), 0, Q.grid),
                       peak=float(q[Q.grid.origin_index]), mass=sobolev_norm(Q, 0) ** 2)


PROFILE_FILES = ("U.zkf", "N.zkf", "V1.zkf", "V2.zkf")


def load_profile(directory: Path) -> SolitonProfile:
    _require([directory / f for f in PROFILE_FILES + ("profile.json",)])
    meta = json.loads((directory / "profile.json").read_text())
    U, N, V1, V2 = (read_zkf(directory / f) for f in PROFILE_FILES)
    c = tuple(meta["c"])
    omega = float(meta.get("omega", 1.0))
    res = stationary_residuals(U, N, (V1, V2), c, omega)
    return SolitonProfile(c=c, U=U, N=N, V=(V1, V2), residuals=res, omega=omega)


# --- subcommands ------------------------------------------------------------

def cmd_ground_state(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    gs = compute_Q(make_grid(cfg.n, cfg.box), tol=cfg.tol_ground_state)
    write_zkf(out / "Q.zkf", gs.Q)
    dec = q_decay_check(gs)
    write_json(out / "ground_state.json", {
        **report_header(cfg, []), "peak": gs.peak, "mass": gs.mass, "residual": gs.residual,
        "slope": dec.slope, "petviashvili_iterations": gs.petviashvili_iterations,
        "newton_iterations": gs.newton_iterations})
    log.info("ground state: peak %.6f mass %.6f residual %.2e", gs.peak, gs.mass, gs.residual)
    return EXIT_OK


def cmd_solve(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    gs = load_ground_state(out)
    Q = gs.Q
    if (Q.grid.n_points, Q.grid.box_length) != (cfg.n, cfg.box):
        raise RuntimeError(f"Q.zkf lives on n = {Q.grid.n_points}, box = {Q.grid.box_length:g}; "
                           f"config asks for n = {cfg.n}, box = {cfg.box:g}")
    speed = cfg.speed
    theta = math.atan2(cfg.c[1], cfg.c[0])
    header = report_header(cfg, [out / "Q.zkf"])
    try:
        eta, rep = solve_eta(speed, Q, tol=cfg.tol_fixed_point, max_iter=cfg.max_iter,
                             c_cap=cfg.c_cap, dealias=cfg.dealias, krylov_tol=cfg.tol_krylov,
                             newton=cfg.newton_accel)
    except ContractionError as exc:
        diag = {**header, "error": "contraction", "message": str(exc),
                "iterations": exc.report.as_dict() if exc.report is not None else None}
        write_json(out / "solve_failure.json", diag)
        log.error("contraction failure: %s", exc)
        return EXIT_FAILED
    prof = assemble_profile(eta, speed, Q, rep)
    defects = prof.symmetry_defects()
    if theta != 0.0:
        prof = rotate_frame(prof, theta)
    if cfg.omega != 1.0:
        prof = rescale_profile(prof, cfg.omega)
    write_zkf(out / "U.zkf", prof.U)
    write_zkf(out / "N.zkf", prof.N)
    write_zkf(out / "V1.zkf", prof.V[0])
    write_zkf(out / "V2.zkf", prof.V[1])
    write_json(out / "profile.json", {
        **header, "c": list(prof.c), "omega": prof.omega, "E_norm": eta.E_norm,
        "contraction_history": rep.contraction_factors, "update_norms": rep.update_norms,
        "iterations": rep.iterations, "converged": rep.converged,
        "residuals": list(prof.residuals), "symmetry_defects": defects,
        "box_length": prof.grid.box_length, "n_points": prof.grid.n_points})
    log.info("solved c = %s in %d iterations, E-norm %.4e", prof.c, rep.iterations, eta.E_norm)
    return EXIT_OK


def _verdict_report(cfg, inputs, verdicts, extra=None) -> dict:
    body = {v.key: v.as_dict() for v in verdicts}
    return {**report_header(cfg, inputs), "verdicts": body,
            "all_pass": all(v.passed for v in verdicts), **(extra or {})}


def _log_verdicts(verdicts) -> int:
    for v in verdicts:
        log.info("%-34s %s", v.key, "pass" if v.passed else "FAIL")
    failed = [v.key for v in verdicts if not v.passed]
    if failed:
        log.error("failed estimates: %s", ", ".join(failed))
        return EXIT_FAILED
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    from . import verification as vf

    out = Path(cfg.out)
    _require([out / "Q.zkf"] + [out / f for f in PROFILE_FILES + ("profile.json",)])
    gs = load_ground_state(out)
    prof = load_profile(out)
    if prof.omega != 1.0:
        raise RuntimeError("verify expects an omega = 1 profile; rescaled profiles are checked at solve time")
    Q = gs.Q
    speed = float(np.hypot(*prof.c))
    inputs = [out / "Q.zkf"] + [out / f for f in PROFILE_FILES]
    tasks = {
        "ground": lambda: vf.check_ground_state(gs),
        "mult": lambda: vf.check_multipliers(Q.grid, max(speed, 0.1), cfg.seed),
        "lin": lambda: vf.check_linearized(gs, cfg.seed),
        "fp": lambda: vf.check_fixed_point(prof, Q, cfg.tol_fixed_point, cfg.c_cap, cfg.seed, cfg.dealias),
        "profile": lambda: vf.check_profile(prof),
        "region": lambda: contraction_scan(Q, np.arange(1, int(round(cfg.c_cap * 10)) + 1) / 10,
                                           cfg.tol_fixed_point, cfg.max_iter, cfg.c_cap, cfg.dealias),
        "scaling": lambda: vf.check_scaling(vf.speed_sweep(Q, tol=cfg.tol_fixed_point, c_cap=cfg.c_cap,
                                                           dealias=cfg.dealias), Q),
    }
    if speed > 0:
        def decay():
            half, rep = solve_eta(speed / 2, Q, tol=cfg.tol_fixed_point, c_cap=cfg.c_cap, dealias=cfg.dealias)
            return vf.check_decay(prof, assemble_profile(half, speed / 2, Q, rep), cfg.pad)
        tasks["decay"] = decay
    res = vf.run_parallel(tasks)
    verdicts = []
    for key in ("ground", "mult", "lin", "fp", "profile"):
        verdicts += res[key]
    scaling_verdicts, scaling_rows = res["scaling"]
    verdicts += scaling_verdicts
    decay_rows = []
    if "decay" in res:
        dv, decay_rows = res["decay"]
        verdicts += dv
    write_csv(out / "decay.csv", decay_rows)
    report = _verdict_report(cfg, inputs, verdicts, {"scaling_table": scaling_rows,
                                                      "contraction_region": res["region"]})
    write_json(out / "verification.json", vf._jsonable(report))
    return _log_verdicts(verdicts)


def cmd_expand(cfg: RunConfig) -> int:
    from . import verification as vf

    out = Path(cfg.out)
    prof = load_profile(out)
    inputs = [out / f for f in PROFILE_FILES]
    verdicts, rep = vf.check_expansion(prof, cfg.K, cfg.pad)
    rows = []
    extra = {}
    if rep is not None:
        for r in rep.rows:
            rows.append({"ray": r["ray"], "radius": r["radius"], "value": r["N"],
                         "fit": r["partial_sums"][cfg.K], "error": r["abs_error"][cfg.K],
                         "error_K0": r["abs_error"][0]})
        extra = {"expansion": {k: v for k, v in rep.as_dict().items() if k != "rows"}}
    write_csv(out / "expansion.csv", rows)
    write_json(out / "expansion.json", vf._jsonable(_verdict_report(cfg, inputs, verdicts, extra)))
    return _log_verdicts(verdicts)


def cmd_evolve(cfg: RunConfig, profile_dir: str | None = None) -> int:
    from . import evolution as ev
    from .verification import Verdict, _jsonable

    out = Path(cfg.out)
    src = Path(profile_dir) if profile_dir else out
    prof = load_profile(src)
    if prof.omega != 1.0:
        raise RuntimeError("evolve expects an omega = 1 profile")
    out.mkdir(parents=True, exist_ok=True)
    snap_dir = out / "snapshots"
    on_snap = None
    if cfg.snapshots:
        snap_dir.mkdir(exist_ok=True)

        def on_snap(t, arrays):
            g = prof.grid
            tag = f"t{t:09.4f}"
            write_zkf(snap_dir / f"u_{tag}.zkf", Field(g, arrays[0]))
            write_zkf(snap_dir / f"n_{tag}.zkf", Field(g, arrays[1]))
    rep = ev.evolve_and_track(prof, cfg.T, cfg.dt, cfg.snap_every, on_snapshot=on_snap)
    write_csv(out / "trajectory.csv", rep.rows())
    speed = np.asarray(prof.c)
    vel = np.asarray(rep.velocity)
    vel_err = float(np.linalg.norm(vel - speed) / np.linalg.norm(speed)) if np.any(speed) else float(np.linalg.norm(vel))
    verdicts = [
        Verdict("unv.velocity", vel_err <= 0.02 if np.any(speed) else vel_err <= 1e-3, rep.velocity,
                "c +- 2%", "fitted centroid velocity"),
        Verdict("intro.mass_conservation", rep.mass_drift <= 1e-8, rep.mass_drift, "<= 1e-8", "relative mass drift"),
        Verdict("intro.energy_conservation", rep.energy_drift <= 1e-5, rep.energy_drift, "<= 1e-5",
                "relative energy drift"),
        Verdict("intro.momentum_conservation", rep.momentum_drift <= 1e-5, rep.momentum_drift, "<= 1e-5",
                "relative momentum drift"),
    ]
    inputs = [src / f for f in PROFILE_FILES]
    write_json(out / "evolution.json", _jsonable(_verdict_report(cfg, inputs, verdicts, {"summary": rep.summary()})))
    return _log_verdicts(verdicts)


def cmd_all(cfg: RunConfig) -> int:
    code = cmd_ground_state(cfg)
    code = max(code, cmd_solve(cfg))
    if code == EXIT_FAILED:
        return code
    for fn in (cmd_verify, cmd_expand, cmd_evolve):
        code = max(code, fn(cfg))
    return code


def run(subcommand: str, cfg: RunConfig, profile_dir: str | None = None) -> int:
    """Run one subcommand and map failures onto exit codes."""
    table = {"ground-state": cmd_ground_state, "solve": cmd_solve, "verify": cmd_verify,
             "expand": cmd_expand, "all": cmd_all}
    try:
        if subcommand == "evolve":
            return cmd_evolve(cfg, profile_dir)
        if subcommand not in table:
            raise ValueError(f"unknown subcommand {subcommand!r}")
        return table[subcommand](cfg)
    except MissingArtifact as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    except ContractionError as exc:
        log.error("contraction failure: %s", exc)
        return EXIT_FAILED
    except (ConfigError, GridError, ValueError, RuntimeError, OSError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_ERROR


# --- argument parsing -------------------------------------------------------

_FLAG_KEYS = {
    "n": ("--n", int), "box": ("--box", float), "c": ("--c", parse_speed), "omega": ("--omega", float),
    "tol_fixed_point": ("--tol", float), "tol_krylov": ("--krylov-tol", float),
    "tol_ground_state": ("--gs-tol", float), "max_iter": ("--max-iter", int), "c_cap": ("--c-cap", float),
    "out": ("--out", str), "seed": ("--seed", int), "pad": ("--pad", int), "K": ("--K", int),
    "T": ("--T", float), "dt": ("--dt", float), "snap_every": ("--snap-every", int),
}


class _Parser(argparse.ArgumentParser):
    """Usage errors exit 1; exit 2 is reserved for failed estimates."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="zsf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
        p.add_argument("--config", help="flat key = value config file")
        for key, (flag, typ) in _FLAG_KEYS.items():
            p.add_argument(flag, dest=key, type=typ, default=None)
        p.add_argument("--dealias", action="store_true", default=None)
        p.add_argument("--newton", dest="newton_accel", action="store_true", default=None)
        p.add_argument("--snapshots", action="store_true", default=None)
        p.add_argument("--profile", default=None, help="directory holding the profile (evolve)")
        p.add_argument("--save-config", default=None, help="write the resolved config here")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {k: getattr(args, k) for k in list(_FLAG_KEYS) + ["dealias", "newton_accel", "snapshots"]
                 if getattr(args, k, None) is not None}
    return cfg.replace(**overrides) if overrides else cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except (ConfigError, TypeError, ValueError) as exc:
        log.error("invalid configuration: %s", exc)
        return EXIT_ERROR
    if args.save_config:
        cfg.save(args.save_config)
    return run(args.command, cfg, args.profile)


if __name__ == "__main__":
    sys.exit(main())
