"""Command line entry point: ``asconvex <subcommand> --config <path> --out <dir>``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .algebra import calibrate_ball, choose_frame, linear_map_apply, linear_map_invert, sample_ball
from .calculus_ops import estimate_probe, random_field
from .config import Config, load_config
from .diagnostics import (
    BoundReport,
    LevelScales,
    asm_residual,
    check_inductive_bounds,
    export_report,
    hamiltonian,
    smooth_initial_scalar,
    solve_active_scalar,
)
from .driver import ParamSchedule, base_case, build_context, run_stage, with_admissible_M
from .errors import AsconvexError, ConfigurationError
from .multiplier import (
    apply_anti_divergence,
    apply_operator,
    build_anti_divergence,
    classify,
    make_multiplier,
    validate_symbol,
)
from .nash import microlocal_tensor
from .newton import NewtonRun
from .spectral_core import Annuli, SpectralField, div, make_grid, save_field

log = logging.getLogger("asconvex")

EXIT_PASS, EXIT_GATE, EXIT_CONFIG = 0, 1, 2


# --- reusable checks ----------------------------------------------------------------------

def operator_exactness(spec, n: int = 32, modes: int = 20, samples: int = 1000, seed: int = 0) -> BoundReport:
    """Single-mode actions of T, T0, T1 against the symbols, plus symbol reconstructions."""
    rep = BoundReport()
    grid = make_grid(n)
    rng = np.random.default_rng(seed)
    x1, x2 = grid.x
    worst = {"T": 0.0, "T0": 0.0, "T1": 0.0}
    for _ in range(modes):
        k = rng.integers(-grid.K, grid.K + 1, size=2)
        if not k.any():
            k[0] = 1
        phase = k[0] * x1 + k[1] * x2
        f = SpectralField.from_physical(grid, np.cos(phase))
        e = np.exp(1j * phase)
        m = spec.m(k.astype(float))
        exact = {
            "T": np.real(m[:, None, None] * e),
            "T0": np.real(spec.mbar(k.astype(float)) * e),
            "T1": np.real(spec.mtilde(k.astype(float)) * e),
        }
        for op in worst:
            got = apply_operator(spec, op, f).physical()
            scale = max(float(np.max(np.abs(exact[op]))), 1e-300)
            worst[op] = max(worst[op], float(np.max(np.abs(got - exact[op]))) / scale)
    for op, v in worst.items():
        rep.add("multiplier", f"single-mode-{op}", v, 1e-12)
    val = validate_symbol(spec, samples, seed)
    rep.add("multiplier", "reconstruct-m", val.factorization or 0.0, 1e-10)
    xi = val.samples
    mt = spec.mtilde(xi)
    recon = np.sum(xi**2, axis=-1) * spec.mbar(xi)
    rep.add("multiplier", "reconstruct-mtilde", float(np.max(np.abs(mt - recon) / np.maximum(np.abs(mt), 1e-300))), 1e-10)
    return rep


def antidivergence_check(spec, n: int = 64, fields: int = 100, seed: int = 0) -> BoundReport:
    rep = BoundReport()
    cl = classify(spec)
    op = build_anti_divergence(cl)
    grid = make_grid(n)
    rng = np.random.default_rng(seed)
    worst, pair = 0.0, 0.0
    for _ in range(fields):
        u = random_field(grid, "vector", rng, grid.K, rng.uniform(1.0, 3.0))
        R = apply_anti_divergence(op, u)
        err = SpectralField(grid, div(grid, R.coeffs)) - u
        worst = max(worst, err.sup_norm() / u.sup_norm())
        if op.case == "TraceFree":
            Rp = R.physical()
            scale = float(np.max(np.abs(Rp)))
            pair = max(pair, float(np.max(np.abs(op.normal_pairing(Rp)))) / scale)
    rep.add("multiplier", "antidiv-roundtrip", worst, 1e-10)
    rep.add("multiplier", "antidiv-normal-pairing", pair, 1e-10)
    return rep


def algebra_check(spec, draws: int = 10_000, seed: int = 0) -> BoundReport:
    rep = BoundReport()
    frame = choose_frame(spec, classify(spec))
    p0 = np.broadcast_to(frame.xi0, (1,) + frame.xi0.shape)
    x = linear_map_invert(frame, p0, frame.D[None])[0]
    rep.add("algebra", "inverse-of-D", float(np.max(np.abs(x - 2.0))), 1e-10)
    ball = calibrate_ball(frame, seed=seed)
    rng = np.random.default_rng(seed + 7)
    p, R = sample_ball(frame, ball.c1, ball.c2, draws, rng)
    xs = linear_map_invert(frame, p, R)
    back = linear_map_apply(frame, p, xs)
    rep.add("algebra", "roundtrip", float(np.max(np.abs(back - R))), 1e-10)
    violations = int(np.sum((xs <= 1) | (xs >= 4)))
    rep.add("algebra", "ball-violations", float(violations), 0.0)
    return rep


def microlocal_rows(spec, lams=(16, 32), amplitude: float = 2.0, modulation: float = 0.5):
    """(lam, band, ratio, identity residual) for the identity flow and halved amplitude bands."""
    rows = []
    for lam in lams:
        K = int(np.floor(Annuli().radii(1)[1] * lam)) + 1  # the band must fit below K + 1
        n = 3 * K + (3 * K) % 2
        grid = make_grid(max(n, 48))
        x1, x2 = grid.x
        for band in (lam // 8, lam // 16):
            a = amplitude + modulation * np.cos(band * x2)
            r = microlocal_tensor(grid, spec, a, None, None, (1, 0), lam)
            rows.append((lam, band, r.ratio, r.identity_residual))
    return rows


# --- subcommands -------------------------------------------------------------------------

def _spec(cfg: Config):
    return make_multiplier(cfg.family, cfg.multiplier_params)


def _schedule(cfg: Config, spec) -> ParamSchedule:
    return ParamSchedule(delta=spec.delta, **cfg.schedule)


def _finish(rep: BoundReport, out: Path, name: str) -> int:
    export_report(rep.records, out / name)
    for r in rep.records:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.module} {r.label} value={r.value:.3e} bound={r.constant * r.bound:.3e}")
    return EXIT_PASS if rep.passed else EXIT_GATE


def cmd_classify(cfg: Config, out: Path) -> int:
    spec = _spec(cfg)
    cl = classify(spec)
    lines = {
        "family": spec.family,
        "kind": cl.kind,
        "c": "none" if cl.c is None else ",".join(f"{v:.12g}" for v in cl.c),
        "directions": ";".join(f"{d[0]},{d[1]}" for d in cl.directions),
        "determinant": f"{cl.determinant:.12g}",
        "reason": cl.reason or "none",
    }
    text = "".join(f"{k}: {v}\n" for k, v in lines.items())
    (out / "classify.txt").write_text(text, encoding="ascii")
    print(text, end="")
    return EXIT_PASS


def cmd_verify(cfg: Config, out: Path) -> int:
    spec = _spec(cfg)
    rep = operator_exactness(spec)
    rep.extend(antidivergence_check(spec))
    rep.extend(algebra_check(spec))
    return _finish(rep, out, "verify.csv")


def cmd_base_case(cfg: Config, out: Path) -> int:
    spec = _spec(cfg)
    sch = _schedule(cfg, spec)
    grid = make_grid(cfg.n, cfg.dealias)
    bc = base_case(sch, spec, grid)
    sch = with_admissible_M(sch, build_context(bc.state(), sch.stage(0)))
    rep = BoundReport()
    eps = 1e-3
    for t in (0.0, 1.3, 1.5, -1.6):
        sl = [bc.velocity(t + o * eps) for o in (-2, -1, 0, 1, 2)]
        rep.add("diagnostics", f"asm-residual[t={t}]", asm_residual(grid, spec, sl, bc.pressure(t), bc.stress(t), eps, True), 1e-6)
        h = hamiltonian(bc.theta(t), spec)
        ref = bc.hamiltonian_closed_form(t)
        rep.add("diagnostics", f"hamiltonian-closed-form[t={t}]", abs(h - ref) / max(ref, 1e-300), 1e-10)
    scales = LevelScales(sch.lam(0), sch.lam(1), sch.delta_q(0), sch.delta_q(1), spec.delta, sch.alpha, sch.M)
    ts = np.linspace(-1.95, 1.95, 79)
    rep.extend(check_inductive_bounds(grid, spec, bc.velocity, bc.stress, ts, scales, cfg.constants,
                                      support=[(-1.75, -1.25), (1.25, 1.75)]))
    save_field(out / "v0_t0.npz", SpectralField(grid, bc.velocity(0.0)))
    return _finish(rep, out, "base_case.csv")


def cmd_newton(cfg: Config, out: Path) -> int:
    spec = _spec(cfg)
    sch = _schedule(cfg, spec)
    grid = make_grid(cfg.n, cfg.dealias)
    bc = base_case(sch, spec, grid)
    params = sch.stage(0)
    ctx = build_context(bc.state(), params)
    sch.check_resolution(grid, ctx.frame)
    result = NewtonRun(ctx, log=log.info).run()
    path = out / "newton.csv"
    with path.open("w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("n", "sup_R", "sup_w", "windows", "support"))
        for rpt in result.reports:
            wsup = result.w_sup[rpt.n - 1] if rpt.n >= 1 else 0.0
            supp = ";".join(f"{a:.6f}:{b:.6f}" for a, b in rpt.support)
            w.writerow((rpt.n, f"{rpt.sup_stress:.10e}", f"{wsup:.10e}", len(rpt.Z), supp))
    print(path.read_text(encoding="ascii"), end="")
    return EXIT_PASS


def cmd_stage(cfg: Config, out: Path) -> int:
    spec = _spec(cfg)
    sch = _schedule(cfg, spec)
    grid = make_grid(cfg.n, cfg.dealias)
    bc = base_case(sch, spec, grid)
    t0 = time.time()
    outcome = run_stage(
        bc.state(), sch, cfg.check_centers, cfg.tolerances["newton"], cfg.tolerances["nash"],
        log=lambda m: log.info("%7.1fs %s", time.time() - t0, m),
    )
    print(f"Nash constant M0: {outcome.M0:.6g}; M in use: {outcome.schedule.M:.6g}; minimal admissible M: {outcome.min_M:.6g}")
    for c in outcome.checks:
        save_field(out / f"v1_t{c.t:+.5f}.npz", SpectralField(grid, c.nash.v))
    return _finish(outcome.report, out, "stage.csv")


def cmd_microlocal(cfg: Config, out: Path) -> int:
    spec = _spec(cfg)
    mc = cfg.microlocal
    rows = microlocal_rows(spec, mc["lams"], mc["amplitude"], mc["modulation"])
    path = out / "microlocal.csv"
    with path.open("w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("lambda", "band", "ratio", "identity_residual"))
        for lam, band, ratio, res in rows:
            w.writerow((lam, band, f"{ratio:.10e}", f"{res:.10e}"))
    print(path.read_text(encoding="ascii"), end="")
    ok = all(r[3] < 1e-9 for r in rows)
    return EXIT_PASS if ok else EXIT_GATE


def cmd_estimates(cfg: Config, out: Path) -> int:
    spec = _spec(cfg)
    est = cfg.estimates
    reports = [
        estimate_probe(spec, op, est["alpha"], est["resolutions"], est["trials"], 2, est["seed"]) for op in est["ops"]
    ]
    reports += [
        estimate_probe(spec, op, est["alpha"], est["resolutions"], est["trials"], 3, est["seed"]) for op in est["trilinear"]
    ]
    path = out / "estimates.csv"
    with path.open("w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("op_id", "N", "trial", "ratio"))
        for r in reports:
            for row in r.rows():
                w.writerow((row[0], row[1], row[2], f"{row[3]:.10e}"))
    unstable = [r.op_id for r in reports if not r.stable()]
    for r in reports:
        ns = sorted(r.ratios)
        print(f"{'PASS' if r.stable() else 'FAIL'} {r.op_id} " + " ".join(f"N={n}:{r.max_ratio(n):.4g}" for n in ns))
    return EXIT_GATE if unstable else EXIT_PASS


def cmd_hamiltonian(cfg: Config, out: Path) -> int:
    spec = _spec(cfg)
    h = cfg.hamiltonian
    grid = make_grid(h["n"], cfg.dealias)
    theta = smooth_initial_scalar(grid, h["kmax"], h["seed"])
    run = solve_active_scalar(theta, spec, h["t_end"], h["dt"])
    path = out / "hamiltonian.csv"
    with path.open("w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t", "H"))
        for t, e in zip(run.times, run.energies):
            w.writerow((f"{t:.6f}", f"{e:.16e}"))
    rep = BoundReport()
    rep.add("diagnostics", "hamiltonian-drift", run.drift, cfg.tolerances["hamiltonian"])
    return _finish(rep, out, "hamiltonian_report.csv")


COMMANDS = {
    "classify": cmd_classify,
    "verify": cmd_verify,
    "base-case": cmd_base_case,
    "newton": cmd_newton,
    "stage": cmd_stage,
    "microlocal": cmd_microlocal,
    "estimates": cmd_estimates,
    "hamiltonian": cmd_hamiltonian,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="asconvex", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, default=None, help="INI file; defaults are used when omitted")
    parser.add_argument("--out", type=Path, default=Path("."), help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args.out)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AsconvexError as exc:
        print(f"gate failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_GATE


if __name__ == "__main__":
    sys.exit(main())
