"""Command-line runner: ``maglab <command> --config <path> [--out <dir>] [--seed <u64>]``.

Each command writes CSV tables and binary snapshots into the output
directory and finishes with ``manifest.json``; a directory without a
manifest holds partial output.  Exit codes: 0 success, 2 configuration
error, 3 numerical failure, 4 invariant violation.
"""
import argparse
import os
import platform
import subprocess
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import scipy

from . import __version__
from .carleman import (build_beta, check_carleman, check_klibanov, compute_gamma_plus,
                       conjugation_residual, alpha_floor, random_spacetime_field,
                       symmetric_times, verify_assumption)
from .config import COMMANDS, load_config
from .diagnostics import (check_Bj_symmetry, check_charge_bound, check_derivative_bounds,
                          check_energy_bound, check_operator_bounds)
from .errors import ConfigurationError, DataError, DomainError, InvariantViolation, NumericalError
from .grid import Grid, norms, random_smooth_field, sine_mode
from .hamiltonian import MagneticPotential, TimeProfile, solve_derivative_systems, solve_ibvp
from .inverse import (linearized_reconstruct, make_initial_family, make_potential_pair,
                      region_error, simulate_observations, stability_ratio, loglog_slope)
from .io import write_csv, write_manifest, write_trajectory, write_vector_field
from .reconstruct import adjoint_reconstruct
from .streams import substream

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_INVARIANT = 0, 2, 3, 4


# ------------------------------------------------------------------ helpers

class Run:
    """Shared state of one pipeline run: config, output paths, stage timers."""

    def __init__(self, cfg, out):
        self.cfg = cfg
        self.out = out
        self.timings = {}
        self.files = []
        self.summary = {}
        self.violations = []
        c = cfg.data
        self.grid = Grid.uniform(c["grid"]["dim"], c["grid"]["N"], c["grid"]["L"])
        self.T = float(c["time"]["T"])
        self.N_t = int(c["time"]["N_t"])
        self.chi = TimeProfile.sine(self.T)

    def path(self, name):
        self.files.append(name)
        return os.path.join(self.out, name)

    def stage(self, name):
        run = self

        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                run.timings[name] = time.perf_counter() - self.t0
                return False

        return _Timer()

    def pair(self, seed=None, delta=None):
        po = self.cfg["potential"]
        return make_potential_pair(
            self.grid, self.cfg.potential_seed if seed is None else seed,
            po["delta"] if delta is None else delta, M=po["M"], chi=self.chi, T=self.T,
            amplitude=po["amplitude"], collar=po["collar"], modes=po["modes"])

    def weights(self):
        we = self.cfg["weights"]
        x0 = we["x0"]
        if x0 is None:
            x0 = [-0.5 * self.grid.lengths[0]] * self.grid.dim
        return build_beta(self.grid, x0, m=we["m"], lam=we["lam"][0], s=we["s"][0], T=self.T)

    def family(self):
        fa = self.cfg["family"]
        return make_initial_family(self.grid, n=fa["n"], preset=fa["preset"],
                                   collar=self.cfg["potential"]["collar"])


def _version():
    try:
        here = os.path.dirname(os.path.abspath(__file__))
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


# ----------------------------------------------------------------- pipelines

def run_forward(run):
    g, cfg = run.grid, run.cfg
    fw = cfg["forward"]
    with run.stage("setup"):
        if fw["potential"] == "zero":
            p = MagneticPotential(g, np.zeros((g.dim,) + g.shape), run.chi,
                                  M=cfg["potential"]["M"], collar=cfg["potential"]["collar"])
        else:
            p = run.pair().a
        if fw["initial"] == "eigenmode":
            u0 = sine_mode(g, [fw["mode"]] * g.dim).astype(complex)
        else:
            u0 = random_smooth_field(g, substream(cfg.seed, "initial"))
    with run.stage("solve"):
        traj = solve_ibvp(p, u0, None, run.T, run.N_t)
    with run.stage("write"):
        q0 = norms(traj.u[0], g)["L2"]
        rows = []
        for t, u in zip(traj.times, traj.u):
            n = norms(u, g)
            rows.append([t, n["L2"], n["H1"], abs(n["L2"] - q0) / q0 if q0 > 0 else 0.0])
        write_csv(run.path("norms.csv"),
                  ["t [time] (t_k)", "charge [L2 norm] (||u(t)||_0)",
                   "energy [H1 norm] ((||u||_0^2 + ||grad u||_0^2)^(1/2))",
                   "charge_drift [relative] (| ||u(t)||_0 - ||u0||_0 | / ||u0||_0)"], rows)
        write_trajectory(run.path("u.mslb"), traj)
    drift = max(r[3] for r in rows)
    run.summary.update({"max_charge_drift": drift})
    if drift > 1e-10:
        run.violations.append(f"charge drift {drift:.3e} exceeds 1e-10")


def run_bounds(run):
    g, cfg = run.grid, run.cfg
    bc = cfg["bounds"]
    rng = substream(cfg.seed, "bounds")
    pair = run.pair()
    p = pair.a
    rows = []
    with run.stage("ensemble"):
        for i in range(bc["ensemble"]):
            psi0 = random_smooth_field(g, rng)
            qf = random_smooth_field(g, rng)
            omega = rng.uniform(0.5, 3.0)

            def f(t, qf=qf, omega=omega):
                return np.cos(omega * t) * qf

            traj = solve_ibvp(p, psi0, f, run.T, run.N_t)
            for rep in (check_charge_bound(traj, psi0, f), check_energy_bound(traj, psi0, f)):
                rows.append([i, rep.name, rep.lhs, rep.rhs, rep.ratio, rep.explicit, rep.passed])
            u0 = np.real(random_smooth_field(g, rng, complex_values=False))
            dtraj = solve_derivative_systems(p, u0, run.T, run.N_t)
            for rep in check_derivative_bounds(dtraj, u0):
                rows.append([i, rep.name, rep.lhs, rep.rhs, rep.ratio, rep.explicit, rep.passed])
    with run.stage("operators"):
        t = 0.5 * run.T
        reps = check_Bj_symmetry(p, t, samples=bc["samples"], rng=rng)
        reps += check_operator_bounds(p, t, random_smooth_field(g, rng))
        for rep in reps:
            rows.append([-1, rep.name, rep.lhs, rep.rhs, rep.ratio, rep.explicit, rep.passed])
    with run.stage("write"):
        write_csv(run.path("bounds.csv"),
                  ["sample [index] (-1: operator checks)", "bound [name]",
                   "lhs [norm] (left side of the inequality)",
                   "rhs [norm] (right side; empirical bracket when explicit=0)",
                   "ratio [1] (lhs / rhs)", "explicit [bool] (constant known in closed form)",
                   "passed [bool] (explicit: lhs <= rhs; empirical: ratio finite)"], rows)
    failed = [r for r in rows if not r[6]]
    run.summary.update({"checks": len(rows), "failed": len(failed)})
    for r in failed:
        run.violations.append(f"{r[1]} (sample {r[0]}): lhs {r[2]:.3e} > rhs {r[3]:.3e}")


def run_carleman(run):
    g, cfg = run.grid, run.cfg
    cc, we = cfg["carleman"], cfg["weights"]
    w = run.weights()
    with run.stage("certificate"):
        cert = verify_assumption(w)
        gp, _ = compute_gamma_plus(w)
        write_csv(run.path("certificate.csv"),
                  ["C0 [1/length] (min |grad beta~|)", "eps [1] (pseudo-convexity floor)",
                   "lambda [1]", "max_dnu_beta_minus [1] (max d_nu beta~ on Gamma-)",
                   "gamma_plus_nodes [count]", "pass_a [bool]", "pass_b [bool]", "pass_c [bool]"],
                  [[cert.C0, cert.eps, cert.lam, cert.max_dnu_minus, gp.size,
                    cert.pass_a, cert.pass_b, cert.pass_c]])
    times = symmetric_times(run.T, run.N_t)
    rng = substream(cfg.seed, "carleman")
    rows, resid = [], []
    knee = True
    with run.stage("sweep"):
        for i in range(cc["samples"]):
            q = random_spacetime_field(g, times, rng, modes=cc["modes"])
            resid.append([i, conjugation_residual(w, q, times)])
            rep = check_carleman(w, q, times, gp, s_list=we["s"], lam_list=we["lam"])
            knee = knee and rep.knee_ok()
            for r in rep.rows:
                rows.append([i, r.s, r.lam, r.I, r.boundary, r.source, r.ratio, r.violation])
    with run.stage("write"):
        write_csv(run.path("carleman_sweep.csv"),
                  ["sample [index]", "s [1]", "lambda [1]",
                   "I [weighted L2^2] (s^3 lam^4 ||e^{-s eta} phi^{3/2} q||^2 + s lam "
                   "||e^{-s eta} phi^{1/2} grad q||^2 + sum_j ||M_j e^{-s eta} q||^2)",
                   "boundary [weighted L2^2] (int int_Gamma+ e^{-2 s eta} phi d_nu beta |d_nu q|^2)",
                   "source [weighted L2^2] (||e^{-s eta} L q||^2)",
                   "ratio [1] (I / (s lam boundary + source))", "violation [bool]"], rows)
        write_csv(run.path("conjugation.csv"),
                  ["sample [index]",
                   "residual [relative] (||(M1+M2)(e^{-s eta} q) - e^{-s eta} L q|| / "
                   "||e^{-s eta} L q||)"], resid)
    nviol = sum(r[7] for r in rows)
    run.summary.update({"certificate_passed": cert.passed,
                        "max_ratio": max((r[6] for r in rows), default=0.0),
                        "violations": nviol, "knee_ok": knee})
    if nviol:
        run.violations.append(f"{nviol} Carleman sweep points with zero bracket and positive I")
    if not np.isfinite(run.summary["max_ratio"]):
        run.violations.append("Carleman ratio is not finite")


def run_klibanov(run):
    g, cfg = run.grid, run.cfg
    kc = cfg["klibanov"]
    w = run.weights()
    times = symmetric_times(run.T, run.N_t)
    rng = substream(cfg.seed, "klibanov")
    rows = []
    with run.stage("sweep"):
        for i in range(kc["samples"]):
            p = random_spacetime_field(g, times, rng)
            rep = check_klibanov(w, p, times, s_list=tuple(kc["s"]))
            for s, lhs, rhs, sc in zip(rep.s, rep.lhs, rep.rhs, rep.scaled):
                rows.append([i, s, lhs, rhs, sc])
    corr, printed = alpha_floor(w)
    min_alpha = float(np.min(w.alpha()))
    with run.stage("write"):
        write_csv(run.path("klibanov.csv"),
                  ["sample [index]", "s [1]",
                   "lhs [weighted L2^2] (int int e^{-2 s eta} |int_0^t p|^2)",
                   "rhs [weighted L2^2] (||e^{-s eta} p||^2)", "scaled [1] (s lhs / rhs)"], rows)
        write_csv(run.path("alpha_floor.csv"),
                  ["lambda [1]", "K [1] (m max beta~)", "min_alpha [1] (min e^{2 lam K} - e^{lam beta})",
                   "alpha0_corrected [1] (e^{2 lam K} - e^{lam K (1 + 1/m)})",
                   "alpha0_printed [1] (e^{2 lam K} - e^{lam K / m})",
                   "corrected_holds [bool]", "printed_holds [bool]"],
                  [[w.lam, w.K, min_alpha, corr, printed, min_alpha >= corr * (1 - 1e-12),
                    min_alpha >= printed * (1 - 1e-12)]])
    kappa = max((r[4] for r in rows), default=0.0)
    run.summary.update({"kappa": kappa, "min_alpha": min_alpha, "alpha0_corrected": corr,
                        "alpha0_printed": printed})
    if not np.isfinite(kappa):
        run.violations.append("Klibanov ratio is not finite")
    if min_alpha < corr * (1 - 1e-12):
        run.violations.append("alpha falls below its corrected floor")


def _stability_task(args):
    cfg_data, seed, delta = args
    from .config import validate
    run = Run(validate(cfg_data, {}), None)
    pair = run.pair(seed=seed, delta=delta)
    fam = run.family()
    gp, _ = compute_gamma_plus(run.weights())
    obs, _ = simulate_observations(fam, pair.a, pair.at, gp, run.T, run.N_t)
    return stability_ratio(run.grid, pair.diff, obs, seed=seed, delta=pair.delta).row()


def run_stability_sweep(run):
    cfg = run.cfg
    sw = cfg["sweep"]
    base = cfg.potential_seed
    tasks = [(cfg.data, (base + i) % 2**64, float(d))
             for i in range(sw["n_seeds"]) for d in sw["deltas"]]
    with run.stage("ensemble"):
        if cfg["workers"] > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=cfg["workers"]) as pool:
                rows = list(pool.map(_stability_task, tasks))
        else:
            rows = [_stability_task(t) for t in tasks]
    with run.stage("write"):
        write_csv(run.path("stability.csv"),
                  ["seed [u64]", "delta [field units] (perturbation scale)",
                   "numerator [L2 norm] (||a~ - a||_0)",
                   "D_sq [L2^2] (sum_j ||d_nu w_j||^2 + ||d_nu y_j||^2 over (0,T) x Gamma+)",
                   "D_lin [L2 norm] (sqrt(D_sq))", "R_sq [1] (numerator / D_sq)",
                   "R_lin [1] (numerator / D_lin)"], rows)
    summary = {"pairs": len(rows),
               "max_R_lin": max((r[6] for r in rows), default=None),
               "max_R_sq": max((r[5] for r in rows), default=None)}
    deltas = sorted({r[1] for r in rows if r[1] > 0})
    if len(deltas) > 1:
        first = [r for r in rows if r[0] == rows[0][0] and r[1] > 0]
        dl = np.array([r[1] for r in first])
        summary["slope_R_sq"] = loglog_slope(dl, [r[5] for r in first])
        summary["slope_R_lin"] = loglog_slope(dl, [r[6] for r in first])
    run.summary.update(summary)
    for r in rows:
        if r[2] > 0 and r[3] == 0:
            run.violations.append(f"seed {r[0]}: nonzero difference with zero observations")


def run_reconstruct(run):
    g, cfg = run.grid, run.cfg
    rc = cfg["reconstruct"]
    with run.stage("observations"):
        pair = run.pair()
        fam = run.family()
        gp, _ = compute_gamma_plus(run.weights())
        obs, chains = simulate_observations(fam, pair.a, pair.at, gp, run.T, run.N_t,
                                            noise=cfg["noise"], rng=substream(cfg.seed, "noise"))
        write_csv(run.path("observations.csv"),
                  ["experiment [index j]", "k [order] (d_t^k)", "t [time]",
                   "node [flat index] (boundary node on Gamma+)",
                   "re [1/length] (Re d_nu d_t^k (u_j - u~_j))",
                   "im [1/length] (Im d_nu d_t^k (u_j - u~_j))"], obs.rows())
    with run.stage("linearized"):
        lin = linearized_reconstruct(fam, [ch.y0 for ch in chains], run.chi(0.0, 1),
                                     coulomb=pair.a.coulomb)
        lin_err = region_error(g, fam.region, lin.d, pair.diff)
    history = []
    with run.stage("optimize"):
        b, res = adjoint_reconstruct(obs, pair.a, fam, run.T, run.N_t,
                                     iterations=rc["iterations"], alpha_reg=rc["alpha"],
                                     gtol=rc["gtol"], metric_length=rc["metric_length"])
        for it, (J, gn) in enumerate(zip(res.history, res.grad_norms)):
            history.append([it, J, gn])
    err = region_error(g, fam.region, b - pair.a.a, pair.diff)
    with run.stage("write"):
        write_csv(run.path("history.csv"),
                  ["iteration [count]", "J [data L2^2] (1/2 sum_jk ||d_nu d_t^k u_j[b] - data||^2 "
                   "+ alpha ||b - a0||_H1^2)",
                   "grad_norm [1] ((g^T P^{-1} g)^(1/2))"], history)
        write_csv(run.path("reconstruction.csv"),
                  ["method [name]",
                   "relative_error [1] (||b - a~||_0 / ||a~ - a||_0 on the reconstruction region)",
                   "iterations [count]", "converged [bool]"],
                  [["linearized", lin_err, 0, True],
                   ["adjoint", err, res.iterations, res.converged]])
        write_vector_field(run.path("reconstruction.mslb"), g.shape, b)
        write_vector_field(run.path("truth.mslb"), g.shape, pair.at.a)
    run.summary.update({"relative_error": err, "linearized_error": lin_err,
                        "iterations": res.iterations, "message": res.message,
                        "alpha": res.extra.get("alpha")})


PIPELINES = {
    "forward": run_forward,
    "bounds": run_bounds,
    "carleman": run_carleman,
    "klibanov": run_klibanov,
    "stability-sweep": run_stability_sweep,
    "reconstruct": run_reconstruct,
}


# ----------------------------------------------------------------------- CLI

def build_parser():
    ap = argparse.ArgumentParser(prog="maglab",
                                 description="Magnetic Schrodinger experiments: forward solves, "
                                             "bound checks, Carleman sweeps, inverse problems.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON configuration file")
    ap.add_argument("--out", help="output directory (overrides output_dir)")
    ap.add_argument("--seed", type=int, help="global seed, unsigned 64-bit (overrides seed)")
    return ap


def _provenance(exc):
    tb = traceback.extract_tb(exc.__traceback__)
    for frame in reversed(tb):
        mod = os.path.splitext(os.path.basename(frame.filename))[0]
        if os.sep + "maglab" + os.sep in frame.filename:
            return mod
    return "maglab"


def execute(command, cfg, out):
    """Run one pipeline; returns ``(exit_code, run)``.  Writes the manifest on completion."""
    os.makedirs(out, exist_ok=True)
    manifest = os.path.join(out, "manifest.json")
    if os.path.exists(manifest):
        os.remove(manifest)
    run = Run(cfg, out)
    t0 = time.perf_counter()
    PIPELINES[command](run)
    run.timings["total"] = time.perf_counter() - t0
    status = "invariant_violation" if run.violations else "ok"
    write_manifest(manifest, {
        "command": command,
        "config": cfg.data,
        "version": _version(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "seeds": {"global": cfg.seed, "potential": cfg.potential_seed},
        "wall_times": run.timings,
        "files": sorted(run.files),
        "summary": run.summary,
        "violations": run.violations,
        "status": status,
    })
    return (EXIT_INVARIANT if run.violations else EXIT_OK), run


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if cfg.command is not None and cfg.command != args.command:
            raise ConfigurationError(f"command: file says {cfg.command!r}, "
                                     f"command line says {args.command!r}")
        over = {"command": args.command}
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigurationError("--seed must be an unsigned 64-bit integer")
            over["seed"] = args.seed
        if args.out is not None:
            over["output_dir"] = args.out
        cfg = cfg.replace(**over)
    except OSError as exc:
        print(f"maglab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigurationError as exc:
        print(f"maglab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        code, run = execute(args.command, cfg, cfg["output_dir"])
    except (ConfigurationError, DomainError, DataError) as exc:
        print(f"maglab: config error [{_provenance(exc)}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"maglab: numerical failure [{_provenance(exc)}]: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except InvariantViolation as exc:
        print(f"maglab: invariant violation [{_provenance(exc)}]: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    for v in run.violations:
        print(f"maglab: invariant violation: {v}", file=sys.stderr)
    print(f"maglab {args.command}: wrote {len(run.files)} files to {cfg['output_dir']}")
    return code


if __name__ == "__main__":
    sys.exit(main())
