"""Command-line experiment harness.

Usage::

    nonlocal-lab <command> --config <path> [--out <dir>] [--seed <n>] [--fast]

Exit status is 0 when every asserted invariant holds, 1 when one fails and 2
for an invalid config.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import plotting
from .calculus import Field, assemble_stiffness, flux_field, gauss_terms, green_terms
from .carleman import LHS_FIELDS, certify
from .config import COMMANDS, ConfigError, build_setup, parse_config
from .inverse import (BackwardProblem, SourceProblem, add_noise, backward_reconstruct,
                      dirichlet_eigenmodes, eigenmode_family, numerical_rank, source_forward_map,
                      source_reconstruct, stability_audit, truncation_study)
from .io import write_csv, write_manifest, write_summary
from .kernel import KernelSpec, OrderField
from .mesh import build_interval_mesh
from .solver import Trajectory, regularity_monitor, solve_forward
from .spaces import (audit_embeddings, constrain, constraint_value, energy_norm, l2_norm,
                     poincare_constant, sample_fields)

log = logging.getLogger("nonlocal_lab")

THREADS_ENV = "NONLOCAL_LAB_THREADS"


class Run:
    """Collects emitted files and invariant outcomes for one command."""

    def __init__(self, out: Path, cfg: dict, seed: int, fast: bool):
        self.out, self.cfg, self.seed, self.fast = out, cfg, seed, fast
        self.files: list = []
        self.invariants: dict = {}

    def path(self, name):
        p = self.out / name
        self.files.append(p)
        return p

    def check(self, name, ok):
        self.invariants[name] = bool(ok)
        log.info("%s: %s", name, "ok" if ok else "FAILED")


# ---------------------------------------------------------------------------
# commands


def cmd_verify_calculus(run: Run):
    cfg, ex = run.cfg, run.cfg["experiment"]
    st = build_setup(cfg, run.fast)
    mesh, spec, opts = st.mesh, st.spec, st.opts
    tol = ex["tolerance"]
    A = assemble_stiffness(0.0, spec, mesh, opts).matrix
    Ad = A.toarray()
    nA = float(np.linalg.norm(Ad, 2))
    asym = float(np.max(np.abs(Ad - Ad.T))) / nA
    lam_min = float(np.linalg.eigvalsh(0.5 * (Ad + Ad.T))[0])
    null = float(np.max(np.abs(Ad @ np.ones(mesh.n_nodes)))) / nA
    write_csv(run.path("structure.csv"), [dict(norm=nA, asymmetry=asym, lambda_min=lam_min,
                                               constant_residual=null)])
    run.check("stiffness_symmetric", asym <= 1e-12)
    run.check("stiffness_psd", lam_min >= -1e-10 * nA)
    run.check("constants_in_kernel", null <= 1e-10)
    rng = np.random.default_rng(run.seed)
    rows = []
    for i in range(ex["fields"]):
        u = Field(mesh, rng.standard_normal(mesh.n_nodes))
        v = Field(mesh, rng.standard_normal(mesh.n_nodes))
        d, n = gauss_terms(flux_field(u, 0.0, spec), spec, mesh, opts)
        t1, b, t3 = green_terms(u, v, 0.0, spec, mesh, opts)
        w = Field(mesh, constrain(v.values, "dirichlet", mesh))
        a1, ab, _ = green_terms(u, w, 0.0, spec, mesh, opts)
        rows.append(dict(field=i, gauss_omega=d, gauss_interaction=n,
                         gauss_relative=abs(d - n) / (abs(d) + 1.0),
                         green_divergence=t1, green_bilinear=b, green_interaction=t3,
                         green_relative=abs(t1 - b - t3) / max(abs(t1), abs(b), abs(t3), 1e-300),
                         adjoint_relative=abs(a1 - ab) / max(abs(a1), abs(ab), 1e-300)))
    write_csv(run.path("calculus_residuals.csv"), rows)
    for key in ("gauss_relative", "green_relative", "adjoint_relative"):
        run.check(f"{key}_le_{tol:g}", all(r[key] <= tol for r in rows))
    idx = [r["field"] for r in rows]
    floor = 1e-18
    plotting.line_plot(run.path("calculus_residuals.svg"), idx,
                       {k: [max(r[k], floor) for r in rows]
                        for k in ("gauss_relative", "green_relative", "adjoint_relative")},
                       xlabel="field", ylabel="relative residual", logy=True,
                       title="Gauss and Green identities")


def cmd_audit_spaces(run: Run):
    cfg, ex = run.cfg, run.cfg["experiment"]
    st = build_setup(cfg, run.fast)
    mesh, spec = st.mesh, st.spec
    samples = sample_fields(mesh, ex["samples"], run.seed, kind="dirichlet")
    audit = audit_embeddings(samples, spec, mesh)
    write_csv(run.path("embedding_audit.csv"), audit.rows())
    run.check("energy_upper_bound_no_violations", audit.violations == 0)
    run.check("embedding_constants_finite",
              all(np.isfinite(c) for c in (audit.c_lower, audit.c_upper, audit.c_energy)))
    # constant order: both embedding constants collapse to one
    const = spec.replace(order=OrderField.constant(spec.order.beta_lo))
    ca = audit_embeddings(samples[:10], const, mesh)
    run.check("constant_order_constants_equal_one",
              abs(ca.c_lower - 1) <= 1e-6 and abs(ca.c_upper - 1) <= 1e-6)
    prows = []
    m = cfg["mesh"]
    for kind in ("dirichlet", "neumann"):
        vals = []
        for n in ex["levels"]:
            if m["dim"] == 1:
                mm = build_interval_mesh(m["a"], m["b"], n, spec.horizon, m.get("collar"))
            else:
                raise ValueError("Poincare levels are defined for 1-D meshes")
            lam = poincare_constant(kind, 0.0, spec, mm, st.opts)
            vals.append(lam)
            prows.append(dict(kind=kind, elements=n, lambda_min=lam))
        run.check(f"poincare_{kind}_positive", min(vals) > 0)
        drift = max(abs(vals[i + 1] - vals[i]) / vals[i] for i in range(len(vals) - 1))
        run.check(f"poincare_{kind}_drift_lt_{ex['drift_tolerance']:g}",
                  drift < ex["drift_tolerance"])
    write_csv(run.path("poincare.csv"), prows)
    write_summary(run.path("summary.json"), dict(c_lower=audit.c_lower, c_upper=audit.c_upper,
                                                 c_energy=audit.c_energy,
                                                 violations=audit.violations))
    ratios = [r.energy / r.seminorm_var for r in audit.reports if r.seminorm_var > 0]
    plotting.histogram(run.path("energy_ratio.svg"), ratios, xlabel="energy / seminorm",
                       title="energy versus variable-order seminorm")


def _initial(cfg, mesh, seed):
    kind = cfg["solver"]["kind"]
    x = mesh.nodes
    lo, hi = mesh.omega
    y = (x - lo) / (hi - lo)
    style = cfg["solver"]["initial"]
    if style == "random":
        v = np.random.default_rng(seed).standard_normal(mesh.n_nodes)
    elif style == "bump":
        v = np.exp(-np.sum((y - 0.5) ** 2, axis=1) / 0.02)
    else:
        v = np.prod(np.sin(np.pi * np.clip(y, 0, 1)), axis=1)
    return constrain(v, kind, mesh)


def _source(cfg, mesh):
    if cfg["solver"]["source"] == "zero":
        return None
    lo, hi = mesh.omega
    y = (mesh.nodes - lo) / (hi - lo)
    g = np.exp(-np.sum((y - 0.3) ** 2, axis=1) / 0.01)
    return lambda t: np.cos(2 * np.pi * t) * g


def cmd_solve(run: Run):
    cfg = run.cfg
    st = build_setup(cfg, run.fast)
    mesh, spec, grid = st.mesh, st.spec, st.grid
    kind, scheme = cfg["solver"]["kind"], cfg["solver"]["scheme"]
    f = _source(cfg, mesh)
    tr = solve_forward(_initial(cfg, mesh, run.seed), f, kind, grid, scheme, spec, mesh, st.opts)
    rows = []
    prev = np.inf
    for k, t in enumerate(grid.times):
        u = tr[k]
        l2 = l2_norm(u, mesh)
        rows.append(dict(step=k, t=t, l2=l2, energy=energy_norm(u, t, spec, mesh, st.opts),
                         constraint=constraint_value(u, kind, mesh),
                         l2_decay=l2 <= prev * (1 + 1e-12)))
        prev = l2
    write_csv(run.path("trajectory_report.csv"), rows)
    tr.to_csv(run.path("trajectory.csv"))
    mon = regularity_monitor(tr, f, spec, mesh, st.opts)
    write_summary(run.path("summary.json"), dict(kind=kind, scheme=scheme, lhs=mon.lhs,
                                                 rhs=mon.rhs, ratio=mon.ratio,
                                                 inconsistent=mon.inconsistent))
    if f is None and scheme == "implicit_euler":
        run.check("l2_decay_monotone", all(r["l2_decay"] for r in rows))
    scale = max(r["l2"] for r in rows) ** 2
    run.check("constraint_preserved", all(r["constraint"] <= 1e-16 + 1e-10 * scale for r in rows))
    plotting.line_plot(run.path("norms.svg"), grid.times,
                       {"L2": [r["l2"] for r in rows], "energy": [r["energy"] for r in rows]},
                       xlabel="t", ylabel="norm", title="norm history", logy=True)


def cmd_carleman(run: Run):
    cfg, ex = run.cfg, run.cfg["experiment"]
    st = build_setup(cfg, run.fast)
    mesh, spec, grid = st.mesh, st.spec, st.grid
    kind = cfg["solver"]["kind"]
    variant = ex["variant"]
    suite = []
    for u0 in sample_fields(mesh, ex["members"], run.seed, kind=kind):
        tr = solve_forward(u0, None, kind, grid, cfg["solver"]["scheme"], spec, mesh, st.opts)
        if variant == "terminal":
            # cut off smoothly so that u(T) = 0; the source is the defining expression
            tr = Trajectory(tr.values * (1.0 - grid.times / grid.T)[:, None], grid, kind, mesh)
        suite.append((tr, None))
    cert = certify(suite, ex["lambda_grid"], ex["s_grid"], variant, spec, mesh, st.opts,
                   ex["stability_factor"])
    rows = cert.rows()
    cols = ["lam", "s", "member", *LHS_FIELDS, "rhs_source", "rhs_boundary_data",
            "rhs_interaction", "ratio"]
    write_csv(run.path("certificate.csv"), rows, cols)
    top = list(cert.s_grid[len(cert.s_grid) // 2:])
    stab = {f"{lam:g}": cert.stability(lam, top) for lam in ex["stable_lambdas"]}
    # scale invariance on the first member
    c2 = certify([(suite[0][0].scaled(3.0), None), suite[0]], ex["lambda_grid"], ex["s_grid"],
                 variant, spec, mesh, st.opts, ex["stability_factor"])
    with np.errstate(invalid="ignore"):
        dev = float(np.nanmax(np.abs(c2.log_ratios[:, :, 0] - c2.log_ratios[:, :, 1])))
    write_summary(run.path("summary.json"), dict(cert.summary(), stability_top_half=stab,
                                                 scale_invariance=dev))
    run.check("certified", cert.certified and np.isfinite(cert.C))
    for lam, r in stab.items():
        run.check(f"C_stable_lambda_{lam}", r <= ex["stability_factor"])
    run.check("terms_nonnegative_finite",
              all(np.isfinite(r[k]) and r[k] >= 0 for r in rows for k in cols[3:]))
    run.check("ratio_scale_invariant", dev <= 1e-10)
    with np.errstate(divide="ignore"):
        plotting.heatmap(run.path("certificate.svg"), np.log10(cert.C_grid), cert.s_grid,
                         cert.lambda_grid, xlabel="s", ylabel="lambda",
                         title=f"max ratio (K = {cert.K:.3f})", cbar="log10 C")


def cmd_backward(run: Run):
    cfg, ex = run.cfg, run.cfg["experiment"]
    st = build_setup(cfg, run.fast)
    mesh, spec, grid = st.mesh, st.spec, st.grid
    scheme = cfg["solver"]["scheme"]
    T = grid.T
    t0 = grid.times[grid.steps // 2]
    M = mesh.mass_matrix()

    def rel(a, b):
        e = a - b
        return float(np.sqrt(e @ (M @ e) / max(b @ (M @ b), 1e-300)))

    u0 = constrain(np.prod(np.sin(np.pi * np.clip((mesh.nodes - mesh.omega[0])
                                                  / (mesh.omega[1] - mesh.omega[0]), 0, 1)) ** 2,
                           axis=1), "dirichlet", mesh)
    tr = solve_forward(u0, None, "dirichlet", grid, scheme, spec, mesh, st.opts)
    data = add_noise(tr.values[-1], ex["noise"], run.seed)
    data = constrain(data, "dirichlet", mesh)
    rows = []
    for rho in ex["rhos"]:
        res = backward_reconstruct(BackwardProblem(Field(mesh, data), t0, rho, ex["noise"]),
                                   spec, mesh, grid, scheme, opts=st.opts)
        rows.append(dict(rho=rho, error=rel(res.field.values, tr.values[grid.steps // 2]),
                         iterations=res.iterations, misfit=res.misfit))
    write_csv(run.path("backward_rho.csv"), rows)
    if ex["noise"] == 0:
        errs = [r["error"] for r in rows]
        run.check("error_decreasing_in_rho", all(b < a for a, b in zip(errs, errs[1:])))
    mu, V = dirichlet_eigenmodes(spec, mesh, 0.0, st.opts)
    res = backward_reconstruct(BackwardProblem(Field(mesh, np.exp(-mu[0] * T) * V[:, 0]), t0, 1e-8),
                               spec, mesh, grid, scheme, opts=st.opts)
    eig_err = rel(res.field.values, np.exp(-mu[0] * t0) * V[:, 0])
    run.check("eigenmode_reconstruction_lt_1pct", eig_err < 0.01)
    fam = eigenmode_family(spec, mesh, grid, ex["mu_T_min"] / T, ex["family"], opts=st.opts)
    audit = stability_audit(fam, t0, spec, mesh, st.opts)
    write_csv(run.path("stability_audit.csv"), audit.rows())
    run.check("theta_matches_t0_over_T", abs(audit.theta - t0 / T) <= ex["theta_tolerance"])
    run.check("stability_slack_nonnegative", audit.ok)
    write_summary(run.path("summary.json"), dict(theta=audit.theta, C=audit.C, C_fit=audit.C_fit,
                                                 t0=t0, T=T, eigenmode_error=eig_err,
                                                 rate_bounded=audit.rate_bounded))
    plotting.line_plot(run.path("backward_rho.svg"), [r["rho"] for r in rows],
                       {"error": [r["error"] for r in rows]}, xlabel="rho",
                       ylabel="relative error at t0", logx=True, logy=True,
                       title="Tikhonov reconstruction")
    ly = np.log(audit.Y)
    plotting.scatter_fit(run.path("stability_fit.svg"), np.log(audit.Z) - ly,
                         np.log(audit.X) - ly, audit.theta, np.log(audit.C_fit),
                         xlabel="log Z - log Y", ylabel="log X - log Y",
                         title="Hölder stability fit")


def cmd_inverse_source(run: Run):
    cfg, ex = run.cfg, run.cfg["experiment"]
    st = build_setup(cfg, run.fast)
    mesh, spec, grid = st.mesh, st.spec, st.grid
    m = cfg["mesh"]
    prob = SourceProblem(m["lx"], m["ly"], grid.T, ex["space_modes"], ex["time_modes"])
    G = source_forward_map(prob, grid, spec, mesh, st.opts)
    s = np.linalg.svd(G, compute_uv=False)
    rank = numerical_rank(s, G.shape)
    c = np.random.default_rng(run.seed).standard_normal(G.shape[1])
    cr, resid = source_reconstruct(G @ c, G)
    err = float(np.linalg.norm(cr - c) / np.linalg.norm(c))
    study = truncation_study(G, c, ex["noise"], run.seed)
    write_csv(run.path("source_svd.csv"), [dict(index=i, sigma=v) for i, v in enumerate(s)])
    write_csv(run.path("source_truncation.csv"), study)
    write_summary(run.path("summary.json"), dict(
        sigma_min=float(s[-1]), sigma_max=float(s[0]), cond=float(s[0] / s[-1]) if s[-1] > 0
        else float("inf"), rank=rank, columns=G.shape[1], noiseless_error=err, residual=resid,
        horizon=spec.horizon, diameter=mesh.diameter,
        note="finite horizon >= mesh diameter stands in for the infinite horizon"))
    run.check("sigma_min_positive", s[-1] > 0 and rank == G.shape[1])
    run.check(f"noiseless_error_lt_{ex['tolerance']:g}", err < ex["tolerance"])
    plotting.line_plot(run.path("source_svd.svg"), np.arange(len(s)), {"sigma": s},
                       xlabel="index", ylabel="singular value", logy=True,
                       title="forward map spectrum")
    plotting.line_plot(run.path("source_truncation.svg"), [r["truncation"] for r in study],
                       {"error": [r["error"] for r in study]}, xlabel="truncation",
                       ylabel="relative error", logy=True, title=f"noise {ex['noise']:g}")


HANDLERS = {
    "verify-calculus": cmd_verify_calculus,
    "audit-spaces": cmd_audit_spaces,
    "solve": cmd_solve,
    "carleman-certify": cmd_carleman,
    "backward": cmd_backward,
    "inverse-source": cmd_inverse_source,
}


def _thread_limit(deterministic: bool):
    env = os.environ.get(THREADS_ENV)
    n = int(env) if env else (1 if deterministic else None)
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def run(config: dict, command: str, out: Path, seed: int | None = None, fast: bool = False) -> int:
    """Execute ``command`` with a validated config; returns the exit status."""
    seed = config["seed"] if seed is None else seed
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    r = Run(out, config, seed, fast)
    t0 = time.perf_counter()
    deterministic = config.get("deterministic", True) and not fast
    with _thread_limit(deterministic):
        HANDLERS[command](r)
    wall = time.perf_counter() - t0
    failed = [k for k, v in r.invariants.items() if not v]
    status = 1 if failed else 0
    write_manifest(out, dict(config, seed=seed, fast=fast), command, seed, wall, r.files,
                   r.invariants, status)
    if failed:
        print("failed invariants: " + ", ".join(failed), file=sys.stderr)
    return status


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="nonlocal-lab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--out", help="output directory (default: <output_dir>/<command>)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--fast", action="store_true",
                   help="coarser quadrature and unrestricted threads")
    p.add_argument("-v", "--verbose", action="store_true")
    a = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        text = Path(a.config).read_text(encoding="utf-8")
    except OSError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(text, a.command)
    except ConfigError as e:
        print(f"config error: {a.config}: {e}", file=sys.stderr)
        return 2
    out = Path(a.out) if a.out else Path(cfg["output_dir"]) / a.command
    status = run(cfg, a.command, out, a.seed, a.fast)
    print(f"{a.command}: {'ok' if status == 0 else 'FAILED'} ({out})")
    return status


if __name__ == "__main__":
    sys.exit(main())
