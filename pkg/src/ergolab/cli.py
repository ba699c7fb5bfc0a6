"""Configuration-driven experiment runner.

Subcommands: analyze-map, induce, spectrum, limits.  One TOML config file
drives the whole pipeline; expensive stages (partition, operators) are
cached under the output directory keyed by the hash of the config
sections they depend on, so later subcommands reuse earlier work.

Exit codes: 0 success, 1 config/validation failure, 2 acceptance-check
failure, 3 warnings only.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import pickle
import sys
import time

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .critical_orbits import orbit_data, summability_report, exp_recurrence_check
from .inducing import (NotCoveredError, build_partition, cell_statistics,
                       F_condition_sums, tau_distribution, cell_trajectory)
from .maps import Observable, builtin_map, load_map, verify_expansion, verify_order
from .stats import (OrbitEnsemble, birkhoff_samples, clt_test,
                    decay_envelope, fclt_paths, green_kubo_sigma,
                    large_deviation)
from .svgplot import line_plot
from .transfer import (conjugated_operator, gordin_solve, invariant_density,
                       pushdown_measure, renewal_operators,
                       renewal_spectrum_check, tail_norm_sums, ulam_matrix,
                       export_density_csv, export_operator_csv)

SCHEMA_VERSION = 1

EXIT_OK, EXIT_CONFIG, EXIT_CHECK, EXIT_WARN = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


_SCHEMA = {
    "map": {"builtin": str, "path": str, "gamma": float},
    "inducing": {"delta": float, "q0": int, "tau_max": int,
                 "refine_tol": float, "escape_factor": float},
    "operator": {"k": int, "k_induced": int, "n_eigs": int},
    "stats": {"N": int, "n": int, "seed": int, "burn_in": int, "n_max": int,
              "epsilon": float, "ks_threshold": float, "observable": str,
              "law": str, "origins": int},
    "output": {"directory": str},
}

_DEFAULTS = {
    "inducing": {"delta": 0.05, "q0": 10, "tau_max": 60,
                 "refine_tol": 1e-13, "escape_factor": 0.5},
    "operator": {"k": 1024, "k_induced": 256, "n_eigs": 6},
    "stats": {"N": 20000, "n": 10000, "seed": 0, "burn_in": 1000, "n_max": 25,
              "epsilon": 0.1, "ks_threshold": 0.05, "observable": "x-mean",
              "law": "lebesgue", "origins": 64},
    "output": {"directory": "ergolab-out"},
}

_POSITIVE = {("inducing", "delta"), ("inducing", "q0"), ("inducing", "tau_max"),
             ("inducing", "refine_tol"), ("inducing", "escape_factor"),
             ("operator", "k"), ("operator", "k_induced"), ("operator", "n_eigs"),
             ("stats", "N"), ("stats", "n"), ("stats", "n_max"),
             ("stats", "epsilon"), ("stats", "ks_threshold"), ("stats", "origins")}


def load_config(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}")
    if "schema_version" not in doc:
        raise ConfigError(f"{path}: missing schema_version")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported schema_version "
                          f"{doc['schema_version']} (expected {SCHEMA_VERSION})")
    cfg = {}
    for sec, val in doc.items():
        if sec == "schema_version":
            continue
        if sec not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{sec}]")
        if not isinstance(val, dict):
            raise ConfigError(f"{path}: [{sec}] must be a table")
        out = dict(_DEFAULTS.get(sec, {}))
        for key, v in val.items():
            if key not in _SCHEMA[sec]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{sec}]")
            want = _SCHEMA[sec][key]
            if want is float and isinstance(v, int):
                v = float(v)
            if not isinstance(v, want):
                raise ConfigError(f"{path}: [{sec}] {key} must be {want.__name__}")
            if (sec, key) in _POSITIVE and not v > 0:
                raise ConfigError(f"{path}: [{sec}] {key} must be positive")
            out[key] = v
        cfg[sec] = out
    for sec, defaults in _DEFAULTS.items():
        cfg.setdefault(sec, dict(defaults))
    if "map" not in cfg:
        raise ConfigError(f"{path}: missing [map] section")
    m = cfg["map"]
    if ("builtin" in m) == ("path" in m):
        raise ConfigError(f"{path}: [map] needs exactly one of builtin/path")
    return cfg


def _section_hash(cfg: dict, sections: tuple[str, ...]) -> str:
    payload = {s: cfg.get(s, {}) for s in sections}
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def _build_map(cfg: dict):
    m = cfg["map"]
    if "builtin" in m:
        params = {k: v for k, v in m.items() if k not in ("builtin",)}
        return builtin_map(m["builtin"], **params)
    return load_map(m["path"])


# -- artifact helpers -------------------------------------------------------------


def _g(x) -> str:
    return f"{float(x):.17g}"


class Workspace:
    def __init__(self, cfg: dict, outdir: str):
        self.cfg = cfg
        self.outdir = outdir
        self.files: list[str] = []
        self.checks: list[tuple[str, bool]] = []
        self.warnings: list[str] = []
        self.t0 = time.time()
        os.makedirs(outdir, exist_ok=True)
        os.makedirs(os.path.join(outdir, "cache"), exist_ok=True)

    def path(self, name: str) -> str:
        self.files.append(name)
        return os.path.join(self.outdir, name)

    def write_csv(self, name: str, header: list[str], rows) -> None:
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([c if isinstance(c, (str, int)) else _g(c)
                            for c in row])

    def check(self, name: str, ok: bool) -> bool:
        self.checks.append((name, bool(ok)))
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        return bool(ok)

    def warn(self, msg: str) -> None:
        self.warnings.append(msg)
        print(f"WARN  {msg}")

    def cached(self, name: str, sections: tuple[str, ...], builder):
        """Build-or-load keyed by the config sections the stage reads."""
        key = _section_hash(self.cfg, sections)
        path = os.path.join(self.outdir, "cache", f"{name}-{key}.pkl")
        if os.path.exists(path):
            with open(path, "rb") as fh:
                return pickle.load(fh)
        value = builder()
        tmp = path + ".tmp"
        with open(tmp, "wb") as fh:
            pickle.dump(value, fh)
        os.replace(tmp, path)
        return value

    def finish(self, command: str) -> int:
        failed = [n for n, ok in self.checks if not ok]
        lines = [f"command: {command}",
                 f"config_hash: {_config_hash(self.cfg)}",
                 f"ergolab_version: {__version__}",
                 f"numpy_version: {np.__version__}",
                 f"python_version: {sys.version.split()[0]}",
                 f"wall_clock_seconds: {time.time() - self.t0:.3f}",
                 "artifacts:"]
        for name in self.files:
            p = os.path.join(self.outdir, name)
            digest = hashlib.sha256(open(p, "rb").read()).hexdigest()
            lines.append(f"  {name} sha256={digest}")
        lines.append("checks:")
        for name, ok in self.checks:
            lines.append(f"  {'PASS' if ok else 'FAIL'} {name}")
        for w in self.warnings:
            lines.append(f"warning: {w}")
        with open(os.path.join(self.outdir, f"manifest-{command}.txt"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
        if failed:
            return EXIT_CHECK
        if self.warnings:
            return EXIT_WARN
        return EXIT_OK


# -- shared stages -----------------------------------------------------------------


def _get_scheme(ws: Workspace, pmap):
    ind = ws.cfg["inducing"]

    def build():
        return build_partition(pmap, delta=ind["delta"], q0=ind["q0"],
                               tau_max=ind["tau_max"],
                               refine_tol=ind["refine_tol"],
                               escape_factor=ind["escape_factor"])
    return ws.cached("scheme", ("map", "inducing"), build)


def _get_operators(ws: Workspace, pmap, scheme):
    opc = ws.cfg["operator"]

    def build():
        op_f = ulam_matrix(pmap, opc["k"])
        rep_f = invariant_density(op_f)
        op_F = ulam_matrix(scheme, opc["k_induced"])
        rep_F = invariant_density(op_F)
        P = conjugated_operator(op_F, rep_F.density)
        return op_f, rep_f, op_F, rep_F, P
    return ws.cached("operators", ("map", "inducing", "operator"), build)


def _observable(cfg: dict, mu_mean: float) -> Observable:
    name = cfg["stats"]["observable"]
    if name == "x-mean":
        return Observable(fn=lambda x: np.asarray(x, dtype=float) - mu_mean,
                          name="x-mean")
    if name == "cos2pix":
        return Observable(fn=lambda x: np.cos(2 * np.pi * np.asarray(x, dtype=float)),
                          name="cos2pix")
    raise ConfigError(f"unknown observable {name!r} "
                      "(available: x-mean, cos2pix)")


# -- subcommands -------------------------------------------------------------------


def cmd_analyze_map(ws: Workspace) -> int:
    pmap = _build_map(ws.cfg)
    delta = ws.cfg["inducing"]["delta"]
    ok_all = True
    for c in pmap.critical_points:
        rep = verify_order(pmap, c)
        tag = f"c{c.location:g}{c.side}"
        rows = [[key, _g(lo), _g(hi), _g(rep.slopes[key])]
                for key, (lo, hi) in rep.ratio_bounds.items()]
        ws.write_csv(f"order_{tag}.csv",
                     ["ratio", "min", "max", "drift_slope"], rows)
        ok = ws.check(f"declared order matches scaling at {tag}", not rep.mismatch)
        if not ok:
            print(f"  diagnostic: {rep.message or 'scaling drift detected'} "
                  f"at point {c.location:g} side {c.side}")
        ok_all &= ok
    exp = verify_expansion(pmap, delta=delta)
    ws.write_csv("expansion.csv",
                 ["kappa_hat", "c_hat", "lambda_hat",
                  "segments_kappa", "segments_free", "inconclusive"],
                 [[_g(exp.kappa_hat if exp.kappa_hat is not None else math.nan),
                   _g(exp.c_hat if exp.c_hat is not None else math.nan),
                   _g(exp.lambda_hat if exp.lambda_hat is not None else math.nan),
                   exp.n_segments_kappa, exp.n_segments_free,
                   int(exp.inconclusive)]])
    if exp.inconclusive:
        ws.warn("expansion estimates inconclusive at this horizon")
    N = 50
    for c in pmap.critical_points:
        data = orbit_data(pmap, c, N)
        fit = exp_recurrence_check(data)
        tag = f"c{c.location:g}{c.side}"
        rows = []
        for p in (1.0, 2.0):
            rep = summability_report(data, p)
            rows.append([p, _g(rep.S3), _g(rep.S4), rep.verdict3, rep.verdict4])
        ws.write_csv(f"summability_{tag}.csv",
                     ["p", "S3_partial", "S4_partial", "verdict3", "verdict4"],
                     rows)
        ws.write_csv(f"recurrence_{tag}.csv",
                     ["c0_hat", "C0_hat", "residual", "ok"],
                     [[_g(fit.c0_hat), _g(fit.C0_hat), _g(fit.residual),
                       int(fit.ok)]])
    return ws.finish("analyze-map")


def cmd_induce(ws: Workspace) -> int:
    pmap = _build_map(ws.cfg)
    ind = ws.cfg["inducing"]
    if ind["tau_max"] <= 1:
        ws.warn("tau_max <= 1 leaves no room for binding periods")
    scheme = _get_scheme(ws, pmap)
    from .inducing import export_csv as export_scheme_csv
    export_scheme_csv(scheme, ws.path("cells.csv"))
    if scheme.coverage < 0.95:
        ws.warn(f"retained coverage {scheme.coverage:.4f} < 0.95")
    stats = cell_statistics(scheme)
    rows = [[b, st.count, _g(st.max_sup_invF), _g(st.max_var_invF)]
            for b, st in sorted(stats.levels.items())]
    ws.write_csv("propbind.csv",
                 ["binding_level", "cell_count", "max_sup_invF", "max_var_invF"],
                 rows)
    ws.write_csv("propbind_constants.csv",
                 ["M_hat", "C_hat_sup", "C_hat_var"],
                 [[stats.M_hat, _g(stats.C_hat_sup), _g(stats.C_hat_var)]])
    frows = []
    for p in (1.0, 2.0):
        fs = F_condition_sums(scheme, p)
        frows.append([p, _g(fs["sup_sum"]), _g(fs["var_sum"]),
                      _g(fs["tail_bound"])])
    ws.write_csv("F_conditions.csv",
                 ["p", "sup_sum", "var_sum", "truncation_tail"], frows)
    td = tau_distribution(scheme)
    ws.write_csv("tau_tails.csv", ["n", "weight_tau_gt_n"],
                 [[n, _g(td.tails[n])] for n in range(td.tails.size)])
    srows = []
    for c in pmap.critical_points:
        data = orbit_data(pmap, c, min(scheme.tau_max, 60))
        for p in (1.0, 2.0):
            rep = summability_report(data, p)
            srows.append([_g(c.location), c.side, p, _g(rep.S3), _g(rep.S4),
                          rep.verdict3, rep.verdict4])
    ws.write_csv("summability.csv",
                 ["critical_point", "side", "p", "S3_partial", "S4_partial",
                  "verdict3", "verdict4"], srows)
    ws.check("every cell obeys tau between b and q0 + b",
             all(c.b <= c.tau <= scheme.q0 + c.b for c in scheme.cells))
    return ws.finish("induce")


def cmd_spectrum(ws: Workspace) -> int:
    pmap = _build_map(ws.cfg)
    scheme = _get_scheme(ws, pmap)
    op_f, rep_f, op_F, rep_F, P = _get_operators(ws, pmap, scheme)
    export_operator_csv(op_f, ws.path("operator_map.csv"))
    export_density_csv(rep_f.density, ws.path("density.csv"))
    export_density_csv(rep_F.density, ws.path("density_induced.csv"))
    ws.write_csv("spectral.csv",
                 ["operator", "gamma_hat", "eigenvalue_one_simple",
                  "residual", "bv_norm_h", "int_inv_h"],
                 [["map", _g(rep_f.second_modulus), int(rep_f.multiplicity_one),
                   _g(rep_f.residual), _g(rep_f.bv_norm_h), _g(rep_f.int_inv_h)],
                  ["induced", _g(rep_F.second_modulus),
                   int(rep_F.multiplicity_one), _g(rep_F.residual),
                   _g(rep_F.bv_norm_h), _g(rep_F.int_inv_h)]])
    ws.check("map operator rows are stochastic", op_f.check_stochastic())
    ws.check("eigenvalue 1 simple on the map operator", rep_f.multiplicity_one)
    ws.check("contraction factor below 1", rep_f.second_modulus < 1.0)
    fam = renewal_operators(scheme, P)
    pts = renewal_spectrum_check(fam)
    ws.write_csv("renewal.csv",
                 ["re_z", "im_z", "min_singular_value", "simple_at_one"],
                 [[_g(p.z.real), _g(p.z.imag), _g(p.min_singular_value),
                   "" if p.simple_at_one is None else int(p.simple_at_one)]
                  for p in pts])
    ws.check("renewal family complete up to truncation ledger",
             fam.completeness_gap() <= fam.truncation_mass + 1e-12)
    off = [p.min_singular_value for p in pts[1:]]
    ws.check("1 outside spectrum of P(z) on the circle (z != 1)",
             min(off) > 0.01 if off else True)
    tn = tail_norm_sums(scheme, 2.0)
    ws.write_csv("tail_norm_sums.csv",
                 ["p", "first_sum", "second_sum", "truncation_tail"],
                 [[2.0, _g(tn["first"]), _g(tn["second"]), _g(tn["tail_bound"])]])
    tm = pushdown_measure(scheme, rep_F.density, grid_k=op_f.k)
    export_density_csv(tm.pushed_density, ws.path("density_pushed.csv"))
    l1 = float(np.abs(tm.pushed_density - rep_f.density).sum() / op_f.k)
    ws.check("pushed-down density consistent with direct estimate (L1 < 0.1)",
             l1 < 0.1)
    # martingale-coboundary residual for the induced centered coordinate
    mu_mean = float((op_f.midpoints * rep_f.density).sum() / op_f.k)
    k = op_F.k
    phi = np.zeros(k)
    FM = np.zeros(k)
    for i, m in enumerate(op_F.midpoints):
        try:
            cell = scheme.cells[scheme.locate(m)]
        except NotCoveredError:
            continue
        traj, _, fy = cell_trajectory(scheme, cell, np.array([m]))
        phi[i] = float(np.sum(traj[:, 0] - mu_mean))
        FM[i] = float(fy[0])
    dec = gordin_solve(P, phi, rep_F.density, F_of_midpoints=FM)
    ws.write_csv("gordin.csv",
                 ["residual", "relative_residual", "series_terms"],
                 [[_g(dec.residual), _g(dec.relative_residual),
                   dec.series_terms]])
    ws.check("decomposed observable in the kernel of P (rel. residual <= 1e-8)",
             dec.relative_residual <= 1e-8)
    xs = op_f.midpoints
    line_plot(ws.path("density.svg"),
              [("estimated", xs, rep_f.density),
               ("pushed", xs, tm.pushed_density)],
              title=f"invariant density ({pmap.name})", xlabel="x",
              ylabel="h(x)")
    return ws.finish("spectrum")


def cmd_limits(ws: Workspace) -> int:
    pmap = _build_map(ws.cfg)
    st = ws.cfg["stats"]
    scheme = _get_scheme(ws, pmap)
    op_f, rep_f, op_F, rep_F, P = _get_operators(ws, pmap, scheme)
    mu_mean = float((op_f.midpoints * rep_f.density).sum() / op_f.k)
    phi = _observable(ws.cfg, mu_mean)
    law = st["law"]
    dens = rep_f.density if law == "grid-weighted" else None

    sigma2, corr_rep = green_kubo_sigma(pmap, phi, n_max=st["n_max"],
                                        N=st["N"], seed=st["seed"] + 1)
    ens = OrbitEnsemble(map=pmap, N=st["N"], n=st["n"], burn_in=st["burn_in"],
                        seed=st["seed"], law=law, grid_density=dens)
    samples = birkhoff_samples(ens, phi)
    rep = clt_test(samples, sigma2, threshold=st["ks_threshold"])
    ws.write_csv("clt.csv",
                 ["sigma2_gk", "sigma2_batch", "ks_distance", "threshold",
                  "sample_mean", "N", "n"],
                 [[_g(rep.sigma2_gk), _g(rep.sigma2_batch), _g(rep.ks_distance),
                   _g(rep.threshold), _g(rep.sample_mean), st["N"], st["n"]]])
    ws.check("normalized sums pass the KS test against the normal law",
             rep.verdict)
    ws.check("Green-Kubo and batch variances within 15%",
             abs(rep.sigma2_batch - sigma2) <= 0.15 * max(sigma2, 1e-12))
    fr = fclt_paths(ens, phi, sigma2)
    ws.write_csv("fclt.csv",
                 ["ks_endpoint", "ks_running_max", "ks_integral"],
                 [[_g(fr.ks_endpoint), _g(fr.ks_running_max),
                   _g(fr.ks_integral)]])
    # the running maximum converges at rate ~ n^-1/2 to its limit law;
    # allow that discretization bias on top of the configured threshold
    ws.check("path running maximum matches the reflection law",
             fr.ks_running_max < st["ks_threshold"] + 2.0 / math.sqrt(st["n"]))
    # decay + envelope
    td = tau_distribution(scheme)
    ns = corr_rep.n[1:]
    env = decay_envelope(td.tails, td.total_weight, ns, q=2.0)
    a = np.abs(corr_rep.rho[1:])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(env > 0, a / env, 0.0)
    C_env = float(np.max(ratios)) if ratios.size else 0.0
    ws.write_csv("decay.csv",
                 ["n", "rho", "abs_rho", "envelope_q2", "fit_kind", "fit_rate",
                  "fit_r2"],
                 [[int(n), _g(corr_rep.rho[n]), _g(a[n - 1]), _g(env[n - 1]),
                   corr_rep.fit_kind, _g(corr_rep.rate),
                   _g(corr_rep.r_squared)] for n in ns])
    line_plot(ws.path("decay.svg"),
              [("|rho(n)|", ns, a),
               ("C * envelope", ns, C_env * env)],
              title=f"correlation decay ({pmap.name}; fit "
                    f"{corr_rep.fit_kind}, rate {corr_rep.rate:.3g}, "
                    f"R2 {corr_rep.r_squared:.3g})",
              xlabel="n", ylabel="|rho|", logy=True)
    ws.check("fitted correlation decay rate positive",
             corr_rep.fit_kind == "decay-too-fast" or corr_rep.rate > 0)
    # large deviations
    n_grid = np.unique(np.geomspace(10, max(st["n"] // 10, 20), 8).astype(int))
    ens_ld = OrbitEnsemble(map=pmap, N=st["N"], n=int(n_grid[-1]),
                           burn_in=st["burn_in"], seed=st["seed"] + 2,
                           law=law, grid_density=dens)
    ld = large_deviation(ens_ld, phi, st["epsilon"], n_grid)
    ws.write_csv("large_deviation.csv",
                 ["n", "tail_probability", "epsilon"],
                 [[int(n), _g(p), _g(st["epsilon"])]
                  for n, p in zip(ld.n_grid, ld.tail_prob)])
    line_plot(ws.path("large_deviation.svg"),
              [("tail prob", ld.n_grid, ld.tail_prob)],
              title=f"large deviations (eps={st['epsilon']:g})",
              xlabel="n", ylabel="P(|S_n| >= eps n)", logx=True, logy=True)
    return ws.finish("limits")


# -- entry point -------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ergolab",
        description="Inducing schemes, transfer operators and limit-law "
                    "diagnostics for piecewise smooth interval maps.")
    parser.add_argument("command",
                        choices=["analyze-map", "induce", "spectrum", "limits"])
    parser.add_argument("--config", required=True, help="TOML config file")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, help="seed override")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker hint; results are thread-count invariant")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.out:
            cfg["output"]["directory"] = args.out
        if args.seed is not None:
            cfg["stats"]["seed"] = args.seed
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        ws = Workspace(cfg, cfg["output"]["directory"])
        handler = {"analyze-map": cmd_analyze_map, "induce": cmd_induce,
                   "spectrum": cmd_spectrum, "limits": cmd_limits}[args.command]
        return handler(ws)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
