"""Command-line entry point: ``leakyguide [global flags] <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import subprocess
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib import resources

import numpy as np

from . import __version__
from .core import ConfigError, SolverError, ToleranceSet, WaveguideConfig, load_config, table1_config

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


# ---------------------------------------------------------------------------
# manifest and writers


def version_string() -> str:
    """git describe of the source tree when available, else the package version."""
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"v{__version__}-g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    tolerance_overrides: dict
    output_dir: str
    version: str
    arguments: dict = field(default_factory=dict)
    started_utc: str = ""
    wall_clock_s: float = 0.0
    outputs: list = field(default_factory=list)

    @property
    def filename(self) -> str:
        return f"manifest-{self.command}.json"

    def reference(self) -> str:
        return f"# manifest: {self.filename}"


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": float(x.real), "im": float(x.imag)}
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


class Outputs:
    """Writes files into the output directory, each pointing back to the manifest."""

    def __init__(self, manifest: RunManifest):
        self.manifest = manifest
        os.makedirs(manifest.output_dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.manifest.output_dir, name)

    def csv(self, name: str, header: list, rows) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        buf.write(self.manifest.reference() + "\n")
        with open(self.path(name), "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
        self.manifest.outputs.append(name)
        return self.path(name)

    def json(self, name: str, payload: dict) -> str:
        payload = dict(_jsonable(payload))
        payload["manifest"] = self.manifest.filename
        with open(self.path(name), "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.manifest.outputs.append(name)
        return self.path(name)

    def register(self, name: str):
        self.manifest.outputs.append(name)

    def finish(self, t0: float):
        self.manifest.wall_clock_s = round(time.perf_counter() - t0, 3)
        with open(self.path(self.manifest.filename), "w", encoding="utf-8") as fh:
            json.dump(_jsonable(asdict(self.manifest)), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "PASS" if v else "FAIL"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v) + 0.0:.12e}"
    return str(v)


# ---------------------------------------------------------------------------
# shared helpers


def _config(args) -> WaveguideConfig:
    if args.config is None:
        raise ConfigError(f"command {args.command!r} needs --config PATH")
    return load_config(args.config)


def _tolerances(args) -> tuple[ToleranceSet, dict]:
    if args.tol_file is None:
        return ToleranceSet(), {}
    tol = ToleranceSet.from_json(args.tol_file)
    base = asdict(ToleranceSet())
    return tol, {k: v for k, v in asdict(tol).items() if base[k] != v}


def _read_source(args, config):
    from .helmholtz import source_from_dict
    from .core import _read_json

    if getattr(args, "zero_source", False):
        return source_from_dict({"kind": "zero"}, config), {"kind": "zero"}
    spec = _read_json(args.source) if args.source else None
    return source_from_dict(spec, config), spec or {"kind": "bump", "default": True}


def load_table1_reference() -> dict:
    text = resources.files("leakyguide").joinpath("data/table1.json").read_text(encoding="utf-8")
    return json.loads(text)


# ---------------------------------------------------------------------------
# commands


def cmd_modes(args, out: Outputs, tol: ToleranceSet):
    from .eigensolver import solve_modes, table_eigenvalue

    cfg = _config(args)
    sp = solve_modes(cfg, N=args.N, tol=tol)
    count = min(args.count, len(sp.blocks))
    lam_tab = table_eigenvalue(sp.lambdas[:count], cfg)
    rows = []
    for n, b in enumerate(sp.blocks[:count], start=1):
        rows.append((n, b.lam.real, b.lam.imag, b.beta.real, b.beta.imag, b.J,
                     lam_tab[n - 1].real, lam_tab[n - 1].imag, int(n <= sp.n_trusted)))
    out.csv("modes.csv", ["n", "Re_lambda", "Im_lambda", "Re_beta", "Im_beta", "J_n",
                          "Re_lambda_scaled", "Im_lambda_scaled", "trusted"], rows)
    side = {"N": sp.N, "delta": sp.delta, "n_trusted": sp.n_trusted, "count": count,
            "config": args.config, "diagnostics": sp.diagnostics}
    if args.coeffs:
        side["basis"] = "orthonormal cosines on (0, pi) in t = ln(r/r1)/delta, plus one boundary-enrichment function"
        side["coefficients"] = [{"n": n, "chain": [v for v in b.phi_chain]}
                                for n, b in enumerate(sp.blocks[:count], start=1)]
    out.json("modes.json", side)
    print(f"{count} modes written ({sp.n_trusted} trusted at N={sp.N})")
    return EXIT_OK


def table1_report(N: int = 400, tol: ToleranceSet | None = None) -> dict:
    """Side-by-side comparison with the embedded reference table."""
    from .eigensolver import align_to_reference, solve_modes, table_eigenvalue
    from .structure import pairing_constants

    ref = load_table1_reference()
    c = ref["config"]
    cfg = table1_config(c["theta_max"])
    rows_ref = np.array(ref["rows"], float)
    lam_ref = rows_ref[:, 1] + 1j * rows_ref[:, 2]
    int_ref = np.abs(rows_ref[:, 3] + 1j * rows_ref[:, 4])
    t0 = time.perf_counter()
    sp = solve_modes(cfg, N=N, tol=tol or ToleranceSet())
    lam_tab = table_eigenvalue(sp.lambdas, cfg)
    offset, _ = align_to_reference(lam_tab, lam_ref)
    pc = pairing_constants(sp)
    elapsed = time.perf_counter() - t0
    rows = []
    for k in range(len(lam_ref)):
        m = offset + k
        lc, lr = lam_tab[m], lam_ref[k]
        rel = abs(lc - lr) / abs(lr)
        rel_re = abs(lc.real - lr.real) / abs(lr.real)
        rel_im = abs(lc.imag - lr.imag) / abs(lr.imag)
        ic = float(pc.unweighted_ratio[m])
        ic_rinv = float(abs(pc.c[m][0]))
        rows.append({"n": k + 1, "mode": m + 1, "lambda": lc, "lambda_ref": lr, "rel_err": rel,
                     "rel_err_re": rel_re, "rel_err_im": rel_im, "int_phi2": ic, "int_phi2_ref": float(int_ref[k]), "int_phi2_rinv": ic_rinv,
                     "int_phi2_diff": abs(ic - int_ref[k]), "lambda_pass": rel < 1e-3,
                     "componentwise_pass": max(rel_re, rel_im) < 1e-3, "int_phi2_pass": abs(ic - int_ref[k]) < 1e-2})
    extra = [{"mode": i + 1, "lambda": lam_tab[i]} for i in range(offset)]
    return {"rows": rows, "offset": offset, "extra_modes": extra, "N": N, "elapsed_s": elapsed,
            "assumption": "refractive index identically 1 (not listed with the reference data)",
            "lambda_pass": all(r["lambda_pass"] for r in rows),
            "componentwise_pass": all(r["componentwise_pass"] for r in rows),
            "int_phi2_pass": all(r["int_phi2_pass"] for r in rows)}


def cmd_table1(args, out: Outputs, tol: ToleranceSet):
    rep = table1_report(args.N, tol)
    header = ["n", "mode", "Re_lambda", "Im_lambda", "Re_lambda_ref", "Im_lambda_ref", "rel_err",
              "rel_err_re", "rel_err_im", "abs_int_phi2", "abs_int_phi2_rinv", "abs_int_phi2_ref", "abs_diff_int_phi2",
              "lambda_status", "int_phi2_status"]
    rows = [(r["n"], r["mode"], r["lambda"].real, r["lambda"].imag, r["lambda_ref"].real, r["lambda_ref"].imag,
             r["rel_err"], r["rel_err_re"], r["rel_err_im"], r["int_phi2"], r["int_phi2_rinv"], r["int_phi2_ref"],
             r["int_phi2_diff"],
             r["lambda_pass"], r["int_phi2_pass"]) for r in rep["rows"]]
    out.csv("table1.csv", header, rows)
    summary = {k: v for k, v in rep.items() if k not in ("rows", "elapsed_s")}
    out.json("table1.json", summary)
    print(f"{'n':>3} {'computed lambda':>28} {'reference lambda':>28} {'rel err':>9} "
          f"{'|int phi^2|':>11} {'ref':>7} {'|diff|':>7}  status")
    for r in rep["rows"]:
        lc, lr = r["lambda"], r["lambda_ref"]
        st = ("PASS" if r["lambda_pass"] else "FAIL") + "/" + ("PASS" if r["int_phi2_pass"] else "FAIL")
        print(f"{r['n']:>3} {lc.real:>13.5f}{lc.imag:+13.5f}i {lr.real:>13.5f}{lr.imag:+13.5f}i "
              f"{r['rel_err']:9.2e} {r['int_phi2']:11.5f} {r['int_phi2_ref']:7.5f} {r['int_phi2_diff']:7.4f}  {st}")
    for e in rep["extra_modes"]:
        lam = e["lambda"]
        print(f"mode {e['mode']} ({lam.real:.5f}{lam.imag:+.5f}i) has no counterpart in the reference listing")
    print(f"note: {rep['assumption']}; |int phi^2| is |int phi^2 dr| / int |phi|^2 dr "
          f"(the 1/r-weighted variant is in the CSV)")
    print(f"eigenvalues |dlambda|/|lambda| < 1e-3: {'PASS' if rep['lambda_pass'] else 'FAIL'}")
    print(f"eigenvalues Re and Im separately < 1e-3: {'PASS' if rep['componentwise_pass'] else 'FAIL'}")
    print(f"|int phi^2| within 1e-2: {'PASS' if rep['int_phi2_pass'] else 'FAIL'}")
    return EXIT_OK


def cmd_solve(args, out: Outputs, tol: ToleranceSet):
    from .eigensolver import solve_modes
    from .helmholtz import solve, source_l2_norm

    cfg = _config(args)
    f, spec = _read_source(args, cfg)
    sp = solve_modes(cfg, N=args.N, tol=tol)
    sol = solve(cfg, f, args.modes, sp)
    nr, nt = args.grid
    r = np.linspace(cfg.r1, cfg.r2, nr)
    th = np.linspace(0.0, cfg.theta_max, nt)
    U = sol.field(r, th)
    out.csv("solution.csv", ["r", "theta", "Re_u", "Im_u"],
            ((r[i], th[k], U[i, k].real, U[i, k].imag) for i in range(nr) for k in range(nt)))
    fn = source_l2_norm(f, cfg)
    l2, h1 = sol.l2_norm(), sol.h1_norm()
    out.json("solution.json", {
        "l2_norm": l2, "h1_norm": h1, "source_l2_norm": fn, "h1_over_source": (h1 / fn) if fn > 0 else 0.0,
        "modes": sol.diagnostics["count"], "tail_load": sol.diagnostics["tail_load"],
        "dirichlet_trace": sol.dirichlet_trace(), "outgoing_residual": sol.outgoing_residual(),
        "source": spec, "theta_max": cfg.theta_max, "grid": [nr, nt]})
    print(f"||u||_L2 = {l2:.6e}  ||u||_H1 = {h1:.6e}  ||f||_L2 = {fn:.6e}")
    return EXIT_OK


def cmd_stability(args, out: Outputs, tol: ToleranceSet):
    from .eigensolver import solve_modes
    from .helmholtz import stability_scan

    cfg = _config(args)
    f, spec = _read_source(args, cfg)
    sp = solve_modes(cfg, N=args.N, tol=tol)
    Ls = [float(x) * math.pi for x in args.theta_max_pi]
    rep = stability_scan(cfg, f, Ls, args.modes, sp)
    rows = [(L, L / math.pi, q, g, c, g <= c) for L, q, g, c in zip(rep.theta_max, rep.ratios, rep.gamma_max, rep.gamma_cap)]
    out.csv("stability.csv", ["theta_max", "theta_max_over_pi", "h1_over_source", "gamma_max", "gamma_cap", "cap_status"], rows)
    d = rep.to_dict()
    d["ratio_growth"] = float(rep.ratios[-1] / rep.ratios[0]) if rep.ratios[0] > 0 else 0.0
    d["source"] = spec
    out.json("stability.json", d)
    for row in rows:
        print(f"theta_max = {row[1]:5.1f} pi  ratio = {row[2]:.6e}  gamma_max = {row[3]:.4f}  cap = {row[4]:.4f}")
    return EXIT_OK


def cmd_roots(args, out: Outputs, tol: ToleranceSet):
    from .roots import Box, argument_principle_count, find_roots_sin_plus_z, plot_log_abs, random_subboxes

    try:
        box = Box(*args.box)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    res = find_roots_sin_plus_z(box, args.density, tol)
    roots = res.roots
    out.csv("roots.csv", ["Re_w", "Im_w", "residual"], zip(roots.real, roots.imag, res.residuals))
    def closed(z):
        return all(np.min(np.abs(roots - z0)) < 1e-8 for z0 in z) if len(roots) else True
    sym_neg, sym_conj = closed(-roots), closed(np.conj(roots))
    checks = []
    for b in random_subboxes(box, roots, args.subboxes, seed=args.seed):
        nb = int(np.count_nonzero(b.contains(roots)))
        ap = argument_principle_count(b) - int(b.contains(0.0))
        checks.append({"box": [b.re_min, b.re_max, b.im_min, b.im_max], "newton": nb, "argument_principle": ap})
    zero_in = bool(box.contains(0.0))
    summary = {"box": list(args.box), "density": args.density, "seeds": res.seeds, "count": len(roots),
               "argument_principle_count": argument_principle_count(box) - int(zero_in), "zero_excluded": zero_in,
               "max_residual": float(res.residuals.max()) if len(roots) else 0.0,
               "closed_under_negation": sym_neg, "closed_under_conjugation": sym_conj, "subboxes": checks}
    if args.svg:
        plot_log_abs(box, roots, out.path("roots.svg"))
        out.register("roots.svg")
    out.json("roots.json", summary)
    print(f"{len(roots)} nonzero roots, argument principle {summary['argument_principle_count']}, "
          f"max residual {summary['max_residual']:.2e}")
    return EXIT_OK


def cmd_diagnostics(args, out: Outputs, tol: ToleranceSet):
    from .eigensolver import solve_modes
    from .structure import bari_diagnostics, biorthogonality_defect, pairing_constants

    cfg = _config(args)
    sp = solve_modes(cfg, N=args.N, tol=tol)
    count = min(args.count, len(sp.blocks))
    pc = pairing_constants(sp)
    br = bari_diagnostics(sp)
    marks = [k for k in (10, 25, 50, 100, 200, 400) if k <= len(br.n)]
    out.csv("bari.csv", ["n", "l2_term", "l2_partial", "h1_partial", "Re_ratio", "Im_ratio"],
            zip(br.n, br.l2_terms, br.l2_partial, br.h1_partial, br.ratio.real, br.ratio.imag))
    payload = {
        "N": sp.N, "n_trusted": sp.n_trusted,
        "pairing": {"c": [c for c in pc.c[:count]], "inf_abs": pc.inf_abs,
                    "unweighted_ratio": pc.unweighted_ratio[:count]},
        "biorthogonality_defect": biorthogonality_defect(sp, count),
        "bari": {"partial_sums_l2": {str(k): float(br.l2_partial[k - 1]) for k in marks},
                 "partial_sums_h1": {str(k): float(br.h1_partial[k - 1]) for k in marks},
                 "ambiguous_matches": br.ambiguous},
        "ratio_table": [{"n": int(k), "lambda_t_over_mu": br.ratio[k - 1]} for k in marks],
        "jordan": {"chain_lengths": sp.chain_lengths[:count], "max_chain": int(sp.chain_lengths.max()),
                   "report": sp.diagnostics},
    }
    out.json("diagnostics.json", payload)
    print(f"inf|c_n| = {pc.inf_abs:.4f}, biorthogonality defect {payload['biorthogonality_defect']:.2e}")
    return EXIT_OK


def cmd_perturbation(args, out: Outputs, tol: ToleranceSet):
    from .eigensolver import solve_modes
    from .perturbation import compare_with_galerkin, mu_seq

    cfg = _config(args)
    if args.n_max * 5 > args.N:
        raise ConfigError("--N must be at least 5 * n_max")
    sp = solve_modes(cfg, N=args.N, tol=tol)
    ns = list(range(args.n_min, args.n_max + 1))
    cmp_ = compare_with_galerkin(sp, ns, args.k_max)
    lam_t = sp.lambdas_t
    header = ["n", "Re_lambda_t", "Im_lambda_t", "mu", "abs_ratio_minus_1", "dev_norm", "first_order_norm",
              "remainder_norm", "remainder_over_first_sq"] + [f"order{k}_norm" for k in range(1, args.k_max + 1)] \
        + [f"order{k}_h1_scaled" for k in range(1, args.k_max + 1)]
    rows = []
    for i, n in enumerate(ns):
        mu = float(mu_seq(n))
        rows.append([n, lam_t[n - 1].real, lam_t[n - 1].imag, mu, abs(lam_t[n - 1] / mu - 1), cmp_.deviation[i],
                     cmp_.first_order[i], cmp_.remainder[i], cmp_.remainder_ratio[i]]
                    + list(cmp_.series_norms[i]) + list(cmp_.h1_scaled[i]))
    out.csv("perturbation.csv", header, rows)
    print(f"max remainder / ||phi^(1)||^2 over n in [{args.n_min}, {args.n_max}]: {cmp_.remainder_ratio.max():.4f}")
    return EXIT_OK


COMMANDS = {"modes": cmd_modes, "table1": cmd_table1, "solve": cmd_solve, "stability": cmd_stability,
            "roots": cmd_roots, "diagnostics": cmd_diagnostics, "perturbation": cmd_perturbation}


# ---------------------------------------------------------------------------
# parser


def _global_flags(p: argparse.ArgumentParser, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", metavar="PATH", default=d(None), help="waveguide configuration (JSON)")
    p.add_argument("--out", metavar="DIR", default=d("out"), help="output directory (default: out)")
    p.add_argument("--tol-file", metavar="PATH", default=d(None), help="JSON tolerance overrides")
    p.add_argument("--threads", metavar="N", type=int, default=d(None), help="BLAS/OpenMP thread limit")
    p.add_argument("--seed", metavar="N", type=int, default=d(0), help="seed for randomized trials only")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leakyguide", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        return p

    p = add("modes", "transversal eigenvalues and propagation constants")
    p.add_argument("--N", type=int, default=400, help="Galerkin dimension")
    p.add_argument("--count", type=int, default=20, help="modes to write")
    p.add_argument("--coeffs", action="store_true", help="include basis coefficients in the JSON sidecar")

    p = add("table1", "compare with the embedded reference eigenvalue table")
    p.add_argument("--N", type=int, default=400)

    for name, help_ in (("solve", "modal Helmholtz solve"), ("stability", "length scan of the H1 / L2 ratio")):
        p = add(name, help_)
        p.add_argument("--source", metavar="PATH", help="source JSON (default: smooth bump)")
        p.add_argument("--zero-source", action="store_true", help="use f = 0")
        p.add_argument("--N", type=int, default=400)
        p.add_argument("--modes", type=int, default=None, help="modes in the expansion (default: min(trusted, 40))")
        if name == "solve":
            p.add_argument("--grid", type=int, nargs=2, default=(41, 81), metavar=("NR", "NTHETA"))
        else:
            p.add_argument("--theta-max-pi", type=float, nargs="+", default=(2, 4, 8, 16),
                           help="theta_max values in multiples of pi")

    p = add("roots", "zeros of sin w + w in a box")
    p.add_argument("--box", type=float, nargs=4, default=(-20.0, 20.0, -10.0, 10.0),
                   metavar=("RE_MIN", "RE_MAX", "IM_MIN", "IM_MAX"))
    p.add_argument("--density", type=float, default=20.0, help="Newton seeds per unit area (>= 20)")
    p.add_argument("--subboxes", type=int, default=5, help="random sub-boxes for the counting check")
    p.add_argument("--svg", action="store_true", help="also write a log|f| contour plot")

    p = add("diagnostics", "pairing constants, biorthogonality, Bari sums and Jordan report")
    p.add_argument("--N", type=int, default=400)
    p.add_argument("--count", type=int, default=30)

    p = add("perturbation", "perturbation series against Galerkin eigenvectors")
    p.add_argument("--N", type=int, default=400)
    p.add_argument("--n-min", type=int, default=30)
    p.add_argument("--n-max", type=int, default=60)
    p.add_argument("--k-max", type=int, default=3)
    return parser


def _limit_threads(n: int | None):
    if n is None:
        return None
    if n < 1:
        raise ConfigError("--threads must be positive")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    t0 = time.perf_counter()
    try:
        tol, overrides = _tolerances(args)
        manifest = RunManifest(
            command=args.command, config_path=args.config, tolerance_overrides=overrides, output_dir=args.out,
            version=version_string(), started_utc=datetime.now(timezone.utc).isoformat(timespec="seconds"),
            arguments={k: v for k, v in sorted(vars(args).items()) if k not in ("command",)})
        out = Outputs(manifest)
        limiter = _limit_threads(args.threads)
        try:
            code = COMMANDS[args.command](args, out, tol)
        finally:
            if limiter is not None:
                limiter.unregister()
        out.finish(t0)
        return code
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
