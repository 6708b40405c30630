"""``lab``: configuration-driven experiment runner.

    lab list                 catalog of experiment kinds
    lab validate <config>    schema check only
    lab run <config>         run, writing results, plot data and a manifest

Exit codes: 0 success, 2 schema violation, 3 failure inside a module (the
output directory then holds a ``FAILED`` marker and any partial results).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import platform
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from gaussloc import __version__
from gaussloc.config import CATALOG, ConfigError, ExperimentConfig, load_config
from gaussloc.stats import WORKERS_ENV, default_workers

EXIT_OK, EXIT_SCHEMA, EXIT_MODULE = 0, 2, 3


class ModuleFailure(RuntimeError):
    def __init__(self, module: str, cause: BaseException):
        super().__init__(f"{module}: {type(cause).__name__}: {cause}")
        self.module, self.cause = module, cause


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    if isinstance(x, Path):
        return str(x)
    return x


def _dump(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


class RunContext:
    """Collects results and plot series; flushes partial results on failure."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.results: dict = {}
        self.series: dict[str, tuple[np.ndarray, np.ndarray, str]] = {}
        self.files: dict[str, str] = {}

    def plot(self, name: str, x, y, header: str = ""):
        self.series[name] = (np.asarray(x, float).ravel(), np.asarray(y, float).ravel(), header)

    def text(self, name: str, content: str):
        self.files[name] = content


# ---------------------------------------------------------------------------
# runners
# ---------------------------------------------------------------------------


def _trials(cfg, default=None):
    return cfg.trials if cfg.trials is not None else default


def run_field_validate(cfg: ExperimentConfig, ctx: RunContext):
    from gaussloc.experiments import covariance_fidelity

    spec = cfg.build_covariance()
    chk = covariance_fidelity(spec, int(cfg.grid["points"]), float(cfg.grid["h"]), _trials(cfg), cfg.seed,
                              cfg.params.get("max_lag"))
    zmax = float(cfg.params.get("z_max", 5.0))
    ctx.results.update(max_z=chk.max_z, max_abs_error=float(np.max(np.abs(chk.empirical - chk.exact))),
                       samples=chk.samples, z_max=zmax, passed=chk.max_z <= zmax)
    axis0 = np.all(chk.lags[:, 1:] == 0, axis=1) if chk.lags.shape[1] > 1 else np.ones(len(chk.lags), bool)
    ctx.plot("covariance_empirical", chk.lags[axis0, 0], chk.empirical[axis0], "lag  empirical")
    ctx.plot("covariance_exact", chk.lags[axis0, 0], chk.exact[axis0], "lag  exact")


def run_wegner(cfg: ExperimentConfig, ctx: RunContext):
    from gaussloc.experiments import wegner_study

    spec = cfg.build_covariance()
    cells = wegner_study(spec, cfg.energies, float(cfg.params["eps"]), cfg.grid["sizes"], _trials(cfg), cfg.seed,
                         float(cfg.grid["h"]))
    ctx.results["cells"] = [dict(E=c.E, edge=c.edge, points=c.points, mean=c.mean, stderr=c.stderr, bound=c.bound,
                                 W=c.W, holds=c.holds) for c in cells]
    ctx.results["fraction_holding"] = sum(c.holds for c in cells) / len(cells)
    Es = sorted({c.E for c in cells})
    ctx.plot("wegner_W", Es, [next(c.W for c in cells if c.E == E) for E in Es], "E  W(E+eps)")
    for edge in sorted({c.edge for c in cells}):
        sel = [c for c in cells if c.edge == edge]
        ctx.plot(f"increments_L{edge:g}", [c.E for c in sel], [c.mean / c.bound for c in sel], "E  mean/bound")


def run_combes_thomas(cfg: ExperimentConfig, ctx: RunContext):
    from gaussloc.experiments import combes_thomas_study

    cases = combes_thomas_study(int(cfg.params["cases"]), cfg.seed, float(cfg.grid.get("h", 0.05)))
    ctx.results["cases"] = [dict(gap=c.gap, delta=c.delta, measured=c.measured, bound=c.bound,
                                 dominated=c.dominated, rate=c.rate, rate_ratio=c.rate_ratio) for c in cases]
    ctx.results["dominated"] = sum(c.dominated for c in cases)
    ctx.results["min_rate_ratio"] = min(c.rate_ratio for c in cases)
    ctx.plot("decay_case0", cases[0].deltas, cases[0].norms, "delta  norm")
    ctx.plot("measured_vs_bound", [c.bound for c in cases], [c.measured for c in cases], "bound  measured")


def run_fernique(cfg: ExperimentConfig, ctx: RunContext):
    from gaussloc.experiments import tail_slope
    from gaussloc.field import sup_norm_exceedance

    spec = cfg.build_covariance()
    res = sup_norm_exceedance(spec, float(cfg.params["ell"]), cfg.energies, _trials(cfg), cfg.seed,
                              float(cfg.grid["h"]))
    slope, window = tail_slope(res.E, res.p_hat, res.trials)
    ctx.results.update(ell=res.ell, ell_H=res.ell_H, in_regime=res.in_regime, E=res.E, p_hat=res.p_hat,
                       low=res.low, high=res.high, bound=res.bound,
                       below_bound=bool(np.all(res.p_hat <= res.bound)), slope=slope,
                       slope_over_inverse_c0=slope * spec.sigma**2 * spec.c0, window=window)
    ctx.plot("tail", res.E, res.p_hat, "E  P(sup|V| >= E)")
    ctx.plot("bound", res.E, res.bound, "E  bound")


def run_ids(cfg: ExperimentConfig, ctx: RunContext):
    from gaussloc.operator import free_ids, ids_estimate

    spec = cfg.build_covariance() if cfg.covariance else None
    res = ids_estimate(spec, cfg.energies, cfg.grid["sizes"], _trials(cfg), cfg.seed, float(cfg.grid["h"]))
    ctx.results.update(energies=res.energies, sizes=res.sizes, mean=res.mean, stderr=res.stderr,
                       convergence=res.convergence, trials=res.trials)
    for i, L in enumerate(res.sizes):
        ctx.plot(f"ids_L{L:g}", res.energies, res.mean[i], "E  N(E)/|Lambda|")
    if spec is None:
        ctx.plot("ids_free", res.energies, free_ids(res.energies, 1), "E  free IDS")


def run_ladder(cfg: ExperimentConfig, ctx: RunContext):
    from gaussloc.experiments import ladder_mse

    spec = cfg.build_covariance()
    g = cfg.geometry
    res = ladder_mse(spec, int(g["N"]), float(g["nu"]), float(g["L0"]), int(g["k_max"]), float(cfg.grid["h"]),
                     _trials(cfg), cfg.seed, int(cfg.grid.get("points", 64)))
    ctx.results.update(lengths=res.lengths, mse=res.mse, stderr=res.stderr, bound=res.bound, slope=res.slope,
                       target_slope=spec.d - 2 * spec.zeta if spec.zeta else None)
    ctx.plot("mse", res.lengths, res.mse, "L_k  E(V_k - V)^2")


def run_localize(cfg: ExperimentConfig, ctx: RunContext):
    from gaussloc.msa import localization_diagnostic

    spec = cfg.build_covariance()
    rep = localization_diagnostic(spec, cfg.energies[0], cfg.grid["sizes"], _trials(cfg), cfg.seed,
                                  float(cfg.grid["h"]), cfg.params.get("beta"))
    ctx.results.update(rep.to_dict())
    ctx.plot("median_norm", rep.lengths, rep.median_norms(), "L  median sup_eta norm")
    ctx.plot("median_ipr", rep.lengths, rep.median_iprs(), "L  median IPR")
    ctx.plot("free_ipr", rep.lengths, rep.free_median_iprs(), "L  free IPR")


def run_msa_check(cfg: ExperimentConfig, ctx: RunContext):
    from gaussloc.msa import MsaParameters, check_msa_parameters, search_feasible_parameters

    g = cfg.geometry
    if cfg.params.get("mode", "check") == "search":
        res = search_feasible_parameters(int(g["d"]), int(g["N"]), int(g["S"]), float(g["delta"]), float(g["zeta"]))
        ctx.results.update(json.loads(res.to_json()))
        return
    pm = check_msa_parameters(MsaParameters(int(g["d"]), int(g["N"]), int(g["S"]), float(g["nu"]), float(g["r"]),
                                            float(g["rho"]), float(g["theta"]), float(g["w"]), float(g["delta"]),
                                            float(g["zeta"]), float(g["L0"])))
    ctx.results.update(json.loads(pm.to_json()))


def run_msa_probe(cfg: ExperimentConfig, ctx: RunContext):
    from gaussloc.msa import MsaGeometry, deterministic_implication_check, estimate_regularity_probability

    spec = cfg.build_covariance()
    g = cfg.geometry
    geo = MsaGeometry(int(g["N"]), float(g["nu"]))
    L, r = float(g["L"]), float(g["r"])
    rho = g.get("rho")
    rows, lines = [], []
    for E in cfg.energies:
        est = estimate_regularity_probability(spec, geo, r, E, L, _trials(cfg), cfg.seed, float(cfg.grid["h"]),
                                              rho=rho, workers=cfg.workers)
        rows.append({"E": E, **est.to_dict()})
        lines += [p.to_json() for p in est.probes]
    ctx.results["regularity"] = rows
    ctx.text("probes.jsonl", "\n".join(lines) + "\n")
    ctx.plot("regularity_probability", cfg.energies, [r_["estimate"]["p"] for r_ in rows], "E  P(regular)")
    if cfg.params.get("implication", False):
        rep = deterministic_implication_check(spec, geo, r, float(g["w"]), int(g["S"]),
                                              float(cfg.params.get("implication_E", cfg.energies[0])), L,
                                              trials=_trials(cfg), seed=cfg.seed, h=float(cfg.grid["h"]),
                                              workers=cfg.workers)
        ctx.results["implication"] = rep.to_dict()


def run_decompose(cfg: ExperimentConfig, ctx: RunContext):
    from gaussloc.experiments import decomposition_study

    spec = cfg.build_covariance()
    st = decomposition_study(spec, int(cfg.grid["points"]), float(cfg.grid["h"]), _trials(cfg), cfg.seed)
    ctx.results.update(samples=st.samples, lam_var=st.lam_var, lam_var_stderr=st.lam_var_stderr, u_min=st.u_min,
                       max_abs_corr=st.max_abs_corr, corr_stderr=st.corr_stderr,
                       boundary_weight=st.boundary_weight)


RUNNERS = {
    "combes-thomas": run_combes_thomas,
    "decompose": run_decompose,
    "fernique": run_fernique,
    "field-validate": run_field_validate,
    "ids": run_ids,
    "ladder": run_ladder,
    "localize": run_localize,
    "msa-check": run_msa_check,
    "msa-probe": run_msa_probe,
    "wegner": run_wegner,
}


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------


def list_experiments() -> list[dict]:
    return [{"kind": k, "doc": CATALOG[k].doc, "anchor": CATALOG[k].anchor, "required": list(CATALOG[k].required)}
            for k in sorted(CATALOG)]


def _failing_module(exc: BaseException) -> str:
    mod = "cli"
    for frame in traceback.extract_tb(exc.__traceback__):
        p = Path(frame.filename)
        if p.parent.name == "gaussloc":
            mod = p.stem
    return mod


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write(out: Path, name: str, content: str, written: dict):
    data = content.encode()
    (out / name).write_bytes(data)
    written[name] = _sha(data)


def _flush(ctx: RunContext, out: Path, written: dict, partial: bool):
    _write(out, "results.partial.json" if partial else "results.json",
           _dump({"kind": ctx.cfg.kind, "seed": ctx.cfg.seed, "results": ctx.results}), written)
    for name, (x, y, header) in sorted(ctx.series.items()):
        lines = [f"# {header}"] if header else []
        lines += [f"{a!r} {b!r}" for a, b in zip(x.tolist(), y.tolist())]
        _write(out, f"{name}.dat", "\n".join(lines) + "\n", written)
    for name, content in sorted(ctx.files.items()):
        _write(out, name, content, written)
    if ctx.series:
        plots = [f'plot "{n}.dat" using 1:2 with linespoints title "{n}"' for n in sorted(ctx.series)]
        script = "set terminal pngcairo\n" + "".join(
            f'set output "{n}.png"\n{p}\n' for n, p in zip(sorted(ctx.series), plots))
        _write(out, "plot.gp", script, written)


def _tolerances(rtol: float) -> dict:
    from gaussloc import field as fld
    from gaussloc import operator as op_mod

    return {"solver_rtol": rtol, "dense_limit": op_mod.DENSE_LIMIT, "embed_neg_tol": fld.EMBED_NEG_TOL,
            "embed_mass_tol": fld.EMBED_MASS_TOL}


def run(cfg: ExperimentConfig) -> int:
    out = Path(cfg.output)
    man_path = out / "manifest.json"
    if man_path.exists():
        try:
            prev = json.loads(man_path.read_text())
        except ValueError:
            prev = {}
        if prev.get("config_digest") not in (None, cfg.digest()):
            raise ConfigError("output", f"{out} holds results of a different experiment; choose another directory")
    out.mkdir(parents=True, exist_ok=True)
    for stale in ("FAILED", "results.partial.json"):
        if (out / stale).exists():
            (out / stale).unlink()
    from gaussloc import operator as op_mod

    saved_rtol = op_mod.SOLVE_RTOL
    rtol = float(cfg.solver.get("rtol", saved_rtol))
    op_mod.SOLVE_RTOL = rtol
    ctx = RunContext(cfg)
    written: dict = {}
    started = time.time()
    status, failure = "ok", None
    try:
        RUNNERS[cfg.kind](cfg, ctx)
    except Exception as exc:  # module failure: keep what we have
        failure = ModuleFailure(_failing_module(exc), exc)
        status = "failed"
    finally:
        op_mod.SOLVE_RTOL = saved_rtol
    _flush(ctx, out, written, partial=failure is not None)
    if failure is not None:
        _write(out, "FAILED", f"module: {failure.module}\ncause: {type(failure.cause).__name__}: {failure.cause}\n\n"
               + "".join(traceback.format_exception(type(failure.cause), failure.cause,
                                                    failure.cause.__traceback__)), written)
    manifest = {
        "kind": cfg.kind,
        "status": status,
        "config": cfg.raw,
        "config_digest": cfg.digest(),
        "seed": cfg.seed,
        "tolerances": _tolerances(rtol),
        "workers": cfg.workers or default_workers(),
        "code_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
        "wall_time_s": round(time.time() - started, 3),
        "files": written,
    }
    man_path.write_text(_dump(manifest))
    if failure is not None:
        print(f"FAILED in module {failure.module}: {type(failure.cause).__name__}: {failure.cause}", file=sys.stderr)
        return EXIT_MODULE
    return EXIT_OK


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="lab", description="Gaussian-potential localization laboratory",
                                 epilog=f"worker count default: ${WORKERS_ENV}")
    sub = ap.add_subparsers(dest="cmd", required=True)
    sub.add_parser("list", help="catalog of experiment kinds")
    p_val = sub.add_parser("validate", help="check a config against the schema")
    p_val.add_argument("config")
    p_run = sub.add_parser("run", help="run an experiment")
    p_run.add_argument("config")
    args = ap.parse_args(argv)
    if args.cmd == "list":
        for e in list_experiments():
            print(f"{e['kind']:<15} {e['doc']}")
            print(f"{'':<15} anchor: {e['anchor']}; required: {', '.join(e['required'])}")
        return EXIT_OK
    try:
        cfg = load_config(args.config)
        if args.cmd == "validate":
            print(f"{args.config}: valid {cfg.kind} config")
            return EXIT_OK
        code = run(cfg)
    except ConfigError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    if code == EXIT_OK:
        print(f"{cfg.kind}: results in {cfg.output}")
    return code


if __name__ == "__main__":
    sys.exit(main())
