"""Command-line entry point: optima, theory, experiment, and clt subcommands.

The CLI wires a JSON config file, flag overrides (flag > file > default),
an optimum-set cache keyed on a hash of the model section, and the file
outputs declared by the other modules. Every run records the config hash
and master seed in a provenance sidecar.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from . import asymptotics, bayes, harness, population
from .model import ModelSpec, model_config_dict

__all__ = ["main", "RunConfig", "load_run_config"]

DEFAULT_CLT_N = 500
DEFAULT_CLT_REPLICATIONS = 5000


@dataclass(frozen=True)
class RunConfig:
    spec: ModelSpec
    plan: harness.ExperimentPlan
    grid: bayes.GridConfig
    out_dir: Path
    cache_dir: Path
    threads: int | None
    mc_draws: int
    clt_n: int
    clt_replications: int

    @property
    def config_hash(self) -> str:
        canonical = json.dumps(model_config_dict(self.spec), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _merge(file_value, flag_value, default):
    if flag_value is not None:
        return flag_value
    if file_value is not None:
        return file_value
    return default


def load_run_config(args) -> RunConfig:
    raw: dict = {}
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        raw = json.loads(path.read_text(encoding="utf-8"))

    model_raw = dict(raw.get("model", {}))
    for key in ("x_support", "prior_a", "prior_b"):
        if key in model_raw:
            model_raw[key] = tuple(float(v) for v in model_raw[key])
    spec = ModelSpec(**model_raw)

    plan_raw = raw.get("plan", {})
    sizes = _merge(plan_raw.get("sample_sizes"), args.sample_sizes, (100, 200, 300, 400, 500, 600))
    out_dir = Path(_merge(raw.get("output_dir"), args.out, "out"))
    plan = harness.ExperimentPlan(
        sample_sizes=tuple(int(n) for n in sizes),
        replications=int(_merge(plan_raw.get("replications"), args.replications, 200)),
        master_seed=int(_merge(plan_raw.get("master_seed"), args.seed, 20250810)),
        beta=float(_merge(plan_raw.get("beta"), args.beta, 1.0)),
        output_dir=out_dir,
    )

    grid_raw = raw.get("grid", {})
    grid = bayes.GridConfig(
        coarse_resolution=int(_merge(grid_raw.get("coarse_resolution"), args.grid_coarse, 200)),
        patch_resolution=int(_merge(grid_raw.get("patch_resolution"), args.grid_patch, 80)),
        patch_radius=float(_merge(grid_raw.get("patch_radius"), args.grid_radius, 1.5)),
    )

    clt_raw = raw.get("clt", {})
    threads = args.threads if args.threads is None else int(args.threads)
    if threads is not None and threads < 1:
        raise ValueError("--threads must be >= 1")
    return RunConfig(
        spec=spec,
        plan=plan,
        grid=grid,
        out_dir=out_dir,
        cache_dir=Path(_merge(raw.get("cache_dir"), args.cache, out_dir / "cache")),
        threads=threads,
        mc_draws=int(raw.get("mc_draws", 400_000)),
        clt_n=int(_merge(clt_raw.get("n"), getattr(args, "clt_n", None), DEFAULT_CLT_N)),
        clt_replications=int(
            _merge(clt_raw.get("replications"), args.replications, DEFAULT_CLT_REPLICATIONS)
        ),
    )


def _write_provenance(cfg: RunConfig, command: str) -> None:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.out_dir / "provenance.json"
    doc = {}
    if path.exists():
        doc = json.loads(path.read_text(encoding="utf-8"))
    doc[command] = {
        "config_hash": cfg.config_hash,
        "master_seed": cfg.plan.master_seed,
    }
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _write_if_changed(path: Path, text: str) -> None:
    if path.exists() and path.read_text(encoding="utf-8") == text:
        return
    path.write_text(text, encoding="utf-8")


def _load_or_find_optima(cfg: RunConfig) -> population.OptimumSet:
    cfg.cache_dir.mkdir(parents=True, exist_ok=True)
    cache_file = cfg.cache_dir / f"optima-{cfg.config_hash}.json"
    if cache_file.exists():
        return population.OptimumSet.load(cache_file)
    opt = population.find_optima(cfg.spec)
    opt.save(cache_file)
    return opt


def _optima_json_text(cfg: RunConfig, opt: population.OptimumSet) -> str:
    doc = opt.to_json_dict()
    doc["config_hash"] = cfg.config_hash
    return json.dumps(doc, indent=2) + "\n"


def cmd_optima(cfg: RunConfig) -> int:
    opt = _load_or_find_optima(cfg)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    _write_if_changed(cfg.out_dir / "optima.json", _optima_json_text(cfg, opt))
    _write_provenance(cfg, "optima")
    for i, w in enumerate(opt.optima, start=1):
        print(f"w0{i} = ({w.a:.6f}, {w.b:.6f})")
    print(f"L0 = {opt.L0:.12f}")
    return 0


def _coefficients(cfg: RunConfig, opt: population.OptimumSet):
    V = population.covariance(opt, cfg.spec)
    return asymptotics.build_coefficients(
        opt, V, beta=cfg.plan.beta, mc_draws=cfg.mc_draws, seed=cfg.plan.master_seed
    )


def cmd_theory(cfg: RunConfig) -> int:
    opt = _load_or_find_optima(cfg)
    coeff = _coefficients(cfg, opt)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)

    doc = coeff.to_json_dict()
    doc["config_hash"] = cfg.config_hash
    doc["master_seed"] = cfg.plan.master_seed
    _write_if_changed(cfg.out_dir / "coefficients.json", json.dumps(doc, indent=2) + "\n")

    with open(cfg.out_dir / "theory.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "theory_F_minus_nL0", "theory_G"])
        for n in cfg.plan.sample_sizes:
            f_part = asymptotics.predicted_free_energy(n, coeff) - n * coeff.L0
            if coeff.beta == 1.0:
                g = asymptotics.predicted_gen_loss(n, coeff)
            else:
                g = float("nan")  # the generalization expansion is beta = 1 only
            writer.writerow([str(n), repr(f_part), repr(g)])
    _write_provenance(cfg, "theory")
    print(
        f"mu = {coeff.mu:.9f}, lambda_hat = {coeff.lambda_hat:.6f}, "
        f"m_hat = {coeff.m_hat:.6f}, L0 = {coeff.L0:.12f}"
    )
    return 0


def cmd_experiment(cfg: RunConfig) -> int:
    opt = _load_or_find_optima(cfg)
    coeff = _coefficients(cfg, opt)
    grid = bayes.build_grid(opt, cfg.spec, cfg.grid)
    provenance = {"config_hash": cfg.config_hash}
    report = harness.run_experiment(
        cfg.plan, cfg.spec, opt, coeff, grid, threads=cfg.threads, provenance=provenance
    )
    _write_provenance(cfg, "experiment")
    for row in report.rows:
        print(
            f"n={row.n}: mean_F={row.mean_F:.4f} se={row.se_F:.4f} "
            f"residual={row.residual:.4f}"
        )
    if report.fit is not None:
        print(
            f"fit: c_sqrt={report.fit.c_sqrt:.4f} (se {report.fit.se_sqrt:.4f}), "
            f"c_log={report.fit.c_log:.4f} (se {report.fit.se_log:.4f})"
        )
    return 0


def cmd_clt(cfg: RunConfig) -> int:
    opt = _load_or_find_optima(cfg)
    summary = harness.clt_diagnostic(
        cfg.clt_n, cfg.clt_replications, cfg.plan.master_seed, opt, cfg.spec
    )
    V = population.covariance(opt, cfg.spec)
    doc = summary.to_json_dict()
    doc["quadrature_cov"] = V.tolist()
    doc["mu_quadrature"] = (
        asymptotics.mu_closed_form_two(V) if opt.m == 2 else None
    )
    doc["config_hash"] = cfg.config_hash
    doc["master_seed"] = cfg.plan.master_seed
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    (cfg.out_dir / "clt.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    _write_provenance(cfg, "clt")
    print(
        f"n={summary.n} reps={summary.replications}: "
        f"max_mean={summary.max_mean:.4f} (se {summary.max_se:.4f}), "
        f"mu_quadrature={doc['mu_quadrature']}"
    )
    return 0


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help="output directory (default: out)")
    common.add_argument("--cache", help="cache directory (default: <out>/cache)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--threads", type=int, help="worker processes")
    common.add_argument("--beta", type=float, help="inverse temperature")
    common.add_argument("--replications", type=int, help="replications per sample size")
    common.add_argument(
        "--sample-sizes",
        type=lambda s: tuple(int(v) for v in s.split(",")),
        help="comma-separated sample sizes",
    )
    common.add_argument("--grid-coarse", type=int, help="coarse cells per axis")
    common.add_argument("--grid-patch", type=int, help="patch cells per axis")
    common.add_argument("--grid-radius", type=float, help="patch radius")

    parser = argparse.ArgumentParser(
        prog="felab",
        description="Free-energy asymptotics laboratory for non-unique optima",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("optima", parents=[common], help="locate and cache the optimum set")
    sub.add_parser("theory", parents=[common], help="expansion coefficients and theory curve")
    sub.add_parser("experiment", parents=[common], help="replication sweep and fit")
    clt = sub.add_parser("clt", parents=[common], help="Gaussian-limit diagnostic")
    clt.add_argument("--clt-n", type=int, help="sample size for the diagnostic")
    return parser


_COMMANDS = {
    "optima": cmd_optima,
    "theory": cmd_theory,
    "experiment": cmd_experiment,
    "clt": cmd_clt,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args)
        return _COMMANDS[args.command](cfg)
    except (ValueError, FileNotFoundError, population.ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
