"""Monte Carlo replication engine for the free-energy experiment.

Sweeps sample sizes, averages the free energy across independently seeded
datasets, compares the averages with the predicted expansion, and fits the
expansion coefficients by ordinary least squares. Replications are
embarrassingly parallel: replication r of sample size n always uses the
stream (master_seed, n, r), and per-replication results are reduced in
replication order, so parallel and serial runs produce identical output.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .asymptotics import AsymptoticCoefficients, mu_closed_form_two, predicted_free_energy
from .bayes import (
    FreeEnergyEstimate,
    QuadratureGrid,
    empirical_log_loss,
    estimate_csv_header,
    estimate_to_row,
    free_energy_from_losses,
    gen_loss_direct,
    node_empirical_losses,
)
from .model import ModelSpec, sample_dataset
from .population import OptimumSet

__all__ = [
    "ExperimentPlan",
    "ExperimentReport",
    "ReportRow",
    "FitResult",
    "CltSummary",
    "run_experiment",
    "free_energy_ensemble",
    "gen_loss_identity_ensemble",
    "clt_diagnostic",
    "fit_expansion",
    "SUMMARY_HEADER",
]

SUMMARY_HEADER = ["n", "reps", "mean_F", "se_F", "L0_times_n", "theory_minus_nL0", "residual"]


@dataclass(frozen=True)
class ExperimentPlan:
    sample_sizes: tuple[int, ...] = (100, 200, 300, 400, 500, 600)
    replications: int = 200
    master_seed: int = 20250810
    beta: float = 1.0
    output_dir: Path | None = None

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.sample_sizes)
        object.__setattr__(self, "sample_sizes", sizes)
        if any(n < 3 for n in sizes):
            raise ValueError("all sample sizes must be >= 3")
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("sample sizes must be strictly increasing")
        if self.replications < 2:
            raise ValueError("need at least 2 replications")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.output_dir is not None:
            object.__setattr__(self, "output_dir", Path(self.output_dir))


@dataclass(frozen=True)
class ReportRow:
    n: int
    reps: int
    mean_F: float
    se_F: float
    theory: float
    residual: float


@dataclass(frozen=True)
class FitResult:
    """OLS coefficients of mean_F - n L0 on the expansion basis."""

    c_sqrt: float
    c_log: float
    c_const: float
    se_sqrt: float
    se_log: float
    se_const: float
    c_loglog: float | None = None
    se_loglog: float | None = None

    def to_json_dict(self) -> dict:
        return {
            "c_sqrt": self.c_sqrt,
            "c_log": self.c_log,
            "c_loglog": self.c_loglog,
            "c_const": self.c_const,
            "se_sqrt": self.se_sqrt,
            "se_log": self.se_log,
            "se_loglog": self.se_loglog,
            "se_const": self.se_const,
        }


@dataclass(frozen=True)
class ExperimentReport:
    rows: tuple[ReportRow, ...]
    fit: FitResult | None  # None when the sweep has too few sizes to fit
    L0: float
    estimates: tuple[FreeEnergyEstimate, ...] = field(repr=False, default=())


# ---------------------------------------------------------------------------
# Parallel replication machinery
# ---------------------------------------------------------------------------

_WORKER_CTX: dict = {}


def _init_worker(payload):
    global _WORKER_CTX
    _WORKER_CTX = payload


def _free_energy_job(args):
    n, r = args
    ctx = _WORKER_CTX
    spec, opt, grid = ctx["spec"], ctx["opt"], ctx["grid"]
    seed = (ctx["master_seed"], n, r)
    try:
        data = sample_dataset(n, seed, spec)
        losses = node_empirical_losses(data, grid, spec)
        L_n_optima = [empirical_log_loss(data, w, spec) for w in opt.optima]
        return tuple(
            free_energy_from_losses(
                losses, n, grid, opt, spec, beta, L_n_optima, seed=data.seed
            )
            for beta in ctx["betas"]
        )
    except Exception as exc:
        raise RuntimeError(f"replication failed: n={n} r={r} seed={seed}: {exc}") from exc


def _gen_loss_job(args):
    n, r = args
    ctx = _WORKER_CTX
    spec, opt, grid = ctx["spec"], ctx["opt"], ctx["grid"]
    seed = (ctx["master_seed"], n + 1, r)
    try:
        full = sample_dataset(n + 1, seed, spec)
        prefix = type(full)(x=full.x[:n], y=full.y[:n], seed=full.seed)

        losses_prefix = node_empirical_losses(prefix, grid, spec)
        L_n_optima = [empirical_log_loss(prefix, w, spec) for w in opt.optima]
        est_n = free_energy_from_losses(
            losses_prefix, n, grid, opt, spec, 1.0, L_n_optima, seed=prefix.seed
        )
        losses_full = node_empirical_losses(full, grid, spec)
        L_full_optima = [empirical_log_loss(full, w, spec) for w in opt.optima]
        est_next = free_energy_from_losses(
            losses_full, n + 1, grid, opt, spec, 1.0, L_full_optima, seed=full.seed
        )
        g = gen_loss_direct(prefix, grid, opt, spec, node_losses=losses_prefix)
        return est_next.F, est_n.F, g
    except Exception as exc:
        raise RuntimeError(f"replication failed: n={n} r={r} seed={seed}: {exc}") from exc


def _parallel_map(job_fn, jobs, payload, threads):
    threads = os.cpu_count() if threads is None else int(threads)
    if threads <= 1 or len(jobs) <= 1:
        _init_worker(payload)
        return [job_fn(j) for j in jobs]
    ctx = get_context("fork")
    chunksize = max(1, len(jobs) // (4 * threads))
    with ctx.Pool(threads, initializer=_init_worker, initargs=(payload,)) as pool:
        return pool.map(job_fn, jobs, chunksize=chunksize)


def free_energy_ensemble(
    sample_sizes,
    replications: int,
    master_seed: int,
    spec: ModelSpec,
    opt: OptimumSet,
    grid: QuadratureGrid,
    betas=(1.0,),
    threads: int | None = None,
) -> dict[float, dict[int, list[FreeEnergyEstimate]]]:
    """Free-energy estimates for every (n, replication), all beta values.

    Node losses are computed once per dataset and shared across betas.
    Results are keyed by beta then by n, in replication order.
    """
    payload = {
        "spec": spec,
        "opt": opt,
        "grid": grid,
        "master_seed": int(master_seed),
        "betas": tuple(float(b) for b in betas),
    }
    jobs = [(int(n), r) for n in sample_sizes for r in range(replications)]
    results = _parallel_map(_free_energy_job, jobs, payload, threads)
    out: dict[float, dict[int, list[FreeEnergyEstimate]]] = {
        float(b): {int(n): [] for n in sample_sizes} for b in betas
    }
    for (n, _r), per_beta in zip(jobs, results):
        for beta, est in zip(payload["betas"], per_beta):
            out[beta][n].append(est)
    return out


def gen_loss_identity_ensemble(
    n: int,
    replications: int,
    master_seed: int,
    spec: ModelSpec,
    opt: OptimumSet,
    grid: QuadratureGrid,
    threads: int | None = None,
):
    """Paired (F_{n+1}, F_n, G_n) triples over replications.

    Each replication draws one dataset of size n + 1; the free energy of
    its n-prefix and the direct predictive loss use the same prefix, so the
    telescoping comparison is paired.
    """
    payload = {"spec": spec, "opt": opt, "grid": grid, "master_seed": int(master_seed)}
    jobs = [(int(n), r) for r in range(replications)]
    results = _parallel_map(_gen_loss_job, jobs, payload, threads)
    F_next = np.array([t[0] for t in results])
    F_n = np.array([t[1] for t in results])
    G = np.array([t[2] for t in results])
    return F_next, F_n, G


# ---------------------------------------------------------------------------
# Experiment driver
# ---------------------------------------------------------------------------


def run_experiment(
    plan: ExperimentPlan,
    spec: ModelSpec,
    opt: OptimumSet,
    coeff: AsymptoticCoefficients,
    grid: QuadratureGrid,
    threads: int | None = None,
    provenance: dict | None = None,
) -> ExperimentReport:
    """Run the replication sweep and compare with the predicted expansion.

    Writes runs.csv (one row per replication), summary.csv, and fit.json
    into plan.output_dir when set. The whole report is a pure function of
    the plan and the model configuration.
    """
    ensemble = free_energy_ensemble(
        plan.sample_sizes,
        plan.replications,
        plan.master_seed,
        spec,
        opt,
        grid,
        betas=(plan.beta,),
        threads=threads,
    )[plan.beta]

    rows = []
    estimates: list[FreeEnergyEstimate] = []
    for n in plan.sample_sizes:
        ests = ensemble[n]
        estimates.extend(ests)
        F = np.array([e.F for e in ests])
        mean_F = float(F.mean())
        se_F = float(F.std(ddof=1) / math.sqrt(len(ests)))
        theory = predicted_free_energy(n, coeff)
        rows.append(
            ReportRow(
                n=n,
                reps=len(ests),
                mean_F=mean_F,
                se_F=se_F,
                theory=theory,
                residual=mean_F - theory,
            )
        )

    n_params = 4 if coeff.m_hat > 1.0 else 3
    if len(rows) > n_params:
        fit = _fit_rows(
            np.array([row.n for row in rows], dtype=float),
            np.array([row.mean_F for row in rows])
            - np.array([row.n for row in rows]) * coeff.L0,
            include_loglog=coeff.m_hat > 1.0,
        )
    else:
        fit = None  # smoke runs with few sizes still produce the summary
    report = ExperimentReport(rows=tuple(rows), fit=fit, L0=coeff.L0, estimates=tuple(estimates))

    if plan.output_dir is not None:
        plan.output_dir.mkdir(parents=True, exist_ok=True)
        _write_runs_csv(plan.output_dir / "runs.csv", estimates, opt.m)
        write_summary_csv(plan.output_dir / "summary.csv", report)
        _write_fit_json(plan.output_dir / "fit.json", report, coeff, plan, provenance)
    return report


def _write_runs_csv(path, estimates, m):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(estimate_csv_header(m))
        for est in estimates:
            writer.writerow(estimate_to_row(est))


def write_summary_csv(path, report: ExperimentReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_HEADER)
        for row in report.rows:
            nL0 = row.n * report.L0
            writer.writerow(
                [
                    str(row.n),
                    str(row.reps),
                    repr(row.mean_F),
                    repr(row.se_F),
                    repr(nL0),
                    repr(row.theory - nL0),
                    repr(row.residual),
                ]
            )


def _write_fit_json(path, report, coeff, plan, provenance):
    doc = {
        "fit": report.fit.to_json_dict() if report.fit is not None else None,
        "coefficients_used": {
            "L0": coeff.L0,
            "mu": coeff.mu,
            "lambda_hat": coeff.lambda_hat,
            "m_hat": coeff.m_hat,
            "beta": plan.beta,
        },
        "master_seed": plan.master_seed,
    }
    if provenance:
        doc.update(provenance)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Expansion fit
# ---------------------------------------------------------------------------


def _fit_rows(ns: np.ndarray, y: np.ndarray, include_loglog: bool = False) -> FitResult:
    columns = [np.sqrt(ns), np.log(ns)]
    if include_loglog:
        columns.append(np.log(np.log(ns)))
    columns.append(np.ones_like(ns))
    X = np.column_stack(columns)
    n_pts, n_par = X.shape
    if n_pts < n_par + 1 or np.linalg.matrix_rank(X) < n_par:
        raise ValueError(
            f"fit needs at least {n_par + 1} distinct sample sizes, got {n_pts}"
        )
    beta, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    dof = n_pts - n_par
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.inv(X.T @ X)
    ses = np.sqrt(np.diag(cov))
    if include_loglog:
        return FitResult(
            c_sqrt=float(beta[0]),
            c_log=float(beta[1]),
            c_loglog=float(beta[2]),
            c_const=float(beta[3]),
            se_sqrt=float(ses[0]),
            se_log=float(ses[1]),
            se_loglog=float(ses[2]),
            se_const=float(ses[3]),
        )
    return FitResult(
        c_sqrt=float(beta[0]),
        c_log=float(beta[1]),
        c_const=float(beta[2]),
        se_sqrt=float(ses[0]),
        se_log=float(ses[1]),
        se_const=float(ses[2]),
    )


def fit_expansion(summary, include_loglog: bool = False) -> FitResult:
    """OLS fit of (mean_F - n L0) on the expansion basis {sqrt n, log n, 1}.

    ``summary`` is a summary.csv path or a sequence of (n, mean_F, nL0)
    triples; the log log n column is included only when requested (its
    coefficient vanishes when m_hat = 1).
    """
    if isinstance(summary, (str, Path)):
        rows = []
        with open(summary, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = {"n", "mean_F", "L0_times_n"} - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"summary CSV missing columns: {sorted(missing)}")
            for rec in reader:
                rows.append(
                    (float(rec["n"]), float(rec["mean_F"]), float(rec["L0_times_n"]))
                )
    else:
        rows = [(float(n), float(mf), float(nl0)) for n, mf, nl0 in summary]
    ns = np.array([r[0] for r in rows])
    y = np.array([r[1] - r[2] for r in rows])
    return _fit_rows(ns, y, include_loglog=include_loglog)


# ---------------------------------------------------------------------------
# CLT diagnostic
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CltSummary:
    n: int
    replications: int
    mean: np.ndarray
    mean_se: np.ndarray
    cov: np.ndarray
    cov_se: np.ndarray
    max_mean: float
    max_se: float
    mu_reference: float | None

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "replications": self.replications,
            "mean": self.mean.tolist(),
            "mean_se": self.mean_se.tolist(),
            "cov": self.cov.tolist(),
            "cov_se": self.cov_se.tolist(),
            "max_mean": self.max_mean,
            "max_se": self.max_se,
            "mu_reference": self.mu_reference,
        }


def clt_diagnostic(
    n: int,
    replications: int,
    seed: int,
    opt: OptimumSet,
    spec: ModelSpec,
) -> CltSummary:
    """Ensemble check that the centered scaled losses are jointly Gaussian.

    Computes sqrt(n)(L0 - L_n(w_0i)) across replications and summarizes the
    ensemble mean, covariance (with Gaussian-theory standard errors), and
    the average of the per-replication maximum, to be compared against the
    quadrature covariance and the closed-form expected maximum.
    """
    if replications < 2:
        raise ValueError("need at least 2 replications")
    scripts = np.empty((replications, opt.m))
    for r in range(replications):
        data = sample_dataset(n, (seed, n, r), spec)
        for i, w in enumerate(opt.optima):
            scripts[r, i] = math.sqrt(n) * (opt.L0 - empirical_log_loss(data, w, spec))
    mean = scripts.mean(axis=0)
    mean_se = scripts.std(axis=0, ddof=1) / math.sqrt(replications)
    cov = np.cov(scripts, rowvar=False).reshape(opt.m, opt.m)
    # Gaussian-theory standard error of covariance entries
    cov_se = np.sqrt(
        (np.outer(np.diag(cov), np.diag(cov)) + cov**2) / (replications - 1)
    )
    maxima = scripts.max(axis=1)
    mu_ref = mu_closed_form_two(cov) if opt.m == 2 else None
    return CltSummary(
        n=n,
        replications=replications,
        mean=mean,
        mean_se=mean_se,
        cov=cov,
        cov_se=cov_se,
        max_mean=float(maxima.mean()),
        max_se=float(maxima.std(ddof=1) / math.sqrt(replications)),
        mu_reference=mu_ref,
    )
