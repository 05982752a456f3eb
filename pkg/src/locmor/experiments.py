"""Seeded, deterministic experiment harness behind the CLI.

Every experiment writes CSV (and, for the adaptive study, JSONL
diagnostics) into the output directory.  Identical configs produce byte
identical files: runs are ordered by index, run i draws from stream seed
s0 + i, and floats are formatted through one canonical function.
"""

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gfem import build_gfem_problem, gfem_run
from .oracle import weighted_svd
from .problems import build_gfem_mesh, build_interface_transfer, gfem_field
from .rangefinder import (RngStream, a_priori_bound, adaptive_randomized_range,
                          c_eff, c_est, fixed_rank_range, norm_estimate,
                          projection_error, test_vector_norms)
from .transfer import ResidualOperator

SCHEMA_VERSION = 1

EXPERIMENT_DEFAULTS = {
    "example1-fixed": {
        "h_inv": 40, "length": 1.0, "width": 1.0,
        "n_values": list(range(0, 13)), "runs": 100,
    },
    "example1-adaptive": {
        "h_inv": 40, "length": 1.0, "width": 1.0,
        "tols": [1e-2, 1e-4, 1e-6, 1e-8], "n_t": 10,
        "eps_algofail": 1e-15, "runs": 100,
    },
    "example1-hdep": {
        "h_invs": [20, 40, 80], "length": 0.5, "width": 2.0,
        "n_values": [2, 4, 6, 8], "n_t": 10, "runs": 200,
    },
    "example1-effectivity": {
        "h_inv": 40, "length": 1.0, "width": 1.0, "n": 4,
        "n_t_values": [5, 10, 20, 40, 80], "eps_testfail": 1e-10,
        "runs": 1000,
    },
    "example1-cputable": {
        "h_inv": 50, "length": 1.0, "width": 8.0,
        "tol": 1e-4, "n_t": 20, "eps_algofail": 1e-15,
    },
    "example2-helmholtz": {
        "h_inv": 80, "length": 1.0, "width": 1.0,
        "kappas": [0.0, 10.0, 20.0, 30.0, 40.0], "sigma_count": 30,
    },
    "example4-gfem": {
        "n_cells": 100, "fields": ["uniform", "channels"],
        "tols": [1e-2, 1e-4], "n_t": 20, "eps_algofail": 1e-15,
        "runs": 50,
    },
}

EXPERIMENT_IDS = sorted(EXPERIMENT_DEFAULTS)


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    runs: int = None
    out: str = "results"
    threads: int = 1
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENT_DEFAULTS:
            raise ValueError(
                f"unknown experiment {self.experiment!r}; "
                f"known: {', '.join(EXPERIMENT_IDS)}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.runs is not None and self.runs < 1:
            raise ValueError("runs must be >= 1")
        defaults = EXPERIMENT_DEFAULTS[self.experiment]
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ValueError(
                f"unknown parameters for {self.experiment}: "
                f"{', '.join(sorted(unknown))}")
        merged = dict(defaults)
        merged.update(self.params)
        if self.runs is not None and "runs" in merged:
            merged["runs"] = self.runs
        self.params = merged

    @classmethod
    def from_dict(cls, cfg):
        cfg = dict(cfg)
        version = cfg.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ValueError(
                f"config schema_version must be {SCHEMA_VERSION}, "
                f"got {version!r}")
        known = {"experiment", "seed", "runs", "out", "threads", "params"}
        unknown = set(cfg) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**cfg)

    @classmethod
    def from_json(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def default_config(experiment):
    """A complete config dict for an experiment, ready to serialize."""
    if experiment not in EXPERIMENT_DEFAULTS:
        raise ValueError(f"unknown experiment {experiment!r}")
    return {
        "schema_version": SCHEMA_VERSION,
        "experiment": experiment,
        "seed": 0,
        "out": "results",
        "threads": 1,
        "params": dict(EXPERIMENT_DEFAULTS[experiment]),
    }


# ---------------------------------------------------------------------------
# deterministic output helpers


def nearest_rank(values, p):
    """Nearest-rank percentile of a sample (p in [0, 100])."""
    ordered = np.sort(np.asarray(values, dtype=float))
    if ordered.size == 0:
        raise ValueError("empty sample")
    k = max(1, math.ceil(p / 100.0 * ordered.size))
    return float(ordered[min(k, ordered.size) - 1])


def summary_stats(values):
    values = np.asarray(values, dtype=float)
    return {
        "min": float(values.min()),
        "p25": nearest_rank(values, 25),
        "p50": nearest_rank(values, 50),
        "p75": nearest_rank(values, 75),
        "max": float(values.max()),
        "mean": float(values.mean()),
    }


def format_value(x):
    """Canonical CSV cell: '.' decimal separator, scientific notation
    below 1e-3."""
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if x == 0.0:
        return "0"
    if abs(x) < 1e-3:
        return f"{x:.12e}"
    return f"{x:.12g}"


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_jsonl(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def _map_indexed(fn, count, threads):
    """Run fn(0..count-1), preserving index order in the result list."""
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, range(count)))
    return [fn(i) for i in range(count)]


# ---------------------------------------------------------------------------
# experiments


def _gram_extremes(op):
    s_lo, s_hi = op.source.extremal_eigenvalues()
    r_lo, r_hi = op.range_space.extremal_eigenvalues()
    return s_lo, s_hi, r_lo, r_hi


def run_example1_fixed(cfg, outdir):
    p = cfg.params
    op = build_interface_transfer(p["h_inv"], p["length"], p["width"])
    dense = op.assemble_dense()
    data = weighted_svd(dense)
    s_lo, s_hi, r_lo, r_hi = _gram_extremes(op)

    rows = []
    run_index = 0
    for n in p["n_values"]:
        errors = []
        for _ in range(p["runs"]):
            rng = RngStream(cfg.seed + run_index)
            run_index += 1
            basis = fixed_rank_range(dense, n, rng)
            errors.append(projection_error(dense, basis))
        stats = summary_stats(errors)
        bound = (a_priori_bound(data.sigmas, n, s_lo, s_hi, r_lo, r_hi)
                 if n >= 4 else "")
        rows.append((n, stats["min"], stats["p25"], stats["p50"],
                     stats["p75"], stats["max"], stats["mean"],
                     data.sigma(n + 1), bound))
    return [write_csv(outdir / "example1-fixed.csv",
                      ["n", "min", "p25", "p50", "p75", "max", "mean",
                       "sigma_next", "a_priori_bound"], rows)]


def run_example1_adaptive(cfg, outdir):
    p = cfg.params
    op = build_interface_transfer(p["h_inv"], p["length"], p["width"])
    dense = op.assemble_dense()

    rows = []
    records = []
    run_index = 0
    for tol in p["tols"]:
        errors = []
        for _ in range(p["runs"]):
            seed = cfg.seed + run_index
            run_index += 1
            rng = RngStream(seed)
            basis = adaptive_randomized_range(
                dense, tol, p["n_t"], p["eps_algofail"], rng)
            err = projection_error(dense, basis)
            errors.append(err)
            records.append({
                "seed": seed,
                "tol": tol,
                "n": len(basis),
                "evaluations": basis.evaluations,
                "exhausted": basis.exhausted,
                "estimator_trace": [d["estimate"] for d in basis.diagnostics],
                "final_error": err,
            })
        stats = summary_stats(errors)
        rows.append((tol, stats["min"], stats["p25"], stats["p50"],
                     stats["p75"], stats["max"]))
    return [
        write_csv(outdir / "example1-adaptive.csv",
                  ["tol", "min", "p25", "p50", "p75", "max"], rows),
        write_jsonl(outdir / "example1-adaptive-diagnostics.jsonl", records),
    ]


def run_example1_hdep(cfg, outdir):
    p = cfg.params
    rows = []
    run_index = 0
    for h_inv in p["h_invs"]:
        op = build_interface_transfer(h_inv, p["length"], p["width"])
        dense = op.assemble_dense()
        for n in p["n_values"]:
            errors = []
            ratios = []
            for _ in range(p["runs"]):
                rng = RngStream(cfg.seed + run_index)
                run_index += 1
                basis = fixed_rank_range(dense, n, rng)
                err = projection_error(dense, basis)
                residual = ResidualOperator(dense, basis)
                max_norm = float(test_vector_norms(
                    residual, p["n_t"], rng).max())
                errors.append(err)
                ratios.append(max_norm / err)
            rows.append((h_inv, n, nearest_rank(errors, 50),
                         nearest_rank(ratios, 50),
                         2.0 / math.sqrt(h_inv)))
    return [write_csv(outdir / "example1-hdep.csv",
                      ["h_inv", "n", "median_error", "median_test_norm",
                       "sqrt_h_reference"], rows)]


def run_example1_effectivity(cfg, outdir):
    p = cfg.params
    op = build_interface_transfer(p["h_inv"], p["length"], p["width"])
    dense = op.assemble_dense()
    s_lo, s_hi = op.source.extremal_eigenvalues()
    n = p["n"]
    n_o = min(op.source.dim, op.range_space.dim) - n

    rows = []
    run_index = 0
    for n_t in p["n_t_values"]:
        etas = []
        for _ in range(p["runs"]):
            rng = RngStream(cfg.seed + run_index)
            run_index += 1
            basis = fixed_rank_range(dense, n, rng)
            err = projection_error(dense, basis)
            residual = ResidualOperator(dense, basis)
            delta = norm_estimate(residual, n_t, p["eps_testfail"], rng)
            etas.append(delta / err)
        stats = summary_stats(etas)
        bound = c_eff(n_t, p["eps_testfail"], n_o, s_lo, s_hi)
        rows.append((n_t, stats["min"], stats["p25"], stats["p50"],
                     stats["p75"], stats["max"], bound))
    return [write_csv(outdir / "example1-effectivity.csv",
                      ["n_t", "min", "p25", "p50", "p75", "max", "c_eff"],
                      rows)]


def run_example1_cputable(cfg, outdir):
    p = cfg.params
    t0 = time.perf_counter()
    op = build_interface_transfer(p["h_inv"], p["length"], p["width"])
    t_factor = time.perf_counter() - t0

    rng = RngStream(cfg.seed)
    probe = rng.standard_normal(op.source.dim)
    t0 = time.perf_counter()
    for _ in range(5):
        op.apply(probe)
    t_apply = (time.perf_counter() - t0) / 5.0

    unknowns = op.n_total - op.source.dim

    t0 = time.perf_counter()
    basis = adaptive_randomized_range(
        op, p["tol"], p["n_t"], p["eps_algofail"], RngStream(cfg.seed))
    t_adaptive = time.perf_counter() - t0
    n = len(basis)

    rows = [
        ("transfer_operator", "unknowns", unknowns, unknowns),
        ("transfer_operator", "lu_factorization_s", t_factor, t_factor),
        ("transfer_operator", "operator_evaluation_s", t_apply, t_apply),
        ("basis_generation", "basis_size", n, n),
        ("basis_generation", "operator_evaluations",
         basis.evaluations, 2 * n + 1),
        ("basis_generation", "adjoint_evaluations", 0, 2 * n + 1),
        ("basis_generation", "execution_s", t_adaptive, ""),
    ]
    return [write_csv(outdir / "example1-cputable.csv",
                      ["section", "key", "adaptive", "lanczos_reference"],
                      rows)]


def run_example2_helmholtz(cfg, outdir):
    p = cfg.params
    rows = []
    for kappa in p["kappas"]:
        op = build_interface_transfer(p["h_inv"], p["length"], p["width"],
                                      kappa=kappa)
        data = weighted_svd(op.assemble_dense())
        count = min(p["sigma_count"], data.sigmas.size)
        for i in range(count):
            rows.append((kappa, i + 1, float(data.sigmas[i])))
    return [write_csv(outdir / "example2-helmholtz.csv",
                      ["kappa", "index", "sigma"], rows)]


def run_example4_gfem(cfg, outdir):
    p = cfg.params
    global_rows = []
    patch_rows = []
    run_index = 0
    for field_name in p["fields"]:
        pde, source = gfem_field(field_name)
        mesh = build_gfem_mesh(p["n_cells"])
        problem = build_gfem_problem(mesh, pde, source)
        for tol in p["tols"]:
            for _ in range(p["runs"]):
                seed = cfg.seed + run_index
                run_index += 1
                result, spaces = gfem_run(
                    problem, tol, p["n_t"], p["eps_algofail"], seed,
                    threads=cfg.threads)
                total_evals = sum(s.evaluations for s in spaces)
                global_rows.append((
                    field_name, tol, seed, result.global_error,
                    float(result.local_errors.max()), total_evals,
                    result.dropped_columns))
                for s in spaces:
                    patch_rows.append((
                        field_name, tol, seed, s.patch.pid, s.n_random,
                        s.combined.shape[1], s.evaluations,
                        float(result.local_errors[s.patch.pid])))
    return [
        write_csv(outdir / "example4-gfem-global.csv",
                  ["field", "tol_gfem", "seed", "global_error",
                   "max_local_error", "operator_evaluations",
                   "dropped_columns"], global_rows),
        write_csv(outdir / "example4-gfem-patches.csv",
                  ["field", "tol_gfem", "seed", "patch", "n_random",
                   "combined_dim", "evaluations", "local_error"],
                  patch_rows),
    ]


_RUNNERS = {
    "example1-fixed": run_example1_fixed,
    "example1-adaptive": run_example1_adaptive,
    "example1-hdep": run_example1_hdep,
    "example1-effectivity": run_example1_effectivity,
    "example1-cputable": run_example1_cputable,
    "example2-helmholtz": run_example2_helmholtz,
    "example4-gfem": run_example4_gfem,
}


def run_experiment(cfg):
    """Execute one configured experiment; returns the written paths."""
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    return _RUNNERS[cfg.experiment](cfg, outdir)
