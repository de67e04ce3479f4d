"""Experiment orchestration: fits, analyses, CSV/JSON emission.

All numeric CSV cells are printed with 17 significant digits so rerunning
a config with the same seeds produces byte-identical payloads.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, capacity, covariance, features
from .config import ExperimentConfig
from .errors import IncompatibleConfigs
from .fitting import fit

CPI_SUM_TOL = 1e-6


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float) and np.isnan(value):
        return "nan"
    return format(float(value), ".17g")


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def read_csv_columns(path: Path) -> dict[str, np.ndarray]:
    lines = path.read_text().strip().splitlines()
    header = lines[0].split(",")
    data = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    return {name: data[:, i] for i, name in enumerate(header)}


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(
        json.dumps(cfg.raw, sort_keys=True, default=str).encode()
    ).hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    seeds: dict
    version: str
    outputs: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    created: str = ""

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seeds": self.seeds,
            "version": self.version,
            "outputs": self.outputs,
            "timings": self.timings,
            "created": self.created,
        }


def _sweep_seed(base: int, index: int) -> int:
    return base + 1009 * index


class ExperimentRunner:
    """Executes the analyses declared in a config and writes their outputs."""

    def __init__(self, cfg: ExperimentConfig, outdir: str | Path | None = None):
        self.cfg = cfg
        self.outdir = Path(outdir or cfg.output_dir)
        self.cov = covariance.build_covariance(cfg.process)
        self.predictor = covariance.exact_predictor(self.cov)
        self.report: dict = {}
        self._fit_cache: dict = {}

    # -- shared helpers ----------------------------------------------------

    def _fit(self, channels: int, *, seed_offset: int = 0, input_dim: int | None = None,
             pattern: str | None = None, restarts: int | None = None):
        key = (channels, seed_offset, input_dim, pattern, restarts)
        if key not in self._fit_cache:
            manifold = self.cfg.architecture.manifold(
                channels, input_dim=input_dim, pattern=pattern
            )
            fit_cfg = replace(
                self.cfg.fit,
                seed=_sweep_seed(self.cfg.fit.seed, seed_offset),
                restarts=restarts if restarts is not None else self.cfg.fit.restarts,
            )
            self._fit_cache[key] = (
                manifold,
                fit(manifold, self.cov, self.predictor, fit_cfg),
            )
        return self._fit_cache[key]

    def _basis(self, manifold, result):
        sigma, target, _ = covariance.lift(self.cov, self.predictor, manifold.input_dim)
        # accept whatever gradient level the optimizer reached; the check
        # only guards against points that are nowhere near stationary
        return capacity.constraint_basis(
            manifold, sigma, result.w_hat, target=target,
            stationarity_tol=max(10 * result.grad_norm, 10 * result.tolerance, 1e-9),
        )

    def _check_cpi_file(self, path: Path, kappas: dict[str, float]) -> None:
        columns = read_csv_columns(path)
        for name, kappa in kappas.items():
            total = float(columns[name].sum())
            if abs(total - kappa) > CPI_SUM_TOL:
                raise RuntimeError(
                    f"{path.name}: column {name} sums to {total}, expected {kappa}"
                )

    # -- analyses ------------------------------------------------------------

    def run_total_capacity(self, path: Path) -> None:
        rows = []
        for i, c in enumerate(self.cfg.architecture.channels):
            manifold, result = self._fit(c, seed_offset=i)
            basis = self._basis(manifold, result)
            rows.append([c, manifold.param_count, basis.kappa, result.loss])
        write_csv(path, ["channels", "params", "effective_params", "loss"], rows)
        self.report["total_capacity"] = {
            "channels": [r[0] for r in rows],
            "effective_params": [r[2] for r in rows],
            "loss": [r[3] for r in rows],
        }

    def run_spatial_cpi(self, path: Path) -> None:
        columns, kappas = {}, {}
        for i, c in enumerate(self.cfg.architecture.channels):
            manifold, result = self._fit(c, seed_offset=i)
            basis = self._basis(manifold, result)
            name = f"cpi_c{c}"
            columns[name] = capacity.spatial_cpi(basis, manifold.input_dim)
            kappas[name] = float(basis.kappa)
        n = self.cov.n
        header = ["lag"] + list(columns)
        rows = [[lag + 1] + [columns[name][lag] for name in columns] for lag in range(n)]
        write_csv(path, header, rows)
        self._check_cpi_file(path, kappas)
        self.report["spatial_cpi"] = {"kappa": kappas}

    def run_cov_eigen(self, path: Path) -> None:
        columns, eigvals = {}, None
        for i, c in enumerate(self.cfg.architecture.channels):
            manifold, result = self._fit(c, seed_offset=i)
            basis = self._basis(manifold, result)
            sigma = covariance.lift(self.cov, self.predictor, manifold.input_dim)[0]
            vals, caps = capacity.covariance_eigen_capacity(basis, sigma)
            eigvals = vals
            columns[f"capacity_c{c}"] = caps
        header = ["index", "eigenvalue"] + list(columns)
        rows = [
            [i + 1, eigvals[i]] + [columns[name][i] for name in columns]
            for i in range(eigvals.size)
        ]
        write_csv(path, header, rows)

    def run_conditional_chain(self, outdir: Path) -> list[Path]:
        c = self.cfg.architecture.channels[0]
        manifold, result = self._fit(c)
        sigma = covariance.lift(self.cov, self.predictor, manifold.input_dim)[0]
        blocks = list(manifold.parameter_blocks().items())
        paths = []
        for order in self.cfg.chain_orders:
            ordered = blocks if order == "forward" else blocks[::-1]
            chain = capacity.conditional_chain(
                manifold, sigma, result.w_hat, [b for _, b in ordered]
            )
            header = ["lag"] + [name for name, _ in ordered]
            rows = [
                [lag + 1] + [chain[j][lag] for j in range(len(chain))]
                for lag in range(manifold.receptive_field)
            ]
            path = outdir / f"conditional_chain_{order}.csv"
            write_csv(path, header, rows)
            paths.append(path)
        return paths

    def run_marginal(self, path: Path) -> None:
        c = self.cfg.architecture.channels[0]
        manifold, result = self._fit(c)
        sigma = covariance.lift(self.cov, self.predictor, manifold.input_dim)[0]
        named = manifold.parameter_blocks()
        contribs = capacity.marginal_contributions(
            manifold, sigma, result.w_hat, list(named.values()), labels=list(named)
        )
        header = ["lag"]
        for contrib in contribs:
            header += [f"independent_{contrib.label}", f"marginal_{contrib.label}"]
        rows = []
        for lag in range(manifold.receptive_field):
            row = [lag + 1]
            for contrib in contribs:
                row += [contrib.independent_cpi[lag], contrib.marginal_cpi[lag]]
            rows.append(row)
        write_csv(path, header, rows)
        self.report["marginal"] = {
            contrib.label: {
                "independent_total": contrib.independent_total,
                "marginal_total": contrib.marginal_total,
            }
            for contrib in contribs
        }

    def run_error_bounds(self, path: Path) -> None:
        c = self.cfg.architecture.channels[0]
        manifold = self.cfg.architecture.manifold(c)
        sigma, target, _ = covariance.lift(self.cov, self.predictor, manifold.input_dim)
        fit_cfg = replace(self.cfg.fit, restarts=1)
        fits = [
            fit(manifold, self.cov, self.predictor,
                replace(fit_cfg, seed=_sweep_seed(self.cfg.fit.seed, 7919 + r)))
            for r in range(self.cfg.error_bound_restarts)
        ]
        best = min(fits, key=lambda f: f.loss)
        basis = capacity.constraint_basis(
            manifold, sigma, best.w_hat, target=target,
            stationarity_tol=max(10 * best.grad_norm, 10 * best.tolerance, 1e-9),
        )
        dim = manifold.coeff_dim
        d = manifold.input_dim
        subspaces = [
            capacity.Subspace.one_hot(dim, np.arange(lag * d, (lag + 1) * d), f"lag{lag + 1}")
            for lag in range(manifold.receptive_field)
        ]
        vecs = np.linalg.eigh(sigma)[1][:, ::-1]
        subspaces += [
            capacity.Subspace(s=vecs[:, [i]], label=f"eig{i + 1}") for i in range(dim)
        ]
        rows_data = capacity.error_bound_analysis(basis, fits, target, subspaces)
        header = ["label", "n_s", "capacity", "bound", "bound_normalized",
                  "error_mean", "error_std"]
        lines = [",".join(header)]
        for row in rows_data:
            lines.append(",".join(
                [row.label, str(row.n_s)] +
                [_fmt(v) for v in (row.capacity, row.bound, row.bound_normalized,
                                   row.error_mean, row.error_std)]
            ))
        path.write_text("\n".join(lines) + "\n")
        self.report["error_bounds"] = {"kappa": basis.kappa, "fits": len(fits)}

    def run_tiled_vs_repeated(self, path: Path) -> None:
        c = self.cfg.architecture.channels[0]
        columns, kappas = {}, {}
        for i, pattern in enumerate(("tiled", "repeated")):
            manifold, result = self._fit(c, seed_offset=100 + i, pattern=pattern)
            basis = self._basis(manifold, result)
            columns[f"cpi_{pattern}"] = capacity.spatial_cpi(basis, manifold.input_dim)
            kappas[f"cpi_{pattern}"] = float(basis.kappa)
        n = len(next(iter(columns.values())))
        header = ["lag"] + list(columns)
        rows = [[lag + 1] + [columns[k][lag] for k in columns] for lag in range(n)]
        write_csv(path, header, rows)
        self._check_cpi_file(path, kappas)
        self.report["tiled_vs_repeated"] = {"kappa": kappas}

    def run_multidim_scaling(self, path: Path) -> None:
        columns, kappas = {}, {}
        for i, (d, c) in enumerate(self.cfg.multidim_pairs):
            manifold, result = self._fit(c, seed_offset=200 + i, input_dim=d)
            basis = self._basis(manifold, result)
            cpi = capacity.spatial_cpi(basis, manifold.input_dim)
            columns[f"cpi_norm_d{d}_c{c}"] = cpi / d
            kappas[f"cpi_norm_d{d}_c{c}"] = float(basis.kappa) / d
        n = self.cov.n
        header = ["lag"] + list(columns)
        rows = [[lag + 1] + [columns[k][lag] for k in columns] for lag in range(n)]
        write_csv(path, header, rows)
        self._check_cpi_file(path, kappas)
        self.report["multidim_scaling"] = {"kappa_over_d": kappas}

    def run_coefficient_comparison(self, path: Path) -> None:
        c = self.cfg.architecture.channels[0]
        manifold, result = self._fit(c)
        n = self.cov.n
        a_hat, a_star = result.a_hat, self.predictor.a_star
        c_true = self.cov.autocov / self.cov.autocov[0]
        c_hat = covariance.implied_autocorrelation(a_hat, n)
        header = ["lag", "a_hat", "a_star", "abs_diff", "rel_diff",
                  "autocorr_model", "autocorr_true", "autocorr_abs_diff"]
        rows = [[0, float("nan"), float("nan"), float("nan"), float("nan"),
                 c_hat[0], c_true[0], c_hat[0] - c_true[0]]]
        for lag in range(1, n + 1):
            ah, at = a_hat[lag - 1], a_star[lag - 1]
            rel = (ah - at) / at if at != 0 else float("nan")
            rows.append([lag, ah, at, abs(ah - at), rel,
                         c_hat[lag], c_true[lag], c_hat[lag] - c_true[lag]])
        write_csv(path, header, rows)
        self.report["coefficient_comparison"] = {
            "loss": result.loss,
            "converged": bool(result.converged),
        }

    def run_feature_analysis(self, path: Path) -> None:
        fmap = self.cfg.features
        n, width = self.cfg.process.length, fmap.width
        moments = features.estimate_feature_moments(
            self.cfg.process, fmap, self.cfg.feature_samples, self.cfg.feature_seed
        )
        manifold = self.cfg.architecture.manifold(
            self.cfg.architecture.channels[0], input_dim=width
        )
        result = features.fit_feature_model(manifold, moments, self.cfg.fit)
        basis = features.feature_capacity(manifold, moments, result.w_hat)
        cpi = features.input_space_capacity(basis, n, width)
        write_csv(path, ["lag", "capacity"],
                  [[lag + 1, cpi[lag]] for lag in range(n)])
        self.report["feature_capacity"] = {"kappa": basis.kappa, "m": moments.m}

    # -- top level -----------------------------------------------------------

    def run(self) -> RunManifest:
        self.outdir.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(
            config_hash=config_hash(self.cfg),
            seeds={"fit": self.cfg.fit.seed, "features": self.cfg.feature_seed},
            version=__version__,
            created=time.strftime("%Y-%m-%dT%H:%M:%S"),
        )
        dispatch = {
            "total_capacity": self.run_total_capacity,
            "spatial_cpi": self.run_spatial_cpi,
            "cov_eigen": self.run_cov_eigen,
            "marginal": self.run_marginal,
            "error_bounds": self.run_error_bounds,
            "tiled_vs_repeated": self.run_tiled_vs_repeated,
            "multidim_scaling": self.run_multidim_scaling,
            "coefficient_comparison": self.run_coefficient_comparison,
        }
        for name in self.cfg.analyses:
            start = time.perf_counter()
            if name == "conditional_chain":
                paths = self.run_conditional_chain(self.outdir)
                manifest.outputs[name] = [p.name for p in paths]
            else:
                path = self.outdir / f"{name}.csv"
                dispatch[name](path)
                manifest.outputs[name] = [path.name]
            manifest.timings[name] = time.perf_counter() - start
        if self.cfg.features is not None:
            path = self.outdir / "feature_capacity.csv"
            self.run_feature_analysis(path)
            manifest.outputs["feature_capacity"] = [path.name]
        (self.outdir / "report.json").write_text(
            json.dumps(self.report, indent=2, sort_keys=True, default=float) + "\n"
        )
        (self.outdir / "manifest.json").write_text(
            json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n"
        )
        return manifest


def run_experiment(cfg: ExperimentConfig, outdir=None) -> RunManifest:
    return ExperimentRunner(cfg, outdir).run()


def compare_experiments(cfg_a: ExperimentConfig, cfg_b: ExperimentConfig,
                        outdir: str | Path) -> Path:
    """Aligned per-lag CPI comparison of two architectures on one task."""
    if cfg_a.process != cfg_b.process:
        raise IncompatibleConfigs("configs use different processes")
    rf_a = cfg_a.architecture.manifold(cfg_a.architecture.channels[0]).receptive_field
    rf_b = cfg_b.architecture.manifold(cfg_b.architecture.channels[0]).receptive_field
    if rf_a != rf_b:
        raise IncompatibleConfigs(f"receptive fields differ: {rf_a} vs {rf_b}")
    runner_a = ExperimentRunner(cfg_a, outdir)
    runner_b = ExperimentRunner(cfg_b, outdir)
    man_a, res_a = runner_a._fit(cfg_a.architecture.channels[0])
    man_b, res_b = runner_b._fit(cfg_b.architecture.channels[0])
    basis_a = runner_a._basis(man_a, res_a)
    basis_b = runner_b._basis(man_b, res_b)
    cpi_a = capacity.spatial_cpi(basis_a, man_a.input_dim)
    cpi_b = capacity.spatial_cpi(basis_b, man_b.input_dim)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "comparison.csv"
    lines = [f"# kappa_a={_fmt(float(basis_a.kappa))},kappa_b={_fmt(float(basis_b.kappa))}"]
    lines.append("lag,cpi_a,cpi_b")
    for lag in range(man_a.receptive_field):
        lines.append(f"{lag + 1},{_fmt(cpi_a[lag])},{_fmt(cpi_b[lag])}")
    path.write_text("\n".join(lines) + "\n")
    return path
