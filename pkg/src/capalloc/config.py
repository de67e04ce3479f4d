"""Experiment configuration: TOML parsing and validation.

A config file has sections [process], [architecture], [fit], [analyses]
and [output], plus an optional [features] section. See configs/ for the
bundled figure-reproduction configs.
"""

from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path

from .architectures import ModelManifold
from .covariance import AutocovarianceSpec
from .errors import ConfigError
from .features import FeatureMap
from .fitting import FitConfig

ANALYSES = (
    "total_capacity",
    "spatial_cpi",
    "cov_eigen",
    "conditional_chain",
    "marginal",
    "error_bounds",
    "tiled_vs_repeated",
    "multidim_scaling",
    "coefficient_comparison",
)


@dataclass(frozen=True)
class ArchitectureConfig:
    kind: str  # hierarchical | recurrent | fully_connected
    depth: int = 6
    kernel: int = 2
    pattern: str = "exponential"
    blocks: int = 1
    channels: tuple[int, ...] = (1,)
    input_dim: int = 1
    receptive_field: int | None = None  # recurrent models declare it directly

    def manifold(self, channels: int | None = None, *, input_dim: int | None = None,
                 pattern: str | None = None) -> ModelManifold:
        c = channels if channels is not None else self.channels[0]
        d = input_dim if input_dim is not None else self.input_dim
        if self.kind == "hierarchical":
            return ModelManifold.hierarchical(
                depth=self.depth, kernel=self.kernel, channels=c, input_dim=d,
                pattern=pattern or self.pattern, blocks=self.blocks,
            )
        if self.kind == "recurrent":
            if self.receptive_field is None:
                raise ConfigError("architecture.receptive_field required for recurrent models")
            return ModelManifold.recurrent(self.receptive_field, channels=c, input_dim=d)
        if self.kind == "fully_connected":
            if self.receptive_field is None:
                raise ConfigError("architecture.receptive_field required for fully_connected models")
            return ModelManifold.fully_connected(self.receptive_field, input_dim=d)
        raise ConfigError(f"architecture.kind: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    process: AutocovarianceSpec
    architecture: ArchitectureConfig
    fit: FitConfig
    analyses: tuple[str, ...]
    output_dir: str = "out"
    formats: tuple[str, ...] = ("csv", "json")
    chain_orders: tuple[str, ...] = ("forward", "backward")
    error_bound_restarts: int = 32
    multidim_pairs: tuple[tuple[int, int], ...] = ()
    features: FeatureMap | None = None
    feature_samples: int | None = None
    feature_seed: int = 0
    raw: dict = field(default_factory=dict, compare=False)


def _require(table: dict, key: str, context: str):
    if key not in table:
        raise ConfigError(f"missing required key {context}.{key}" if context else
                          f"missing required section '{key}'")
    return table[key]


def _process_spec(table: dict) -> AutocovarianceSpec:
    kind = _require(table, "kind", "process")
    length = _require(table, "length", "process")
    normalize = table.get("normalize", True)
    try:
        if kind == "ar":
            return AutocovarianceSpec.ar(
                _require(table, "weights", "process"),
                table.get("innovation_variance", 1.0),
                length=length, normalize=normalize,
            )
        if kind == "power_law":
            return AutocovarianceSpec.power_law(table.get("alpha", 1.0), length=length)
        if kind == "exponential":
            return AutocovarianceSpec.exponential(_require(table, "rate", "process"), length=length)
        if kind == "explicit":
            return AutocovarianceSpec.explicit(
                _require(table, "values", "process"), length=length, normalize=normalize
            )
    except ValueError as exc:
        raise ConfigError(f"process: {exc}") from exc
    raise ConfigError(f"process.kind: unknown kind {kind!r}")


def _architecture(table: dict) -> ArchitectureConfig:
    kind = _require(table, "kind", "architecture")
    channels = table.get("channels", 1)
    if isinstance(channels, (int, float)):
        channels = [int(channels)]
    if not channels:
        raise ConfigError("architecture.channels: sweep list must be non-empty")
    try:
        return ArchitectureConfig(
            kind=kind,
            depth=int(table.get("depth", 6)),
            kernel=int(table.get("kernel", 2)),
            pattern=table.get("dilation", "exponential"),
            blocks=int(table.get("blocks", 1)),
            channels=tuple(int(c) for c in channels),
            input_dim=int(table.get("input_dim", 1)),
            receptive_field=table.get("receptive_field"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"architecture: {exc}") from exc


def _fit(table: dict) -> FitConfig:
    try:
        return FitConfig(
            max_iterations=int(table.get("max_iterations", 5000)),
            gradient_tolerance=table.get("gradient_tolerance"),
            restarts=int(table.get("restarts", 8)),
            seed=int(table.get("seed", 0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"fit: {exc}") from exc


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(raw)


def parse_config(raw: dict) -> ExperimentConfig:
    process = _process_spec(_require(raw, "process", ""))
    architecture = _architecture(_require(raw, "architecture", ""))
    fit_cfg = _fit(raw.get("fit", {}))

    analyses_table = raw.get("analyses", {})
    analyses = tuple(analyses_table.get("run", ()))
    for name in analyses:
        if name not in ANALYSES:
            raise ConfigError(f"analyses.run: unknown analysis {name!r}")
    if not analyses:
        raise ConfigError("analyses.run: at least one analysis required")

    orders = analyses_table.get("chain_orders", ["forward", "backward"])
    for order in orders:
        if order not in ("forward", "backward"):
            raise ConfigError(f"analyses.chain_orders: unknown order {order!r}")

    pairs = tuple(
        (int(d), int(c)) for d, c in analyses_table.get("multidim_pairs", [])
    )
    if "multidim_scaling" in analyses and not pairs:
        raise ConfigError("analyses.multidim_pairs required for multidim_scaling")

    output = raw.get("output", {})
    fmap = None
    if "features" in raw:
        ftable = raw["features"]
        try:
            fmap = FeatureMap(
                family=_require(ftable, "family", "features"),
                degree=int(ftable.get("degree", 1)),
            )
        except ValueError as exc:
            raise ConfigError(f"features: {exc}") from exc

    return ExperimentConfig(
        process=process,
        architecture=architecture,
        fit=fit_cfg,
        analyses=analyses,
        output_dir=output.get("directory", "out"),
        formats=tuple(output.get("formats", ["csv", "json"])),
        chain_orders=tuple(orders),
        error_bound_restarts=int(analyses_table.get("error_bound_restarts", 32)),
        multidim_pairs=pairs,
        features=fmap,
        feature_samples=raw.get("features", {}).get("samples"),
        feature_seed=int(raw.get("features", {}).get("seed", 0)),
        raw=raw,
    )
