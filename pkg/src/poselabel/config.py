"""Pipeline configuration: one JSON file, full defaults, validation that names
the offending field. Distance-like parameters default to multiples of the
working voxel size (cluster link radius 2x, RANSAC inlier 1.5x, ICP gate
2.5x, FPFH radius 5x)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import sha256_of_json
from .registration import IcpParams, RansacParams
from .segmentation import ClusterParams, ColorFilter
from .tracking import SymmetryGroup, TrackingParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    path: str = ""
    sample_count: int = 5000
    seed: int = 11

    def __post_init__(self):
        if self.sample_count < 1:
            raise ConfigError(f"model.sample_count must be >= 1, got {self.sample_count}")


@dataclass(frozen=True)
class SymmetrySpec:
    axis: tuple = (0.0, 0.0, 1.0)
    order: int = 1

    def __post_init__(self):
        if self.order < 1:
            raise ConfigError(f"symmetry.order must be >= 1, got {self.order}")
        if len(self.axis) != 3 or all(c == 0 for c in self.axis):
            raise ConfigError(f"symmetry.axis must be a nonzero 3-vector, got {self.axis}")


@dataclass(frozen=True)
class ExportConfig:
    exclude_flagged: bool = True
    relative_actions: bool = False


@dataclass(frozen=True)
class PipelineConfig:
    voxel_size: float = 0.005
    stride: int = 1
    color_filter: ColorFilter = field(default_factory=ColorFilter)
    cluster: ClusterParams = field(default_factory=lambda: ClusterParams(link_radius=0.01))
    normals_k: int = 30
    fpfh_radius_factor: float = 5.0
    ransac: RansacParams = field(default_factory=lambda: RansacParams(inlier_distance=0.0075))
    icp: IcpParams = field(default_factory=lambda: IcpParams(max_correspondence_distance=0.0125))
    symmetry: SymmetrySpec = field(default_factory=SymmetrySpec)
    reregistration_fitness: float = 0.3
    model: ModelConfig = field(default_factory=ModelConfig)
    jobs: int = 1
    export: ExportConfig = field(default_factory=ExportConfig)

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise ConfigError(f"voxel_size must be > 0, got {self.voxel_size}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if not (0.0 <= self.reregistration_fitness <= 1.0):
            raise ConfigError(
                f"reregistration_fitness must be in [0, 1], got {self.reregistration_fitness}"
            )

    def symmetry_group(self) -> SymmetryGroup:
        if self.symmetry.order <= 1:
            return SymmetryGroup.trivial()
        return SymmetryGroup.rotational(self.symmetry.axis, self.symmetry.order)

    def tracking_params(self) -> TrackingParams:
        return TrackingParams(
            voxel=self.voxel_size,
            normals_k=self.normals_k,
            fpfh_radius_factor=self.fpfh_radius_factor,
            ransac=self.ransac,
            icp=self.icp,
            reregistration_fitness=self.reregistration_fitness,
        )


def default_config(voxel_size: float = 0.005) -> PipelineConfig:
    v = voxel_size
    return PipelineConfig(
        voxel_size=v,
        cluster=ClusterParams(link_radius=2.0 * v),
        ransac=RansacParams(inlier_distance=1.5 * v),
        icp=IcpParams(max_correspondence_distance=2.5 * v),
    )


def config_to_dict(cfg: PipelineConfig) -> dict:
    return {
        "voxel_size": cfg.voxel_size,
        "stride": cfg.stride,
        "color_filter": {
            "hue_min": cfg.color_filter.hue_min,
            "hue_max": cfg.color_filter.hue_max,
            "sat_min": cfg.color_filter.sat_min,
            "val_min": cfg.color_filter.val_min,
        },
        "cluster": {
            "link_radius": cfg.cluster.link_radius,
            "min_cluster_size": cfg.cluster.min_cluster_size,
        },
        "normals_k": cfg.normals_k,
        "fpfh_radius_factor": cfg.fpfh_radius_factor,
        "ransac": {
            "inlier_distance": cfg.ransac.inlier_distance,
            "max_iterations": cfg.ransac.max_iterations,
            "confidence": cfg.ransac.confidence,
            "sample_size": cfg.ransac.sample_size,
            "edge_similarity": cfg.ransac.edge_similarity,
            "seed": cfg.ransac.seed,
        },
        "icp": {
            "max_correspondence_distance": cfg.icp.max_correspondence_distance,
            "max_iterations": cfg.icp.max_iterations,
            "relative_rmse": cfg.icp.relative_rmse,
            "variant": cfg.icp.variant,
        },
        "symmetry": {"axis": list(cfg.symmetry.axis), "order": cfg.symmetry.order},
        "reregistration_fitness": cfg.reregistration_fitness,
        "model": {
            "path": cfg.model.path,
            "sample_count": cfg.model.sample_count,
            "seed": cfg.model.seed,
        },
        "jobs": cfg.jobs,
        "export": {
            "exclude_flagged": cfg.export.exclude_flagged,
            "relative_actions": cfg.export.relative_actions,
        },
    }


def _take(section: dict, known: dict, path: str) -> dict:
    """Pull known keys out of a config section, rejecting unknown ones."""
    unknown = set(section) - set(known)
    if unknown:
        raise ConfigError(f"unknown config field {path}.{sorted(unknown)[0]}")
    out = {}
    for key, cast in known.items():
        if key in section:
            try:
                out[key] = cast(section[key])
            except ConfigError:
                raise
            except (TypeError, ValueError) as e:
                raise ConfigError(f"bad value for {path}.{key}: {e}") from None
    return out


def config_from_dict(spec: dict) -> PipelineConfig:
    if not isinstance(spec, dict):
        raise ConfigError("config must be a JSON object")
    top_known = {
        "voxel_size", "stride", "color_filter", "cluster", "normals_k",
        "fpfh_radius_factor", "ransac", "icp", "symmetry",
        "reregistration_fitness", "model", "jobs", "export",
    }
    unknown = set(spec) - top_known
    if unknown:
        raise ConfigError(f"unknown config field {sorted(unknown)[0]!r}")

    voxel = float(spec.get("voxel_size", 0.005))
    if voxel <= 0:
        raise ConfigError(f"voxel_size must be > 0, got {voxel}")
    base = default_config(voxel)

    kwargs: dict = {"voxel_size": voxel}
    for name, cast in [("stride", int), ("normals_k", int), ("fpfh_radius_factor", float),
                       ("reregistration_fitness", float), ("jobs", int)]:
        if name in spec:
            try:
                kwargs[name] = cast(spec[name])
            except (TypeError, ValueError) as e:
                raise ConfigError(f"bad value for {name}: {e}") from None

    try:
        if "color_filter" in spec:
            kwargs["color_filter"] = ColorFilter(**_take(
                spec["color_filter"],
                {"hue_min": float, "hue_max": float, "sat_min": float, "val_min": float},
                "color_filter",
            ))
        cluster_kw = _take(
            spec.get("cluster", {}),
            {"link_radius": float, "min_cluster_size": int},
            "cluster",
        )
        kwargs["cluster"] = ClusterParams(
            link_radius=cluster_kw.get("link_radius", base.cluster.link_radius),
            min_cluster_size=cluster_kw.get("min_cluster_size", base.cluster.min_cluster_size),
        )
        ransac_kw = _take(
            spec.get("ransac", {}),
            {"inlier_distance": float, "max_iterations": int, "confidence": float,
             "sample_size": int, "edge_similarity": float, "seed": int},
            "ransac",
        )
        ransac_kw.setdefault("inlier_distance", base.ransac.inlier_distance)
        kwargs["ransac"] = RansacParams(**ransac_kw)
        icp_kw = _take(
            spec.get("icp", {}),
            {"max_correspondence_distance": float, "max_iterations": int,
             "relative_rmse": float, "variant": str},
            "icp",
        )
        icp_kw.setdefault(
            "max_correspondence_distance", base.icp.max_correspondence_distance
        )
        kwargs["icp"] = IcpParams(**icp_kw)
        if "symmetry" in spec and spec["symmetry"] is not None:
            sym_kw = _take(spec["symmetry"], {"axis": tuple, "order": int}, "symmetry")
            kwargs["symmetry"] = SymmetrySpec(**sym_kw)
        if "model" in spec:
            kwargs["model"] = ModelConfig(**_take(
                spec["model"], {"path": str, "sample_count": int, "seed": int}, "model"
            ))
        if "export" in spec:
            kwargs["export"] = ExportConfig(**_take(
                spec["export"],
                {"exclude_flagged": bool, "relative_actions": bool},
                "export",
            ))
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return PipelineConfig(**kwargs)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return config_from_dict(spec)


def config_hash(cfg: PipelineConfig) -> str:
    return sha256_of_json(config_to_dict(cfg))


def print_default_config() -> str:
    return json.dumps(config_to_dict(default_config()), indent=2, sort_keys=True)
