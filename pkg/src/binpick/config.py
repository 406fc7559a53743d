"""Run configuration: scenario presets and the knobs shared by the CLI."""

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .geometry import GripperModel
from .oracle import OracleParams
from .scene import BinModel, EASY_POOL, FULL_POOL
from .volumetric import GridSpec

# scenario presets: object-count caps per difficulty, shape pools, noise
PRESETS = {
    "easy": {"max_objects": 5, "pool": EASY_POOL, "noise": False},
    "medium": {"max_objects": 15, "pool": FULL_POOL, "noise": False},
    "challenging": {"max_objects": 35, "pool": FULL_POOL, "noise": True},
}


@dataclass
class RunConfig:
    master_seed: int = 0
    preset: str = "easy"
    noise: bool | None = None  # None: follow the preset
    grid_n: int = 64
    voxel_size: float = 0.0095  # 64 voxels cover the default 0.6 m bin
    grid_origin: tuple | None = None  # None: centered on the bin
    camera_height: float = 1.0
    q_threshold: float = 0.5
    sigma_threshold: float = 0.5
    max_approaches: int = 8
    bin: BinModel = field(default_factory=BinModel)
    gripper: GripperModel = field(default_factory=GripperModel)
    oracle: OracleParams = field(default_factory=OracleParams)

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")
        self.oracle.gripper = self.gripper

    @property
    def max_objects(self) -> int:
        return PRESETS[self.preset]["max_objects"]

    @property
    def shape_pool(self) -> dict:
        return PRESETS[self.preset]["pool"]

    @property
    def noise_enabled(self) -> bool:
        return PRESETS[self.preset]["noise"] if self.noise is None else self.noise

    def grid_spec(self) -> GridSpec:
        if self.grid_origin is not None:
            origin = np.asarray(self.grid_origin, dtype=float)
        else:
            span = self.grid_n * self.voxel_size
            origin = np.array([-span / 2.0, -span / 2.0, -1.5 * self.voxel_size])
        return GridSpec(n=self.grid_n, voxel_size=self.voxel_size, origin=origin)

    @property
    def trunc(self) -> float:
        return 4.0 * self.voxel_size

    @classmethod
    def from_json(cls, path=None, **overrides) -> "RunConfig":
        data = {}
        if path is not None:
            data = json.loads(Path(path).read_text())
        data.update({k: v for k, v in overrides.items() if v is not None})
        kwargs = {}
        simple = {f.name for f in fields(cls)} - {"bin", "gripper", "oracle"}
        for key in simple:
            if key in data:
                kwargs[key] = data[key]
        if "bin" in data:
            kwargs["bin"] = BinModel.from_dict(data["bin"])
        if "gripper" in data:
            kwargs["gripper"] = GripperModel(**data["gripper"])
        if "oracle" in data:
            kwargs["oracle"] = OracleParams(**data["oracle"])
        return cls(**kwargs)
