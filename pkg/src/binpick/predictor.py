"""Predictor interface: what a grasp model must produce per scene query.

A predictor maps a normal grid to a label grid plus grasp configurations
carrying prior quality q', prior collision-scores sigma' and an inverse
concentration kappa' per contact.  Two realizations ship here: an oracle
backed by ground-truth label generation (the stand-in for a learned
network) and a file-backed predictor for evaluating external models.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from types import SimpleNamespace
from typing import Protocol

import numpy as np

from .geometry import GraspConfiguration
from .oracle import GraspLabelSet, OracleParams, generate_labels
from .scene import Scene
from .volumetric import GridSpec, LabelGrid, NormalGrid, build_label_grid, load_grid


@dataclass
class GraspPrediction:
    """One predicted grasp configuration with its uncertainty."""

    config: GraspConfiguration  # q and collision_scores hold the priors q', sigma'
    approach_points: np.ndarray  # (n_r, 3)
    kappa_prime: float


@dataclass
class Prediction:
    label_grid: LabelGrid
    grasps: list[GraspPrediction]


class Predictor(Protocol):
    def predict(self, normals: NormalGrid) -> Prediction: ...


class OraclePredictor:
    """Ground-truth predictor: regenerates labels for the live scene.

    Reported contact and approach points are snapped to the centers of
    their voxels so that trilinear score composition against the one-hot
    label grid is exact (q = q_true, sigma = sigma_true); contacts outside
    the grid are dropped, approach points outside the grid get sigma' = 0.
    """

    def __init__(self, scene: Scene, params: OracleParams, spec: GridSpec, seed: int = 0):
        self.scene = scene
        self.params = params
        self.spec = spec
        self.seed = seed

    def predict(self, normals: NormalGrid) -> Prediction:
        spec = self.spec
        labels = generate_labels(self.scene, self.params, self.seed)
        inside = [lab for lab in labels.labels if spec.contains(lab.config.c)]
        kept = GraspLabelSet(
            scene_id=labels.scene_id, seed=labels.seed, labels=inside, params=labels.params
        )
        grid = build_label_grid(kept, spec)

        grasps = []
        for lab in inside:
            cfg = lab.config
            c_star = spec.voxel_center(spec.voxel_of(cfg.c))
            t_star = np.array([spec.voxel_center(spec.voxel_of(t)) for t in lab.approach_points])
            t_ok = np.asarray(spec.contains(lab.approach_points))
            scores = np.where(t_ok, cfg.collision_scores, 0.0)
            snapped = GraspConfiguration(
                c=c_star,
                b=cfg.b,
                approaches=cfg.approaches,
                collision_scores=scores,
                w=cfg.w,
                q=cfg.q,
            )
            grasps.append(GraspPrediction(config=snapped, approach_points=t_star, kappa_prime=0.0))
        return Prediction(label_grid=grid, grasps=grasps)


class FilePredictor:
    """Replays predictions stored in a JSONL file (external model output).

    The file shares the grasp-label schema plus per-record q', sigma',
    kappa'; the header may reference a soft label-grid file.  Without one,
    a one-hot grid is built from the records themselves.
    """

    def __init__(self, path, spec: GridSpec):
        self.path = Path(path)
        self.spec = spec
        self._prediction: Prediction | None = None

    def _load(self) -> Prediction:
        lines = self.path.read_text().splitlines()
        if not lines:
            raise ValueError(f"empty prediction file {self.path}")
        header = json.loads(lines[0])
        grasps = []
        for line in lines[1:]:
            if not line.strip():
                continue
            d = json.loads(line)
            config = GraspConfiguration(
                c=np.asarray(d["c"]),
                b=np.asarray(d["b"]),
                approaches=np.asarray(d["approaches"]),
                collision_scores=np.asarray(d.get("sigma_prime", d.get("collision_scores"))),
                w=float(d["w"]),
                q=float(d.get("q_prime", d.get("q"))),
            )
            grasps.append(
                GraspPrediction(
                    config=config,
                    approach_points=np.asarray(d["approach_points"]),
                    kappa_prime=float(d.get("kappa_prime", 0.0)),
                )
            )
        grid_ref = header.get("label_grid")
        if grid_ref:
            grid_path = Path(grid_ref)
            if not grid_path.is_absolute():
                grid_path = self.path.parent / grid_path
            grid = load_grid(grid_path)
            if not isinstance(grid, LabelGrid):
                raise ValueError("label_grid reference does not point at a label grid")
        else:
            inside = SimpleNamespace(
                labels=[g for g in grasps if self.spec.contains(g.config.c)]
            )
            grid = build_label_grid(inside, self.spec)
        return Prediction(label_grid=grid, grasps=grasps)

    def predict(self, normals: NormalGrid) -> Prediction:
        if self._prediction is None:
            self._prediction = self._load()
        return self._prediction


def save_predictions(path, label_set_like, kappa_primes=None, label_grid_ref: str | None = None) -> None:
    """Write a prediction JSONL from a GraspLabelSet-shaped object."""
    header = {
        "scene_id": label_set_like.scene_id,
        "seed": label_set_like.seed,
        "params": label_set_like.params,
    }
    if label_grid_ref:
        header["label_grid"] = label_grid_ref
    with open(path, "w") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for i, lab in enumerate(label_set_like.labels):
            cfg = lab.config
            rec = {
                "object_id": lab.object_id,
                "c": [float(x) for x in cfg.c],
                "b": [float(x) for x in cfg.b],
                "w": cfg.w,
                "q_prime": cfg.q,
                "approaches": [[float(x) for x in a] for a in cfg.approaches],
                "sigma_prime": [float(x) for x in cfg.collision_scores],
                "approach_points": [[float(x) for x in p] for p in lab.approach_points],
                "kappa_prime": float(kappa_primes[i]) if kappa_primes is not None else 0.0,
            }
            f.write(json.dumps(rec, sort_keys=True) + "\n")
