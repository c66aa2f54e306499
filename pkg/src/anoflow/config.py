"""Run configuration: one structured file drives every stage.

All tolerances, grids and family definitions live here so that a run is
reproducible from its configuration alone; the pipeline stamps every
artifact with the configuration hash.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields


@dataclass
class RunConfig:
    # system
    monodromy: tuple = ((2, 1), (1, 1))
    seed: int = 2026
    outdir: str = "runs/default"

    # splitting stage
    split_grid: int = 12
    split_T_iter: float | None = None
    split_step: float = 5e-3
    split_subsample: int = 64

    # weight stage
    weight_eps: float = 0.1
    weight_T_floor: float = 1.0
    weight_base_n: int = 24
    weight_fiber_n: int = 26
    weight_f_tol_frac: float = 1e-3
    weight_dense_samples: int = 400_000
    budget_safety: float = 2.0
    budget_probes: int = 4
    budget_band_samples: int = 1200
    monotonicity_samples: int = 120_000
    robustness_directions: int = 20
    adversarial_factor: float = 4.0

    # threshold stage
    threshold_s_lo: float = -1.0
    threshold_s_hi: float = 0.0
    threshold_s_n: int = 21
    threshold_eps_n: int = 5
    family_scale: float = 0.5     # C^1 size of the default family direction
    cone_half_angle: float = 0.3
    sink_horizon: float = 8.0
    growth_samples: int = 1024

    # spectra stage
    K_max: float = 8.0
    N_t: int = 25
    k0: float = 4.0
    h: float = 0.1
    r_strength: float | None = None   # default: above the box threshold
    k_shift: int = 0
    box: tuple = (-0.5, 0.2, -7.0, 7.0)
    mollifier_profile: str = "smoothstep"
    dump_determinant_grid: bool = False

    # control-lemma stage
    control_h_grid: tuple = (0.2, 0.1, 0.05)
    control_r: float = 5.0

    # trace-scaling stage
    trace_h_grid: tuple = (0.5, 0.35, 0.25)
    trace_kappa0: float = 1.0

    # continuation stage
    track_eps_n: int = 5
    track_delta: float = 0.5
    vol_K_max: float = 3.0
    vol_N_t: int = 9
    projector_radius: float = 0.5
    projector_nodes: int = 64

    def as_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.as_dict(), f, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path) as f:
            data = json.load(f)
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        clean = {}
        for k, v in data.items():
            if isinstance(v, list):
                v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
            clean[k] = v
        return cls(**clean)
