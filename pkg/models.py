from __future__ import annotations

import math
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import (
    DEFAULT_DT,
    DEFAULT_EPSILON_SAMPLE,
    DEFAULT_GRAVITY,
    DEFAULT_HALF_FOV_H,
    DEFAULT_HALF_FOV_V,
    DEFAULT_R_EXT,
    DEFAULT_SIGMA_B,
    DEFAULT_SIGMA_BEARING,
    DEFAULT_SIGMA_P,
    DEFAULT_SIGMA_PRIOR,
    DEFAULT_SIGMA_V,
    DEFAULT_T_EXT,
    DEFAULT_WHEELBASE,
    DEFAULT_Z_MAX,
    DEFAULT_Z_MIN,
    MAX_RESAMPLE_ATTEMPTS,
)

Vec3 = Tuple[float, float, float]
Mat3 = Tuple[Vec3, Vec3, Vec3]

IDENTITY3: Mat3 = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))

METHODS = ("simple", "lowrank", "randomized", "linearized", "random", "grid", "quality", "optimal")
SEEDED_METHODS = ("randomized", "random", "grid")


def yaw_matrix(psi: float) -> Mat3:
    c, s = math.cos(psi), math.sin(psi)
    return ((c, -s, 0.0), (s, c, 0.0), (0.0, 0.0, 1.0))


def _check_rotation(R: Mat3, name: str) -> None:
    m = np.asarray(R, dtype=float)
    if np.linalg.norm(m.T @ m - np.eye(3)) > 1e-10 or np.linalg.det(m) <= 0:
        raise ValueError(f"{name} is not a proper rotation matrix")


# ---------------------------------------------------------------------------
# World description
# ---------------------------------------------------------------------------


class Pose(BaseModel):
    """Body pose: position t (m), body-to-world rotation R, heading psi (rad)."""

    model_config = ConfigDict(frozen=True)

    t: Vec3
    psi: float = 0.0
    R: Mat3 = IDENTITY3

    @model_validator(mode="before")
    @classmethod
    def _rotation_from_heading(cls, data):
        if isinstance(data, dict) and data.get("R") is None:
            data = dict(data)
            data["R"] = yaw_matrix(float(data.get("psi", 0.0)))
        return data

    @model_validator(mode="after")
    def _orthogonal(self):
        _check_rotation(self.R, "Pose.R")
        return self

    @property
    def position(self) -> np.ndarray:
        return np.asarray(self.t, dtype=float)

    @property
    def rotation(self) -> np.ndarray:
        return np.asarray(self.R, dtype=float)


class ControlInput(BaseModel):
    model_config = ConfigDict(frozen=True)

    u: float
    delta: float

    @field_validator("delta")
    @classmethod
    def _steering_bounded(cls, v: float) -> float:
        if math.isfinite(v) and abs(v) >= math.pi / 2:
            raise ValueError(f"|delta| must be < pi/2, got {v}")
        return v


class CameraModel(BaseModel):
    model_config = ConfigDict(frozen=True)

    half_fov_h: float = DEFAULT_HALF_FOV_H
    half_fov_v: float = DEFAULT_HALF_FOV_V
    z_min: float = DEFAULT_Z_MIN
    z_max: float = DEFAULT_Z_MAX
    t_ext: Vec3 = DEFAULT_T_EXT
    R_ext: Mat3 = DEFAULT_R_EXT
    sigma_bearing: float = Field(DEFAULT_SIGMA_BEARING, gt=0)

    @model_validator(mode="after")
    def _check(self):
        for name in ("half_fov_h", "half_fov_v"):
            value = getattr(self, name)
            if not 0 < value < math.pi / 2:
                raise ValueError(f"{name} must lie in (0, pi/2), got {value}")
        if not 0 < self.z_min < self.z_max:
            raise ValueError(f"need 0 < z_min < z_max, got {self.z_min}, {self.z_max}")
        _check_rotation(self.R_ext, "CameraModel.R_ext")
        return self


class Landmark(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: int
    p: Vec3
    quality: float = Field(0.5, ge=0.0, le=1.0)


class ImuConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    sigma_p: float = Field(DEFAULT_SIGMA_P, gt=0)
    sigma_v: float = Field(DEFAULT_SIGMA_V, gt=0)
    sigma_b: float = Field(DEFAULT_SIGMA_B, gt=0)
    sigma_prior: float = Field(DEFAULT_SIGMA_PRIOR, gt=0)
    gravity: Vec3 = DEFAULT_GRAVITY
    accel_readings: List[Vec3] = Field(default_factory=list)
    # Optional 9x9 prior covariance on the first frame; overrides sigma_prior
    prior_covariance: Optional[List[List[float]]] = None

    @field_validator("prior_covariance")
    @classmethod
    def _square9(cls, v):
        if v is not None and (len(v) != 9 or any(len(row) != 9 for row in v)):
            raise ValueError("prior_covariance must be 9x9")
        return v


class Scenario(BaseModel):
    model_config = ConfigDict(frozen=True)

    seed: int = 0
    dt: float = Field(DEFAULT_DT, gt=0)
    wheelbase: float = Field(DEFAULT_WHEELBASE, gt=0)
    camera: CameraModel = Field(default_factory=CameraModel)
    poses: List[Pose]
    controls: List[ControlInput] = Field(default_factory=list)
    landmarks: List[Landmark] = Field(default_factory=list)
    imu: ImuConfig = Field(default_factory=ImuConfig)

    @model_validator(mode="after")
    def _consistent(self):
        if len(self.poses) != len(self.controls) + 1:
            raise ValueError(
                f"need len(poses) == len(controls) + 1, got {len(self.poses)} and {len(self.controls)}"
            )
        ids = [lm.id for lm in self.landmarks]
        if len(set(ids)) != len(ids):
            raise ValueError("landmark ids must be unique")
        return self

    @property
    def T(self) -> int:
        return len(self.controls)


class ScenarioConfig(BaseModel):
    """Parameters for generate_scenario. Landmark boxes are in the start pose's body frame."""

    num_landmarks: int = Field(150, ge=1)
    T: int = Field(13, ge=1)
    dt: float = Field(DEFAULT_DT, gt=0)
    wheelbase: float = Field(DEFAULT_WHEELBASE, gt=0)
    speed: float = 1.0
    steering: float = 0.0
    # Explicit per-step controls; a shorter list is padded with its last entry
    controls: Optional[List[ControlInput]] = None
    start: Pose = Field(default_factory=lambda: Pose(t=(0.0, 0.0, 0.0)))
    camera: CameraModel = Field(default_factory=CameraModel)
    imu: ImuConfig = Field(default_factory=ImuConfig)
    forward_range: Tuple[float, float] = (1.0, 10.0)
    lateral_range: Tuple[float, float] = (-4.0, 4.0)
    height_range: Tuple[float, float] = (-0.5, 1.5)
    # Std-dev (rad) of heading noise injected into predicted poses; 0 disables
    heading_noise: float = Field(0.0, ge=0)
    max_attempts: int = Field(MAX_RESAMPLE_ATTEMPTS, ge=1)

    @field_validator("forward_range", "lateral_range", "height_range")
    @classmethod
    def _ordered(cls, v):
        if v[0] > v[1]:
            raise ValueError(f"range {v} is reversed")
        return v


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


class SelectionResult(BaseModel):
    method: str
    kappa: int
    seed: Optional[int] = None
    selected: List[int]
    gains: List[float]
    objective: float
    elapsed_s: float


class KappaCurvature(BaseModel):
    kappa: int
    alpha: float
    gamma: float
    greedy_factor: float


class BoundReport(BaseModel):
    fingerprint: str
    N: int
    n: int
    kappa: int
    epsilon_sample: float
    alpha: Optional[float] = None
    gamma: Optional[float] = None
    alpha_max: Optional[float] = None
    alpha_max_assumed: bool = False
    elementwise: Dict[int, float] = Field(default_factory=dict)
    per_kappa: List[KappaCurvature] = Field(default_factory=list)
    alpha_bar: float
    gamma_lower: float
    alpha_bar_rank_one: float
    gamma_lower_rank_one: float
    max_rank: int
    delta_min: float
    lambda_min_base: float
    lambda_max_full: float
    greedy_factor: Optional[float] = None
    greedy_factor_spectral: float
    randomized_factor: Optional[float] = None
    c: Optional[float] = None
    r: int
    eta: float
    eta_note: str = "eta evaluated with the unclamped first-iteration r"
    zeta: float
    surrogate_bound: float
    notes: List[str] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


class ExperimentConfig(BaseModel):
    scenario: Optional[str] = None
    generate: Optional[ScenarioConfig] = None
    methods: List[str] = Field(min_length=1)
    kappas: List[int] = Field(min_length=1)
    repeats: int = Field(1, ge=1)
    epsilon_sample: float = DEFAULT_EPSILON_SAMPLE
    frames_list: Optional[List[int]] = None
    num_frames: int = Field(1, ge=1)
    carry_over: bool = False
    candidates: Optional[int] = Field(None, ge=1)
    time_scope: Literal["select", "total"] = "select"
    output: str = "sweep.csv"
    seed: int = 0

    @field_validator("methods")
    @classmethod
    def _known_methods(cls, v: List[str]) -> List[str]:
        unknown = [m for m in v if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; choose from {list(METHODS)}")
        return v

    @field_validator("kappas")
    @classmethod
    def _sorted_kappas(cls, v: List[int]) -> List[int]:
        if any(k < 0 for k in v) or v != sorted(v):
            raise ValueError("kappas must be nonnegative and sorted ascending")
        return v

    @field_validator("frames_list")
    @classmethod
    def _positive_frames(cls, v):
        if v is not None and (not v or any(T < 0 for T in v)):
            raise ValueError("frames_list must be a nonempty list of horizons >= 0")
        return v

    @model_validator(mode="after")
    def _has_world(self):
        if (self.scenario is None) == (self.generate is None):
            raise ValueError("give exactly one of 'scenario' (path) or 'generate' (parameters)")
        return self


class SweepRecord(BaseModel):
    instance: str
    method: str
    kappa: int
    repeat: Union[int, str]
    seed: Optional[int] = None
    objective: float
    scaled_mse: float
    elapsed_s: float
