"""Synthetic VIN worlds: bicycle-model horizon, pinhole bearings, visibility."""

import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import ConfigError, DegenerateGeometryError
from models import (
    CameraModel,
    ControlInput,
    Landmark,
    Pose,
    Scenario,
    ScenarioConfig,
    yaw_matrix,
)
from rng import SplitMix64
from storage import load_json, save_json

logger = logging.getLogger(__name__)

MIN_CAMERA_DISTANCE = 1e-9


def simulate_bicycle_horizon(
    start: Pose,
    controls: Sequence[ControlInput],
    dt: float,
    wheelbase: float,
) -> List[Pose]:
    """Forward-Euler rollout of the kinematic bicycle model.

    Returns len(controls) + 1 poses, the first being `start` itself. Heading follows
    psi += (u / L) * tan(delta) * dt and each rotation is rebuilt from psi, so the
    rollout is planar about the world z-axis.
    """
    if not (math.isfinite(dt) and dt > 0):
        raise ConfigError(f"dt must be a positive finite number, got {dt}")
    if not (math.isfinite(wheelbase) and wheelbase > 0):
        raise ConfigError(f"wheelbase must be a positive finite number, got {wheelbase}")
    for h, control in enumerate(controls):
        if not (math.isfinite(control.u) and math.isfinite(control.delta)):
            raise ConfigError(f"control {h} is not finite: u={control.u}, delta={control.delta}")
        if abs(control.delta) >= math.pi / 2:
            raise ConfigError(f"control {h} steering {control.delta} is not below pi/2")

    poses = [start]
    x, y, z = start.t
    psi = start.psi
    for control in controls:
        x += control.u * math.cos(psi) * dt
        y += control.u * math.sin(psi) * dt
        psi += (control.u / wheelbase) * math.tan(control.delta) * dt
        poses.append(Pose(t=(x, y, z), psi=psi, R=yaw_matrix(psi)))
    return poses


def camera_pose(pose: Pose, cam: CameraModel) -> Tuple[np.ndarray, np.ndarray]:
    """World camera centre t + R t_ext and camera rotation R R_ext."""
    R = pose.rotation
    t_cam = pose.position + R @ np.asarray(cam.t_ext, dtype=float)
    R_cam = R @ np.asarray(cam.R_ext, dtype=float)
    return t_cam, R_cam


def project_to_camera(
    pose: Pose,
    cam: CameraModel,
    point: Sequence[float],
) -> Optional[Tuple[np.ndarray, float]]:
    """Unit bearing and depth of `point` in the camera frame, or None outside the frustum."""
    t_cam, R_cam = camera_pose(pose, cam)
    offset = np.asarray(point, dtype=float) - t_cam
    distance = np.linalg.norm(offset)
    if distance < MIN_CAMERA_DISTANCE:
        return None

    pc = R_cam.T @ offset
    depth = float(pc[2])
    if not cam.z_min <= depth <= cam.z_max:
        return None
    if abs(math.atan2(pc[0], pc[2])) > cam.half_fov_h:
        return None
    if abs(math.atan2(pc[1], pc[2])) > cam.half_fov_v:
        return None
    return pc / np.linalg.norm(pc), depth


def visibility_mask(poses: Sequence[Pose], cam: CameraModel, point: Sequence[float]) -> List[bool]:
    if not poses:
        raise ConfigError("visibility_mask needs at least one pose")
    return [project_to_camera(pose, cam, point) is not None for pose in poses]


def derive_accel_readings(
    poses: Sequence[Pose],
    controls: Sequence[ControlInput],
    dt: float,
    gravity: Sequence[float],
) -> List[Tuple[float, float, float]]:
    """Noiseless accelerometer readings R^T (a - g) between consecutive frames."""
    g = np.asarray(gravity, dtype=float)
    readings = []
    for h, control in enumerate(controls):
        nxt = controls[h + 1] if h + 1 < len(controls) else control
        v_h = control.u * np.array([math.cos(poses[h].psi), math.sin(poses[h].psi), 0.0])
        v_next = nxt.u * np.array([math.cos(poses[h + 1].psi), math.sin(poses[h + 1].psi), 0.0])
        a = (v_next - v_h) / dt
        readings.append(tuple(float(c) for c in poses[h].rotation.T @ (a - g)))
    return readings


def _expand_controls(cfg: ScenarioConfig) -> List[ControlInput]:
    if cfg.controls:
        controls = list(cfg.controls[: cfg.T])
        controls += [controls[-1]] * (cfg.T - len(controls))
        return controls
    return [ControlInput(u=cfg.speed, delta=cfg.steering)] * cfg.T


def _perturb_headings(poses: List[Pose], sigma: float, rng: SplitMix64) -> List[Pose]:
    noisy = [poses[0]]
    for pose in poses[1:]:
        psi = pose.psi + rng.gauss(0.0, sigma)
        noisy.append(Pose(t=pose.t, psi=psi, R=yaw_matrix(psi)))
    return noisy


def _sample_landmarks(cfg: ScenarioConfig, rng: SplitMix64) -> List[Landmark]:
    origin = cfg.start.position
    R0 = cfg.start.rotation
    landmarks = []
    for lid in range(cfg.num_landmarks):
        body = np.array([
            rng.uniform(*cfg.forward_range),
            rng.uniform(*cfg.lateral_range),
            rng.uniform(*cfg.height_range),
        ])
        p = origin + R0 @ body
        landmarks.append(Landmark(id=lid, p=tuple(float(c) for c in p), quality=rng.random()))
    return landmarks


def triangulable_count(scenario: Scenario) -> int:
    """Landmarks seen from at least two frames of the horizon."""
    return sum(
        1 for lm in scenario.landmarks
        if sum(visibility_mask(scenario.poses, scenario.camera, lm.p)) >= 2
    )


def generate_scenario(seed: int, cfg: ScenarioConfig) -> Scenario:
    """Deterministic world for (seed, cfg); resamples landmarks until one is triangulable."""
    rng = SplitMix64(seed)
    controls = _expand_controls(cfg)
    poses = simulate_bicycle_horizon(cfg.start, controls, cfg.dt, cfg.wheelbase)
    if cfg.heading_noise > 0:
        poses = _perturb_headings(poses, cfg.heading_noise, rng)

    for attempt in range(1, cfg.max_attempts + 1):
        landmarks = _sample_landmarks(cfg, rng)
        if any(sum(visibility_mask(poses, cfg.camera, lm.p)) >= 2 for lm in landmarks):
            break
        logger.warning(f"Attempt {attempt}/{cfg.max_attempts}: no triangulable landmark, resampling")
    else:
        raise DegenerateGeometryError(
            "no triangulable landmark",
            attempts=cfg.max_attempts,
            seed=seed,
        )

    imu = cfg.imu.model_copy(update={
        "accel_readings": derive_accel_readings(poses, controls, cfg.dt, cfg.imu.gravity),
    })
    scenario = Scenario(
        seed=seed,
        dt=cfg.dt,
        wheelbase=cfg.wheelbase,
        camera=cfg.camera,
        poses=poses,
        controls=controls,
        landmarks=landmarks,
        imu=imu,
    )
    logger.info(f"Generated scenario seed={seed}: {len(landmarks)} landmarks, T={scenario.T}")
    return scenario


def _resimulate(scenario: Scenario, start: Pose, controls: List[ControlInput]) -> Scenario:
    poses = simulate_bicycle_horizon(start, controls, scenario.dt, scenario.wheelbase)
    imu = scenario.imu.model_copy(update={
        "accel_readings": derive_accel_readings(poses, controls, scenario.dt, scenario.imu.gravity),
    })
    return scenario.model_copy(update={"poses": poses, "controls": controls, "imu": imu})


def with_horizon(scenario: Scenario, T: int) -> Scenario:
    """Same world over a horizon of T steps.

    Shorter horizons truncate. Longer ones repeat the last control (constant-velocity
    propagation) and re-simulate from the first pose, which reproduces the existing
    prefix exactly when the poses came from the bicycle rollout.
    """
    if T < 0:
        raise ConfigError(f"horizon must be >= 0, got {T}")
    if T <= scenario.T:
        return scenario.model_copy(update={
            "poses": scenario.poses[: T + 1],
            "controls": scenario.controls[:T],
            "imu": scenario.imu.model_copy(update={"accel_readings": scenario.imu.accel_readings[:T]}),
        })
    last = scenario.controls[-1] if scenario.controls else ControlInput(u=0.0, delta=0.0)
    controls = list(scenario.controls) + [last] * (T - scenario.T)
    return _resimulate(scenario, scenario.poses[0], controls)


def advance_scenario(scenario: Scenario, steps: int) -> Scenario:
    """The horizon seen `steps` frames later: start at poses[steps], keep T."""
    if not 0 <= steps <= scenario.T:
        raise ConfigError(f"can advance 0..{scenario.T} frames, got {steps}")
    if steps == 0:
        return scenario
    controls = list(scenario.controls[steps:]) + [scenario.controls[-1]] * steps
    return _resimulate(scenario, scenario.poses[steps], controls)


def ground_truth_state(scenario: Scenario) -> np.ndarray:
    """Stacked [p(h), v(h), b(h)] for every frame; biases are zero in simulation."""
    blocks = []
    for h, pose in enumerate(scenario.poses):
        u = scenario.controls[h].u if h < scenario.T else (scenario.controls[-1].u if scenario.controls else 0.0)
        velocity = u * np.array([math.cos(pose.psi), math.sin(pose.psi), 0.0])
        blocks.append(np.concatenate([pose.position, velocity, np.zeros(3)]))
    return np.concatenate(blocks)


def save_scenario(scenario: Scenario, filename: Union[str, Path]) -> Path:
    return save_json(filename, scenario)


def load_scenario(filename: Union[str, Path]) -> Scenario:
    return Scenario.model_validate(load_json(filename))
