"""Information matrices for the selection problem.

Omega_0 comes from the first-frame prior plus a linear IMU factor chain. Each landmark
contributes a PSD increment Delta_l obtained by marginalizing its 3-D position out of
the stacked bearing constraints. The objective is

    f(S) = tr(Omega_0^-1) - tr((Omega_0 + sum_{l in S} Delta_l)^-1)

and everything that inverts a matrix goes through a Cholesky factor.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, cholesky, pinvh, solve_triangular, svd

from config import GAIN_EPS, PINV_RCOND, RANK_TOL, SYMMETRY_TOL
from errors import ConfigError, NumericalError
from models import Landmark, Scenario
from scenario import camera_pose, project_to_camera, visibility_mask
from storage import fingerprint

logger = logging.getLogger(__name__)

STATE_DIM = 9  # [p, v, b] per frame
PSD_TOL = 1e-8


def state_dim(T: int) -> int:
    return STATE_DIM * (T + 1)


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def skew(u: Sequence[float]) -> np.ndarray:
    x, y, z = u
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def trace_of_inverse(M: np.ndarray) -> float:
    """tr(M^-1) for PD M as the squared Frobenius norm of L^-1."""
    try:
        L = cholesky(M, lower=True)
    except LinAlgError as exc:
        raise NumericalError(f"matrix is not positive definite: {exc}", code="not_positive_definite") from exc
    L_inv = solve_triangular(L, np.eye(M.shape[0]), lower=True)
    return float(np.sum(L_inv ** 2))


def inverse_pd(M: np.ndarray) -> np.ndarray:
    try:
        factor = cho_factor(M, lower=True)
    except LinAlgError as exc:
        raise NumericalError(f"matrix is not positive definite: {exc}", code="not_positive_definite") from exc
    return symmetrize(cho_solve(factor, np.eye(M.shape[0])))


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class InfoMatrix:
    """Symmetric n x n Fisher information matrix."""

    M: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ConfigError(f"information matrix must be square, got shape {M.shape}")
        scale = max(np.linalg.norm(M), 1.0)
        if np.linalg.norm(M - M.T) > SYMMETRY_TOL * scale:
            raise ConfigError("information matrix is not symmetric")
        object.__setattr__(self, "M", symmetrize(M))

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def check_positive_definite(self) -> None:
        try:
            cholesky(self.M, lower=True)
        except LinAlgError as exc:
            raise NumericalError("information matrix is not positive definite", code="not_positive_definite") from exc

    def inverse(self) -> np.ndarray:
        return inverse_pd(self.M)

    def trace_inverse(self) -> float:
        return trace_of_inverse(self.M)


@dataclass(frozen=True, eq=False)
class LandmarkFactors:
    """Whitened bearing rows of one landmark: F on the state, E on its position."""

    id: int
    F: np.ndarray
    E: np.ndarray
    frames: Tuple[int, ...] = ()
    rhs: Optional[np.ndarray] = None

    @property
    def n_obs(self) -> int:
        return self.E.shape[0] // 3

    @property
    def n(self) -> int:
        return self.F.shape[1]


@dataclass(frozen=True, eq=False)
class LandmarkIncrement:
    """Delta_l together with a factor G (G^T G = Delta_l).

    `G_compact` holds only the columns listed in `cols`; every other column of G is
    zero. For a landmark these are the position columns of the frames that see it.
    """

    id: int
    delta: np.ndarray
    G: np.ndarray
    G_compact: np.ndarray
    cols: np.ndarray
    trace: float

    @property
    def rank(self) -> int:
        return self.G.shape[0]

    @property
    def n(self) -> int:
        return self.delta.shape[0]


def _nonzero_columns(A: np.ndarray) -> np.ndarray:
    if A.size == 0:
        return np.zeros(0, dtype=int)
    return np.flatnonzero(np.any(A != 0.0, axis=0))


def _compress_rows(A: np.ndarray, scale: float) -> np.ndarray:
    """Row-compress A to diag(s) V^T, dropping singular values <= RANK_TOL * scale."""
    if A.size == 0:
        return np.zeros((0, A.shape[1]))
    _, s, Vt = svd(A, full_matrices=False)
    keep = s > RANK_TOL * scale
    return s[keep, None] * Vt[keep]


def _increment_from_compact(
    lid: int,
    n: int,
    cols: np.ndarray,
    G_c: np.ndarray,
    delta_c: Optional[np.ndarray] = None,
) -> LandmarkIncrement:
    delta = np.zeros((n, n))
    G = np.zeros((G_c.shape[0], n))
    if G_c.shape[0] > 0:
        G[:, cols] = G_c
        block = G_c.T @ G_c if delta_c is None else delta_c
        delta[np.ix_(cols, cols)] = symmetrize(block)
    else:
        cols = np.zeros(0, dtype=int)
        G_c = np.zeros((0, 0))
    return LandmarkIncrement(
        id=lid,
        delta=delta,
        G=G,
        G_compact=G_c,
        cols=np.asarray(cols, dtype=int),
        trace=float(np.trace(delta)),
    )


def factor_psd(delta: np.ndarray) -> np.ndarray:
    """G with G^T G = delta from an eigendecomposition; rejects indefinite input."""
    delta = symmetrize(np.asarray(delta, dtype=float))
    w, V = np.linalg.eigh(delta)
    scale = max(float(np.max(np.abs(w))) if w.size else 0.0, 0.0)
    if w.size and w[0] < -PSD_TOL * max(scale, 1.0):
        raise ConfigError(f"increment is not PSD (smallest eigenvalue {w[0]:.3e})", code="not_psd")
    keep = w > RANK_TOL * scale
    return np.sqrt(w[keep])[:, None] * V[:, keep].T


def make_increment(lid: int, delta: Optional[np.ndarray] = None, G: Optional[np.ndarray] = None) -> LandmarkIncrement:
    """LandmarkIncrement from a dense Delta or from a factor G."""
    if G is None:
        if delta is None:
            raise ConfigError(f"increment {lid} needs 'delta' or 'G'")
        delta = symmetrize(np.asarray(delta, dtype=float))
        G = factor_psd(delta)
    else:
        G = np.atleast_2d(np.asarray(G, dtype=float))
        delta = None
    n = G.shape[1]
    cols = _nonzero_columns(G)
    G_c = G[:, cols]
    delta_c = None if delta is None else delta[np.ix_(cols, cols)]
    return _increment_from_compact(lid, n, cols, G_c, delta_c)


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def build_base_information(scenario: Scenario) -> InfoMatrix:
    """Prior on frame 0 plus the position/velocity/bias factor chain.

    Between frames h and h+1, with known rotation R(h):
        p(h+1) - p(h) - dt v(h) + (dt^2 / 2) R(h) b(h)
        v(h+1) - v(h) + dt R(h) b(h)
        b(h+1) - b(h)
    weighted by diag(sigma_p^-2 I, sigma_v^-2 I, sigma_b^-2 I).
    """
    imu = scenario.imu
    T, dt = scenario.T, scenario.dt
    n = state_dim(T)
    M = np.zeros((n, n))

    if imu.prior_covariance is not None:
        M[:STATE_DIM, :STATE_DIM] = inverse_pd(np.asarray(imu.prior_covariance, dtype=float))
    else:
        M[:STATE_DIM, :STATE_DIM] = np.eye(STATE_DIM) / imu.sigma_prior ** 2

    I3 = np.eye(3)
    W = np.diag(np.repeat([imu.sigma_p ** -2, imu.sigma_v ** -2, imu.sigma_b ** -2], 3))
    for h in range(T):
        R = scenario.poses[h].rotation
        # Columns: [p(h), v(h), b(h), p(h+1), v(h+1), b(h+1)]
        H = np.zeros((9, 18))
        H[0:3, 0:3] = -I3
        H[0:3, 3:6] = -dt * I3
        H[0:3, 6:9] = 0.5 * dt ** 2 * R
        H[0:3, 9:12] = I3
        H[3:6, 3:6] = -I3
        H[3:6, 6:9] = dt * R
        H[3:6, 12:15] = I3
        H[6:9, 6:9] = -I3
        H[6:9, 15:18] = I3
        lo = STATE_DIM * h
        M[lo:lo + 18, lo:lo + 18] += H.T @ W @ H

    omega0 = InfoMatrix(M)
    try:
        omega0.check_positive_definite()
    except NumericalError as exc:
        raise ConfigError("base information is not positive definite; check the IMU noise settings") from exc
    return omega0


def build_landmark_factors(scenario: Scenario, landmark: Landmark, mask: Sequence[bool]) -> LandmarkFactors:
    """Stack 3 whitened bearing rows per visible frame.

    Each block is [u]x R_cam^T (p_l - t_cam) = 0 with u the noiseless bearing, so the
    E block is [u]x R_cam^T, the F block on p(h) is its negative, and the known
    right-hand side is [u]x R_cam^T R t_ext.
    """
    T = scenario.T
    n = state_dim(T)
    if len(mask) != T + 1:
        raise ConfigError(f"mask has {len(mask)} entries for {T + 1} frames")

    cam = scenario.camera
    w = 1.0 / cam.sigma_bearing
    t_ext = np.asarray(cam.t_ext, dtype=float)
    F_rows, E_rows, rhs, frames = [], [], [], []
    for h, visible in enumerate(mask):
        if not visible:
            continue
        pose = scenario.poses[h]
        projection = project_to_camera(pose, cam, landmark.p)
        if projection is None:
            raise ConfigError(f"landmark {landmark.id} marked visible at frame {h} but projects outside the frustum")
        bearing, _ = projection
        _, R_cam = camera_pose(pose, cam)
        block = w * skew(bearing) @ R_cam.T

        F = np.zeros((3, n))
        F[:, STATE_DIM * h:STATE_DIM * h + 3] = -block
        F_rows.append(F)
        E_rows.append(block)
        rhs.append(block @ pose.rotation @ t_ext)
        frames.append(h)

    if not frames:
        return LandmarkFactors(id=landmark.id, F=np.zeros((0, n)), E=np.zeros((0, 3)), rhs=np.zeros(0))
    return LandmarkFactors(
        id=landmark.id,
        F=np.vstack(F_rows),
        E=np.vstack(E_rows),
        frames=tuple(frames),
        rhs=np.concatenate(rhs),
    )


def schur_increment(factors: LandmarkFactors) -> LandmarkIncrement:
    """Delta_l = F^T F - F^T E (E^T E)^+ E^T F and its row-compressed factor G.

    G = U^T F where U is an orthonormal basis of the projector I - E (E^T E)^+ E^T,
    computed on the nonzero columns of F only.
    """
    n = factors.n
    cols = _nonzero_columns(factors.F)
    if factors.n_obs == 0 or cols.size == 0:
        return _increment_from_compact(factors.id, n, cols, np.zeros((0, 0)))

    F_c = factors.F[:, cols]
    E = factors.E
    EtE = E.T @ E
    EtE_pinv = pinvh(EtE, atol=0.0, rtol=PINV_RCOND)
    FtE = F_c.T @ E
    delta_c = symmetrize(F_c.T @ F_c - FtE @ EtE_pinv @ FtE.T)

    # Range of the projector: left singular vectors of E past its numerical rank.
    # The cutoff on s^2 matches the pseudo-inverse cutoff on E^T E.
    U_full, s, _ = svd(E, full_matrices=True)
    rank_E = int(np.sum(s ** 2 > PINV_RCOND * s[0] ** 2)) if s.size and s[0] > 0 else 0
    basis = U_full[:, rank_E:]
    G_c = _compress_rows(basis.T @ F_c, scale=np.linalg.norm(F_c, 2))

    if G_c.shape[0] == 0:
        # A single bearing carries no information once the point is marginalized
        return _increment_from_compact(factors.id, n, cols, G_c)
    return _increment_from_compact(factors.id, n, cols, G_c, delta_c)


# ---------------------------------------------------------------------------
# Problem instance
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """Omega_0 and the ground set of landmark increments, sorted by id.

    The metadata dictionaries (quality, first-frame bearing, visibility) are keyed by
    landmark id and feed the baselines and the carry-over logic.
    """

    omega0: InfoMatrix
    increments: Tuple[LandmarkIncrement, ...]
    horizon: Optional[int] = None
    qualities: Dict[int, float] = field(default_factory=dict)
    first_bearings: Dict[int, Tuple[float, float, float]] = field(default_factory=dict)
    half_fov_h: Optional[float] = None
    half_fov_v: Optional[float] = None
    visibility: Dict[int, Tuple[bool, ...]] = field(default_factory=dict)

    def __post_init__(self):
        increments = tuple(sorted(self.increments, key=lambda inc: inc.id))
        object.__setattr__(self, "increments", increments)
        if not increments:
            raise ConfigError("problem needs at least one landmark increment", code="empty_ground_set")
        ids = [inc.id for inc in increments]
        if len(set(ids)) != len(ids):
            raise ConfigError("landmark ids must be unique")
        for inc in increments:
            if inc.n != self.omega0.n:
                raise ConfigError(f"increment {inc.id} has dimension {inc.n}, expected {self.omega0.n}")
        if self.horizon is not None and self.omega0.n != state_dim(self.horizon):
            raise ConfigError(f"dimension {self.omega0.n} does not match horizon T={self.horizon}")

    @property
    def n(self) -> int:
        return self.omega0.n

    @property
    def N(self) -> int:
        return len(self.increments)

    @property
    def ids(self) -> List[int]:
        return [inc.id for inc in self.increments]

    @property
    def frames(self) -> int:
        """Number of frames (T+1); inferred from n when no horizon is recorded."""
        if self.horizon is not None:
            return self.horizon + 1
        return max(1, self.n // STATE_DIM)

    @cached_property
    def index(self) -> Dict[int, int]:
        return {inc.id: i for i, inc in enumerate(self.increments)}

    @cached_property
    def omega0_inv(self) -> np.ndarray:
        return self.omega0.inverse()

    @cached_property
    def trace_inv0(self) -> float:
        return self.omega0.trace_inverse()

    def increment(self, lid: int) -> LandmarkIncrement:
        try:
            return self.increments[self.index[lid]]
        except KeyError:
            raise ConfigError(f"unknown landmark id {lid}", code="unknown_landmark") from None

    def check_ids(self, ids: Iterable[int]) -> List[int]:
        ids = list(ids)
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate landmark ids in {ids}")
        unknown = [lid for lid in ids if lid not in self.index]
        if unknown:
            raise ConfigError(f"unknown landmark ids {unknown}", code="unknown_landmark")
        return ids

    def information(self, ids: Iterable[int]) -> np.ndarray:
        """Omega_S = Omega_0 + sum of the selected increments."""
        M = self.omega0.M.copy()
        for lid in self.check_ids(ids):
            M += self.increment(lid).delta
        return symmetrize(M)


def build_problem(scenario: Scenario) -> ProblemInstance:
    """ProblemInstance for every landmark of the scenario, visible or not."""
    omega0 = build_base_information(scenario)
    increments, qualities, bearings, visibility = [], {}, {}, {}
    for landmark in sorted(scenario.landmarks, key=lambda lm: lm.id):
        mask = visibility_mask(scenario.poses, scenario.camera, landmark.p)
        increments.append(schur_increment(build_landmark_factors(scenario, landmark, mask)))
        qualities[landmark.id] = landmark.quality
        visibility[landmark.id] = tuple(mask)
        first = project_to_camera(scenario.poses[0], scenario.camera, landmark.p)
        if first is not None:
            bearings[landmark.id] = tuple(float(c) for c in first[0])

    problem = ProblemInstance(
        omega0=omega0,
        increments=tuple(increments),
        horizon=scenario.T,
        qualities=qualities,
        first_bearings=bearings,
        half_fov_h=scenario.camera.half_fov_h,
        half_fov_v=scenario.camera.half_fov_v,
        visibility=visibility,
    )
    informative = sum(1 for inc in problem.increments if inc.trace > 0)
    logger.info(f"Built problem: n={problem.n}, N={problem.N}, informative={informative}")
    return problem


def problem_from_matrices(
    omega0: np.ndarray,
    deltas: Sequence[np.ndarray],
    ids: Optional[Sequence[int]] = None,
    qualities: Optional[Dict[int, float]] = None,
    horizon: Optional[int] = None,
) -> ProblemInstance:
    """ProblemInstance from explicit matrices; ids default to 0..N-1."""
    ids = list(range(len(deltas))) if ids is None else list(ids)
    if len(ids) != len(deltas):
        raise ConfigError(f"{len(ids)} ids for {len(deltas)} increments")
    base = InfoMatrix(np.asarray(omega0, dtype=float))
    base.check_positive_definite()
    return ProblemInstance(
        omega0=base,
        increments=tuple(make_increment(lid, delta=d) for lid, d in zip(ids, deltas)),
        horizon=horizon,
        qualities=dict(qualities or {}),
    )


def restrict(problem: ProblemInstance, ids: Iterable[int]) -> ProblemInstance:
    """Same Omega_0 with the ground set cut down to `ids`."""
    keep = set(problem.check_ids(ids))
    return ProblemInstance(
        omega0=problem.omega0,
        increments=tuple(inc for inc in problem.increments if inc.id in keep),
        horizon=problem.horizon,
        qualities={k: v for k, v in problem.qualities.items() if k in keep},
        first_bearings={k: v for k, v in problem.first_bearings.items() if k in keep},
        half_fov_h=problem.half_fov_h,
        half_fov_v=problem.half_fov_v,
        visibility={k: v for k, v in problem.visibility.items() if k in keep},
    )


def condition_on(problem: ProblemInstance, ids: Iterable[int]) -> ProblemInstance:
    """Fold a preselected set into Omega_0; the rest stays the ground set."""
    fixed = problem.check_ids(ids)
    taken = set(fixed)
    rest = [lid for lid in problem.ids if lid not in taken]
    reduced = restrict(problem, rest)
    return ProblemInstance(
        omega0=InfoMatrix(problem.information(fixed)),
        increments=reduced.increments,
        horizon=reduced.horizon,
        qualities=reduced.qualities,
        first_bearings=reduced.first_bearings,
        half_fov_h=reduced.half_fov_h,
        half_fov_v=reduced.half_fov_v,
        visibility=reduced.visibility,
    )


# ---------------------------------------------------------------------------
# Objective and SMW machinery
# ---------------------------------------------------------------------------


def objective_value(problem: ProblemInstance, S: Iterable[int]) -> float:
    S = problem.check_ids(S)
    if not S:
        return 0.0
    return problem.trace_inv0 - trace_of_inverse(problem.information(S))


def scaled_mse(problem: ProblemInstance, S: Iterable[int]) -> float:
    """tr(Omega_S^-1) / (T+1)."""
    return trace_of_inverse(problem.information(S)) / problem.frames


def anchor_frame_mse(problem: ProblemInstance, S: Iterable[int]) -> float:
    """Trace of the first frame's 9x9 block of Omega_S^-1."""
    M = problem.information(S)
    try:
        factor = cho_factor(M, lower=True)
    except LinAlgError as exc:
        raise NumericalError("information matrix is not positive definite", code="not_positive_definite") from exc
    cols = cho_solve(factor, np.eye(M.shape[0])[:, :STATE_DIM])
    return float(np.trace(cols[:STATE_DIM]))


def _middle_factor(M: np.ndarray):
    try:
        return cho_factor(M, lower=True)
    except LinAlgError as exc:
        raise NumericalError("SMW middle matrix is singular", code="smw_singular") from exc


def marginal_gain_smw(omega_inv: np.ndarray, G: np.ndarray) -> float:
    """tr(P G^T (I + G P G^T)^-1 G P) with P = omega_inv."""
    if G.size == 0 or G.shape[0] == 0:
        return 0.0
    B = G @ omega_inv
    factor = _middle_factor(np.eye(G.shape[0]) + B @ G.T)
    return float(np.sum(B * cho_solve(factor, B)))


def apply_smw_update(omega_inv: np.ndarray, G: np.ndarray) -> np.ndarray:
    """(Omega + G^T G)^-1 from Omega^-1, resymmetrized."""
    if G.size == 0 or G.shape[0] == 0:
        return omega_inv
    B = G @ omega_inv
    factor = _middle_factor(np.eye(G.shape[0]) + B @ G.T)
    return symmetrize(omega_inv - B.T @ cho_solve(factor, B))


def compact_gain(P_cc: np.ndarray, P2_cc: np.ndarray, G_c: np.ndarray) -> float:
    """marginal_gain_smw restricted to the nonzero columns of G; fast_lowrank_greedy scores with it.

    With G P = G_c P[cols, :], the gain is tr(M^-1 G_c (P^2)_cc G_c^T) with
    M = I + G_c P_cc G_c^T.
    """
    if G_c.shape[0] == 0:
        return 0.0
    factor = _middle_factor(np.eye(G_c.shape[0]) + G_c @ P_cc @ G_c.T)
    K = G_c @ P2_cc @ G_c.T
    return float(np.trace(cho_solve(factor, K)))


def leverage_scores(problem: ProblemInstance) -> Dict[int, float]:
    """r_l = tr(Omega_0^-2 Delta_l) = ||G_l Omega_0^-1||_F^2 for every landmark."""
    P = problem.omega0_inv
    P2 = P @ P
    scores = {}
    for inc in problem.increments:
        if inc.rank == 0:
            scores[inc.id] = 0.0
            continue
        block = P2[np.ix_(inc.cols, inc.cols)]
        scores[inc.id] = max(float(np.sum((inc.G_compact @ block) * inc.G_compact)), 0.0)
    return scores


def is_informative(inc: LandmarkIncrement) -> bool:
    return inc.trace > GAIN_EPS


# ---------------------------------------------------------------------------
# Documents
# ---------------------------------------------------------------------------


def problem_to_document(problem: ProblemInstance, factored: bool = True) -> Dict[str, Any]:
    """JSON-shaped ProblemInstance; increments as factors G or dense deltas."""
    increments = []
    for inc in problem.increments:
        entry: Dict[str, Any] = {"id": inc.id}
        if factored:
            entry["G"] = inc.G.tolist() if inc.rank else []
        else:
            entry["delta"] = inc.delta.tolist()
        increments.append(entry)
    return {
        "n": problem.n,
        "horizon": problem.horizon,
        "omega0": problem.omega0.M.tolist(),
        "increments": increments,
        "qualities": {str(k): v for k, v in problem.qualities.items()},
        "first_bearings": {str(k): list(v) for k, v in problem.first_bearings.items()},
        "half_fov_h": problem.half_fov_h,
        "half_fov_v": problem.half_fov_v,
        "visibility": {str(k): list(v) for k, v in problem.visibility.items()},
    }


def problem_from_document(doc: Dict[str, Any]) -> ProblemInstance:
    try:
        omega0 = InfoMatrix(np.asarray(doc["omega0"], dtype=float))
        n = omega0.n
        increments = []
        for entry in doc["increments"]:
            lid = int(entry["id"])
            if "G" in entry:
                G = np.asarray(entry["G"], dtype=float).reshape(-1, n)
                increments.append(make_increment(lid, G=G))
            else:
                increments.append(make_increment(lid, delta=np.asarray(entry["delta"], dtype=float)))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed problem document: {exc}", code="bad_document") from exc

    return ProblemInstance(
        omega0=omega0,
        increments=tuple(increments),
        horizon=doc.get("horizon"),
        qualities={int(k): float(v) for k, v in (doc.get("qualities") or {}).items()},
        first_bearings={int(k): tuple(v) for k, v in (doc.get("first_bearings") or {}).items()},
        half_fov_h=doc.get("half_fov_h"),
        half_fov_v=doc.get("half_fov_v"),
        visibility={int(k): tuple(bool(x) for x in v) for k, v in (doc.get("visibility") or {}).items()},
    )


def problem_fingerprint(problem: ProblemInstance) -> str:
    return fingerprint(problem_to_document(problem))
