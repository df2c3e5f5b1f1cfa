"""Robust relative-pose estimation between paired subframes.

Each pixel correspondence contributes one 2-D measurement per subframe:
the slant range to the landmark and the constraint that the landmark lies
in the plane perpendicular to the sonar array. A joint least-squares cost
over both centre poses and the sampled landmarks, regularized by the
dead-reckoning relative pose and a tight gauge prior on the first pose, is
minimized with Levenberg-Marquardt inside a RANSAC loop that scores
hypotheses on held-out measurements and only accepts strict improvements of
the (plane, range, optimization) cost triple.
"""

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    Pose3,
    _skew,
    log_residual,
    se3_adjoint,
    se3_exp,
    se3_jr_inv,
    se3_log,
)
from .seeding import stream

_TAG_RANSAC = 401


@dataclass(frozen=True)
class SssMeasurement:
    """One side-scan observation of a shared landmark.

    ``ping_offset`` is the dead-reckoning transform from the observing
    subframe's centre ping to the measured ping (drift inside a subframe is
    neglected). ``slot`` selects which pose of the pair observes it (0 or 1)
    and ``side`` is +1 starboard / -1 port, used to seed triangulation.
    """

    range_m: float
    ping_offset: Pose3
    side: int
    slot: int
    landmark_id: int
    altitude: float
    ping_index: int = -1

    def __post_init__(self):
        if self.range_m <= 0.0:
            raise ValueError("range must be positive")
        if self.slot not in (0, 1):
            raise ValueError("slot must be 0 or 1")
        if self.side not in (-1, 1):
            raise ValueError("side must be -1 or +1")


@dataclass(frozen=True)
class MeasurementCov:
    """Diagonal measurement covariance: range floor plus a plane term that
    grows with the square of the range times the beam width."""

    sigma_r_sq: float
    plane_var: float

    def matrix(self):
        return np.diag([self.sigma_r_sq, self.plane_var])


def measurement_cov(range_m, sensor):
    return MeasurementCov(
        sigma_r_sq=sensor.range_sigma**2,
        plane_var=(range_m * sensor.beam_width_alpha) ** 2,
    )


@dataclass(frozen=True)
class RansacParams:
    """Robust estimation knobs.

    ``holdout_cap`` bounds how many held-out correspondences score each
    hypothesis; the subset is drawn once per pair so scores stay comparable
    across hypotheses.
    """

    max_iters: int = 200
    subset_size: int = 6
    range_thresh: float = 0.3
    plane_thresh: float = 0.5
    trim_fraction: float = 0.2
    holdout_cap: int = 800
    lm_max_iters: int = 50
    lm_init_lambda: float = 1e-4
    lm_rel_tol: float = 1e-8

    def __post_init__(self):
        if self.subset_size < 3:
            raise ValueError("subset_size must be >= 3")
        if self.range_thresh <= 0.0 or self.plane_thresh <= 0.0:
            raise ValueError("thresholds must be positive")


@dataclass(frozen=True)
class LoopClosureEdge:
    """Accepted relative-pose constraint between two subframe centres."""

    subframe_i: int
    subframe_j: int
    relative_pose: Pose3
    covariance: np.ndarray
    plane_cost: float
    range_cost: float
    opt_cost: float

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape != (6, 6):
            raise ValueError("covariance must be 6x6")
        if np.abs(cov - cov.T).max() > 1e-9:
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() <= 0.0:
            raise ValueError("covariance must be positive definite")
        object.__setattr__(self, "covariance", cov)


def predict_measurement(landmark, centre_pose, ping_offset, sensor):
    """Predicted (slant range, along-array coordinate) of a landmark."""
    w = centre_pose @ ping_offset @ sensor.sensor_offset
    s = w.inverse().apply(np.asarray(landmark, dtype=float))
    return np.array([np.linalg.norm(s), s[0]])


class _PairProblem:
    """Vectorized residuals and Jacobians for one subframe pair."""

    def __init__(self, measurements, sensor, prior_pose, dr_relative, odom_var,
                 prior_sigma=1e-6):
        m = len(measurements)
        if m == 0:
            raise ValueError("no measurements")
        ids = sorted({me.landmark_id for me in measurements})
        self.id_map = {lid: k for k, lid in enumerate(ids)}
        self.n_landmarks = len(ids)
        self.f_rot = np.empty((m, 3, 3))
        self.f_t = np.empty((m, 3))
        self.slot = np.empty(m, dtype=np.int64)
        self.lm = np.empty(m, dtype=np.int64)
        self.r = np.empty(m)
        self.side = np.empty(m)
        self.alt = np.empty(m)
        for k, me in enumerate(measurements):
            f = me.ping_offset @ sensor.sensor_offset
            self.f_rot[k] = f.rotation
            self.f_t[k] = f.translation
            self.slot[k] = me.slot
            self.lm[k] = self.id_map[me.landmark_id]
            self.r[k] = me.range_m
            self.side[k] = me.side
            self.alt[k] = me.altitude
        self.w_r = np.full(m, 1.0 / sensor.range_sigma)
        self.w_p = 1.0 / (self.r * sensor.beam_width_alpha)
        self.prior_pose = prior_pose
        self.prior_w = 1.0 / prior_sigma
        self.dr_relative = dr_relative
        self.odom_w = 1.0 / np.sqrt(odom_var)
        self.m = m

    def init_landmarks(self, t1, t2):
        """Flat-floor back-projection of each landmark's first observation."""
        x0 = np.zeros((self.n_landmarks, 3))
        seen = np.zeros(self.n_landmarks, dtype=bool)
        poses = (t1, t2)
        for k in range(self.m):
            lid = self.lm[k]
            if seen[lid]:
                continue
            seen[lid] = True
            g = np.sqrt(max(self.r[k] ** 2 - self.alt[k] ** 2, 0.25))
            local = np.array([0.0, self.side[k] * g, self.alt[k]])
            w = poses[self.slot[k]] @ Pose3(self.f_rot[k], self.f_t[k])
            x0[lid] = w.apply(local)
        return x0

    def _sensor_chain(self, t1, t2):
        rot_c = np.where((self.slot == 0)[:, None, None], t1.rotation, t2.rotation)
        t_c = np.where((self.slot == 0)[:, None], t1.translation, t2.translation)
        return rot_c, t_c

    def residuals(self, t1, t2, landmarks):
        """Whitened residual vector: 2 rows per measurement, then odometry
        and gauge prior blocks."""
        res, _, _ = self._meas_linearize(t1, t2, landmarks, with_jac=False)
        e_odo = log_residual(self.dr_relative, t1.inverse() @ t2) * self.odom_w
        e_pri = log_residual(self.prior_pose, t1) * self.prior_w
        return np.concatenate([res, e_odo, e_pri])

    def _meas_linearize(self, t1, t2, landmarks, with_jac=True):
        rot_c, t_c = self._sensor_chain(t1, t2)
        x = landmarks[self.lm]
        y = np.einsum("mji,mj->mi", rot_c, x - t_c)  # centre-ping frame
        s = np.einsum("mji,mj->mi", self.f_rot, y - self.f_t)  # sensor frame
        norm = np.linalg.norm(s, axis=1)
        norm = np.maximum(norm, 1e-9)
        res = np.empty(2 * self.m)
        res[0::2] = (norm - self.r) * self.w_r
        res[1::2] = s[:, 0] * self.w_p
        if not with_jac:
            return res, None, None
        # d s / d (pose tangent), right perturbation of the observing pose.
        f_rot_t = np.transpose(self.f_rot, (0, 2, 1))
        y_skew = np.zeros((self.m, 3, 3))
        y_skew[:, 0, 1] = -y[:, 2]
        y_skew[:, 0, 2] = y[:, 1]
        y_skew[:, 1, 0] = y[:, 2]
        y_skew[:, 1, 2] = -y[:, 0]
        y_skew[:, 2, 0] = -y[:, 1]
        y_skew[:, 2, 1] = y[:, 0]
        j_pose_s = np.concatenate([f_rot_t @ y_skew, -f_rot_t], axis=2)  # (m,3,6)
        rot_w_t = f_rot_t @ np.transpose(rot_c, (0, 2, 1))
        s_hat = s / norm[:, None]
        j_range = np.einsum("mi,mij->mj", s_hat, j_pose_s) * self.w_r[:, None]
        j_plane = j_pose_s[:, 0, :] * self.w_p[:, None]
        jx_range = np.einsum("mi,mij->mj", s_hat, rot_w_t) * self.w_r[:, None]
        jx_plane = rot_w_t[:, 0, :] * self.w_p[:, None]
        return res, (j_range, j_plane), (jx_range, jx_plane)

    def linearize(self, t1, t2, landmarks):
        """Whitened residuals and dense Jacobian over (d1, d2, landmarks)."""
        res, jpose, jx = self._meas_linearize(t1, t2, landmarks)
        n_cols = 12 + 3 * self.n_landmarks
        rows = 2 * self.m + 12
        jac = np.zeros((rows, n_cols))
        full_res = np.empty(rows)
        full_res[: 2 * self.m] = res
        j_range, j_plane = jpose
        jx_range, jx_plane = jx
        for k in range(self.m):
            pc = 0 if self.slot[k] == 0 else 6
            lc = 12 + 3 * self.lm[k]
            jac[2 * k, pc : pc + 6] = j_range[k]
            jac[2 * k + 1, pc : pc + 6] = j_plane[k]
            jac[2 * k, lc : lc + 3] = jx_range[k]
            jac[2 * k + 1, lc : lc + 3] = jx_plane[k]
        # Odometry block: e = log(M^-1 T1^-1 T2). A right perturbation of T1
        # enters through the adjoint of T2^-1 T1.
        rel = t1.inverse() @ t2
        e_odo = log_residual(self.dr_relative, rel)
        jr = se3_jr_inv(e_odo)
        r0 = 2 * self.m
        full_res[r0 : r0 + 6] = e_odo * self.odom_w
        jac[r0 : r0 + 6, 6:12] = jr * self.odom_w
        jac[r0 : r0 + 6, 0:6] = -(jr @ se3_adjoint(rel.inverse())) * self.odom_w
        # Gauge prior on T1.
        e_pri = log_residual(self.prior_pose, t1)
        full_res[r0 + 6 :] = e_pri * self.prior_w
        jac[r0 + 6 :, 0:6] = se3_jr_inv(e_pri) * self.prior_w
        return full_res, jac

    def sidescan_pose_information(self, t1, t2, landmarks):
        """Gauss-Newton information that the side-scan rows alone carry about
        the pose pair, after marginalizing the landmarks."""
        res, jac = self.linearize(t1, t2, landmarks)
        j_meas = jac[: 2 * self.m]
        a = j_meas[:, :12].T @ j_meas[:, :12]
        b = j_meas[:, :12].T @ j_meas[:, 12:]
        marg = np.zeros((12, 12))
        for k in range(self.n_landmarks):
            rows = np.nonzero(self.lm == k)[0]
            idx = np.concatenate([2 * rows, 2 * rows + 1])
            jl = j_meas[np.sort(idx), 12 + 3 * k : 15 + 3 * k]
            c = jl.T @ jl
            c_inv = np.linalg.pinv(c, rcond=1e-12)
            bk = b[:, 3 * k : 3 * k + 3]
            marg += bk @ c_inv @ bk.T
        return a - marg


@dataclass
class PairEstimate:
    ok: bool
    reason: str
    t1: Pose3
    t2: Pose3
    landmarks: np.ndarray
    opt_cost: float
    cost_history: list = field(default_factory=list)
    min_info_eig: float = np.nan


def pairwise_cost(
    t1,
    t2,
    landmarks,
    measurements,
    dr_relative,
    sensor,
    odom_var,
    prior_pose=None,
    prior_sigma=1e-6,
    with_gradient=False,
):
    """Total joint cost of a pose pair and its landmarks (0.5 * chi^2).

    Covers the side-scan rows, the dead-reckoning relative-pose term and the
    gauge prior on the first pose. Optionally also returns the gradient over
    (d1, d2, landmarks) from the analytic Jacobians.
    """
    prior = prior_pose if prior_pose is not None else t1
    prob = _PairProblem(measurements, sensor, prior, dr_relative, odom_var, prior_sigma)
    lms = np.asarray(landmarks, dtype=float).reshape(prob.n_landmarks, 3)
    if not with_gradient:
        r = prob.residuals(t1, t2, lms)
        return 0.5 * float(r @ r)
    r, jac = prob.linearize(t1, t2, lms)
    return 0.5 * float(r @ r), jac.T @ r


def _lm_minimize(prob, t1, t2, x, params):
    """Levenberg-Marquardt on the joint pair problem; accepted costs are
    strictly decreasing."""
    res, jac = prob.linearize(t1, t2, x)
    cost = 0.5 * float(res @ res)
    history = [cost]
    lam = params.lm_init_lambda
    for _ in range(params.lm_max_iters):
        h = jac.T @ jac
        g = jac.T @ res
        stepped = False
        while lam <= 1e10:
            try:
                delta = np.linalg.solve(h + lam * np.eye(h.shape[0]), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            t1_new = t1 @ se3_exp(delta[0:6])
            t2_new = t2 @ se3_exp(delta[6:12])
            x_new = x + delta[12:].reshape(-1, 3)
            res_new = prob.residuals(t1_new, t2_new, x_new)
            cost_new = 0.5 * float(res_new @ res_new)
            if np.isfinite(cost_new) and cost_new < cost:
                t1, t2, x = t1_new, t2_new, x_new
                rel_drop = (cost - cost_new) / max(cost, 1e-300)
                cost = cost_new
                history.append(cost)
                lam = max(lam / 10.0, 1e-12)
                stepped = True
                res, jac = prob.linearize(t1, t2, x)
                # Residuals at numerical zero cannot improve meaningfully.
                if rel_drop < params.lm_rel_tol or cost < 1e-14:
                    return t1, t2, x, cost, history, True
                break
            lam *= 10.0
        if not stepped:
            # No downhill step found: converged if the gradient already
            # vanished, diverged otherwise.
            return t1, t2, x, cost, history, bool(np.abs(g).max() < 1e-6)
    return t1, t2, x, cost, history, True


def estimate_pose(
    dr_t1,
    dr_t2,
    measurements,
    sensor,
    dr_relative=None,
    odom_var=None,
    params=None,
    odom_cov_per_m=1e-4,
    degeneracy_rtol=1e-9,
):
    """Minimize the joint pair cost from a measurement sample.

    The first pose is pinned by a tight prior at its initial value; the
    second pose and the sampled landmarks are free. Reports failure on LM
    divergence or when the side-scan sample is rank-deficient (e.g. built
    from duplicated correspondences). Side-scan samples are intrinsically
    underconstrained (the odometry term carries the remaining directions),
    so a sample is degenerate only when its marginal information keeps less
    than two independent directions, which a single repeated correspondence
    cannot exceed.
    """
    params = params or RansacParams()
    if dr_relative is None:
        dr_relative = dr_t1.inverse() @ dr_t2
    if odom_var is None:
        d = float(np.linalg.norm(dr_t1.translation - dr_t2.translation))
        odom_var = odom_cov_per_m * max(d, 1.0)
    prob = _PairProblem(measurements, sensor, dr_t1, dr_relative, odom_var)
    x0 = prob.init_landmarks(dr_t1, dr_t2)
    t1, t2, x, cost, history, ok = _lm_minimize(prob, dr_t1, dr_t2, x0, params)
    if not ok:
        return PairEstimate(False, "diverged", t1, t2, x, cost, history)
    info = prob.sidescan_pose_information(t1, t2, x)[6:, 6:]
    eig = np.linalg.eigvalsh(info)
    second = float(eig[-2])
    if second < degeneracy_rtol * max(float(eig[-1]), 1.0):
        return PairEstimate(
            False, "degenerate", t1, t2, x, cost, history, min_info_eig=second
        )
    return PairEstimate(True, "", t1, t2, x, cost, history, min_info_eig=second)


def _group_by_landmark(measurements):
    groups = {}
    for me in measurements:
        groups.setdefault(me.landmark_id, []).append(me)
    return groups


class _TriArrays:
    """Per-correspondence arrays for landmark-only triangulation: sensor
    chains relative to each pose slot, ranges, weights and the flat-floor
    seed geometry. Rows are correspondences with exactly two observations."""

    def __init__(self, measurements, sensor):
        groups = _group_by_landmark(measurements)
        ids = sorted(lid for lid, obs in groups.items() if len(obs) == 2)
        k = len(ids)
        self.ids = np.asarray(ids, dtype=np.int64)
        self.f_rot = np.zeros((k, 2, 3, 3))
        self.f_t = np.zeros((k, 2, 3))
        self.rng_m = np.zeros((k, 2))
        self.w_p = np.zeros((k, 2))
        self.seed_local = np.zeros((k, 3))
        for row, lid in enumerate(ids):
            obs = sorted(groups[lid], key=lambda m: m.slot)
            for me in obs:
                f = me.ping_offset @ sensor.sensor_offset
                self.f_rot[row, me.slot] = f.rotation
                self.f_t[row, me.slot] = f.translation
                self.rng_m[row, me.slot] = me.range_m
                self.w_p[row, me.slot] = 1.0 / (me.range_m * sensor.beam_width_alpha)
            first = obs[0]
            g = np.sqrt(max(first.range_m**2 - first.altitude**2, 0.25))
            self.seed_local[row] = (0.0, first.side * g, first.altitude)
        self.w_r = 1.0 / sensor.range_sigma

    def solve(self, t1, t2, rows=None, iters=10):
        """Gauss-Newton for the landmark positions under fixed poses."""
        sl = slice(None) if rows is None else rows
        f_rot = self.f_rot[sl]
        f_t = self.f_t[sl]
        rng_m = self.rng_m[sl]
        w_p = self.w_p[sl]
        seed = self.seed_local[sl]
        k = f_rot.shape[0]
        t_rot = np.stack([t1.rotation, t2.rotation])  # (2, 3, 3)
        t_t = np.stack([t1.translation, t2.translation])
        w_rot = np.einsum("mab,kmbc->kmac", t_rot, f_rot)
        w_t = np.einsum("mab,kmb->kma", t_rot, f_t) + t_t[None, :, :]
        x = np.einsum("kab,kb->ka", w_rot[:, 0], seed) + w_t[:, 0]
        rot_t = np.transpose(w_rot, (0, 1, 3, 2))
        eye3 = 1e-9 * np.eye(3)
        for _ in range(iters):
            s = np.einsum("kmij,kmj->kmi", rot_t, x[:, None, :] - w_t)
            norm = np.maximum(np.linalg.norm(s, axis=2), 1e-9)
            res_r = (norm - rng_m) * self.w_r
            res_p = s[..., 0] * w_p
            s_hat = s / norm[..., None]
            j_r = np.einsum("kmi,kmij->kmj", s_hat, rot_t) * self.w_r
            j_p = rot_t[:, :, 0, :] * w_p[..., None]
            jac = np.concatenate([j_r, j_p], axis=1)  # (k, 4, 3)
            res = np.concatenate([res_r, res_p], axis=1)
            h = np.einsum("kri,krj->kij", jac, jac) + eye3
            g = np.einsum("kri,kr->ki", jac, res)
            x = x - np.linalg.solve(h, g[..., None])[..., 0]
        s = np.einsum("kmij,kmj->kmi", rot_t, x[:, None, :] - w_t)
        norm = np.maximum(np.linalg.norm(s, axis=2), 1e-9)
        range_cost = np.mean(np.abs(norm - rng_m), axis=1)
        plane_cost = np.mean(np.abs(s[..., 0]), axis=1)
        converged = np.all(np.isfinite(x), axis=1)
        range_cost[~converged] = np.inf
        plane_cost[~converged] = np.inf
        return x, range_cost, plane_cost, converged


def triangulate_fixed_poses(t1, t2, measurements, sensor, iters=10):
    """Solve for landmarks only, with both poses held fixed.

    Batched damped Gauss-Newton over all landmarks at once, initialized by
    flat-floor back-projection. Returns positions, per-landmark mean
    absolute range and plane residuals, a convergence flag, and the
    landmark ids in row order. Correspondences without exactly two
    observations are dropped.
    """
    arrays = _TriArrays(measurements, sensor)
    x, range_cost, plane_cost, converged = arrays.solve(t1, t2, iters=iters)
    return x, range_cost, plane_cost, converged, arrays.ids


def _trimmed_mean(values, trim):
    v = np.sort(np.asarray(values, dtype=float))
    keep = max(1, int(np.floor((1.0 - trim) * v.size)))
    kept = v[:keep]
    if not np.all(np.isfinite(kept)):
        return float("inf")
    return float(kept.mean())


def hypothesis_check(t1, t2, holdout, sensor, trim=0.2):
    """Plane and range costs of a pose hypothesis on held-out measurements.

    Landmarks for the holdout are triangulated under the hypothesized poses;
    the costs are top-trimmed means of the absolute residuals, so up to
    ``trim`` of gross outliers cannot dominate the score.
    """
    if len(holdout) == 0:
        return float("inf"), float("inf")
    _, range_cost, plane_cost, converged, _ = triangulate_fixed_poses(
        t1, t2, holdout, sensor
    )
    return _trimmed_mean(plane_cost, trim), _trimmed_mean(range_cost, trim)


def _holdout_costs(arrays, t1, t2, rows, trim):
    if rows.size == 0:
        return float("inf"), float("inf")
    _, range_cost, plane_cost, _ = arrays.solve(t1, t2, rows=rows)
    return _trimmed_mean(plane_cost, trim), _trimmed_mean(range_cost, trim)


@dataclass
class RansacStats:
    n_hypotheses: int = 0
    n_failed: int = 0
    n_degenerate: int = 0
    accepted: list = field(default_factory=list)  # (hyp, C_p, C_r, C_o)
    rejected_reason: str = ""
    final_costs: tuple = (np.inf, np.inf, np.inf)


def _relative_pose_covariance(prob, t1, t2, landmarks):
    """Covariance of log(T1^-1 T2) from the full Gauss-Newton information at
    the optimum, landmarks marginalized out (block-wise, pseudo-inverse per
    landmark: each landmark's own information is rank-3 at best)."""
    res, jac = prob.linearize(t1, t2, landmarks)
    h = jac.T @ jac
    hp_marg = h[:12, :12].copy()
    for k in range(prob.n_landmarks):
        sl = slice(12 + 3 * k, 15 + 3 * k)
        c_k = h[sl, sl]
        b_k = h[:12, sl]
        hp_marg -= b_k @ np.linalg.pinv(c_k, rcond=1e-10) @ b_k.T
    cov_pose = np.linalg.inv(hp_marg)
    # Noise convention: M_obs = M_true * Exp(eps). With right perturbations
    # d1, d2 of the two poses, eps = d2 - Ad(M^-1) d1 to first order.
    rel = t1.inverse() @ t2
    j_rel = np.zeros((6, 12))
    j_rel[:, 6:] = np.eye(6)
    j_rel[:, :6] = -se3_adjoint(rel.inverse())
    cov = j_rel @ cov_pose @ j_rel.T
    cov = 0.5 * (cov + cov.T)
    min_eig = np.linalg.eigvalsh(cov).min()
    if min_eig <= 1e-12:
        cov = cov + (1e-12 - min(min_eig, 0.0)) * np.eye(6)
    return cov


def ransac_estimate(
    dr_t1,
    dr_t2,
    measurements,
    sensor,
    params=None,
    node_i=0,
    node_j=1,
    seed=0,
    pair_tag=0,
    odom_cov_per_m=1e-4,
    dr_relative=None,
):
    """Robust subframe pose estimation.

    Samples correspondence subsets, solves each for the pose pair, scores
    the rest, and keeps the best model under a strict triple-decrease rule
    on (plane, range, optimization) costs. The winning model becomes a
    loop-closure edge unless its holdout costs exceed the acceptance
    thresholds. Returns ``(edge_or_none, stats)``.
    """
    params = params or RansacParams()
    stats = RansacStats()
    groups = _group_by_landmark(measurements)
    corr_ids = sorted(lid for lid, obs in groups.items() if len(obs) == 2)
    n = len(corr_ids)
    if n < params.subset_size:
        stats.rejected_reason = "too_few_correspondences"
        return None, stats
    if dr_relative is None:
        dr_relative = dr_t1.inverse() @ dr_t2
    d = float(np.linalg.norm(dr_t1.translation - dr_t2.translation))
    odom_var = odom_cov_per_m * max(d, 1.0)
    arrays = _TriArrays(measurements, sensor)

    best = None
    best_costs = (np.inf, np.inf, np.inf)
    corr_ids_arr = np.asarray(corr_ids)
    # One scoring subset per pair keeps hypothesis costs comparable while
    # bounding the per-hypothesis triangulation work.
    if n - params.subset_size > params.holdout_cap:
        score_rows = np.sort(
            stream(seed, _TAG_RANSAC, pair_tag, 999983).choice(
                n, size=params.holdout_cap, replace=False
            )
        )
    else:
        score_rows = np.arange(n)
    for hyp in range(params.max_iters):
        rng = stream(seed, _TAG_RANSAC, pair_tag, hyp)
        pick = np.sort(rng.choice(n, size=params.subset_size, replace=False))
        sample_ids = set(corr_ids_arr[pick].tolist())
        sample = [me for lid in sample_ids for me in groups[lid]]
        stats.n_hypotheses += 1
        est = estimate_pose(
            dr_t1,
            dr_t2,
            sample,
            sensor,
            dr_relative=dr_relative,
            odom_var=odom_var,
            params=params,
        )
        if not est.ok:
            if est.reason == "degenerate":
                stats.n_degenerate += 1
            else:
                stats.n_failed += 1
            continue
        holdout_rows = np.setdiff1d(score_rows, pick, assume_unique=True)
        c_p, c_r = _holdout_costs(arrays, est.t1, est.t2, holdout_rows, params.trim_fraction)
        c_o = est.opt_cost
        if c_p < best_costs[0] and c_r < best_costs[1] and c_o < best_costs[2]:
            best_costs = (c_p, c_r, c_o)
            best = (est, sample)
            stats.accepted.append((hyp, c_p, c_r, c_o))
    stats.final_costs = best_costs
    if best is None:
        stats.rejected_reason = "no_valid_hypothesis"
        return None, stats
    if best_costs[1] > params.range_thresh or best_costs[0] > params.plane_thresh:
        stats.rejected_reason = "cost_thresholds"
        return None, stats
    est, sample = best
    prob = _PairProblem(sample, sensor, dr_t1, dr_relative, odom_var)
    cov = _relative_pose_covariance(prob, est.t1, est.t2, est.landmarks)
    edge = LoopClosureEdge(
        subframe_i=node_i,
        subframe_j=node_j,
        relative_pose=est.t1.inverse() @ est.t2,
        covariance=cov,
        plane_cost=best_costs[0],
        range_cost=best_costs[1],
        opt_cost=best_costs[2],
    )
    return edge, stats
