"""Evaluation metrics: correspondence end-point error and recall, landmark
consistency error against a reference surface, absolute trajectory error and
heightmap mean absolute error."""

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose3


@dataclass
class PairEval:
    pair: tuple
    n_oracle: int = 0
    epe_x: float = np.nan  # row component (crosstrack axis)
    epe_y: float = np.nan  # column component (alongtrack axis)
    recall_init: float = np.nan
    recall: float = np.nan
    lce_dr: float = np.nan
    lce_opt: float = np.nan


@dataclass
class EvalReport:
    """All metric outputs of one pipeline run."""

    pairs: list = field(default_factory=list)
    ate_dr: float = np.nan
    ate_opt: float = np.nan
    line_mae_dr: dict = field(default_factory=dict)
    line_mae_opt: dict = field(default_factory=dict)
    recall_per_iteration: dict = field(default_factory=dict)
    edge_stats: dict = field(default_factory=dict)
    status: str = "ok"
    degraded: bool = False

    def flat_items(self):
        yield "status", self.status
        yield "degraded", int(self.degraded)
        yield "ate_dr_m", self.ate_dr
        yield "ate_opt_m", self.ate_opt
        for line, v in sorted(self.line_mae_dr.items()):
            yield f"line_{line}_mae_dr_m", v
        for line, v in sorted(self.line_mae_opt.items()):
            yield f"line_{line}_mae_opt_m", v
        for key, v in sorted(self.edge_stats.items()):
            yield f"edges_{key}", v
        for it, rec in sorted(self.recall_per_iteration.items()):
            for pair, r in sorted(rec.items()):
                yield f"recall_iter{it}_pair_{pair[0]}_{pair[1]}", r


def correspondence_errors(estimated, oracle_a_pixels, oracle_b_pixels):
    """Per-correspondence (row, col) errors of estimated against oracle.

    ``estimated`` is a CorrespondenceSet; oracle pixel arrays map the same
    a-pixels (matched by position on the stride grid) to fractional b-pixels.
    Returns (d_rows, d_cols) over the correspondences present in both.
    """
    key_est = {(int(r), int(c)): k for k, (r, c) in enumerate(zip(estimated.a_rows, estimated.a_cols))}
    rows = []
    cols = []
    for (r, c), (br, bc) in zip(oracle_a_pixels, oracle_b_pixels):
        k = key_est.get((int(r), int(c)))
        if k is None:
            continue
        rows.append(estimated.b_rows[k] - br)
        cols.append(estimated.b_cols[k] - bc)
    return np.asarray(rows, dtype=float), np.asarray(cols, dtype=float)


def epe(estimated, oracle_a_pixels, oracle_b_pixels):
    """Component-wise mean absolute pixel error: (row axis, column axis)."""
    dr, dc = correspondence_errors(estimated, oracle_a_pixels, oracle_b_pixels)
    if dr.size == 0:
        return np.nan, np.nan
    return float(np.mean(np.abs(dr))), float(np.mean(np.abs(dc)))


def recall(estimated, oracle_a_pixels, oracle_b_pixels, tol=2.0):
    """Fraction of correspondences within ``tol`` pixels on both axes.

    Correspondences the estimator dropped (absent from ``estimated``) count
    as misses, so the denominator is the oracle set.
    """
    key_est = {(int(r), int(c)): k for k, (r, c) in enumerate(zip(estimated.a_rows, estimated.a_cols))}
    n = 0
    hits = 0
    for (r, c), (br, bc) in zip(oracle_a_pixels, oracle_b_pixels):
        n += 1
        k = key_est.get((int(r), int(c)))
        if k is None:
            continue
        if abs(estimated.b_rows[k] - br) <= tol and abs(estimated.b_cols[k] - bc) <= tol:
            hits += 1
    return hits / n if n else np.nan


def intersect_range_circle(pose, sensor_offset, range_m, side, surface, iters=60):
    """Point where the range sphere cut by the zero-along-track plane meets
    the surface, searched from straight down toward horizontal.

    Vectorized over measurements; returns (points (k, 3) NED, hit mask).
    """
    k = len(range_m)
    pts = np.zeros((k, 3))
    hit = np.zeros(k, dtype=bool)
    theta_lo = np.zeros(k)
    theta_hi = np.full(k, np.pi / 2 * 0.999)
    w_rot = np.zeros((k, 3, 3))
    w_t = np.zeros((k, 3))
    for i in range(k):
        w = pose[i] @ sensor_offset
        w_rot[i] = w.rotation
        w_t[i] = w.translation
    r = np.asarray(range_m, dtype=float)
    sd = np.asarray(side, dtype=float)

    def point_at(theta):
        local = np.stack(
            [np.zeros_like(theta), sd * r * np.sin(theta), r * np.cos(theta)], axis=1
        )
        return np.einsum("kij,kj->ki", w_rot, local) + w_t

    def below_floor(theta):
        p = point_at(theta)
        h = surface.sample(p[:, 1], p[:, 0])
        return (-p[:, 2]) < h, p, h

    below_lo, _, h_lo = below_floor(theta_lo)
    ok = below_lo & np.isfinite(h_lo)
    for _ in range(iters):
        mid = 0.5 * (theta_lo + theta_hi)
        below, _, h = below_floor(mid)
        bad = ~np.isfinite(h)
        below |= bad  # leaving the surface support counts as below
        theta_lo = np.where(below, mid, theta_lo)
        theta_hi = np.where(below, theta_hi, mid)
    final = 0.5 * (theta_lo + theta_hi)
    pts = point_at(final)
    h = surface.sample(pts[:, 1], pts[:, 0])
    hit = ok & np.isfinite(h) & (np.abs(-pts[:, 2] - h) < 0.5)
    return pts, hit


def lce(meas_a, meas_b, poses_a, poses_b, sensor_offset, surface):
    """Landmark consistency error: mean distance between the two surface
    intersections of each correspondence's range circles.

    ``meas_a``/``meas_b`` are (ranges, sides, ping ids) triples for the two
    observations; poses map ping id -> Pose3. Pairs whose rays miss the
    surface are skipped and counted.
    """
    ra, sa, pa = meas_a
    rb, sb, pb = meas_b
    pose_list_a = [poses_a[int(p)] for p in pa]
    pose_list_b = [poses_b[int(p)] for p in pb]
    pts_a, hit_a = intersect_range_circle(pose_list_a, sensor_offset, ra, sa, surface)
    pts_b, hit_b = intersect_range_circle(pose_list_b, sensor_offset, rb, sb, surface)
    ok = hit_a & hit_b
    if not ok.any():
        return np.nan, int(len(ra))
    d = np.linalg.norm(pts_a[ok] - pts_b[ok], axis=1)
    return float(d.mean()), int((~ok).sum())


def ate_rmse(estimated, reference):
    """Root-mean-square translation error over identically indexed poses."""
    if sorted(estimated) != sorted(reference):
        raise ValueError("trajectories must cover identical ping indices")
    err2 = 0.0
    for k in estimated:
        d = estimated[k].translation - reference[k].translation
        err2 += float(d @ d)
    return np.sqrt(err2 / len(estimated))


def heightmap_mae(a, b):
    """Mean absolute height difference over co-occupied cells, after
    removing the median vertical offset (side-scan has no absolute datum)."""
    if a.grid.shape != b.grid.shape:
        raise ValueError("heightmaps must share grid shape")
    if abs(a.cell - b.cell) > 1e-9 or abs(a.origin_e - b.origin_e) > 1e-6 or abs(
        a.origin_n - b.origin_n
    ) > 1e-6:
        raise ValueError("heightmaps must share grid geometry")
    both = a.occupied & b.occupied
    if not both.any():
        raise ValueError("no co-occupied cells")
    diff = a.grid[both] - b.grid[both]
    datum = np.median(diff)
    return float(np.mean(np.abs(diff - datum)))
