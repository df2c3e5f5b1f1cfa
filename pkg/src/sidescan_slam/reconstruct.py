"""Quasi-dense seafloor reconstruction from dense correspondences.

With the trajectory fixed (optimized centre poses, dead-reckoning
increments inside each subframe), every correspondence is triangulated from
its two range/plane measurements; landmarks whose residuals exceed the
acceptance thresholds are discarded. The surviving cloud can be gridded
into heightmaps or re-expressed per survey line in sensor-frame
coordinates for pose-free map evaluation.
"""

from dataclasses import dataclass

import numpy as np

from .subframe_pose import triangulate_fixed_poses


@dataclass(frozen=True)
class ReconstructParams:
    range_thresh: float = 0.1
    plane_thresh: float = 0.3
    cell: float = 1.0

    def __post_init__(self):
        if self.range_thresh <= 0.0 or self.plane_thresh <= 0.0:
            raise ValueError("thresholds must be positive")
        if self.cell <= 0.0:
            raise ValueError("cell size must be positive")


@dataclass
class QuasiDenseMap:
    """Filtered landmark cloud: positions are global NED.

    ``obs_pings`` holds the two observing ping indices per landmark when the
    source measurements carried them (-1 otherwise).
    """

    positions: np.ndarray  # (K, 3)
    pair_ids: np.ndarray  # (K,)
    range_costs: np.ndarray
    plane_costs: np.ndarray
    n_discarded: int = 0
    n_nonconverged: int = 0
    obs_pings: np.ndarray | None = None  # (K, 2)

    def __len__(self):
        return self.positions.shape[0]


@dataclass(frozen=True)
class Heightmap:
    """Regular (east, north) grid of up-positive heights; NaN marks empty."""

    origin_e: float
    origin_n: float
    cell: float
    grid: np.ndarray

    def __post_init__(self):
        if self.cell <= 0.0:
            raise ValueError("cell size must be positive")
        object.__setattr__(self, "grid", np.asarray(self.grid, dtype=float))

    @property
    def occupied(self):
        return np.isfinite(self.grid)

    def sample(self, e, n):
        """Bilinear height at (east, north); NaN outside or near empty cells."""
        e = np.asarray(e, dtype=float)
        n = np.asarray(n, dtype=float)
        fe = (e - self.origin_e) / self.cell - 0.5
        fn = (n - self.origin_n) / self.cell - 0.5
        rows, cols = self.grid.shape
        i = np.floor(fn).astype(int)
        j = np.floor(fe).astype(int)
        wn = fn - i
        we = fe - j
        i = np.clip(i, 0, rows - 2)
        j = np.clip(j, 0, cols - 2)
        v = self.grid
        return (
            v[i, j] * (1 - wn) * (1 - we)
            + v[i + 1, j] * wn * (1 - we)
            + v[i, j + 1] * (1 - wn) * we
            + v[i + 1, j + 1] * wn * we
        )


def triangulate_landmarks(pair_measurements, pose_pairs, sensor, params=None):
    """Triangulate every correspondence of every pair under fixed poses.

    ``pair_measurements`` maps pair id -> measurement list (two observations
    per landmark id); ``pose_pairs`` maps pair id -> (pose_i, pose_j).
    Landmarks are kept only when their mean absolute range and plane
    residuals stay below the thresholds.
    """
    params = params or ReconstructParams()
    chunks = []
    n_discarded = 0
    n_nonconv = 0
    for pair_id in sorted(pair_measurements):
        meas = pair_measurements[pair_id]
        if not meas:
            continue
        t1, t2 = pose_pairs[pair_id]
        x, r_cost, p_cost, conv, ids = triangulate_fixed_poses(t1, t2, meas, sensor)
        keep = conv & (r_cost <= params.range_thresh) & (p_cost <= params.plane_thresh)
        n_nonconv += int((~conv).sum())
        n_discarded += int((conv & ~keep).sum())
        if keep.any():
            pings = np.full((len(ids), 2), -1, dtype=np.int64)
            by_id = {}
            for me in meas:
                by_id.setdefault(me.landmark_id, {})[me.slot] = me.ping_index
            for row, lid in enumerate(ids):
                obs = by_id.get(int(lid), {})
                pings[row, 0] = obs.get(0, -1)
                pings[row, 1] = obs.get(1, -1)
            chunks.append(
                (
                    x[keep],
                    np.full(int(keep.sum()), pair_id, dtype=np.int64),
                    r_cost[keep],
                    p_cost[keep],
                    pings[keep],
                )
            )
    if chunks:
        xs, pids, rcs, pcs, pngs = (np.concatenate(c) for c in zip(*chunks))
    else:
        xs = np.zeros((0, 3))
        pids = np.zeros(0, dtype=np.int64)
        rcs = np.zeros(0)
        pcs = np.zeros(0)
        pngs = np.zeros((0, 2), dtype=np.int64)
    return QuasiDenseMap(xs, pids, rcs, pcs, n_discarded, n_nonconv, pngs)


def grid_heightmap(points_enh, cell, origin=None, shape=None):
    """Per-cell mean height over an (east, north) grid.

    ``points_enh`` rows are (east, north, height-up). Grid geometry can be
    pinned with ``origin``/``shape`` to compare maps cell-for-cell.
    """
    pts = np.asarray(points_enh, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
        raise ValueError("need a non-empty (n, 3) array of east/north/height")
    if origin is None:
        origin = (
            np.floor(pts[:, 0].min() / cell) * cell,
            np.floor(pts[:, 1].min() / cell) * cell,
        )
    oe, on = origin
    j = np.floor((pts[:, 0] - oe) / cell).astype(int)
    i = np.floor((pts[:, 1] - on) / cell).astype(int)
    if shape is None:
        shape = (int(i.max()) + 1, int(j.max()) + 1)
    rows, cols = shape
    inside = (i >= 0) & (i < rows) & (j >= 0) & (j < cols)
    i, j = i[inside], j[inside]
    h = pts[inside, 2]
    acc = np.zeros((rows, cols))
    cnt = np.zeros((rows, cols))
    np.add.at(acc, (i, j), h)
    np.add.at(cnt, (i, j), 1.0)
    grid = np.full((rows, cols), np.nan)
    occ = cnt > 0
    grid[occ] = acc[occ] / cnt[occ]
    return Heightmap(float(oe), float(on), float(cell), grid)


def ned_to_enh(points_ned):
    """Global NED points -> (east, north, height-up) rows for gridding."""
    pts = np.asarray(points_ned, dtype=float)
    return np.stack([pts[:, 1], pts[:, 0], -pts[:, 2]], axis=1)


def sensor_frame_align(landmarks_ned, obs_pings, ping_poses, along_track, sensor_offset):
    """Express landmarks in their survey line's sensor-frame coordinates.

    Each landmark observed at ping p becomes (along-track station of p plus
    the sensor-frame along component, across-track offset, down offset).
    The result only depends on landmark positions relative to the observing
    pings, so corrupting the global trajectory while moving the landmarks
    with it leaves the aligned cloud unchanged.
    """
    pts = np.asarray(landmarks_ned, dtype=float)
    pings = np.asarray(obs_pings, dtype=np.int64)
    out = np.empty_like(pts)
    for ping in np.unique(pings):
        sel = pings == ping
        w = ping_poses[int(ping)] @ sensor_offset
        s = w.inverse().apply(pts[sel])
        s[:, 0] += along_track[int(ping)]
        out[sel] = s
    return out


def line_frame_heightmap(aligned, cell, origin=None, shape=None):
    """Heightmap of a sensor-frame cloud over (across-track, along-track)
    cells with height measured upward from the sensor depth."""
    pts = np.asarray(aligned, dtype=float)
    enh = np.stack([pts[:, 1], pts[:, 0], -pts[:, 2]], axis=1)
    return grid_heightmap(enh, cell, origin=origin, shape=shape)
