"""Synthetic survey factory: procedural seafloor, lawnmower/loop trajectories,
forward sonar rendering and dead-reckoning drift injection.

The renderer is the inverse of the canonical transformation's model: bin
intensity is reflectivity times cos^2 of the (vertical-normal) incidence
angle, times multiplicative speckle. Every rendered bin's true ground point
is retained, which gives exact correspondence, trajectory and surface ground
truth for all evaluation metrics.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import Pose3, SensorConfig
from .seeding import stream
from .sonar_image import Ping

_TAG_SPECKLE = 101
_TAG_FLOOR = 7
_TAG_DRIFT = 31


def _heading_dirs(yaw):
    """Forward and starboard (north, east) unit vectors for a heading."""
    yaw = np.asarray(yaw, dtype=float)
    fwd = np.stack([np.cos(yaw), np.sin(yaw)], axis=-1)
    stbd = np.stack([-np.sin(yaw), np.cos(yaw)], axis=-1)
    return fwd, stbd


class _BilinearGrid:
    """Regular grid over (east, north) with bilinear sampling."""

    def __init__(self, e0, n0, spacing, values):
        self.e0 = float(e0)
        self.n0 = float(n0)
        self.spacing = float(spacing)
        self.values = np.asarray(values, dtype=float)

    def sample(self, e, n):
        e = np.asarray(e, dtype=float)
        n = np.asarray(n, dtype=float)
        bad = ~(np.isfinite(e) & np.isfinite(n))
        fe = np.where(bad, 0.0, (e - self.e0) / self.spacing)
        fn = np.where(bad, 0.0, (n - self.n0) / self.spacing)
        rows, cols = self.values.shape
        i = np.clip(np.floor(fn).astype(int), 0, rows - 2)
        j = np.clip(np.floor(fe).astype(int), 0, cols - 2)
        wn = np.clip(fn - i, 0.0, 1.0)
        we = np.clip(fe - j, 0.0, 1.0)
        v = self.values
        out = (
            v[i, j] * (1 - wn) * (1 - we)
            + v[i + 1, j] * wn * (1 - we)
            + v[i, j + 1] * (1 - wn) * we
            + v[i + 1, j + 1] * wn * we
        )
        return np.where(bad, np.nan, out)


@dataclass(frozen=True)
class Seafloor:
    """Bounded seafloor model: elevation h(e, n) plus reflectivity tau(e, n).

    Elevation is up-positive relative to the survey datum; the global (NED)
    floor depth is ``z = -h``. Reflectivity combines band-limited noise
    octaves with dark linear streaks that mimic trawling marks.
    """

    extent: tuple  # (e_min, e_max, n_min, n_max)
    height_grid: _BilinearGrid
    texture_grids: tuple
    streaks: np.ndarray  # rows of (pe, pn, ue, un, width, depth)

    def height(self, e, n):
        return self.height_grid.sample(e, n)

    def reflectivity(self, e, n):
        e = np.asarray(e, dtype=float)
        n = np.asarray(n, dtype=float)
        tau = np.full(np.broadcast(e, n).shape, 0.6)
        for grid, weight in self.texture_grids:
            tau = tau + weight * grid.sample(e, n)
        for pe, pn, ue, un, width, depth in self.streaks:
            d = (e - pe) * (-un) + (n - pn) * ue
            tau = tau * (1.0 - depth * np.exp(-0.5 * (d / width) ** 2))
        return np.clip(tau, 0.05, 1.0)

    def contains_box(self, e_lo, e_hi, n_lo, n_hi):
        e_min, e_max, n_min, n_max = self.extent
        return e_lo >= e_min and e_hi <= e_max and n_lo >= n_min and n_hi <= n_max


def make_seafloor(
    extent,
    seed,
    height_amplitude=0.4,
    height_spacing=20.0,
    slope=(0.0, 0.0),
    n_streaks=40,
    texture_scales=(0.7, 2.3, 9.0),
    texture_weights=(0.30, 0.18, 0.12),
):
    """Procedural seafloor with gentle slopes; |grad h| stays below roughly
    ``2 * height_amplitude / height_spacing``.

    The finest texture octave must stay below the matcher's patch footprint:
    piecewise-bilinear reflectivity without sub-patch detail is locally
    affine, which a ZNCC score cannot discriminate.
    """
    e_min, e_max, n_min, n_max = extent
    rng = stream(seed, _TAG_FLOOR)
    cols = int(math.ceil((e_max - e_min) / height_spacing)) + 3
    rows = int(math.ceil((n_max - n_min) / height_spacing)) + 3
    hv = rng.uniform(-height_amplitude, height_amplitude, size=(rows, cols))
    ee = e_min + height_spacing * np.arange(cols)
    nn = n_min + height_spacing * np.arange(rows)
    hv = hv + slope[0] * ee[None, :] + slope[1] * nn[:, None]
    hgrid = _BilinearGrid(e_min, n_min, height_spacing, hv)

    tgrids = []
    for scale, weight in zip(texture_scales, texture_weights):
        tc = int(math.ceil((e_max - e_min) / scale)) + 3
        tr = int(math.ceil((n_max - n_min) / scale)) + 3
        vals = rng.uniform(-1.0, 1.0, size=(tr, tc))
        tgrids.append((_BilinearGrid(e_min, n_min, scale, vals), weight))

    streaks = np.zeros((n_streaks, 6))
    if n_streaks:
        streaks[:, 0] = rng.uniform(e_min, e_max, n_streaks)
        streaks[:, 1] = rng.uniform(n_min, n_max, n_streaks)
        ang = rng.uniform(0.0, np.pi, n_streaks)
        streaks[:, 2] = np.cos(ang)
        streaks[:, 3] = np.sin(ang)
        streaks[:, 4] = rng.uniform(0.4, 1.2, n_streaks)
        streaks[:, 5] = rng.uniform(0.3, 0.7, n_streaks)
    return Seafloor(tuple(extent), hgrid, tuple(tgrids), streaks)


@dataclass(frozen=True)
class SurveyPlan:
    """Lawnmower or loop survey geometry.

    Lines run along north. A lawnmower steps east by ``line_spacing`` per
    line; a loop revisits the same two corridors. With ``grid_aligned`` the
    line spacing snaps to a whole number of canonical pixels and turn path
    lengths to a whole number of ping spacings, making a noise-free survey
    produce pixel-exact correspondences between lines.
    """

    pattern: str = "lawnmower"
    line_count: int = 5
    line_length: float = 110.0
    line_spacing: float = 100.0
    speed: float = 2.0
    ping_rate: float = 4.0
    altitude: float = 18.0
    turn_radius: float = 15.0
    grid_aligned: bool = True
    start: tuple = (0.0, 0.0)  # (north, east)

    def __post_init__(self):
        if self.pattern not in ("lawnmower", "loop"):
            raise ValueError("pattern must be 'lawnmower' or 'loop'")
        if self.line_count < 2:
            raise ValueError("need at least two survey lines")
        if min(self.line_length, self.line_spacing, self.speed, self.ping_rate) <= 0:
            raise ValueError("plan scales must be positive")
        if self.line_spacing < 2.0 * self.turn_radius:
            raise ValueError("line spacing must exceed the turn diameter")

    @property
    def ping_spacing(self):
        return self.speed / self.ping_rate


@dataclass(frozen=True)
class DriftModel:
    """Incremental dead-reckoning corruption.

    ``yaw_sigma`` is the standard deviation of the heading noise added to
    every ping-to-ping increment (a heading random walk); ``velocity_bias``
    adds a constant along-track speed error.
    """

    yaw_sigma: float = 0.0
    velocity_bias: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.yaw_sigma < 0.0:
            raise ValueError("yaw_sigma must be non-negative")


def _wrap_angle(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def _offset_to_point(floor, pos, side, stbd_ne, u):
    n = pos[..., 0] + side * u * stbd_ne[..., 0]
    e = pos[..., 1] + side * u * stbd_ne[..., 1]
    h = floor.height(e, n)
    return np.stack([n, e, -h], axis=-1)


def _solve_ground_offset(floor, pos, side, stbd_ne, r):
    """Horizontal offset u >= 0 where the range-r sphere meets the floor in
    the across-track plane (bisection; NaN inside the nadir gap)."""
    pos = np.asarray(pos, dtype=float)
    r = np.asarray(r, dtype=float)
    side = np.broadcast_to(np.asarray(side, dtype=float), r.shape)
    z0 = pos[..., 2]

    def dist_sq(u):
        n = pos[..., 0] + side * u * stbd_ne[..., 0]
        e = pos[..., 1] + side * u * stbd_ne[..., 1]
        dz = -floor.height(e, n) - z0
        return u * u + dz * dz

    lo = np.zeros_like(r)
    hi = r.copy()
    feasible = dist_sq(lo) <= r * r
    for _ in range(48):
        mid = 0.5 * (lo + hi)
        below = dist_sq(mid) <= r * r
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    u = 0.5 * (lo + hi)
    return np.where(feasible, u, np.nan)


@dataclass
class TruthOracle:
    """Exact ground truth for rendered pings.

    ``points[p, s, k]`` is the NED ground point ensonified by ping ``p``,
    side ``s`` (0 = port, 1 = starboard), slant bin ``k`` (NaN inside the
    nadir gap). Straight-line windows allow closed-form inversion of the
    imaging map for correspondence ground truth.
    """

    points: np.ndarray
    positions: np.ndarray  # (P, 3) sensor positions, NED
    yaws: np.ndarray
    altitudes: np.ndarray
    line_windows: list  # (first_ping, last_ping) straight portion per image
    image_ranges: list  # (first_ping, last_ping) per image, inclusive
    sensor: SensorConfig
    floor: Seafloor
    ping_spacing: float

    def image_grid(self, image_idx):
        """Reference altitude and ground resolution of an image's canonical
        grid; matches the canonical transformation exactly."""
        first, last = self.image_ranges[image_idx]
        alt_ref = float(np.mean(self.altitudes[first : last + 1]))
        ground_max = math.sqrt(self.sensor.max_range**2 - alt_ref**2)
        return alt_ref, ground_max / self.sensor.bins_per_side

    def pixel_points(self, image_idx, rows, cols):
        """Ground points of canonical pixels (fractional rows/cols allowed)."""
        first, last = self.image_ranges[image_idx]
        _, g_res = self.image_grid(image_idx)
        rows = np.asarray(rows, dtype=float)
        cols = np.asarray(cols, dtype=float)
        ping_f = first + rows
        base = np.clip(np.floor(ping_f).astype(int), 0, len(self.yaws) - 2)
        w = ping_f - base
        pos = self.positions[base] * (1 - w[..., None]) + self.positions[base + 1] * w[..., None]
        yaw = self.yaws[base] * (1 - w) + self.yaws[base + 1] * w
        alt = self.altitudes[base] * (1 - w) + self.altitudes[base + 1] * w
        b = self.sensor.bins_per_side
        side = np.where(cols >= b, 1.0, -1.0)
        g = np.where(cols >= b, (cols - b + 0.5) * g_res, (b - cols - 0.5) * g_res)
        r = np.sqrt(g * g + alt * alt)
        _, stbd = _heading_dirs(yaw)
        u = _solve_ground_offset(self.floor, pos, side, stbd, r)
        gap = np.isnan(u)
        pts = _offset_to_point(self.floor, pos, side, stbd, np.where(gap, 0.0, u))
        return np.where(gap[..., None], np.nan, pts)

    def locate(self, image_idx, points):
        """Invert the imaging map: NED points -> fractional (row, col) in the
        image, NaN outside the straight-line window or swath."""
        first, _ = self.image_ranges[image_idx]
        w0, w1 = self.line_windows[image_idx]
        _, g_res = self.image_grid(image_idx)
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        yaw = self.yaws[(w0 + w1) // 2]
        fwd, stbd = _heading_dirs(yaw)
        p0 = self.positions[w0]
        along = (pts[:, 0] - p0[0]) * fwd[0] + (pts[:, 1] - p0[1]) * fwd[1]
        ping_f = w0 + along / self.ping_spacing
        ok = (ping_f >= w0) & (ping_f <= w1)
        base = np.clip(np.floor(ping_f).astype(int), w0, max(w1 - 1, w0))
        frac = ping_f - base
        pos = self.positions[base] * (1 - frac[:, None]) + self.positions[base + 1] * frac[:, None]
        alt = self.altitudes[base] * (1 - frac) + self.altitudes[base + 1] * frac
        d = pts - pos
        r = np.sqrt(np.sum(d * d, axis=1))
        cross = d[:, 0] * stbd[0] + d[:, 1] * stbd[1]
        g2 = r * r - alt * alt
        ok &= (g2 > 0.0) & (r < self.sensor.max_range)
        g = np.sqrt(np.maximum(g2, 0.0))
        k = g / g_res - 0.5
        b = self.sensor.bins_per_side
        col = np.where(cross >= 0.0, b + k, b - 1 - k)
        row = ping_f - first
        row = np.where(ok, row, np.nan)
        col = np.where(ok, col, np.nan)
        return row, col


def _build_path(plan):
    """Survey path as analytic segments plus leg/turn bookkeeping.

    Returns (segments, leg_spans, turn_spans) with spans in path distance.
    Segments: ('straight', start(2,), yaw, length) or
    ('arc', centre(2,), radius, yaw0, signed_sweep).
    """
    ds = plan.ping_spacing
    r = plan.turn_radius
    n_line_pings = int(round(plan.line_length / ds)) + 1
    line_len = (n_line_pings - 1) * ds

    def leg_east(k):
        if plan.pattern == "lawnmower":
            return plan.start[1] + plan.line_spacing * k
        return plan.start[1] + plan.line_spacing * (k % 2)

    segments = []
    leg_spans = []
    turn_spans = []
    pos = np.array([plan.start[0], leg_east(0)])
    yaw = 0.0
    dist = 0.0

    def add_straight(length):
        nonlocal pos, dist
        if length <= 1e-12:
            return
        segments.append(("straight", pos.copy(), yaw, length))
        pos = pos + length * np.array([np.cos(yaw), np.sin(yaw)])
        dist += length

    def add_quarter_arc(turn_dir):
        nonlocal pos, yaw, dist
        normal = np.array(
            [np.cos(yaw + turn_dir * np.pi / 2.0), np.sin(yaw + turn_dir * np.pi / 2.0)]
        )
        centre = pos + r * normal
        sweep = turn_dir * np.pi / 2.0
        segments.append(("arc", centre, r, yaw, sweep))
        yaw_out = yaw + sweep
        out_normal = np.array(
            [np.cos(yaw_out + turn_dir * np.pi / 2.0), np.sin(yaw_out + turn_dir * np.pi / 2.0)]
        )
        pos = centre - r * out_normal
        yaw = yaw_out
        dist += r * np.pi / 2.0

    for k in range(plan.line_count):
        yaw = 0.0 if k % 2 == 0 else np.pi
        start_d = dist
        add_straight(line_len)
        leg_spans.append((start_d, dist))
        if k == plan.line_count - 1:
            break
        de = leg_east(k + 1) - leg_east(k)
        cross_yaw = np.pi / 2.0 if de > 0 else -np.pi / 2.0
        cross_len = abs(de) - 2.0 * r
        base_len = np.pi * r + cross_len
        pad = 0.0
        if plan.grid_aligned:
            steps = math.ceil(base_len / ds - 1e-9)
            pad = steps * ds - base_len
        add_straight(pad / 2.0)
        turn_start = dist
        dir1 = 1.0 if _wrap_angle(cross_yaw - yaw) > 0 else -1.0
        add_quarter_arc(dir1)
        add_straight(cross_len)
        next_yaw = 0.0 if (k + 1) % 2 == 0 else np.pi
        dir2 = 1.0 if _wrap_angle(next_yaw - yaw) > 0 else -1.0
        add_quarter_arc(dir2)
        turn_spans.append((turn_start, dist))
        add_straight(pad / 2.0)
    return segments, leg_spans, turn_spans


def _pose_at(segments, seg_starts, s):
    """(north, east, yaw) at path distance s (vectorized over s)."""
    s = np.asarray(s, dtype=float)
    idx = np.searchsorted(seg_starts, s, side="right") - 1
    idx = np.clip(idx, 0, len(segments) - 1)
    north = np.empty_like(s)
    east = np.empty_like(s)
    yaw = np.empty_like(s)
    for i, seg in enumerate(segments):
        pick = idx == i
        if not np.any(pick):
            continue
        local = s[pick] - seg_starts[i]
        if seg[0] == "straight":
            _, p0, y, _length = seg
            north[pick] = p0[0] + local * np.cos(y)
            east[pick] = p0[1] + local * np.sin(y)
            yaw[pick] = y
        else:
            _, centre, radius, y0, sweep = seg
            turn_dir = np.sign(sweep)
            ang = y0 + turn_dir * local / radius
            north[pick] = centre[0] - radius * np.cos(ang + turn_dir * np.pi / 2.0)
            east[pick] = centre[1] - radius * np.sin(ang + turn_dir * np.pi / 2.0)
            yaw[pick] = ang
    return north, east, yaw


@dataclass
class SurveyData:
    """Everything render_survey produces: true pings, partitions, oracle."""

    pings: list
    true_poses: list
    image_ranges: list
    line_windows: list
    turn_windows: list
    oracle: TruthOracle
    floor: Seafloor
    plan: SurveyPlan
    sensor: SensorConfig


def render_survey(floor, plan, sensor, seed, speckle_var=0.1):
    """Render the survey's pings over the floor with exact ground truth.

    Raises if any part of the ensonified swath leaves the floor extent.
    """
    segments, leg_spans, turn_spans = _build_path(plan)
    seg_starts = []
    acc = 0.0
    for seg in segments:
        seg_starts.append(acc)
        acc += seg[3] if seg[0] == "straight" else abs(seg[4]) * seg[2]
    seg_starts = np.array(seg_starts)
    total_len = acc
    ds = plan.ping_spacing
    n_pings = int(math.floor(total_len / ds + 1e-9)) + 1
    s = ds * np.arange(n_pings)
    north, east, yaw = _pose_at(segments, seg_starts, s)

    # Constant-depth flight referenced to the floor under the first ping.
    h_start = float(floor.height(east[0], north[0]))
    z0 = -(plan.altitude + h_start)
    h_under = floor.height(east, north)
    altitudes = -h_under - z0
    if np.any(altitudes <= 1.0):
        raise ValueError("floor rises into the flight depth; lower the datum")

    swath = sensor.max_range + 2.0
    if not floor.contains_box(
        east.min() - swath, east.max() + swath, north.min() - swath, north.max() + swath
    ):
        raise ValueError("survey swath leaves the seafloor region")

    b = sensor.bins_per_side
    slant_res = sensor.slant_resolution
    r_bins = (np.arange(b) + 0.5) * slant_res
    positions = np.stack([north, east, np.full_like(north, z0)], axis=1)
    _, stbd_ne = _heading_dirs(yaw)

    points = np.full((n_pings, 2, b, 3), np.nan)
    intens = np.zeros((n_pings, 2, b))
    rr = np.broadcast_to(r_bins[None, :], (n_pings, b))
    for s_idx, side in ((0, -1.0), (1, 1.0)):
        u = _solve_ground_offset(
            floor, positions[:, None, :], side, stbd_ne[:, None, :], rr
        )
        gap = np.isnan(u)
        u_safe = np.where(gap, 0.0, u)
        pts = _offset_to_point(floor, positions[:, None, :], side, stbd_ne[:, None, :], u_safe)
        dz = pts[..., 2] - z0  # down distance from sensor to the floor point
        cos_inc = np.where(gap, 0.0, dz / rr)
        tau = np.where(gap, 0.0, floor.reflectivity(pts[..., 1], pts[..., 0]))
        intens[:, s_idx] = tau * cos_inc**2
        points[:, s_idx] = np.where(gap[..., None], np.nan, pts)

    if speckle_var > 0.0:
        shape = 1.0 / speckle_var
        for p in range(n_pings):
            rng = stream(seed, _TAG_SPECKLE, p)
            intens[p] *= rng.gamma(shape, 1.0 / shape, size=intens[p].shape)

    times = s / plan.speed
    pings = []
    true_poses = []
    for p in range(n_pings):
        pose = Pose3.from_yaw_pitch_roll(yaw[p], 0.0, 0.0, positions[p])
        true_poses.append(pose)
        pings.append(
            Ping(
                index=p,
                time=float(times[p]),
                dr_pose=pose,
                altitude=float(altitudes[p]),
                port=intens[p, 0],
                stbd=intens[p, 1],
                slant_resolution=slant_res,
            )
        )

    leg_pings = [
        (int(math.ceil(a / ds - 1e-9)), int(math.floor(bnd / ds + 1e-9)))
        for a, bnd in leg_spans
    ]
    turn_pings = [
        (int(math.floor(a / ds + 1e-9)) + 1, int(math.ceil(bnd / ds - 1e-9)) - 1)
        for a, bnd in turn_spans
    ]
    image_ranges = []
    for k, (first, last) in enumerate(leg_pings):
        lo = 0 if k == 0 else (leg_pings[k - 1][1] + first) // 2 + 1
        hi = n_pings - 1 if k == len(leg_pings) - 1 else (last + leg_pings[k + 1][0]) // 2
        image_ranges.append((lo, hi))

    oracle = TruthOracle(
        points=points,
        positions=positions,
        yaws=yaw,
        altitudes=altitudes,
        line_windows=leg_pings,
        image_ranges=image_ranges,
        sensor=sensor,
        floor=floor,
        ping_spacing=ds,
    )
    return SurveyData(
        pings=pings,
        true_poses=true_poses,
        image_ranges=image_ranges,
        line_windows=leg_pings,
        turn_windows=turn_pings,
        oracle=oracle,
        floor=floor,
        plan=plan,
        sensor=sensor,
    )


def survey_extent(plan, sensor, margin=5.0):
    """Floor extent needed to contain a plan's swath."""
    if plan.pattern == "lawnmower":
        e_hi = plan.start[1] + plan.line_spacing * (plan.line_count - 1)
    else:
        e_hi = plan.start[1] + plan.line_spacing
    reach = sensor.max_range + plan.turn_radius + margin
    return (
        plan.start[1] - reach,
        e_hi + reach,
        plan.start[0] - reach,
        plan.start[0] + plan.line_length + reach,
    )


def aligned_spacing(spacing, plan, sensor):
    """Snap a line spacing to a whole number of canonical pixels."""
    ground_max = math.sqrt(sensor.max_range**2 - plan.altitude**2)
    g_res = ground_max / sensor.bins_per_side
    return max(1, round(spacing / g_res)) * g_res


def inject_drift(pings, model):
    """Corrupt dead-reckoning poses with an incremental heading random walk
    and optional along-track velocity bias. Exact identity when both noise
    terms are zero."""
    if model.yaw_sigma == 0.0 and model.velocity_bias == 0.0:
        return list(pings)
    rng = stream(model.seed, _TAG_DRIFT)
    eps = rng.normal(0.0, model.yaw_sigma, size=max(len(pings) - 1, 0))
    out = [pings[0]]
    current = pings[0].dr_pose
    ex = np.array([1.0, 0.0, 0.0])
    for i in range(1, len(pings)):
        prev = pings[i - 1]
        inc = prev.dr_pose.inverse() @ pings[i].dr_pose
        dt = pings[i].time - prev.time
        t = inc.translation + model.velocity_bias * dt * ex
        noisy = Pose3.from_yaw_pitch_roll(eps[i - 1], 0.0, 0.0) @ Pose3(inc.rotation, t)
        current = current @ noisy
        out.append(replace(pings[i], dr_pose=current))
    return out
