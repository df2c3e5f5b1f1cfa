"""File formats: datasets, trajectories, grids, field/edge/graph dumps,
point clouds, heightmaps and evaluation reports.

All files are plain ASCII. Pose records store NED translations (x = north,
y = east, z = down) and unit quaternions (w, x, y, z). Geometry-critical
floats are written with full round-trip precision.
"""

import os

import numpy as np

from .geometry import Pose3, SensorConfig
from .reconstruct import Heightmap
from .sonar_image import Ping


def _f(x):
    return repr(float(x))


# -- trajectory -------------------------------------------------------------


def write_trajectory(path, records):
    """Records are (ping_index, t_sec, Pose3), one CSV line per ping."""
    with open(path, "w") as fh:
        for idx, t, pose in records:
            q = pose.quat()
            tr = pose.translation
            fh.write(
                f"{int(idx)},{_f(t)},{_f(tr[0])},{_f(tr[1])},{_f(tr[2])},"
                f"{_f(q[0])},{_f(q[1])},{_f(q[2])},{_f(q[3])}\n"
            )


def read_trajectory(path):
    out = {}
    times = {}
    with open(path) as fh:
        for line in fh:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            idx = int(parts[0])
            t = float(parts[1])
            x, y, z, qw, qx, qy, qz = (float(v) for v in parts[2:9])
            out[idx] = Pose3.from_quat(qw, qx, qy, qz, (x, y, z))
            times[idx] = t
    return out, times


# -- ping files --------------------------------------------------------------


def write_pings(path, pings):
    with open(path, "w") as fh:
        for p in pings:
            q = p.dr_pose.quat()
            tr = p.dr_pose.translation
            head = [
                str(p.index),
                _f(p.time),
                _f(tr[0]),
                _f(tr[1]),
                _f(tr[2]),
                _f(q[0]),
                _f(q[1]),
                _f(q[2]),
                _f(q[3]),
                _f(p.altitude),
            ]
            bins = ["%.8g" % v for v in p.port] + ["%.8g" % v for v in p.stbd]
            fh.write(",".join(head + bins) + "\n")


def read_pings(path, slant_resolution):
    pings = []
    with open(path) as fh:
        for line in fh:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            nb = (len(parts) - 10) // 2
            idx = int(parts[0])
            t = float(parts[1])
            x, y, z, qw, qx, qy, qz, alt = (float(v) for v in parts[2:10])
            vals = np.array(parts[10:], dtype=float)
            pings.append(
                Ping(
                    index=idx,
                    time=t,
                    dr_pose=Pose3.from_quat(qw, qx, qy, qz, (x, y, z)),
                    altitude=alt,
                    port=vals[:nb],
                    stbd=vals[nb:],
                    slant_resolution=slant_resolution,
                )
            )
    return pings


# -- float grids -------------------------------------------------------------


def write_grid(path, grid, fmt="%.8g"):
    grid = np.asarray(grid)
    with open(path, "w") as fh:
        fh.write(f"{grid.shape[0]} {grid.shape[1]}\n")
        for row in grid:
            fh.write(" ".join(fmt % v for v in row) + "\n")


def read_grid(path):
    with open(path) as fh:
        rows, cols = (int(v) for v in fh.readline().split())
        data = np.loadtxt(fh, dtype=float, ndmin=2)
    if data.shape != (rows, cols):
        raise ValueError(f"grid shape mismatch in {path}")
    return data


def write_mask(path, mask):
    write_grid(path, np.asarray(mask, dtype=int), fmt="%d")


def read_mask(path):
    return read_grid(path) > 0.5


# -- nearest-neighbor fields ---------------------------------------------------


def write_nnf(path, nnf):
    h, w = nnf.distances.shape
    with open(path, "w") as fh:
        fh.write(f"{h} {w}\n")
        for i in range(h):
            for j in range(w):
                d = nnf.distances[i, j]
                fh.write(
                    f"{nnf.offsets[i, j, 0]} {nnf.offsets[i, j, 1]} "
                    f"{'inf' if not np.isfinite(d) else '%.8g' % d}\n"
                )


def read_nnf(path):
    from .dense_match import Nnf

    with open(path) as fh:
        h, w = (int(v) for v in fh.readline().split())
        offsets = np.zeros((h, w, 2), dtype=np.int32)
        distances = np.full((h, w), np.inf)
        for k in range(h * w):
            dr, dc, d = fh.readline().split()
            i, j = divmod(k, w)
            offsets[i, j] = (int(dr), int(dc))
            distances[i, j] = float(d)
    active = np.isfinite(distances)
    return Nnf(offsets, distances, active)


# -- loop-closure edges --------------------------------------------------------


def _upper_tri(mat):
    iu = np.triu_indices(6)
    return mat[iu]


def _from_upper_tri(vals):
    mat = np.zeros((6, 6))
    iu = np.triu_indices(6)
    mat[iu] = vals
    return mat + np.triu(mat, 1).T


def write_edges(path, edges):
    from .subframe_pose import LoopClosureEdge  # noqa: F401  (format owner)

    with open(path, "w") as fh:
        for e in edges:
            q = e.relative_pose.quat()
            tr = e.relative_pose.translation
            fields = (
                [str(e.subframe_i), str(e.subframe_j)]
                + [_f(v) for v in (tr[0], tr[1], tr[2], q[0], q[1], q[2], q[3])]
                + [_f(v) for v in _upper_tri(e.covariance)]
                + [_f(e.plane_cost), _f(e.range_cost), _f(e.opt_cost)]
            )
            fh.write(",".join(fields) + "\n")


def read_edges(path):
    from .subframe_pose import LoopClosureEdge

    edges = []
    with open(path) as fh:
        for line in fh:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            i, j = int(parts[0]), int(parts[1])
            tx, ty, tz, qw, qx, qy, qz = (float(v) for v in parts[2:9])
            cov = _from_upper_tri(np.array(parts[9:30], dtype=float))
            cp, cr, co = (float(v) for v in parts[30:33])
            edges.append(
                LoopClosureEdge(
                    i,
                    j,
                    Pose3.from_quat(qw, qx, qy, qz, (tx, ty, tz)),
                    cov,
                    cp,
                    cr,
                    co,
                )
            )
    return edges


# -- pose graph dump -------------------------------------------------------------


def write_graph(path, graph):
    with open(path, "w") as fh:
        for nid, pose in graph.poses().items():
            q = pose.quat()
            tr = pose.translation
            fh.write(
                f"VERTEX {nid} {_f(tr[0])} {_f(tr[1])} {_f(tr[2])} "
                f"{_f(q[0])} {_f(q[1])} {_f(q[2])} {_f(q[3])}\n"
            )
        for f in list(graph.odometry) + list(graph.loops):
            q = f.measurement.quat()
            tr = f.measurement.translation
            info = _upper_tri(np.linalg.inv(f.covariance))
            fh.write(
                f"EDGE {f.from_id} {f.to_id} "
                f"{_f(tr[0])} {_f(tr[1])} {_f(tr[2])} "
                f"{_f(q[0])} {_f(q[1])} {_f(q[2])} {_f(q[3])} "
                + " ".join(_f(v) for v in info)
                + "\n"
            )


# -- point clouds and heightmaps ---------------------------------------------------


def write_pointcloud(path, points):
    pts = np.asarray(points, dtype=float)
    with open(path, "w") as fh:
        for p in pts:
            fh.write(f"{_f(p[0])} {_f(p[1])} {_f(p[2])}\n")


def read_pointcloud(path):
    return np.loadtxt(path, dtype=float, ndmin=2)


def write_heightmap(path, hm):
    rows, cols = hm.grid.shape
    with open(path, "w") as fh:
        fh.write(f"{_f(hm.origin_e)} {_f(hm.origin_n)} {_f(hm.cell)} {rows} {cols}\n")
        for row in hm.grid:
            fh.write(" ".join("nan" if not np.isfinite(v) else "%.8g" % v for v in row) + "\n")


def read_heightmap(path):
    with open(path) as fh:
        head = fh.readline().split()
        oe, on, cell = float(head[0]), float(head[1]), float(head[2])
        rows, cols = int(head[3]), int(head[4])
        grid = np.loadtxt(fh, dtype=float, ndmin=2)
    if grid.shape != (rows, cols):
        raise ValueError(f"heightmap shape mismatch in {path}")
    return Heightmap(oe, on, cell, grid)


# -- oracle correspondences ----------------------------------------------------------


def write_oracle_pairs(path, ping_a, col_a, ping_b, col_b):
    with open(path, "w") as fh:
        for pa, ca, pb, cb in zip(ping_a, col_a, ping_b, col_b):
            fh.write(f"{int(pa)} {int(ca)} {_f(pb)} {_f(cb)}\n")


def read_oracle_pairs(path):
    data = np.loadtxt(path, dtype=float, ndmin=2)
    if data.size == 0:
        return (np.zeros(0),) * 4
    return data[:, 0], data[:, 1], data[:, 2], data[:, 3]


# -- evaluation report -----------------------------------------------------------


def write_report(path, report):
    with open(path, "w") as fh:
        for key, val in report.flat_items():
            fh.write(f"{key} = {val}\n")


def write_pair_report(path, report):
    with open(path, "w") as fh:
        fh.write("img_a,img_b,n_oracle,epe_x,epe_y,recall_init,recall,lce_dr,lce_opt\n")
        for pe in report.pairs:
            fh.write(
                f"{pe.pair[0]},{pe.pair[1]},{pe.n_oracle},{pe.epe_x},{pe.epe_y},"
                f"{pe.recall_init},{pe.recall},{pe.lce_dr},{pe.lce_opt}\n"
            )


# -- datasets --------------------------------------------------------------------


def _write_keyvals(path, items):
    with open(path, "w") as fh:
        for k, v in items:
            fh.write(f"{k} = {v}\n")


def read_keyvals(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            out[key.strip()] = val.strip()
    return out


class Dataset:
    """In-memory view of a dataset directory."""

    def __init__(self, root, sensor, line_pings, image_ranges, line_windows,
                 truth=None, truth_times=None, surface=None, turn_windows=None):
        self.root = root
        self.sensor = sensor
        self.line_pings = line_pings
        self.image_ranges = image_ranges
        self.line_windows = line_windows
        self.truth = truth
        self.truth_times = truth_times
        self.surface = surface
        self.turn_windows = turn_windows or []

    @property
    def n_images(self):
        return len(self.line_pings)

    def oracle_pair_path(self, i, j):
        return os.path.join(self.root, "oracle", f"pairs_{i:03d}_{j:03d}.csv")

    def oracle_pairs(self, i, j):
        path = self.oracle_pair_path(i, j)
        if not os.path.exists(path):
            return None
        return read_oracle_pairs(path)


def write_dataset(root, survey, drifted_pings, oracle_stride=8, min_oracle_pairs=50):
    """Materialize a simulated survey as a dataset directory.

    Ping files carry the (possibly drifted) dead-reckoning poses; the truth
    trajectory, true surface grid and oracle correspondences are written
    alongside for evaluation.
    """
    os.makedirs(root, exist_ok=True)
    os.makedirs(os.path.join(root, "lines"), exist_ok=True)
    sensor = survey.sensor
    items = [
        ("sensor.max_range", repr(sensor.max_range)),
        ("sensor.bins_per_side", sensor.bins_per_side),
        ("sensor.beam_width_alpha", repr(sensor.beam_width_alpha)),
        ("sensor.range_sigma", repr(sensor.range_sigma)),
        ("dataset.n_images", len(survey.image_ranges)),
    ]
    for k, (lo, hi) in enumerate(survey.image_ranges):
        items.append((f"image_{k}.first", lo))
        items.append((f"image_{k}.last", hi))
    for k, (lo, hi) in enumerate(survey.line_windows):
        items.append((f"image_{k}.line_first", lo))
        items.append((f"image_{k}.line_last", hi))
    for k, (lo, hi) in enumerate(survey.turn_windows):
        items.append((f"turn_{k}.first", lo))
        items.append((f"turn_{k}.last", hi))
    _write_keyvals(os.path.join(root, "dataset.cfg"), items)

    for k, (lo, hi) in enumerate(survey.image_ranges):
        write_pings(
            os.path.join(root, "lines", f"line_{k:03d}.csv"),
            drifted_pings[lo : hi + 1],
        )
    write_trajectory(
        os.path.join(root, "truth_trajectory.csv"),
        [(p.index, p.time, tp) for p, tp in zip(survey.pings, survey.true_poses)],
    )
    surface = _true_surface_heightmap(survey)
    write_heightmap(os.path.join(root, "true_surface.hm"), surface)

    os.makedirs(os.path.join(root, "oracle"), exist_ok=True)
    oracle = survey.oracle
    n_img = len(survey.image_ranges)
    for i in range(n_img):
        for j in range(i + 1, n_img):
            pa, ca, pb, cb = _oracle_pairs_for(oracle, i, j, oracle_stride)
            if pa.size < min_oracle_pairs:
                continue
            write_oracle_pairs(
                os.path.join(root, "oracle", f"pairs_{i:03d}_{j:03d}.csv"),
                pa,
                ca,
                pb,
                cb,
            )
    return root


def _true_surface_heightmap(survey, cell=1.0):
    e_min, e_max, n_min, n_max = survey.floor.extent
    ee = np.arange(e_min, e_max + cell, cell)
    nn = np.arange(n_min, n_max + cell, cell)
    eg, ng = np.meshgrid(ee + 0.5 * cell, nn + 0.5 * cell)
    grid = survey.floor.height(eg, ng)
    return Heightmap(float(ee[0]), float(nn[0]), float(cell), grid)


def _oracle_pairs_for(oracle, i, j, stride):
    first_i, last_i = oracle.image_ranges[i]
    w0, w1 = oracle.line_windows[i]
    # Rows snap to the image's stride grid so downstream extraction grids
    # (any stride dividing this one) intersect the oracle pixels.
    row0 = int(np.ceil((w0 - first_i) / stride)) * stride
    rows = np.arange(row0, w1 - first_i + 1, stride)
    cols = np.arange(0, 2 * oracle.sensor.bins_per_side, stride)
    rg, cg = np.meshgrid(rows, cols, indexing="ij")
    rg = rg.ravel().astype(float)
    cg = cg.ravel().astype(float)
    pts = oracle.pixel_points(i, rg, cg)
    good = np.all(np.isfinite(pts), axis=-1)
    rg, cg, pts = rg[good], cg[good], pts[good]
    if rg.size == 0:
        return (np.zeros(0),) * 4
    rb, cb = oracle.locate(j, pts)
    ok = np.isfinite(rb) & np.isfinite(cb)
    first_j, _ = oracle.image_ranges[j]
    return (
        rg[ok] + first_i,
        cg[ok],
        rb[ok] + first_j,
        cb[ok],
    )


def load_dataset(root):
    meta = read_keyvals(os.path.join(root, "dataset.cfg"))
    sensor = SensorConfig(
        max_range=float(meta["sensor.max_range"]),
        bins_per_side=int(meta["sensor.bins_per_side"]),
        beam_width_alpha=float(meta["sensor.beam_width_alpha"]),
        range_sigma=float(meta["sensor.range_sigma"]),
    )
    n_images = int(meta["dataset.n_images"])
    image_ranges = []
    line_windows = []
    for k in range(n_images):
        image_ranges.append((int(meta[f"image_{k}.first"]), int(meta[f"image_{k}.last"])))
        line_windows.append(
            (int(meta[f"image_{k}.line_first"]), int(meta[f"image_{k}.line_last"]))
        )
    turn_windows = []
    k = 0
    while f"turn_{k}.first" in meta:
        turn_windows.append((int(meta[f"turn_{k}.first"]), int(meta[f"turn_{k}.last"])))
        k += 1
    line_pings = [
        read_pings(
            os.path.join(root, "lines", f"line_{k:03d}.csv"), sensor.slant_resolution
        )
        for k in range(n_images)
    ]
    truth = truth_times = None
    tpath = os.path.join(root, "truth_trajectory.csv")
    if os.path.exists(tpath):
        truth, truth_times = read_trajectory(tpath)
    surface = None
    spath = os.path.join(root, "true_surface.hm")
    if os.path.exists(spath):
        surface = read_heightmap(spath)
    return Dataset(
        root,
        sensor,
        line_pings,
        image_ranges,
        line_windows,
        truth,
        truth_times,
        surface,
        turn_windows,
    )
