"""End-to-end batch SLAM: overlap detection, dense matching, subframe
pairing, robust edge estimation, incremental pose-graph updates, iterative
re-association with optimized poses, reconstruction and evaluation.

Anti-parallel image pairs are matched against a 180-degree rotated copy of
the target image (offsets between opposite-heading survey lines vary by two
pixels per pixel otherwise, defeating offset propagation); reported
correspondences are always in original image coordinates.
"""

import time
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from . import dense_match, metrics, reconstruct, sonar_image
from .config import PipelineConfig
from .io_formats import Dataset, load_dataset
from .pose_graph import OdometryFactor, LoopFactor, PoseGraph
from .subframe_pose import RansacParams, SssMeasurement, ransac_estimate


@dataclass
class SubframePair:
    """Matched subframes of two images plus their correspondence subset."""

    image_i: int
    image_j: int
    sf_i: int
    sf_j: int
    node_i: int
    node_j: int
    correspondences: dense_match.CorrespondenceSet


@dataclass
class RunResult:
    status: str
    ping_poses: dict
    dr_poses: dict
    node_poses: dict
    edges: list
    qmap: object
    qmap_dr: object
    report: metrics.EvalReport
    pair_correspondences: dict = field(default_factory=dict)
    elapsed_s: float = 0.0


# -- overlap geometry ---------------------------------------------------------


def _convex_hull(points):
    """Andrew monotone chain; points (n, 2) -> hull vertices CCW."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if pts.shape[0] < 3:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    coords = [(float(x), float(y)) for x, y in pts]

    def half(seq):
        out = []
        for px, py in seq:
            while len(out) >= 2:
                ax, ay = out[-2]
                bx, by = out[-1]
                if (bx - ax) * (py - ay) - (by - ay) * (px - ax) > 0:
                    break
                out.pop()
            out.append((px, py))
        return out

    lower = half(coords)
    upper = half(coords[::-1])
    return np.asarray(lower[:-1] + upper[:-1])


def _clip_polygon(subject, clip):
    """Sutherland-Hodgman intersection of convex polygons (both CCW)."""
    output = list(subject)
    n = len(clip)
    for k in range(n):
        a = clip[k]
        b = clip[(k + 1) % n]
        edge = b - a
        inputs = output
        output = []
        if not inputs:
            break
        prev = inputs[-1]
        prev_in = np.cross(edge, prev - a) >= 0
        for cur in inputs:
            cur_in = np.cross(edge, cur - a) >= 0
            if cur_in != prev_in:
                denom = np.cross(edge, cur - prev)
                t = np.cross(edge, a - prev) / denom if denom != 0 else 0.0
                output.append(prev + t * (cur - prev))
            if cur_in:
                output.append(cur)
            prev, prev_in = cur, cur_in
    return np.asarray(output) if output else np.zeros((0, 2))


def _polygon_area(poly):
    if len(poly) < 3:
        return 0.0
    x = poly[:, 0]
    y = poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def overlap_check(geo_a, geo_b, mask_a, mask_b, min_area=100.0, sample_stride=6):
    """Intersection area (m^2) of the two convex geo-footprints, or None
    when below ``min_area``."""
    pa = geo_a.coords[::sample_stride, ::sample_stride][
        mask_a[::sample_stride, ::sample_stride]
    ]
    pb = geo_b.coords[::sample_stride, ::sample_stride][
        mask_b[::sample_stride, ::sample_stride]
    ]
    if pa.shape[0] < 3 or pb.shape[0] < 3:
        return None
    hull_a = _convex_hull(pa)
    hull_b = _convex_hull(pb)
    if len(hull_a) < 3 or len(hull_b) < 3:
        return None
    area = _polygon_area(_clip_polygon(hull_a, hull_b))
    return area if area >= min_area else None


# -- subframe pairing -----------------------------------------------------------


def pair_subframes(
    subframes_a, subframes_b, correspondences, image_i, image_j, node_ids, min_count=1
):
    """Group correspondences by the (subframe_a, subframe_b) pair containing
    their endpoints; every correspondence lands in exactly one pair."""
    row_to_sf_a = _row_lookup(subframes_a)
    row_to_sf_b = _row_lookup(subframes_b)
    sfa = row_to_sf_a[correspondences.a_rows]
    sfb = row_to_sf_b[correspondences.b_rows]
    pairs = []
    for key in sorted(set(zip(sfa.tolist(), sfb.tolist()))):
        idx = np.nonzero((sfa == key[0]) & (sfb == key[1]))[0]
        if idx.size < min_count:
            continue
        pairs.append(
            SubframePair(
                image_i=image_i,
                image_j=image_j,
                sf_i=key[0],
                sf_j=key[1],
                node_i=node_ids[(image_i, key[0])],
                node_j=node_ids[(image_j, key[1])],
                correspondences=correspondences.subset(idx),
            )
        )
    return pairs


def _row_lookup(subframes):
    n_rows = subframes[-1].row_range[1]
    lookup = np.zeros(n_rows, dtype=np.int64)
    for k, sf in enumerate(subframes):
        lookup[sf.row_range[0] : sf.row_range[1]] = k
    return lookup


# -- helpers ---------------------------------------------------------------------


def _rot180_cs(cs, shape):
    """Map correspondence b-pixels from rotated coordinates back to the
    original image frame."""
    h, w = shape
    return dense_match.CorrespondenceSet(
        a_rows=cs.a_rows,
        a_cols=cs.a_cols,
        b_rows=h - 1 - cs.b_rows,
        b_cols=w - 1 - cs.b_cols,
        distances=cs.distances,
    )


def _mean_heading(pings):
    vecs = np.array([[p.dr_pose.rotation[0, 0], p.dr_pose.rotation[1, 0]] for p in pings])
    m = vecs.mean(axis=0)
    return m / max(np.linalg.norm(m), 1e-12)


@dataclass
class _ImageBundle:
    index: int
    pings: list
    canon: sonar_image.SssImage
    mask: np.ndarray
    subframes: list


def _prepare_images(ds, config):
    bundles = []
    for k, pings in enumerate(ds.line_pings):
        raw = sonar_image.image_from_pings(pings)
        canon = sonar_image.canonicalize(raw, pings, saturation=config.saturation)
        mask = sonar_image.build_mask(
            canon,
            pings,
            nadir_margin_px=config.nadir_margin_px,
            turn_rate_thresh=config.turn_rate_thresh,
        )
        canon = dc_replace(canon, mask=mask)
        subframes = sonar_image.split_subframes(canon, pings, config.subframe_size)
        bundles.append(_ImageBundle(k, pings, canon, mask, subframes))
    return bundles


def _dr_pose_maps(bundles):
    dr_poses = {}
    times = {}
    for b in bundles:
        for p in b.pings:
            dr_poses[p.index] = p.dr_pose
            times[p.index] = p.time
    return dr_poses, times


def _node_layout(bundles):
    """Global node ids (centre ping indices) in trajectory order."""
    node_ids = {}
    order = []
    for b in bundles:
        for s, sf in enumerate(b.subframes):
            node_ids[(b.index, s)] = sf.centre_ping
            order.append(sf.centre_ping)
    return node_ids, order


def _subframe_of_ping(bundles):
    owner = {}
    for b in bundles:
        for s, sf in enumerate(b.subframes):
            first = b.canon.ping_of_row(sf.row_range[0])
            last = b.canon.ping_of_row(sf.row_range[1] - 1)
            for p in range(first, last + 1):
                owner[p] = sf.centre_ping
    return owner


def interpolate_ping_poses(node_poses, owner, dr_poses):
    """Per-ping poses: dead-reckoning increments hung on each subframe's
    optimized centre pose."""
    out = {}
    for ping, centre in owner.items():
        base = node_poses[centre]
        out[ping] = base @ (dr_poses[centre].inverse() @ dr_poses[ping])
    return out


def _replaced_pings(pings, poses):
    return [dc_replace(p, dr_pose=poses[p.index]) for p in pings]


def _measurements_for_pair(pair, bundles, dr_poses, sensor):
    """Two range/plane measurements per correspondence of a subframe pair."""
    bi = bundles[pair.image_i]
    bj = bundles[pair.image_j]
    cs = pair.correspondences
    g_i = bi.canon.column_ground_ranges()
    g_j = bj.canon.column_ground_ranges()
    centre_i = dr_poses[pair.node_i]
    centre_j = dr_poses[pair.node_j]
    out = []
    keep = []
    for k in range(len(cs)):
        ping_a = bi.canon.ping_of_row(int(cs.a_rows[k]))
        ping_b = bj.canon.ping_of_row(int(cs.b_rows[k]))
        ga = float(g_i[int(cs.a_cols[k])])
        gb = float(g_j[int(cs.b_cols[k])])
        alt_a = _ping_by_index(bi, ping_a).altitude
        alt_b = _ping_by_index(bj, ping_b).altitude
        ra = float(np.hypot(ga, alt_a))
        rb = float(np.hypot(gb, alt_b))
        if not (alt_a < ra <= sensor.max_range and alt_b < rb <= sensor.max_range):
            continue
        off_a = dr_poses[pair.node_i].inverse() @ dr_poses[ping_a]
        off_b = dr_poses[pair.node_j].inverse() @ dr_poses[ping_b]
        out.append(
            SssMeasurement(ra, off_a, 1 if ga >= 0 else -1, 0, k, alt_a, ping_index=ping_a)
        )
        out.append(
            SssMeasurement(rb, off_b, 1 if gb >= 0 else -1, 1, k, alt_b, ping_index=ping_b)
        )
        keep.append(k)
    return out, np.asarray(keep, dtype=np.int64)


def _ping_by_index(bundle, ping_index):
    return bundle.pings[ping_index - bundle.canon.ping_range[0]]


def _pair_seed(seed, iteration, i, j):
    return (int(seed) * 1000003 + iteration * 10007 + i * 101 + j) & ((1 << 62) - 1)


# -- the run ---------------------------------------------------------------------


def run(dataset, config=None):
    """Full pipeline on a dataset directory or Dataset object.

    Iterates geo-referencing, dense matching, edge estimation and
    incremental graph optimization ``n_iter`` times, then reconstructs the
    quasi-dense map and evaluates against ground truth when the dataset
    carries it. Deterministic for a fixed config seed.
    """
    t_start = time.time()
    config = config or PipelineConfig()
    ds = dataset if isinstance(dataset, Dataset) else load_dataset(dataset)
    sensor = ds.sensor
    bundles = _prepare_images(ds, config)
    dr_poses, times = _dr_pose_maps(bundles)
    node_ids, node_order = _node_layout(bundles)
    owner = _subframe_of_ping(bundles)

    # Ping poses used for geo-referencing; start at dead reckoning.
    current = dict(dr_poses)
    node_poses = {nid: dr_poses[nid] for nid in node_order}
    edges_final = []
    stat_keys = (
        "pairs_overlapping",
        "pairs_matched",
        "subframe_pairs",
        "accepted",
        "rejected_thresholds",
        "rejected_no_hypothesis",
        "rejected_too_few",
        "hypotheses_failed",
        "hypotheses_degenerate",
    )
    edge_stats = {}
    recall_per_iter = {}
    pair_cs = {}
    pair_cs_eval = {}
    pair_cs_init = {}

    for iteration in range(config.n_iter):
        pair_cs = {}
        pair_cs_eval = {}
        pair_cs_init = {}
        stats_iter = dict.fromkeys(stat_keys, 0)
        pings_now = {
            b.index: _replaced_pings(b.pings, current) for b in bundles
        }
        geos = {
            b.index: sonar_image.georeference(b.canon, pings_now[b.index])
            for b in bundles
        }
        graph = PoseGraph()
        anchor = node_order[0]
        graph.add_node(anchor, dr_poses[anchor])
        for prev, nxt in zip(node_order, node_order[1:]):
            meas = dr_poses[prev].inverse() @ dr_poses[nxt]
            d = float(np.linalg.norm(dr_poses[prev].translation - dr_poses[nxt].translation))
            cov = config.odom_cov_per_m * max(d, 1.0) * np.eye(6)
            graph.add_odometry(OdometryFactor(prev, nxt, meas, cov))
        graph.set_poses(node_poses)
        edges = []

        for j in range(len(bundles)):
            for i in range(j):
                bi, bj = bundles[i], bundles[j]
                area = overlap_check(
                    geos[i], geos[j], bi.mask, bj.mask, config.min_overlap_area
                )
                if area is None:
                    continue
                stats_iter["pairs_overlapping"] += 1
                flip = (
                    float(_mean_heading(pings_now[i]) @ _mean_heading(pings_now[j])) < 0.0
                )
                img_b = bj.canon.intensities
                mask_b = bj.mask
                geo_b = geos[j].coords
                if flip:
                    img_b = img_b[::-1, ::-1]
                    mask_b = mask_b[::-1, ::-1]
                    geo_b = geo_b[::-1, ::-1]
                px = bi.canon.ground_resolution
                nnf0 = dense_match.initialize(
                    geos[i].coords, geo_b, bi.mask, mask_b, config.match, px
                )
                if nnf0.is_empty:
                    continue
                nnf = dense_match.match(
                    bi.canon.intensities,
                    img_b,
                    geos[i].coords,
                    geo_b,
                    bi.mask,
                    mask_b,
                    config.match,
                    px,
                    seed=_pair_seed(config.seed, iteration, i, j),
                    init_nnf=nnf0,
                )
                cs = dense_match.extract_correspondences(
                    nnf, config.stride, config.max_distance
                )
                cs_eval = dense_match.extract_correspondences(nnf, config.stride, np.inf)
                cs_init = _init_correspondences(nnf0, config.stride)
                if flip:
                    shape = bj.canon.intensities.shape
                    cs = _rot180_cs(cs, shape)
                    cs_eval = _rot180_cs(cs_eval, shape)
                    cs_init = _rot180_cs(cs_init, shape)
                if len(cs) == 0:
                    continue
                stats_iter["pairs_matched"] += 1
                pair_cs[(i, j)] = cs
                pair_cs_eval[(i, j)] = cs_eval
                pair_cs_init[(i, j)] = cs_init
                sub_pairs = pair_subframes(
                    bi.subframes,
                    bj.subframes,
                    cs,
                    i,
                    j,
                    node_ids,
                    min_count=config.min_pair_correspondences,
                )
                for sp_idx, sp in enumerate(sub_pairs):
                    stats_iter["subframe_pairs"] += 1
                    meas, _kept = _measurements_for_pair(sp, bundles, dr_poses, sensor)
                    if len(meas) < 2 * config.ransac.subset_size:
                        stats_iter["rejected_too_few"] += 1
                        continue
                    dr_rel = dr_poses[sp.node_i].inverse() @ dr_poses[sp.node_j]
                    edge, stats = ransac_estimate(
                        graph.nodes[sp.node_i],
                        graph.nodes[sp.node_j],
                        meas,
                        sensor,
                        config.ransac,
                        node_i=sp.node_i,
                        node_j=sp.node_j,
                        seed=config.seed,
                        pair_tag=_pair_seed(7, iteration, i, j) + sp_idx,
                        odom_cov_per_m=config.odom_cov_per_m,
                        dr_relative=dr_rel,
                    )
                    stats_iter["hypotheses_failed"] += stats.n_failed
                    stats_iter["hypotheses_degenerate"] += stats.n_degenerate
                    if edge is None:
                        key = (
                            "rejected_thresholds"
                            if stats.rejected_reason == "cost_thresholds"
                            else "rejected_no_hypothesis"
                        )
                        stats_iter[key] += 1
                        continue
                    stats_iter["accepted"] += 1
                    edges.append(edge)
                    graph.add_loop_closure(
                        LoopFactor(edge.subframe_i, edge.subframe_j, edge.relative_pose, edge.covariance)
                    )
            # Incremental update after each image's edges.
            if graph.loops:
                graph.optimize()
        if graph.loops:
            graph.optimize()
            node_poses = graph.poses()
            current = interpolate_ping_poses(node_poses, owner, dr_poses)
        edges_final = edges
        recall_per_iter[iteration + 1] = _iteration_recalls(ds, pair_cs_eval, config)
        edge_stats[f"accepted_iter{iteration + 1}"] = stats_iter["accepted"]
        for key in stat_keys:
            edge_stats[key] = stats_iter[key]

    status = "ok" if edges_final else "no_edges"
    if status == "no_edges":
        node_poses = {nid: dr_poses[nid] for nid in node_order}
        current = dict(dr_poses)

    qmap, qmap_dr = _reconstruct_maps(
        ds, bundles, pair_cs, node_ids, current, dr_poses, sensor, config
    )
    report = _evaluate(
        ds,
        bundles,
        pair_cs,
        pair_cs_eval,
        pair_cs_init,
        current,
        dr_poses,
        qmap,
        qmap_dr,
        edge_stats,
        recall_per_iter,
        status,
        config,
    )
    return RunResult(
        status=status,
        ping_poses=current,
        dr_poses=dr_poses,
        node_poses=node_poses,
        edges=edges_final,
        qmap=qmap,
        qmap_dr=qmap_dr,
        report=report,
        pair_correspondences=pair_cs,
        elapsed_s=time.time() - t_start,
    )


def _init_correspondences(nnf0, stride):
    h, w = nnf0.distances.shape
    grid = np.zeros((h, w), dtype=bool)
    grid[::stride, ::stride] = True
    sel = grid & nnf0.active
    ar, ac = np.nonzero(sel)
    off = nnf0.offsets[ar, ac]
    return dense_match.CorrespondenceSet(
        a_rows=ar.astype(np.int64),
        a_cols=ac.astype(np.int64),
        b_rows=(ar + off[:, 0]).astype(np.int64),
        b_cols=(ac + off[:, 1]).astype(np.int64),
        distances=np.zeros(ar.size),
    )


def _iteration_recalls(ds, pair_cs, config):
    out = {}
    for (i, j), cs in pair_cs.items():
        oracle = ds.oracle_pairs(i, j)
        if oracle is None:
            continue
        pa, ca, pb, cb = oracle
        first_i = ds.image_ranges[i][0]
        first_j = ds.image_ranges[j][0]
        a_pix = list(zip((pa - first_i).astype(int), ca.astype(int)))
        b_pix = list(zip(pb - first_j, cb))
        out[(i, j)] = metrics.recall(cs, a_pix, b_pix)
    return out


def _reconstruct_maps(ds, bundles, pair_cs, node_ids, current, dr_poses, sensor, config):
    pair_meas = {}
    pose_pairs = {}
    pose_pairs_dr = {}
    for pid, ((i, j), cs) in enumerate(sorted(pair_cs.items())):
        sub_pairs = pair_subframes(
            bundles[i].subframes,
            bundles[j].subframes,
            cs,
            i,
            j,
            node_ids,
            min_count=config.min_pair_correspondences,
        )
        for k, sp in enumerate(sub_pairs):
            key = pid * 1000 + k
            meas, _ = _measurements_for_pair(sp, bundles, dr_poses, sensor)
            pair_meas[key] = meas
            pose_pairs[key] = (current[sp.node_i], current[sp.node_j])
            pose_pairs_dr[key] = (dr_poses[sp.node_i], dr_poses[sp.node_j])
    # Poses per centre already include the full per-ping map; measurements are
    # expressed relative to centre pings, so pass the centre poses.
    qmap = reconstruct.triangulate_landmarks(pair_meas, pose_pairs, sensor, config.recon)
    qmap_dr = reconstruct.triangulate_landmarks(pair_meas, pose_pairs_dr, sensor, config.recon)
    return qmap, qmap_dr


def _evaluate(
    ds,
    bundles,
    pair_cs,
    pair_cs_eval,
    pair_cs_init,
    current,
    dr_poses,
    qmap,
    qmap_dr,
    edge_stats,
    recall_per_iter,
    status,
    config,
):
    report = metrics.EvalReport(status=status, edge_stats=dict(edge_stats))
    report.recall_per_iteration = recall_per_iter
    if ds.truth is None:
        return report
    truth = ds.truth
    common = sorted(set(truth) & set(current))
    report.ate_dr = metrics.ate_rmse(
        {k: dr_poses[k] for k in common}, {k: truth[k] for k in common}
    )
    report.ate_opt = metrics.ate_rmse(
        {k: current[k] for k in common}, {k: truth[k] for k in common}
    )
    report.degraded = bool(report.ate_opt > report.ate_dr)

    for (i, j), cs in sorted(pair_cs.items()):
        oracle = ds.oracle_pairs(i, j)
        pe = metrics.PairEval(pair=(i, j))
        if oracle is not None:
            pa, ca, pb, cb = oracle
            first_i = ds.image_ranges[i][0]
            first_j = ds.image_ranges[j][0]
            a_pix = list(zip((pa - first_i).astype(int), ca.astype(int)))
            b_pix = list(zip(pb - first_j, cb))
            pe.n_oracle = len(a_pix)
            cs_eval = pair_cs_eval[(i, j)]
            pe.epe_x, pe.epe_y = metrics.epe(cs_eval, a_pix, b_pix)
            pe.recall = metrics.recall(cs_eval, a_pix, b_pix)
            pe.recall_init = metrics.recall(pair_cs_init[(i, j)], a_pix, b_pix)
        if ds.surface is not None and len(cs) > 0:
            pe.lce_dr = _pair_lce(ds, bundles, cs, (i, j), dr_poses, config)
            pe.lce_opt = _pair_lce(ds, bundles, cs, (i, j), current, config)
        report.pairs.append(pe)

    if ds.surface is not None and len(qmap) > 0:
        report.line_mae_dr = _line_maes(ds, qmap_dr, dr_poses, config)
        report.line_mae_opt = _line_maes(ds, qmap, current, config)
    return report


def _pair_lce(ds, bundles, cs, pair, poses, config, max_samples=1200):
    i, j = pair
    bi, bj = bundles[i], bundles[j]
    n = len(cs)
    sel = np.arange(n) if n <= max_samples else np.linspace(0, n - 1, max_samples).astype(int)
    sub = cs.subset(sel)
    g_i = bi.canon.column_ground_ranges()
    g_j = bj.canon.column_ground_ranges()
    ping_a = np.array([bi.canon.ping_of_row(int(r)) for r in sub.a_rows])
    ping_b = np.array([bj.canon.ping_of_row(int(r)) for r in sub.b_rows])
    ga = g_i[sub.a_cols]
    gb = g_j[sub.b_cols]
    alt_a = np.array([_ping_by_index(bi, p).altitude for p in ping_a])
    alt_b = np.array([_ping_by_index(bj, p).altitude for p in ping_b])
    ra = np.hypot(ga, alt_a)
    rb = np.hypot(gb, alt_b)
    val, _missed = metrics.lce(
        (ra, np.sign(ga), ping_a),
        (rb, np.sign(gb), ping_b),
        poses,
        poses,
        ds.sensor.sensor_offset,
        ds.surface,
    )
    return val


def _line_maes(ds, qmap, poses, config, cell=1.0):
    """Per-line sensor-frame heightmap MAE against the true surface."""
    if ds.surface is None or len(qmap) == 0 or qmap.obs_pings is None:
        return {}
    out = {}
    ping_line = {}
    for k, (lo, hi) in enumerate(ds.image_ranges):
        w0, w1 = ds.line_windows[k]
        for p in range(lo, hi + 1):
            if w0 <= p <= w1:
                ping_line[p] = k
    truth = ds.truth
    for k, (w0, w1) in enumerate(ds.line_windows):
        sel = []
        obs = []
        for col in (0, 1):
            pl = np.array([ping_line.get(int(p), -1) for p in qmap.obs_pings[:, col]])
            rows = np.nonzero(pl == k)[0]
            sel.append(rows)
            obs.append(qmap.obs_pings[rows, col])
        rows = np.concatenate(sel)
        pings = np.concatenate(obs).astype(int)
        if rows.size < 50:
            continue
        stations = _line_stations(poses, w0, w1)
        stations_t = _line_stations(truth, w0, w1)
        aligned = reconstruct.sensor_frame_align(
            qmap.positions[rows], pings, poses, stations, ds.sensor.sensor_offset
        )
        ref = _line_reference_cloud(ds, truth, stations_t, w0, w1)
        ref_hm = reconstruct.line_frame_heightmap(ref, cell)
        est_hm = reconstruct.line_frame_heightmap(
            aligned, cell, origin=(ref_hm.origin_e, ref_hm.origin_n), shape=ref_hm.grid.shape
        )
        try:
            out[k] = metrics.heightmap_mae(est_hm, ref_hm)
        except ValueError:
            continue
    return out


def _line_stations(poses, w0, w1):
    stations = {w0: 0.0}
    acc = 0.0
    for p in range(w0 + 1, w1 + 1):
        acc += float(
            np.linalg.norm(poses[p].translation - poses[p - 1].translation)
        )
        stations[p] = acc
    return stations


def _line_reference_cloud(ds, truth, stations, w0, w1, row_stride=2, swath_step=1.5):
    pts = []
    g_max = 0.995 * ds.sensor.max_range
    offsets = np.arange(-g_max, g_max + swath_step, swath_step)
    for p in range(w0, w1 + 1, row_stride):
        pose = truth[p]
        stbd = pose.rotation[:, 1]
        horiz = np.hypot(stbd[0], stbd[1])
        dn = stbd[0] / horiz
        de = stbd[1] / horiz
        e = pose.translation[1] + offsets * de
        n = pose.translation[0] + offsets * dn
        h = ds.surface.sample(e, n)
        ok = np.isfinite(h)
        world = np.stack([n[ok], e[ok], -h[ok]], axis=1)
        s = (pose @ ds.sensor.sensor_offset).inverse().apply(world)
        s[:, 0] += stations[p]
        pts.append(s)
    return np.concatenate(pts, axis=0)
