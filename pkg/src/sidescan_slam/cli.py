"""Command-line interface.

Subcommands: simulate, canonicalize, match, slam, reconstruct, eval, all.
Every command takes ``--config`` (key = value lines), ``--seed`` and
``--out``; commands that consume a dataset take its directory as the
positional argument. Exit codes: 0 success, 2 when the SLAM run found no
usable loop-closure edges (dead-reckoning passthrough), 1 on error.
"""

import argparse
import os
import sys
from dataclasses import replace as dc_replace

import numpy as np

from . import dense_match, io_formats, pipeline, sonar_image
from .config import PipelineConfig, load_config, save_config
from .geometry import SensorConfig
from .simulator import (
    DriftModel,
    SurveyPlan,
    aligned_spacing,
    inject_drift,
    make_seafloor,
    render_survey,
    survey_extent,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NO_EDGES = 2


def _load_cfg(args):
    cfg = PipelineConfig()
    if args.config:
        cfg = load_config(args.config, base=cfg)
    if args.seed is not None:
        cfg = dc_replace(cfg, seed=args.seed)
    return cfg


def _out_dir(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def cmd_simulate(args):
    cfg = _load_cfg(args)
    sim = cfg.sim
    out = _out_dir(args)
    sensor = SensorConfig(
        max_range=sim.max_range,
        bins_per_side=sim.bins_per_side,
        beam_width_alpha=sim.beam_width_alpha,
        range_sigma=sim.range_sigma,
    )
    plan = SurveyPlan(
        pattern=sim.pattern,
        line_count=sim.line_count,
        line_length=sim.line_length,
        line_spacing=sim.line_spacing,
        speed=sim.speed,
        ping_rate=sim.ping_rate,
        altitude=sim.altitude,
        turn_radius=sim.turn_radius,
        grid_aligned=sim.grid_aligned,
    )
    if sim.grid_aligned:
        plan = dc_replace(plan, line_spacing=aligned_spacing(plan.line_spacing, plan, sensor))
    floor = make_seafloor(
        survey_extent(plan, sensor),
        seed=cfg.seed,
        height_amplitude=sim.floor_amplitude,
        n_streaks=sim.floor_streaks,
    )
    survey = render_survey(floor, plan, sensor, seed=cfg.seed, speckle_var=sim.speckle_var)
    yaw_sigma = 0.0
    if sim.drift_level > 0.0:
        yaw_sigma = sim.drift_level / np.sqrt(len(survey.pings))
    drifted = inject_drift(
        survey.pings,
        DriftModel(yaw_sigma=yaw_sigma, velocity_bias=sim.velocity_bias, seed=cfg.seed),
    )
    io_formats.write_dataset(out, survey, drifted, oracle_stride=sim.oracle_stride)
    save_config(os.path.join(out, "run_config.cfg"), cfg)
    print(f"dataset written to {out}: {len(survey.pings)} pings, "
          f"{len(survey.image_ranges)} images")
    return EXIT_OK


def _prepared(ds, cfg):
    return pipeline._prepare_images(ds, cfg)


def cmd_canonicalize(args):
    cfg = _load_cfg(args)
    ds = io_formats.load_dataset(args.dataset)
    out = _out_dir(args)
    for b in _prepared(ds, cfg):
        io_formats.write_grid(os.path.join(out, f"canonical_{b.index:03d}.grid"),
                              b.canon.intensities)
        io_formats.write_mask(os.path.join(out, f"mask_{b.index:03d}.grid"), b.mask)
    print(f"canonical images written to {out}")
    return EXIT_OK


def cmd_match(args):
    cfg = _load_cfg(args)
    ds = io_formats.load_dataset(args.dataset)
    out = _out_dir(args)
    bundles = _prepared(ds, cfg)
    poses, _ = pipeline._dr_pose_maps(bundles)
    pings_now = {b.index: b.pings for b in bundles}
    geos = {b.index: sonar_image.georeference(b.canon, pings_now[b.index]) for b in bundles}
    n_matched = 0
    for j in range(len(bundles)):
        for i in range(j):
            bi, bj = bundles[i], bundles[j]
            area = pipeline.overlap_check(geos[i], geos[j], bi.mask, bj.mask,
                                          cfg.min_overlap_area)
            if area is None:
                continue
            flip = float(pipeline._mean_heading(bi.pings)
                         @ pipeline._mean_heading(bj.pings)) < 0.0
            img_b, mask_b, geo_b = bj.canon.intensities, bj.mask, geos[j].coords
            if flip:
                img_b = img_b[::-1, ::-1]
                mask_b = mask_b[::-1, ::-1]
                geo_b = geo_b[::-1, ::-1]
            nnf = dense_match.match(
                bi.canon.intensities, img_b, geos[i].coords, geo_b,
                bi.mask, mask_b, cfg.match, bi.canon.ground_resolution,
                seed=pipeline._pair_seed(cfg.seed, 0, i, j),
            )
            io_formats.write_nnf(os.path.join(out, f"nnf_{i:03d}_{j:03d}.txt"), nnf)
            n_matched += 1
    print(f"{n_matched} pair fields written to {out}")
    return EXIT_OK


def _write_run_outputs(out, ds, result, cfg):
    times = {}
    for pings in ds.line_pings:
        for p in pings:
            times[p.index] = p.time
    records = [(k, times[k], result.ping_poses[k]) for k in sorted(result.ping_poses)]
    io_formats.write_trajectory(os.path.join(out, "trajectory.csv"), records)
    io_formats.write_edges(os.path.join(out, "edges.csv"), result.edges)
    io_formats.write_report(os.path.join(out, "report.txt"), result.report)
    io_formats.write_pair_report(os.path.join(out, "report_pairs.csv"), result.report)
    save_config(os.path.join(out, "run_config.cfg"), cfg)


def _write_map_outputs(out, result, cfg):
    from .reconstruct import grid_heightmap, ned_to_enh

    io_formats.write_pointcloud(os.path.join(out, "pointcloud.xyz"), result.qmap.positions)
    if len(result.qmap) > 0:
        hm = grid_heightmap(ned_to_enh(result.qmap.positions), cfg.recon.cell)
        io_formats.write_heightmap(os.path.join(out, "heightmap.hm"), hm)


def cmd_slam(args, reconstruct_too=False):
    cfg = _load_cfg(args)
    ds = io_formats.load_dataset(args.dataset)
    out = _out_dir(args)
    result = pipeline.run(ds, cfg)
    _write_run_outputs(out, ds, result, cfg)
    if reconstruct_too:
        _write_map_outputs(out, result, cfg)
    print(f"status: {result.status}; edges: {len(result.edges)}; "
          f"elapsed: {result.elapsed_s:.1f}s")
    if result.report.ate_dr == result.report.ate_dr:  # truth present
        print(f"ATE dead-reckoning {result.report.ate_dr:.3f} m -> "
              f"optimized {result.report.ate_opt:.3f} m")
    return EXIT_OK if result.status == "ok" else EXIT_NO_EDGES


def cmd_reconstruct(args):
    cfg = _load_cfg(args)
    ds = io_formats.load_dataset(args.dataset)
    out = _out_dir(args)
    result = pipeline.run(ds, cfg)
    _write_map_outputs(out, result, cfg)
    print(f"landmarks kept: {len(result.qmap)}, discarded: {result.qmap.n_discarded}")
    return EXIT_OK if result.status == "ok" else EXIT_NO_EDGES


def cmd_eval(args):
    cfg = _load_cfg(args)
    ds = io_formats.load_dataset(args.dataset)
    out = _out_dir(args)
    result = pipeline.run(ds, cfg)
    io_formats.write_report(os.path.join(out, "report.txt"), result.report)
    io_formats.write_pair_report(os.path.join(out, "report_pairs.csv"), result.report)
    for key, val in result.report.flat_items():
        print(f"{key} = {val}")
    return EXIT_OK if result.status == "ok" else EXIT_NO_EDGES


def cmd_all(args):
    code = cmd_slam(args, reconstruct_too=True)
    return code


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="sidescan-slam",
        description="Dense side-scan sonar SLAM toolkit with a synthetic survey simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, needs_dataset=True):
        p = sub.add_parser(name)
        if needs_dataset:
            p.add_argument("dataset", help="dataset directory")
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True, help="output directory")
        p.set_defaults(func=func)
        return p

    add("simulate", cmd_simulate, needs_dataset=False)
    add("canonicalize", cmd_canonicalize)
    add("match", cmd_match)
    add("slam", cmd_slam)
    add("reconstruct", cmd_reconstruct)
    add("eval", cmd_eval)
    add("all", cmd_all)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surface a clean error, not a stack dump
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
