"""Canned simulator scenarios used by the experiment scripts and the
acceptance suite.

``zero_noise``: flat, speckle-free, grid-aligned survey whose cross-line
correspondences are pixel-exact; the pipeline must reproduce the truth
trajectory through it without perturbing it.

``default``: undulating textured floor, multiplicative speckle and an
incremental heading random walk. ``drift_level`` is the standard deviation
of the accumulated heading error at mission end; the per-ping increment
sigma is ``drift_level / sqrt(n_pings)``.
"""

from dataclasses import replace

import numpy as np

from .geometry import SensorConfig
from .io_formats import write_dataset
from .simulator import (
    DriftModel,
    SurveyPlan,
    aligned_spacing,
    inject_drift,
    make_seafloor,
    render_survey,
    survey_extent,
)


def zero_noise_mission(seed=0, line_count=5, line_length=146.0, line_spacing=50.0,
                       bins_per_side=600, max_range=170.0, beam_width_alpha=0.02):
    """Oracle round-trip fixture: ~2k pings over 5 lawnmower lines."""
    sensor = SensorConfig(
        max_range=max_range, bins_per_side=bins_per_side,
        beam_width_alpha=beam_width_alpha,
    )
    plan = SurveyPlan(
        line_count=line_count,
        line_length=line_length,
        line_spacing=line_spacing,
        grid_aligned=True,
    )
    plan = replace(plan, line_spacing=aligned_spacing(plan.line_spacing, plan, sensor))
    floor = make_seafloor(
        survey_extent(plan, sensor), seed=seed, height_amplitude=0.0, n_streaks=60
    )
    survey = render_survey(floor, plan, sensor, seed=seed, speckle_var=0.0)
    return survey, list(survey.pings)


def default_mission(seed=0, drift_level=0.01, line_count=5, line_length=250.0,
                    line_spacing=60.0, bins_per_side=400, max_range=120.0,
                    speckle_var=0.1, floor_amplitude=0.35, velocity_bias=0.02,
                    beam_width_alpha=0.01):
    """Drift-correction scenario: textured undulating floor, speckle, an
    incremental heading random walk reaching ``drift_level`` rad (1 sigma)
    by mission end, plus a constant along-track velocity bias.

    The bias puts the dominant drift along-track, the direction the
    range/plane measurement model observes (cross-track trades against
    elevation and is anchored by odometry alone); real DVL-aided dead
    reckoning drifts the same way.

    The simulated sonar's along-array geometry is pixel-sharp, so its beam
    width is declared far tighter than a real towfish's; the plane rows then
    carry their honest weight in estimation.
    """
    sensor = SensorConfig(
        max_range=max_range, bins_per_side=bins_per_side,
        beam_width_alpha=beam_width_alpha,
    )
    plan = SurveyPlan(
        line_count=line_count,
        line_length=line_length,
        line_spacing=line_spacing,
        grid_aligned=True,
    )
    plan = replace(plan, line_spacing=aligned_spacing(plan.line_spacing, plan, sensor))
    floor = make_seafloor(
        survey_extent(plan, sensor),
        seed=seed,
        height_amplitude=floor_amplitude,
        n_streaks=50,
    )
    survey = render_survey(floor, plan, sensor, seed=seed, speckle_var=speckle_var)
    yaw_sigma = drift_level / np.sqrt(len(survey.pings)) if drift_level > 0 else 0.0
    drifted = inject_drift(
        survey.pings,
        DriftModel(yaw_sigma=yaw_sigma, velocity_bias=velocity_bias, seed=seed),
    )
    return survey, drifted


def build_dataset(path, kind="default", seed=0, oracle_stride=8, **kwargs):
    """Simulate a scenario and write it as a dataset directory."""
    if kind == "zero_noise":
        survey, pings = zero_noise_mission(seed=seed, **kwargs)
    elif kind == "default":
        survey, pings = default_mission(seed=seed, **kwargs)
    else:
        raise ValueError(f"unknown scenario kind '{kind}'")
    write_dataset(path, survey, pings, oracle_stride=oracle_stride)
    return survey


def drift_study_odom_cov(level, floor=1e-4, base=3e-2):
    """Odometry covariance constant matched to an injected drift level.

    The heading-walk corruption grows with the square of the level; keeping
    the relative-pose regularizer honest about it is what lets the
    estimator move away from dead reckoning at all.
    """
    if level <= 0.0:
        return floor
    return max(floor, base * max(level / 0.01, 1.0))
