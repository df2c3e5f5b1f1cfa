"""Run configuration: one dataclass tree covering every stage, and a flat
``key = value`` text format with module-prefixed keys (``match.patch_size``,
``ransac.max_iters``, ``pipeline.n_iter``, ``sim.line_count``, ...)."""

from dataclasses import dataclass, field, fields, replace

from .dense_match import MatchParams
from .reconstruct import ReconstructParams
from .subframe_pose import RansacParams


@dataclass(frozen=True)
class SimConfig:
    """Simulator scenario knobs (used by the ``simulate`` command)."""

    pattern: str = "lawnmower"
    line_count: int = 5
    line_length: float = 110.0
    line_spacing: float = 100.0
    speed: float = 2.0
    ping_rate: float = 4.0
    altitude: float = 18.0
    turn_radius: float = 15.0
    grid_aligned: bool = True
    max_range: float = 170.0
    bins_per_side: int = 600
    beam_width_alpha: float = 0.1
    range_sigma: float = 0.1
    floor_amplitude: float = 0.4
    floor_streaks: int = 40
    speckle_var: float = 0.1
    drift_level: float = 0.0
    velocity_bias: float = 0.0
    oracle_stride: int = 8


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a SLAM run needs besides the dataset itself."""

    match: MatchParams = field(default_factory=MatchParams)
    ransac: RansacParams = field(default_factory=RansacParams)
    recon: ReconstructParams = field(default_factory=ReconstructParams)
    sim: SimConfig = field(default_factory=SimConfig)
    subframe_size: int = 200
    n_iter: int = 2
    stride: int = 4
    max_distance: float = 0.5
    min_pair_correspondences: int = 30
    min_overlap_area: float = 100.0
    nadir_margin_px: int = 10
    turn_rate_thresh: float = 0.05
    saturation: float = 6.0
    odom_cov_per_m: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")
        if self.subframe_size < 1:
            raise ValueError("subframe_size must be positive")


_SECTIONS = {
    "match": ("match", MatchParams),
    "ransac": ("ransac", RansacParams),
    "recon": ("recon", ReconstructParams),
    "sim": ("sim", SimConfig),
}


def _parse_value(current, text):
    if isinstance(current, bool):
        return text.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    return text.strip()


def config_from_items(items, base=None):
    """Build a PipelineConfig from (key, value-string) pairs."""
    cfg = base or PipelineConfig()
    sections = {name: getattr(cfg, attr) for name, (attr, _) in _SECTIONS.items()}
    top = {}
    for key, text in items:
        key = key.strip()
        if "." in key:
            section, _, name = key.partition(".")
            if section == "pipeline":
                top[name] = text
                continue
            if section not in sections:
                raise KeyError(f"unknown config section '{section}'")
            obj = sections[section]
            if not any(f.name == name for f in fields(obj)):
                raise KeyError(f"unknown config key '{key}'")
            sections[section] = replace(obj, **{name: _parse_value(getattr(obj, name), text)})
        else:
            top[key] = text
    kwargs = {attr: sections[name] for name, (attr, _) in _SECTIONS.items()}
    for name, text in top.items():
        if not any(f.name == name for f in fields(PipelineConfig)):
            raise KeyError(f"unknown config key '{name}'")
        current = getattr(cfg, name)
        kwargs[name] = _parse_value(current, text)
    return replace(cfg, **kwargs)


def load_config(path, base=None):
    items = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ValueError(f"malformed config line: {line!r}")
            items.append((key.strip(), val.strip()))
    return config_from_items(items, base=base)


def save_config(path, cfg):
    with open(path, "w") as fh:
        for name, (attr, _) in _SECTIONS.items():
            obj = getattr(cfg, attr)
            for f in fields(obj):
                fh.write(f"{name}.{f.name} = {getattr(obj, f.name)}\n")
        for f in fields(PipelineConfig):
            if f.name in {attr for attr, _ in _SECTIONS.values()}:
                continue
            fh.write(f"pipeline.{f.name} = {getattr(cfg, f.name)}\n")
