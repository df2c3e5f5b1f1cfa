"""Side-scan ping containers, the canonical transformation, geo-referencing,
validity masking and subframe division.

Image layout: one row per ping, ``2 * bins_per_side`` columns with the port
side reversed on the left and starboard on the right, so column order runs
port-far .. port-near | stbd-near .. stbd-far. In a canonical image every
column covers a fixed horizontal-range footprint.
"""

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .geometry import Pose3


@dataclass(frozen=True)
class Ping:
    """One acoustic cycle: dead-reckoning pose plus port/starboard intensities."""

    index: int
    time: float
    dr_pose: Pose3
    altitude: float
    port: np.ndarray
    stbd: np.ndarray
    slant_resolution: float

    def __post_init__(self):
        port = np.asarray(self.port, dtype=float)
        stbd = np.asarray(self.stbd, dtype=float)
        if self.altitude <= 0.0:
            raise ValueError("altitude must be positive")
        if port.shape != stbd.shape or port.ndim != 1:
            raise ValueError("port and starboard bin arrays must match")
        if not (np.all(np.isfinite(port)) and np.all(np.isfinite(stbd))):
            raise ValueError("intensities must be finite")
        if port.min(initial=0.0) < 0.0 or stbd.min(initial=0.0) < 0.0:
            raise ValueError("intensities must be non-negative")
        if self.slant_resolution <= 0.0:
            raise ValueError("slant_resolution must be positive")
        object.__setattr__(self, "port", port)
        object.__setattr__(self, "stbd", stbd)


@dataclass(frozen=True)
class SssImage:
    """Raster of sonar intensities for a block of consecutive pings.

    ``ping_range`` is the (first, last) global ping index covered, inclusive.
    ``ground_resolution`` is set once the image is canonical.
    """

    intensities: np.ndarray
    mask: np.ndarray
    ping_range: tuple
    canonical: bool = False
    ground_resolution: float | None = None

    def __post_init__(self):
        inten = np.asarray(self.intensities, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if inten.shape != mask.shape or inten.ndim != 2:
            raise ValueError("intensities and mask must be equal 2-D rasters")
        if self.canonical and self.ground_resolution is None:
            raise ValueError("canonical images carry a ground resolution")
        object.__setattr__(self, "intensities", inten)
        object.__setattr__(self, "mask", mask)

    @property
    def n_pings(self):
        return self.intensities.shape[0]

    @property
    def bins_per_side(self):
        return self.intensities.shape[1] // 2

    def row_of_ping(self, ping_index):
        return int(ping_index) - self.ping_range[0]

    def ping_of_row(self, row):
        return self.ping_range[0] + int(row)

    def column_ground_ranges(self):
        """Signed horizontal range of each column (port negative)."""
        if not self.canonical:
            raise ValueError("ground ranges are defined for canonical images")
        b = self.bins_per_side
        centers = (np.arange(b) + 0.5) * self.ground_resolution
        return np.concatenate([-centers[::-1], centers])


@dataclass(frozen=True)
class GeoImage:
    """Per-pixel (easting, northing) coordinates aligned with an SssImage."""

    coords: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim != 3 or coords.shape[2] != 2:
            raise ValueError("coords must have shape (pings, cols, 2)")
        object.__setattr__(self, "coords", coords)


@dataclass(frozen=True)
class Subframe:
    """A consecutive slice of an image; its centre ping is a pose-graph node."""

    row_range: tuple
    centre_ping: int
    centre_pose: Pose3

    @property
    def n_rows(self):
        return self.row_range[1] - self.row_range[0]


def image_from_pings(pings, first_index=None):
    """Assemble the raw (slant-range) raster for consecutive pings."""
    if len(pings) == 0:
        raise ValueError("no pings")
    b = len(pings[0].port)
    inten = np.empty((len(pings), 2 * b))
    for i, p in enumerate(pings):
        inten[i, :b] = p.port[::-1]
        inten[i, b:] = p.stbd
    first = pings[0].index if first_index is None else first_index
    last = first + len(pings) - 1
    mask = np.ones_like(inten, dtype=bool)
    return SssImage(inten, mask, (first, last), canonical=False)


def _column_slant_ranges(img, slant_resolution):
    b = img.bins_per_side
    centers = (np.arange(b) + 0.5) * slant_resolution
    return np.concatenate([centers[::-1], centers])


def correct_intensity(img, pings, saturation=6.0):
    """Flatten the range-dependent ensonification falloff.

    Under the flat-seafloor assumption the backscatter is proportional to
    cos^2 of the incidence angle, with cos = altitude / slant_range. Each
    intensity is divided by that factor, clipped at ``saturation`` and the
    image is rescaled to unit mean over usable pixels. Bins with slant range
    at or below the altitude have no seafloor return and are masked.
    """
    if img.canonical:
        raise ValueError("intensity correction applies to slant-range images")
    if len(pings) != img.n_pings:
        raise ValueError("one ping per image row required")
    slant = _column_slant_ranges(img, pings[0].slant_resolution)
    alts = np.array([p.altitude for p in pings])
    cos_inc = alts[:, None] / slant[None, :]
    usable = cos_inc < 1.0
    factor = np.zeros_like(cos_inc)
    factor[usable] = 1.0 / cos_inc[usable] ** 2
    out = np.minimum(img.intensities * factor, saturation)
    out[~usable] = 0.0
    mask = img.mask & usable
    mean = out[mask].mean() if mask.any() else 1.0
    if mean > 0.0:
        out = out / mean
    return replace(img, intensities=out, mask=mask)


def correct_slant_range(img, pings, reference_altitude=None):
    """Resample each row from slant range onto a uniform horizontal-range grid.

    The output grid spans ``[0, sqrt(max_range^2 - alt_ref^2)]`` per side with
    the same bin count as the input; every row is interpolated linearly using
    its own altitude, so a pixel column always covers the same horizontal
    range regardless of ping. Pixels that would need a slant range beyond the
    recorded swath are zero-filled and masked.
    """
    if img.canonical:
        raise ValueError("image is already canonical")
    if len(pings) != img.n_pings:
        raise ValueError("one ping per image row required")
    b = img.bins_per_side
    slant_res = pings[0].slant_resolution
    max_range = b * slant_res
    alts = np.array([p.altitude for p in pings])
    alt_ref = float(np.mean(alts)) if reference_altitude is None else float(reference_altitude)
    if alt_ref >= max_range:
        raise ValueError("altitude exceeds the swath; no horizontal extent")
    ground_max = np.sqrt(max_range**2 - alt_ref**2)
    ground_res = ground_max / b
    g = (np.arange(b) + 0.5) * ground_res

    out = np.zeros_like(img.intensities)
    mask = np.zeros_like(img.mask)
    # Fractional source bin per (ping, output bin); same for both sides.
    r = np.sqrt(g[None, :] ** 2 + alts[:, None] ** 2)
    frac = r / slant_res - 0.5
    lo = np.floor(frac).astype(int)
    w = frac - lo
    lo = np.clip(lo, 0, b - 1)
    hi = np.clip(lo + 1, 0, b - 1)
    valid = r < max_range

    rows = np.arange(img.n_pings)[:, None]
    for side, sgn in (("port", -1), ("stbd", 1)):
        if side == "port":
            src = img.intensities[:, :b][:, ::-1]
            src_ok = img.mask[:, :b][:, ::-1]
        else:
            src = img.intensities[:, b:]
            src_ok = img.mask[:, b:]
        vals = src[rows, lo] * (1.0 - w) + src[rows, hi] * w
        ok = valid & src_ok[rows, lo] & src_ok[rows, hi]
        vals[~ok] = 0.0
        if side == "port":
            out[:, :b] = vals[:, ::-1]
            mask[:, :b] = ok[:, ::-1]
        else:
            out[:, b:] = vals
            mask[:, b:] = ok
    return replace(
        img, intensities=out, mask=mask, canonical=True, ground_resolution=ground_res
    )


def canonicalize(img, pings, saturation=6.0, reference_altitude=None):
    """Full canonical transformation: intensity then slant-range correction.

    A no-op on an already-canonical image, which makes the transformation
    idempotent.
    """
    if img.canonical:
        return img
    corrected = correct_intensity(img, pings, saturation=saturation)
    return correct_slant_range(corrected, pings, reference_altitude=reference_altitude)


def georeference(img, pings):
    """Approximate global (easting, northing) of every canonical pixel.

    Each pixel is placed at its ping's position shifted by the column's
    horizontal range along the body starboard axis projected to the
    horizontal plane.
    """
    if not img.canonical:
        raise ValueError("geo-referencing requires a canonical image")
    if len(pings) != img.n_pings:
        raise ValueError("one ping per image row required")
    g = img.column_ground_ranges()
    coords = np.empty((img.n_pings, img.intensities.shape[1], 2))
    for i, p in enumerate(pings):
        stbd = p.dr_pose.rotation[:, 1]
        horiz = np.hypot(stbd[0], stbd[1])
        if horiz < 1e-9:
            raise ValueError("starboard axis is vertical; cannot geo-reference")
        north = stbd[0] / horiz
        east = stbd[1] / horiz
        pos = p.dr_pose.translation
        coords[i, :, 0] = pos[1] + g * east
        coords[i, :, 1] = pos[0] + g * north
    return GeoImage(coords)


def yaw_rates(pings):
    """Per-ping yaw rate (rad/s) via central differences on unwrapped yaw."""
    yaws = np.unwrap(np.array([p.dr_pose.yaw() for p in pings]))
    times = np.array([p.time for p in pings])
    rates = np.gradient(yaws, times)
    return rates


def build_mask(img, pings, nadir_margin_px=10, turn_rate_thresh=0.05):
    """Validity mask for matching: drops the nadir strip, turning pings and
    saturated or zero-filled pixels, on top of the resampling validity the
    image already carries."""
    if not img.canonical:
        raise ValueError("masking operates on canonical images")
    mask = img.mask.copy()
    b = img.bins_per_side
    lo = max(0, b - nadir_margin_px)
    hi = min(2 * b, b + nadir_margin_px)
    mask[:, lo:hi] = False
    rates = yaw_rates(pings)
    mask[np.abs(rates) > turn_rate_thresh, :] = False
    mask[img.intensities <= 0.0] = False
    sat = img.intensities >= img.intensities.max() - 1e-12
    # A saturation plateau shows up as many pixels pinned at the maximum.
    if np.count_nonzero(sat) > max(8, img.intensities.size // 10000):
        mask[sat] = False
    return mask


def split_subframes(img, pings, subframe_size=200):
    """Divide an image into consecutive subframes of ``subframe_size`` pings.

    A short final remainder is merged into the last subframe. The centre
    pose is the centre ping's dead-reckoning pose until optimization
    replaces it.
    """
    n = img.n_pings
    if subframe_size < 1:
        raise ValueError("subframe_size must be positive")
    if n < subframe_size:
        warnings.warn(
            f"image has {n} pings, shorter than one subframe ({subframe_size}); "
            "emitting a single subframe",
            stacklevel=2,
        )
        bounds = [(0, n)]
    else:
        n_full = n // subframe_size
        bounds = [(i * subframe_size, (i + 1) * subframe_size) for i in range(n_full)]
        bounds[-1] = (bounds[-1][0], n)
    out = []
    for lo, hi in bounds:
        centre_row = lo + (hi - lo) // 2
        out.append(
            Subframe(
                row_range=(lo, hi),
                centre_ping=img.ping_of_row(centre_row),
                centre_pose=pings[centre_row].dr_pose,
            )
        )
    return out
