"""Nearest-neighbor-field estimation between overlapping canonical images.

The field is initialized geometrically (kd-tree over geo-referenced pixels),
then refined by alternating rounds of per-pixel random search and offset
propagation scored with the ZNCC patch distance. Offsets are integer pixel
vectors; patch distances live in [0, 2] with +inf marking unevaluated or
unusable pixels.

Propagation is sequential by design. Each pass sweeps rows in scan order
(top-left to bottom-right, then reversed on the next pass): a row first
adopts improving offsets from the already-updated adjacent row, the not yet
updated one and its trailing same-row neighbor, then a chain sweep carries
offsets along the row in the scan direction. The schedule is deterministic,
and patch distances never increase.
"""

from dataclasses import dataclass

import numpy as np

from .kdtree import KdTree2
from .seeding import stream

_TAG_SEARCH = 211
_VAR_FLOOR = 1e-16


@dataclass(frozen=True)
class MatchParams:
    """Dense matching knobs.

    ``init_gate_px`` bounds how far (in pixels) a pixel's geometric nearest
    neighbor may be before the pixel is excluded from matching; anything
    beyond the reach of random search plus propagation cannot converge and
    only wastes score evaluations.
    """

    patch_size: int = 13
    max_iters: int = 10
    max_offset: int = 5
    kd_leaf: int = 16
    init_gate_px: float = 60.0

    def __post_init__(self):
        if self.patch_size < 3 or self.patch_size % 2 == 0:
            raise ValueError("patch_size must be odd and >= 3")
        if self.max_offset < 1:
            raise ValueError("max_offset must be >= 1")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")


@dataclass
class Nnf:
    """Offset field A -> B with per-pixel patch distances.

    ``active`` marks pixels that participate in matching (unmasked and with
    a plausible geometric initialization).
    """

    offsets: np.ndarray  # (H, W, 2) int32, (drow, dcol)
    distances: np.ndarray  # (H, W) float64 in [0, 2] or +inf
    active: np.ndarray  # (H, W) bool

    def copy(self):
        return Nnf(self.offsets.copy(), self.distances.copy(), self.active.copy())

    @property
    def is_empty(self):
        return not bool(self.active.any())

    def matched(self, max_distance=np.inf):
        return self.active & (self.distances <= max_distance)


@dataclass(frozen=True)
class Correspondence:
    a_pixel: tuple
    b_pixel: tuple
    distance: float


@dataclass
class CorrespondenceSet:
    """Column-array container for pixel correspondences of one image pair."""

    a_rows: np.ndarray
    a_cols: np.ndarray
    b_rows: np.ndarray
    b_cols: np.ndarray
    distances: np.ndarray

    def __len__(self):
        return self.a_rows.size

    def __getitem__(self, k):
        return Correspondence(
            (int(self.a_rows[k]), int(self.a_cols[k])),
            (int(self.b_rows[k]), int(self.b_cols[k])),
            float(self.distances[k]),
        )

    def subset(self, idx):
        return CorrespondenceSet(
            self.a_rows[idx],
            self.a_cols[idx],
            self.b_rows[idx],
            self.b_cols[idx],
            self.distances[idx],
        )


def zncc_distance(patch_a, patch_b):
    """1 - ZNCC of two equal-size patches, in [0, 2].

    Zero iff the patches agree up to a positive affine intensity map;
    +inf when either patch has (near) zero variance and carries no
    information.
    """
    a = np.asarray(patch_a, dtype=float)
    b = np.asarray(patch_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("patches must have identical shapes")
    da = a - a.mean()
    db = b - b.mean()
    va = float(np.mean(da * da))
    vb = float(np.mean(db * db))
    if va <= _VAR_FLOOR or vb <= _VAR_FLOOR:
        return np.inf
    z = float(np.mean(da * db)) / np.sqrt(va * vb)
    return float(np.clip(1.0 - z, 0.0, 2.0))


def _box_sum(arr, half):
    """Windowed sum with a (2*half+1)^2 box; defined on the interior only."""
    h, w = arr.shape
    p = 2 * half + 1
    c = np.zeros((h + 1, w + 1))
    np.cumsum(arr, axis=0, out=c[1:, 1:])
    np.cumsum(c[1:, 1:], axis=1, out=c[1:, 1:])
    out = np.zeros_like(arr)
    if h >= p and w >= p:
        out[half : h - half, half : w - half] = (
            c[p:, p:] - c[:-p, p:] - c[p:, :-p] + c[:-p, :-p]
        )
    return out


class _PatchStats:
    """Per-image precomputation for fast ZNCC scoring.

    Masked pixels are zeroed before any sums, so their stored values can
    never leak into a score; patches touching them are invalid anyway.
    """

    def __init__(self, image, mask, patch_size):
        vals = np.where(mask, np.asarray(image, dtype=float), 0.0)
        half = patch_size // 2
        n = patch_size * patch_size
        h, w = vals.shape
        s1 = _box_sum(vals, half)
        s2 = _box_sum(vals * vals, half)
        cnt = _box_sum(mask.astype(float), half)
        interior = np.zeros((h, w), dtype=bool)
        if h >= patch_size and w >= patch_size:
            interior[half : h - half, half : w - half] = True
        mean = s1 / n
        var = np.maximum(s2 / n - mean * mean, 0.0)
        ok = interior & (cnt >= n - 0.5) & (var > _VAR_FLOOR) & mask
        inv_rn_sigma = np.zeros((h, w))
        good = var > _VAR_FLOOR
        inv_rn_sigma[good] = 1.0 / (np.sqrt(float(n)) * np.sqrt(var[good]))
        self.vals = vals
        self.ok = ok
        self.mean = mean
        self.inv_rn_sigma = inv_rn_sigma
        self.half = half
        self.patch_size = patch_size
        self.n = n
        if h >= patch_size and w >= patch_size:
            self._windows = np.lib.stride_tricks.sliding_window_view(
                vals, (patch_size, patch_size)
            )
        else:
            self._windows = None

    def gather(self, rows, cols):
        """Patch stacks (m, p, p) for interior pixel centers."""
        return self._windows[rows - self.half, cols - self.half]


def _eval_offsets(sa, sb, ar, ac, br, bc):
    """ZNCC distances for (a -> b) pixel pairs; +inf where not scorable."""
    m = ar.size
    out = np.full(m, np.inf)
    if m == 0:
        return out
    hb, wb = sb.vals.shape
    inb = (br >= 0) & (br < hb) & (bc >= 0) & (bc < wb)
    brc = np.where(inb, br, 0)
    bcc = np.where(inb, bc, 0)
    ok = sa.ok[ar, ac] & inb & sb.ok[brc, bcc]
    if not ok.any():
        return out
    ari, aci = ar[ok], ac[ok]
    bri, bci = br[ok], bc[ok]
    pa = sa.gather(ari, aci)
    pb = sb.gather(bri, bci)
    cross = np.einsum("ijk,ijk->i", pa, pb)
    zncc = (cross - sa.n * sa.mean[ari, aci] * sb.mean[bri, bci]) * (
        sa.inv_rn_sigma[ari, aci] * sb.inv_rn_sigma[bri, bci]
    )
    out[ok] = np.clip(1.0 - zncc, 0.0, 2.0)
    return out


def _eval_one(sa, sb, i, j, bi, bj):
    hb, wb = sb.vals.shape
    if bi < 0 or bi >= hb or bj < 0 or bj >= wb:
        return np.inf
    if not (sa.ok[i, j] and sb.ok[bi, bj]):
        return np.inf
    h = sa.half
    pa = sa.vals[i - h : i + h + 1, j - h : j + h + 1].ravel()
    pb = sb.vals[bi - h : bi + h + 1, bj - h : bj + h + 1].ravel()
    cross = float(pa @ pb)
    zncc = (cross - sa.n * sa.mean[i, j] * sb.mean[bi, bj]) * (
        sa.inv_rn_sigma[i, j] * sb.inv_rn_sigma[bi, bj]
    )
    return min(max(1.0 - zncc, 0.0), 2.0)


def _lazy_eval_current(sa, sb, offsets, distances, active, slab=16):
    """Score the current offsets wherever the distance is still +inf."""
    h, w = distances.shape
    for r0 in range(0, h, slab):
        r1 = min(r0 + slab, h)
        block = active[r0:r1] & ~np.isfinite(distances[r0:r1])
        if not block.any():
            continue
        rr, cc = np.nonzero(block)
        rr = rr + r0
        off = offsets[rr, cc]
        d = _eval_offsets(sa, sb, rr, cc, rr + off[:, 0], cc + off[:, 1])
        distances[rr, cc] = np.minimum(distances[rr, cc], d)


def initialize(geo_a, geo_b, mask_a, mask_b, params, pixel_size, leafsize=None):
    """Geometric initialization: each unmasked pixel of A points at the
    geo-nearest unmasked pixel of B; all distances start at +inf.

    Pixels whose nearest geometric neighbor is farther than the
    participation gate are left inactive. Returns an empty field when either
    mask has no usable pixels.
    """
    coords_a = np.asarray(geo_a, dtype=float)
    coords_b = np.asarray(geo_b, dtype=float)
    h, w = mask_a.shape
    offsets = np.zeros((h, w, 2), dtype=np.int32)
    distances = np.full((h, w), np.inf)
    active = np.zeros((h, w), dtype=bool)
    if not mask_a.any() or not mask_b.any():
        return Nnf(offsets, distances, active)
    bi, bj = np.nonzero(mask_b)
    tree = KdTree2(
        coords_b[bi, bj],
        payloads=bi.astype(np.int64) * mask_b.shape[1] + bj,
        leafsize=leafsize or params.kd_leaf,
    )
    ai, aj = np.nonzero(mask_a)
    payload, dist = tree.nearest_batch(coords_a[ai, aj])
    nr = (payload // mask_b.shape[1]).astype(np.int32)
    nc = (payload % mask_b.shape[1]).astype(np.int32)
    offsets[ai, aj, 0] = nr - ai
    offsets[ai, aj, 1] = nc - aj
    gate = params.init_gate_px * float(pixel_size)
    active[ai, aj] = dist <= gate
    return Nnf(offsets, distances, active)


def random_search(
    nnf, img_a, img_b, params, mask_a=None, mask_b=None, seed=0, round_index=0,
    _stats=None, _touched=None,
):
    """One round of per-pixel random candidates within the max-offset box.

    Each active pixel draws one uniform candidate around its current offset
    and keeps it only when the patch distance strictly improves. Rows use
    independent seeded streams, so the result does not depend on evaluation
    order.
    """
    sa, sb = _stats if _stats is not None else _make_stats(img_a, img_b, mask_a, mask_b, params)
    out = nnf.copy()
    off, dist, active = out.offsets, out.distances, out.active
    _lazy_eval_current(sa, sb, off, dist, active)
    h, w = dist.shape
    o = params.max_offset

    def flush(buf):
        if not buf:
            return
        rr = np.concatenate([b[0] for b in buf])
        cc = np.concatenate([b[1] for b in buf])
        cand = np.concatenate([b[2] for b in buf])
        d = _eval_offsets(sa, sb, rr, cc, rr + cand[:, 0], cc + cand[:, 1])
        better = d < dist[rr, cc]
        if better.any():
            off[rr[better], cc[better]] = cand[better]
            dist[rr[better], cc[better]] = d[better]
            if _touched is not None:
                _touched[rr[better], cc[better]] = True

    # Candidates are independent across pixels within a round, so rows are
    # buffered and scored in blocks; per-row streams keep the draw identical
    # to a row-parallel schedule.
    buf = []
    pending = 0
    for i in range(h):
        rng = stream(seed, _TAG_SEARCH, round_index, i)
        deltas = rng.integers(-o, o + 1, size=(w, 2)).astype(np.int32)
        # A strictly smaller distance cannot exist below 0, so zeros are final.
        act = active[i] & sa.ok[i] & (dist[i] > 0.0)
        act &= (deltas[:, 0] != 0) | (deltas[:, 1] != 0)
        if act.any():
            cols = np.nonzero(act)[0]
            buf.append((np.full(cols.size, i), cols, off[i, cols] + deltas[cols]))
            pending += cols.size
        if pending >= 24 * w:
            flush(buf)
            buf = []
            pending = 0
    flush(buf)
    return out


def _dilate8(mask):
    out = mask.copy()
    out[1:] |= mask[:-1]
    out[:-1] |= mask[1:]
    out[:, 1:] |= out[:, :-1].copy()
    out[:, :-1] |= out[:, 1:].copy()
    return out


def propagate(
    nnf,
    img_a,
    img_b,
    params,
    mask_a=None,
    mask_b=None,
    reverse=False,
    _stats=None,
    _front=None,
    _touched=None,
):
    """One propagation pass: pixels adopt whichever neighboring offset in the
    3x3 window scores best at their own location. Scan order follows
    ``reverse``; distances never increase.

    ``_front`` optionally restricts scoring to pixels whose neighborhood
    changed since the previous pass; re-scoring an unchanged candidate
    against an unchanged pixel cannot adopt, so the restriction is exact.
    Improving pixels are recorded in ``_touched`` when given.
    """
    sa, sb = _stats if _stats is not None else _make_stats(img_a, img_b, mask_a, mask_b, params)
    out = nnf.copy()
    off, dist, active = out.offsets, out.distances, out.active
    _lazy_eval_current(sa, sb, off, dist, active)
    h, w = dist.shape
    if not reverse:
        rows_iter = range(h)
        block_shifts = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, -1), (1, 0), (1, 1)]
        chain_step = 1
    else:
        rows_iter = range(h - 1, -1, -1)
        block_shifts = [(1, 1), (1, 0), (1, -1), (0, -1), (-1, 1), (-1, 0), (-1, -1)]
        chain_step = -1

    for i in rows_iter:
        act_row = active[i] & sa.ok[i] & (dist[i] > 0.0)
        if not act_row.any():
            continue
        stage_row = act_row if _front is None else act_row & _front[i]
        cols_all = np.nonzero(stage_row)[0]
        dst_list = []
        cand_list = []
        for di, dj in block_shifts:
            ni = i + di
            if ni < 0 or ni >= h:
                continue
            cj = cols_all + dj
            sel = (cj >= 0) & (cj < w)
            dst = cols_all[sel]
            cand = off[ni, cj[sel]]
            cur = off[i, dst]
            differs = (cand[:, 0] != cur[:, 0]) | (cand[:, 1] != cur[:, 1])
            if differs.any():
                dst_list.append(dst[differs])
                cand_list.append(cand[differs])
        if dst_list:
            dst = np.concatenate(dst_list)
            cand = np.concatenate(cand_list)
            d = _eval_offsets(
                sa, sb, np.full(dst.size, i), dst, i + cand[:, 0], dst + cand[:, 1]
            )
            # Per-pixel minimum over the window, earliest candidate wins ties
            # (identical to scoring the shifts one by one with strict <).
            sidx = np.lexsort((np.arange(dst.size), dst))
            ds_sorted = dst[sidx]
            d_sorted = d[sidx]
            starts = np.flatnonzero(np.diff(ds_sorted, prepend=-1))
            gmin = np.minimum.reduceat(d_sorted, starts)
            counts = np.diff(np.append(starts, ds_sorted.size))
            gmin_rep = np.repeat(gmin, counts)
            pos = np.arange(ds_sorted.size)
            pos_masked = np.where(d_sorted <= gmin_rep, pos, ds_sorted.size)
            first = np.minimum.reduceat(pos_masked, starts)
            pix = ds_sorted[starts]
            better = gmin < dist[i, pix]
            if better.any():
                pick = pix[better]
                chosen = sidx[first[better]]
                off[i, pick] = cand[chosen]
                dist[i, pick] = d[chosen]
                if _touched is not None:
                    _touched[i, pick] = True
        # Chain sweep along the scan direction: only offset boundaries can
        # adopt, and each adoption may extend the run by one pixel.
        row_off = off[i]
        boundary = np.zeros(w, dtype=bool)
        if chain_step == 1:
            boundary[1:] = (row_off[1:, 0] != row_off[:-1, 0]) | (
                row_off[1:, 1] != row_off[:-1, 1]
            )
        else:
            boundary[:-1] = (row_off[:-1, 0] != row_off[1:, 0]) | (
                row_off[:-1, 1] != row_off[1:, 1]
            )
        boundary &= act_row
        pending = np.nonzero(boundary)[0]
        if chain_step == -1:
            pending = pending[::-1]
        idx = 0
        extra = -1
        n_pending = pending.size
        while idx < n_pending or extra >= 0:
            if extra >= 0:
                j = extra
                extra = -1
            else:
                j = int(pending[idx])
                idx += 1
            pj = j - chain_step
            if pj < 0 or pj >= w or dist[i, j] <= 0.0:
                continue
            ci, cjj = int(off[i, pj, 0]), int(off[i, pj, 1])
            if ci == off[i, j, 0] and cjj == off[i, j, 1]:
                continue
            d = _eval_one(sa, sb, i, j, i + ci, j + cjj)
            if d < dist[i, j]:
                off[i, j, 0] = ci
                off[i, j, 1] = cjj
                dist[i, j] = d
                if _touched is not None:
                    _touched[i, j] = True
                nxt = j + chain_step
                if 0 <= nxt < w and act_row[nxt]:
                    if idx >= n_pending or int(pending[idx]) != nxt:
                        extra = nxt
    return out


def _make_stats(img_a, img_b, mask_a, mask_b, params):
    if mask_a is None:
        mask_a = np.ones_like(np.asarray(img_a, dtype=float), dtype=bool)
    if mask_b is None:
        mask_b = np.ones_like(np.asarray(img_b, dtype=float), dtype=bool)
    return (
        _PatchStats(img_a, mask_a, params.patch_size),
        _PatchStats(img_b, mask_b, params.patch_size),
    )


def match(img_a, img_b, geo_a, geo_b, mask_a, mask_b, params, pixel_size, seed=0,
          init_nnf=None):
    """Full dense matching: geometric initialization then ``max_iters``
    rounds of random search plus propagation with alternating scan order.

    Deterministic for a fixed seed. Returns an empty field when the images
    share no usable overlap. ``init_nnf`` reuses an initialization computed
    by the caller (e.g. to score it separately).
    """
    nnf = init_nnf if init_nnf is not None else initialize(
        geo_a, geo_b, mask_a, mask_b, params, pixel_size
    )
    if nnf.is_empty:
        return nnf
    stats = _make_stats(img_a, img_b, mask_a, mask_b, params)
    front = None
    for rnd in range(params.max_iters):
        touched = np.zeros_like(nnf.active)
        nnf = random_search(
            nnf, img_a, img_b, params, seed=seed, round_index=rnd,
            _stats=stats, _touched=touched,
        )
        if front is not None:
            front = _dilate8(front | touched)
        nnf = propagate(
            nnf, img_a, img_b, params, reverse=bool(rnd % 2),
            _stats=stats, _front=front, _touched=touched,
        )
        front = touched
    return nnf


def extract_correspondences(nnf, stride=4, max_distance=0.5):
    """Matched pixels on a stride grid with distance below the cutoff."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    h, w = nnf.distances.shape
    grid = np.zeros((h, w), dtype=bool)
    grid[::stride, ::stride] = True
    sel = grid & nnf.matched(max_distance)
    ar, ac = np.nonzero(sel)
    off = nnf.offsets[ar, ac]
    return CorrespondenceSet(
        a_rows=ar.astype(np.int64),
        a_cols=ac.astype(np.int64),
        b_rows=(ar + off[:, 0]).astype(np.int64),
        b_cols=(ac + off[:, 1]).astype(np.int64),
        distances=nnf.distances[ar, ac].copy(),
    )
