"""Pre-encode analysis on downsampled frames: block cost estimation,
integer-pel motion search, slice typing, scene-cut detection, and GOP
segmentation.

All analysis runs on half-resolution frames with a fixed 16x16 block grid
(blocks are called MBs throughout). Frames whose downsampled luma is not a
multiple of 16 are padded by edge replication for analysis; padded samples
contribute to the statistics like real ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .video import Frame, VideoSequence, downsample_half

__all__ = [
    "MB_SIZE",
    "INTRA_PENALTY",
    "MbAnalysis",
    "FrameStats",
    "GopSpan",
    "ScenecutParams",
    "LookaheadParams",
    "sad",
    "satd",
    "motion_search",
    "intra_cost",
    "analyze_frame",
    "analyze_sequence",
    "detect_scenecut",
    "segment_gops",
    "frame_stats_record",
]

MB_SIZE = 16
# Flat-content floor on the intra estimate: 4 cost units per 64 samples.
INTRA_PENALTY = 4 * (MB_SIZE * MB_SIZE) // 64


@dataclass(frozen=True)
class MbAnalysis:
    """Per-block analysis result on the downsampled grid.

    ``mv`` is the displacement of content from the reference into the
    current frame: the block matches ``ref[y - mv_dy, x - mv_dx]``.
    For frames without a reference every block is intra and
    ``inter_cost``/``mv`` are zero.
    """

    mb_x: int
    mb_y: int
    intra_cost: int
    inter_cost: int
    mv: tuple[int, int]
    is_intra: bool


@dataclass(frozen=True)
class FrameStats:
    frame_index: int
    slice_type: str  # "I" or "P"
    intra_cost_total: int
    inter_cost_total: int
    intra_mb_count: int
    total_mb_count: int
    mb_list: tuple[MbAnalysis, ...]
    ac_energy_total: float


@dataclass(frozen=True)
class GopSpan:
    """Closed frame interval [start_frame, end_frame] opened by an I/IDR."""

    start_frame: int
    end_frame: int
    scenecut_triggered: bool

    @property
    def n_frames(self) -> int:
        return self.end_frame - self.start_frame + 1


@dataclass(frozen=True)
class ScenecutParams:
    base_bias: float = 0.4
    keyint_min: int = 40


@dataclass(frozen=True)
class LookaheadParams:
    """Analyzer knobs; defaults mirror the encoder configuration the
    toolkit is calibrated against."""

    rc_lookahead: int = 100
    keyint_min: int = 40
    keyint_max: int = 250
    scenecut_bias: float = 0.4
    search_range: int = 16

    def __post_init__(self):
        if not 0 < self.keyint_min <= self.keyint_max:
            raise ValueError("need 0 < keyint_min <= keyint_max")
        if self.search_range < 1:
            raise ValueError("search_range must be >= 1")
        if self.rc_lookahead < 1:
            raise ValueError("rc_lookahead must be >= 1")

    def scenecut(self) -> ScenecutParams:
        return ScenecutParams(base_bias=self.scenecut_bias,
                              keyint_min=self.keyint_min)


# ---------------------------------------------------------------------------
# Block costs


def sad(block_a: np.ndarray, block_b: np.ndarray) -> int:
    """Sum of absolute sample differences."""
    if block_a.shape != block_b.shape:
        raise ValueError(f"shape mismatch {block_a.shape} vs {block_b.shape}")
    return int(np.abs(block_a.astype(np.int32) - block_b.astype(np.int32)).sum())


def _butterfly_last(x: np.ndarray) -> np.ndarray:
    """Three decimation butterfly stages along the last axis (length 8)."""
    for _ in range(3):
        even = x[..., 0::2]
        odd = x[..., 1::2]
        y = np.empty_like(x)
        np.add(even, odd, out=y[..., :4])
        np.subtract(even, odd, out=y[..., 4:])
        x = y
    return x


def _hadamard_2d(sub: np.ndarray) -> np.ndarray:
    """2D 8x8 Hadamard of a (..., 8, 8) stack via row/column butterflies.

    Output coefficients are a fixed permutation of the textbook H.R.H'
    product, which leaves absolute sums unchanged.
    """
    x = _butterfly_last(sub)
    x = np.ascontiguousarray(np.swapaxes(x, -1, -2))
    x = _butterfly_last(x)
    return x


def _satd_batch(residuals: np.ndarray) -> np.ndarray:
    """SATD of a (k, 16, 16) int32 residual stack -> (k,) int64 costs."""
    k = residuals.shape[0]
    sub = np.ascontiguousarray(
        residuals.reshape(k, 2, 8, 2, 8).transpose(0, 1, 3, 2, 4), dtype=np.int32
    ).reshape(k, 4, 8, 8)
    coeffs = _hadamard_2d(sub)  # |coeff| <= 64 * 255, well inside int32
    return np.abs(coeffs).sum(axis=(1, 2, 3), dtype=np.int64) // 2


def satd(block_a: np.ndarray, block_b: np.ndarray) -> int:
    """Sum of absolute transformed differences over 8x8 Hadamard blocks.

    The residual is split into 8x8 sub-blocks, each transformed by the 8x8
    Hadamard; the absolute coefficient sum is halved (floor). Zero exactly
    when the blocks are identical.
    """
    if block_a.shape != block_b.shape:
        raise ValueError(f"shape mismatch {block_a.shape} vs {block_b.shape}")
    h, w = block_a.shape
    if h % 8 or w % 8:
        raise ValueError(f"block dimensions {w}x{h} not a multiple of 8")
    r = block_a.astype(np.int64) - block_b.astype(np.int64)
    sub = (
        r.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3).reshape(-1, 8, 8)
    )
    return int(np.abs(_hadamard_2d(sub)).sum() // 2)


# ---------------------------------------------------------------------------
# Motion search


def _mb_grid(h: int, w: int) -> tuple[int, int]:
    return (h + MB_SIZE - 1) // MB_SIZE, (w + MB_SIZE - 1) // MB_SIZE


def _pad_to_mb(y: np.ndarray) -> np.ndarray:
    h, w = y.shape
    gh, gw = _mb_grid(h, w)
    ph, pw = gh * MB_SIZE - h, gw * MB_SIZE - w
    if ph == 0 and pw == 0:
        return y
    return np.pad(y, ((0, ph), (0, pw)), mode="edge")


def _mv_key(cost: int, dx: int, dy: int) -> tuple:
    # Zero-biased deterministic ordering: cost, then radius, then dy, dx.
    return (cost, dx * dx + dy * dy, dy, dx)


_SEED_STEP = 2


def _pad_ref(ref_mb_aligned: np.ndarray, search_range: int) -> np.ndarray:
    """Edge-replicate the reference so every vector in +-range is usable
    by every block; vectors may point past the picture like they can in a
    real encoder's padded reference planes."""
    return np.pad(ref_mb_aligned, search_range, mode="edge")


def _seed_offsets(search_range: int) -> np.ndarray:
    """Window offsets of the seed grid, in raster order."""
    return np.arange(0, 2 * search_range + 1, _SEED_STEP)


def _pick_seed(costs: np.ndarray, search_range: int) -> tuple[tuple, tuple[int, int]]:
    """Best (key, mv) among seed-grid costs laid out in raster order."""
    offs = _seed_offsets(search_range)
    n_side = len(offs)
    dys = (search_range - offs).repeat(n_side)
    dxs = np.tile(search_range - offs, n_side)
    order = np.lexsort((dxs, dys, dxs * dxs + dys * dys, costs))
    idx = int(order[0])
    dx, dy = int(dxs[idx]), int(dys[idx])
    return _mv_key(int(costs[idx]), dx, dy), (dx, dy)


def _square_refine(block: np.ndarray, ref_padded: np.ndarray, ox: int, oy: int,
                   search_range: int, best_key: tuple,
                   best: tuple[int, int]) -> tuple[tuple[int, int], int]:
    """Iterated +-1 square descent from a seeded start."""
    r = search_range

    def ref_block(dx: int, dy: int) -> np.ndarray:
        # mv (dx, dy) reads the padded reference at (ox - dx, oy - dy).
        return ref_padded[
            oy - dy + r : oy - dy + r + MB_SIZE,
            ox - dx + r : ox - dx + r + MB_SIZE,
        ]

    while True:
        bx, by = best
        cands = [
            (bx + dx, by + dy)
            for dx in (-1, 0, 1)
            for dy in (-1, 0, 1)
            if (dx, dy) != (0, 0)
            and -r <= bx + dx <= r
            and -r <= by + dy <= r
        ]
        stack = np.stack([ref_block(dx, dy) for dx, dy in cands]).astype(np.int32)
        costs = _satd_batch(block[None, :, :] - stack)
        improved = False
        for (dx, dy), c in zip(cands, costs):
            k = _mv_key(int(c), dx, dy)
            if k < best_key:
                best_key, best, improved = k, (dx, dy), True
        if not improved:
            break
    return best, best_key[0]


def _search_luma(cur: np.ndarray, ref_padded: np.ndarray, ox: int, oy: int,
                 search_range: int) -> tuple[tuple[int, int], int]:
    """Seeded descent plus +-1 square refinement for one block.

    A step-2 grid over the full +-range window seeds the descent; a bare
    descent from (0, 0) gets trapped in local minima of the cost surface
    on textured content and misses the true shift. The seed grid always
    has a point within one pel of the optimum, so iterated square
    refinement finishes the job.
    """
    r = search_range
    block = cur[oy : oy + MB_SIZE, ox : ox + MB_SIZE].astype(np.int32)
    region = ref_padded[oy : oy + 2 * r + MB_SIZE, ox : ox + 2 * r + MB_SIZE]
    windows = np.lib.stride_tricks.sliding_window_view(
        region, (MB_SIZE, MB_SIZE)
    )[::_SEED_STEP, ::_SEED_STEP]
    stack = windows.reshape(-1, MB_SIZE, MB_SIZE).astype(np.int32)
    costs = _satd_batch(block[None, :, :] - stack)
    best_key, best = _pick_seed(costs, r)
    return _square_refine(block, ref_padded, ox, oy, r, best_key, best)


def motion_search(cur: Frame, ref: Frame, mb: tuple[int, int],
                  search_range: int = 16) -> tuple[tuple[int, int], int]:
    """Find the best integer-pel motion vector for one block.

    Returns ``((dx, dy), cost)`` where cost is the SATD against the
    motion-compensated reference block; the reference is edge-padded so
    any vector in the +-search_range window is valid. The result never
    costs more than the zero vector; ties break toward the shorter
    vector.
    """
    if cur.y.shape != ref.y.shape:
        raise ValueError("current and reference dimensions differ")
    if search_range < 1:
        raise ValueError("search_range must be >= 1")
    cy = _pad_to_mb(cur.y)
    ry = _pad_ref(_pad_to_mb(ref.y), search_range)
    gh, gw = _mb_grid(*cur.y.shape)
    mb_x, mb_y = mb
    if not (0 <= mb_x < gw and 0 <= mb_y < gh):
        raise ValueError(f"mb {mb} outside {gw}x{gh} grid")
    return _search_luma(cy, ry, mb_x * MB_SIZE, mb_y * MB_SIZE, search_range)


# ---------------------------------------------------------------------------
# Intra estimation


def _intra_cost_luma(y: np.ndarray, ox: int, oy: int) -> int:
    block = y[oy : oy + MB_SIZE, ox : ox + MB_SIZE].astype(np.int32)
    top = (
        y[oy - 1, ox : ox + MB_SIZE].astype(np.int32)
        if oy > 0
        else np.full(MB_SIZE, 128, dtype=np.int32)
    )
    left = (
        y[oy : oy + MB_SIZE, ox - 1].astype(np.int32)
        if ox > 0
        else np.full(MB_SIZE, 128, dtype=np.int32)
    )
    dc = (int(top.sum()) + int(left.sum()) + MB_SIZE) // (2 * MB_SIZE)
    preds = np.stack(
        [
            np.full((MB_SIZE, MB_SIZE), dc, dtype=np.int32),
            np.broadcast_to(top, (MB_SIZE, MB_SIZE)),
            np.broadcast_to(left[:, None], (MB_SIZE, MB_SIZE)),
        ]
    )
    costs = _satd_batch(block[None, :, :] - preds)
    return int(costs.min()) + INTRA_PENALTY


def intra_cost(frame: Frame, mb: tuple[int, int]) -> int:
    """Minimum SATD over DC/vertical/horizontal predictors built from the
    neighboring row and column (128 outside the picture), plus a fixed
    penalty."""
    y = _pad_to_mb(frame.y)
    gh, gw = _mb_grid(*frame.y.shape)
    mb_x, mb_y = mb
    if not (0 <= mb_x < gw and 0 <= mb_y < gh):
        raise ValueError(f"mb {mb} outside {gw}x{gh} grid")
    return _intra_cost_luma(y, mb_x * MB_SIZE, mb_y * MB_SIZE)


# ---------------------------------------------------------------------------
# Frame analysis


def _ac_energy(y_padded: np.ndarray) -> float:
    h, w = y_padded.shape
    blocks = (
        y_padded.astype(np.float64)
        .reshape(h // MB_SIZE, MB_SIZE, w // MB_SIZE, MB_SIZE)
        .transpose(0, 2, 1, 3)
    )
    means = blocks.mean(axis=(2, 3), keepdims=True)
    return float(((blocks - means) ** 2).sum())


def _frame_blocks(y_padded: np.ndarray, gh: int, gw: int) -> np.ndarray:
    return np.ascontiguousarray(
        y_padded.reshape(gh, MB_SIZE, gw, MB_SIZE).transpose(0, 2, 1, 3),
        dtype=np.int32,
    ).reshape(gh * gw, MB_SIZE, MB_SIZE)


def _intra_costs_frame(y: np.ndarray, blocks: np.ndarray, gh: int,
                       gw: int) -> np.ndarray:
    """All blocks' intra costs in one SATD batch; matches
    _intra_cost_luma block by block."""
    n = gh * gw
    top = np.empty((n, MB_SIZE), dtype=np.int32)
    left = np.empty((n, MB_SIZE), dtype=np.int32)
    for g in range(n):
        mb_y, mb_x = divmod(g, gw)
        ox, oy = mb_x * MB_SIZE, mb_y * MB_SIZE
        top[g] = y[oy - 1, ox : ox + MB_SIZE] if oy > 0 else 128
        left[g] = y[oy : oy + MB_SIZE, ox - 1] if ox > 0 else 128
    dc = (top.sum(axis=1) + left.sum(axis=1) + MB_SIZE) // (2 * MB_SIZE)
    preds = np.empty((n, 3, MB_SIZE, MB_SIZE), dtype=np.int32)
    preds[:, 0] = dc[:, None, None]
    preds[:, 1] = top[:, None, :]
    preds[:, 2] = left[:, :, None]
    residuals = blocks[:, None] - preds
    costs = _satd_batch(residuals.reshape(-1, MB_SIZE, MB_SIZE)).reshape(n, 3)
    return costs.min(axis=1) + INTRA_PENALTY


def _seed_costs_frame(blocks: np.ndarray, ref_padded: np.ndarray, gh: int,
                      gw: int, search_range: int) -> np.ndarray:
    """Seed-grid costs for every block, SATD batched -> (n, seeds).

    Blocks are processed in chunks to bound the gathered-window memory on
    large pictures.
    """
    n = gh * gw
    offs = _seed_offsets(search_range)
    k = len(offs) * len(offs)
    view = np.lib.stride_tricks.sliding_window_view(
        ref_padded, (MB_SIZE, MB_SIZE)
    )
    oys = (np.arange(n) // gw) * MB_SIZE
    oxs = (np.arange(n) % gw) * MB_SIZE
    out = np.empty((n, k), dtype=np.int64)
    chunk = max(1, (1 << 22) // (k * MB_SIZE * MB_SIZE * 4))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        rows = oys[lo:hi, None, None] + offs[None, :, None]
        cols = oxs[lo:hi, None, None] + offs[None, None, :]
        windows = view[rows, cols].astype(np.int32)
        residuals = blocks[lo:hi, None, None] - windows
        out[lo:hi] = _satd_batch(
            residuals.reshape(-1, MB_SIZE, MB_SIZE)
        ).reshape(hi - lo, k)
    return out


def analyze_frame(cur: Frame, ref: Frame | None,
                  search_range: int = 16) -> FrameStats:
    """Analyze one downsampled frame against its display-order predecessor.

    Intra costs are always computed; inter costs and motion only when a
    reference is given. Without a reference the frame is typed I and every
    block counts as intra.
    """
    if ref is not None and cur.y.shape != ref.y.shape:
        raise ValueError("current and reference dimensions differ")
    y = _pad_to_mb(cur.y)
    gh, gw = _mb_grid(*cur.y.shape)
    blocks = _frame_blocks(y, gh, gw)
    intra = _intra_costs_frame(y, blocks, gh, gw)

    if ref is None:
        mbs = tuple(
            MbAnalysis(g % gw, g // gw, int(intra[g]), 0, (0, 0), True)
            for g in range(gh * gw)
        )
        return FrameStats(
            frame_index=cur.index,
            slice_type="I",
            intra_cost_total=int(intra.sum()),
            inter_cost_total=0,
            intra_mb_count=gh * gw,
            total_mb_count=gh * gw,
            mb_list=mbs,
            ac_energy_total=_ac_energy(y),
        )

    ry = _pad_ref(_pad_to_mb(ref.y), search_range)
    seed_costs = _seed_costs_frame(blocks, ry, gh, gw, search_range)

    mbs_list: list[MbAnalysis] = []
    inter_total = 0
    intra_count = 0
    for g in range(gh * gw):
        mb_y, mb_x = divmod(g, gw)
        ox, oy = mb_x * MB_SIZE, mb_y * MB_SIZE
        key, seed = _pick_seed(seed_costs[g], search_range)
        mv, pc = _square_refine(blocks[g], ry, ox, oy, search_range, key, seed)
        ic = int(intra[g])
        is_intra = ic < pc  # ties go inter
        intra_count += is_intra
        inter_total += pc
        mbs_list.append(MbAnalysis(mb_x, mb_y, ic, pc, mv, is_intra))

    return FrameStats(
        frame_index=cur.index,
        slice_type="P",
        intra_cost_total=int(intra.sum()),
        inter_cost_total=inter_total,
        intra_mb_count=intra_count,
        total_mb_count=gh * gw,
        mb_list=tuple(mbs_list),
        ac_energy_total=_ac_energy(y),
    )


def analyze_sequence(video: VideoSequence,
                     params: LookaheadParams | None = None) -> list[FrameStats]:
    """Downsample and analyze every frame against its predecessor."""
    params = params or LookaheadParams()
    stats: list[FrameStats] = []
    prev: Frame | None = None
    for frame in video.frames:
        small = downsample_half(frame)
        stats.append(analyze_frame(small, prev, params.search_range))
        prev = small
    return stats


# ---------------------------------------------------------------------------
# Scene cuts and GOPs


def detect_scenecut(stats: FrameStats, frames_since_keyframe: int,
                    params: ScenecutParams | None = None) -> bool:
    """True when the frame predicts poorly enough from its reference to
    open a new scene: inter >= (1 - bias) * intra, with the bias scaled
    down close to the previous keyframe."""
    params = params or ScenecutParams()
    if stats.intra_cost_total <= 0:
        return False
    bias = params.base_bias * min(
        1.0, frames_since_keyframe / params.keyint_min
    )
    return stats.inter_cost_total >= (1.0 - bias) * stats.intra_cost_total


def segment_gops(all_stats: list[FrameStats], keyint_min: int,
                 keyint_max: int, scenecut_bias: float = 0.4) -> list[GopSpan]:
    """Partition the sequence into GOPs.

    An IDR lands on frame 0, on every scene cut at least ``keyint_min``
    frames after the previous IDR, and forcibly once a span would exceed
    ``keyint_max``. Only the final span may be shorter than keyint_min.
    """
    if not all_stats:
        raise ValueError("empty stats")
    if not 0 < keyint_min <= keyint_max:
        raise ValueError("need 0 < keyint_min <= keyint_max")
    sc = ScenecutParams(base_bias=scenecut_bias, keyint_min=keyint_min)

    spans: list[GopSpan] = []
    start = 0
    triggered = False
    for i in range(1, len(all_stats)):
        dist = i - start
        cut_here = dist >= keyint_min and detect_scenecut(all_stats[i], dist, sc)
        if cut_here or dist >= keyint_max:
            spans.append(GopSpan(start, i - 1, triggered))
            start, triggered = i, cut_here
    spans.append(GopSpan(start, len(all_stats) - 1, triggered))
    return spans


def frame_stats_record(stats: FrameStats) -> dict:
    """JSON-ready per-frame record for the debug stats dump."""
    p_mbs = [m for m in stats.mb_list if not m.is_intra]
    mean_mv = (
        float(np.mean([np.hypot(*m.mv) for m in p_mbs])) if p_mbs else 0.0
    )
    intra_pct = 100.0 * stats.intra_mb_count / stats.total_mb_count
    return {
        "frame_index": stats.frame_index,
        "slice_type": stats.slice_type,
        "intra_cost_total": stats.intra_cost_total,
        "inter_cost_total": stats.inter_cost_total,
        "intra_mb_pct": round(intra_pct, 3),
        "mean_abs_mv": round(mean_mv, 4),
        "ac_energy_total": round(stats.ac_energy_total, 2),
    }
