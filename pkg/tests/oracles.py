"""Independent reference implementations the tests check the package
against. Everything here is deliberately brute force and shares no code
with the package internals."""

import numpy as np


def sylvester_hadamard(n: int) -> np.ndarray:
    h = np.array([[1]], dtype=np.int64)
    while h.shape[0] < n:
        h = np.block([[h, h], [h, -h]])
    return h


_H8 = sylvester_hadamard(8)


def satd_reference(block_a: np.ndarray, block_b: np.ndarray) -> int:
    """SATD via explicit H . R . H^T matrix products per 8x8 sub-block."""
    r = block_a.astype(np.int64) - block_b.astype(np.int64)
    total = 0
    for by in range(0, r.shape[0], 8):
        for bx in range(0, r.shape[1], 8):
            sub = r[by : by + 8, bx : bx + 8]
            total += int(np.abs(_H8 @ sub @ _H8.T).sum())
    return total // 2


def sad_reference(block_a: np.ndarray, block_b: np.ndarray) -> int:
    total = 0
    for y in range(block_a.shape[0]):
        for x in range(block_a.shape[1]):
            total += abs(int(block_a[y, x]) - int(block_b[y, x]))
    return total


def downsample_reference(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    out = np.zeros((h // 2, w // 2), dtype=np.uint8)
    for y in range(h // 2):
        for x in range(w // 2):
            s = (
                int(plane[2 * y, 2 * x])
                + int(plane[2 * y, 2 * x + 1])
                + int(plane[2 * y + 1, 2 * x])
                + int(plane[2 * y + 1, 2 * x + 1])
            )
            out[y, x] = (s + 2) // 4
    return out


def exhaustive_motion_search(cur_y: np.ndarray, ref_y: np.ndarray,
                             mb: tuple[int, int], search_range: int,
                             mb_size: int = 16):
    """Full scan of the +-range window against an edge-padded reference,
    with the zero-biased (cost, radius, dy, dx) ordering."""
    r = search_range
    ref_padded = np.pad(ref_y, r, mode="edge")
    ox, oy = mb[0] * mb_size, mb[1] * mb_size
    block = cur_y[oy : oy + mb_size, ox : ox + mb_size]
    best_key = None
    best = None
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            cand = ref_padded[
                oy - dy + r : oy - dy + r + mb_size,
                ox - dx + r : ox - dx + r + mb_size,
            ]
            cost = satd_reference(block, cand)
            key = (cost, dx * dx + dy * dy, dy, dx)
            if best_key is None or key < best_key:
                best_key, best = key, (dx, dy)
    return best, best_key[0]


def intra_cost_reference(y: np.ndarray, mb: tuple[int, int],
                         penalty: int = 16, mb_size: int = 16) -> int:
    """Evaluate the DC/V/H predictors by hand and take the best."""
    ox, oy = mb[0] * mb_size, mb[1] * mb_size
    block = y[oy : oy + mb_size, ox : ox + mb_size].astype(np.int64)
    top = (
        y[oy - 1, ox : ox + mb_size].astype(np.int64)
        if oy > 0
        else np.full(mb_size, 128, dtype=np.int64)
    )
    left = (
        y[oy : oy + mb_size, ox - 1].astype(np.int64)
        if ox > 0
        else np.full(mb_size, 128, dtype=np.int64)
    )
    dc_value = (int(top.sum()) + int(left.sum()) + mb_size) // (2 * mb_size)
    preds = [
        np.full((mb_size, mb_size), dc_value, dtype=np.int64),
        np.tile(top, (mb_size, 1)),
        np.tile(left[:, None], (1, mb_size)),
    ]
    return min(satd_reference(block, p) for p in preds) + penalty


def ols_solution(A: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Unconstrained least squares via the normal equations."""
    return np.linalg.solve(A.T @ A, A.T @ y)


def nnls_enumeration(A: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Global NNLS optimum by brute force over all 2^n support sets."""
    m, n = A.shape
    best_x = np.zeros(n)
    best_res = float(np.sum(y * y))
    for mask in range(1, 1 << n):
        support = [j for j in range(n) if mask & (1 << j)]
        sub = A[:, support]
        sol, *_ = np.linalg.lstsq(sub, y, rcond=None)
        if np.any(sol < 0):
            continue
        x = np.zeros(n)
        x[support] = sol
        res = float(np.sum((A @ x - y) ** 2))
        if res < best_res - 1e-15:
            best_res = res
            best_x = x
    return best_x


def central_difference(fn, value: float, h: float = 1e-5) -> float:
    return (fn(value + h) - fn(value - h)) / (2.0 * h)


def welford_cv(series) -> float:
    """Two-pass population std over mean."""
    n = len(series)
    mean = sum(series) / n
    var = sum((v - mean) ** 2 for v in series) / n
    return (var**0.5) / mean


def bd_rate_trapezoid(anchor_points, test_points, n: int = 10_000) -> float:
    """Same cubic fits, but numeric integration on a dense grid."""
    a_q = np.array([p.quality for p in anchor_points])
    a_r = np.log10([p.bitrate for p in anchor_points])
    t_q = np.array([p.quality for p in test_points])
    t_r = np.log10([p.bitrate for p in test_points])
    lo = max(a_q.min(), t_q.min())
    hi = min(a_q.max(), t_q.max())
    qs = np.linspace(lo, hi, n)
    v_a = np.polyval(np.polyfit(a_q, a_r, 3), qs)
    v_t = np.polyval(np.polyfit(t_q, t_r, 3), qs)
    avg = np.trapz(v_t - v_a, qs) / (hi - lo)
    return float((10.0**avg - 1.0) * 100.0)


def curve_value(a: float, b: float, c: float, bitrate: float) -> float:
    x = np.log(bitrate)
    return a * x * x + b * x + c
