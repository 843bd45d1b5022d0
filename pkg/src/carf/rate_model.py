"""The quadratic CRF-bitrate model and its non-negative least-squares fit.

A GOP's CRF for a bitrate R (kbps) is modeled as

    crf(R) = a * ln(R)^2 + b * ln(R) + c        with a >= 0, b <= 0.

The sign convention comes from the fitting basis [ln(R)^2, -ln(R), 1]: a
plain nonnegative fit would force the linear term upward, contradicting
the fact that CRF falls as bitrate rises.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import CarfError

__all__ = [
    "CRF_MIN",
    "CRF_MAX",
    "RateModelParams",
    "RateObservation",
    "RateModelFit",
    "eval_crf_curve",
    "crf_for_bitrate",
    "solve_bitrate_for_crf",
    "NnlsConvergenceError",
    "nnls",
    "fit_rate_model",
]

CRF_MIN = 0.0
CRF_MAX = 51.0


class NnlsConvergenceError(CarfError):
    """The active-set iteration exceeded its budget."""


@dataclass(frozen=True)
class RateModelParams:
    """Coefficients of the CRF-bitrate curve; R is in kbps, logs natural."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.a, self.b, self.c)):
            raise ValueError("coefficients must be finite")
        if self.a < 0:
            raise ValueError(f"a must be >= 0, got {self.a}")
        if self.b > 0:
            raise ValueError(f"b must be <= 0, got {self.b}")

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "c": self.c, "unit": "kbps/ln"}


@dataclass(frozen=True)
class RateObservation:
    """One measured (crf, bitrate) point from an encode."""

    crf: float
    bitrate: float

    def __post_init__(self):
        if self.bitrate <= 0:
            raise ValueError(f"bitrate must be positive, got {self.bitrate}")
        if not CRF_MIN <= self.crf <= CRF_MAX:
            raise ValueError(f"crf {self.crf} outside [{CRF_MIN}, {CRF_MAX}]")


@dataclass(frozen=True)
class RateModelFit:
    params: RateModelParams
    residual_rms: float


def eval_crf_curve(params: RateModelParams, bitrate_kbps: float) -> float:
    """Raw curve value, no clamping or quantization."""
    if bitrate_kbps <= 0:
        raise ValueError(f"bitrate must be positive, got {bitrate_kbps}")
    x = math.log(bitrate_kbps)
    return params.a * x * x + params.b * x + params.c


def crf_for_bitrate(params: RateModelParams, bitrate_kbps: float) -> float:
    """CRF to use for a target bitrate: curve value held at the curve
    minimum past its turning point, clamped to [0, 51], 0.1 steps."""
    if bitrate_kbps <= 0:
        raise ValueError(f"bitrate must be positive, got {bitrate_kbps}")
    x = math.log(bitrate_kbps)
    if params.a > 0:
        x = min(x, -params.b / (2.0 * params.a))  # stay on the falling branch
    value = params.a * x * x + params.b * x + params.c
    value = min(max(value, CRF_MIN), CRF_MAX)
    return math.floor(value * 10.0 + 0.5) / 10.0


def solve_bitrate_for_crf(params: RateModelParams, crf: float) -> float:
    """Invert the curve on its falling branch: the bitrate producing ``crf``.

    CRF values below the curve minimum saturate to the bitrate at the
    minimum (the model cannot spend more than its turning point).
    """
    a, b, c = params.a, params.b, params.c
    if a == 0.0:
        if b == 0.0:
            raise ValueError("constant model cannot be inverted for bitrate")
        x = (crf - c) / b
    else:
        disc = b * b - 4.0 * a * (c - crf)
        if disc <= 0.0:
            x = -b / (2.0 * a)
        else:
            x = (-b - math.sqrt(disc)) / (2.0 * a)
    if x > 60.0:
        raise ValueError(f"bitrate overflow inverting crf {crf}")
    return math.exp(x)


# ---------------------------------------------------------------------------
# Non-negative least squares


def nnls(A: np.ndarray, y: np.ndarray, tol: float = 1e-10,
         max_iter: int | None = None) -> np.ndarray:
    """Minimize ||A x - y||_2 subject to x >= 0 (active-set iteration).

    Parameters
    ----------
    A : (m, n) array with m >= n, finite entries.
    y : (m,) target vector.
    tol : dual-feasibility tolerance on the gradient A'(y - Ax).
    max_iter : anti-cycling bound on inner correction steps
        (default ``3 * n``).

    Raises
    ------
    NnlsConvergenceError
        If the iteration budget is exhausted before the KKT conditions
        hold; never silently returns a non-optimal point.
    """
    A = np.asarray(A, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if A.ndim != 2 or y.ndim != 1 or A.shape[0] != y.shape[0]:
        raise ValueError(f"incompatible shapes {A.shape} and {y.shape}")
    m, n = A.shape
    if m < n:
        raise ValueError(f"underdetermined system {m}x{n}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite entries in the system")
    if max_iter is None:
        max_iter = 3 * n

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    w = A.T @ (y - A @ x)
    inner = 0
    outer = 0
    while not passive.all() and np.max(w[~passive]) > tol:
        outer += 1
        if outer > 10 * n:
            raise NnlsConvergenceError(
                f"no convergence after {outer} active-set changes"
            )
        masked = np.where(passive, -np.inf, w)
        passive[int(np.argmax(masked))] = True
        while True:
            s = np.zeros(n)
            s[passive] = np.linalg.lstsq(A[:, passive], y, rcond=None)[0]
            if s[passive].min() > 0:
                break
            inner += 1
            if inner > max_iter:
                raise NnlsConvergenceError(
                    f"no convergence after {inner} correction steps"
                )
            neg = passive & (s <= 0)
            alpha = np.min(x[neg] / (x[neg] - s[neg]))
            x = x + alpha * (s - x)
            passive &= x > tol
        x = s
        w = A.T @ (y - A @ x)
    return x


def fit_rate_model(observations: Sequence[RateObservation]) -> RateModelFit:
    """Fit (a, b, c) to multi-CRF encode observations.

    Solves the nonnegative system on the basis [ln(R)^2, -ln(R), 1] so the
    returned coefficients satisfy a >= 0, b <= 0 while CRF still falls
    with bitrate. Needs at least 3 observations at 3 distinct bitrates.
    """
    if len(observations) < 3:
        raise ValueError(f"need >= 3 observations, got {len(observations)}")
    rates = np.array([o.bitrate for o in observations], dtype=np.float64)
    if len(np.unique(rates)) < 3:
        raise ValueError("need >= 3 distinct bitrates (degenerate design)")
    crfs = np.array([o.crf for o in observations], dtype=np.float64)
    x = np.log(rates)
    design = np.column_stack([x * x, -x, np.ones_like(x)])
    sol = nnls(design, crfs)
    residual = design @ sol - crfs
    rms = float(np.sqrt(np.mean(residual**2)))
    params = RateModelParams(a=float(sol[0]), b=float(-sol[1]), c=float(sol[2]))
    return RateModelFit(params=params, residual_rms=rms)
