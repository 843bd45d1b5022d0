"""Raw video ingestion: Y4M parsing/writing, half-resolution downsampling,
and deterministic synthetic test sequences.

Only 8-bit 4:2:0 planar material is handled. Frames are immutable once
built (their numpy planes are marked read-only) and safe to share across
threads.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CarfError

__all__ = [
    "Frame",
    "VideoSequence",
    "Y4mError",
    "parse_y4m",
    "write_y4m",
    "load_y4m",
    "save_y4m",
    "downsample_half",
    "SyntheticSpec",
    "FlatPattern",
    "NoisePattern",
    "TranslatePattern",
    "HardCutPattern",
    "pattern_from_string",
    "synth_sequence",
]

_ACCEPTED_COLORSPACES = {"420", "420jpeg", "420mpeg2", "420paldv"}


class Y4mError(CarfError):
    """Malformed or unsupported YUV4MPEG2 data."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Frame:
    """One planar 4:2:0 picture: full-res Y and half-res U/V, uint8."""

    y: np.ndarray
    u: np.ndarray
    v: np.ndarray
    index: int = 0

    def __post_init__(self):
        for name, plane in (("y", self.y), ("u", self.u), ("v", self.v)):
            if plane.ndim != 2 or plane.dtype != np.uint8:
                raise ValueError(f"plane {name} must be a 2D uint8 array")
        h, w = self.y.shape
        if self.u.shape != (h // 2, w // 2) or self.v.shape != (h // 2, w // 2):
            raise ValueError(
                f"chroma shape {self.u.shape} inconsistent with luma {self.y.shape}"
            )
        _readonly(self.y)
        _readonly(self.u)
        _readonly(self.v)

    @property
    def width(self) -> int:
        return self.y.shape[1]

    @property
    def height(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True)
class VideoSequence:
    """An ordered run of equally-sized frames plus timing metadata.

    ``source_bitrate`` is optional metadata (kbps) describing the material
    the sequence came from; when a container file exists the orchestrator
    derives it from file size when absent.
    """

    width: int
    height: int
    fps_num: int
    fps_den: int
    frames: tuple[Frame, ...]
    source_bitrate: float | None = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("dimensions must be positive")
        if self.width % 2 or self.height % 2:
            raise ValueError("dimensions must be even for 4:2:0")
        if self.fps_num <= 0 or self.fps_den <= 0:
            raise ValueError("fps numerator and denominator must be positive")
        for f in self.frames:
            if f.y.shape != (self.height, self.width):
                raise ValueError(
                    f"frame {f.index} shape {f.y.shape} does not match sequence"
                )
        if self.source_bitrate is not None and self.source_bitrate < 0:
            raise ValueError("source_bitrate must be >= 0")

    @property
    def fps(self) -> float:
        return self.fps_num / self.fps_den

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def duration_seconds(self) -> float:
        return len(self.frames) * self.fps_den / self.fps_num

    def with_source_bitrate(self, kbps: float) -> "VideoSequence":
        return dataclasses.replace(self, source_bitrate=float(kbps))


# ---------------------------------------------------------------------------
# YUV4MPEG2


def parse_y4m(data: bytes) -> VideoSequence:
    """Decode a YUV4MPEG2 byte stream into a VideoSequence.

    Only 8-bit 4:2:0 streams are accepted. Errors carry the byte offset of
    the offending structure.
    """
    if not data.startswith(b"YUV4MPEG2"):
        raise Y4mError("not a YUV4MPEG2 stream (bad signature at byte 0)")
    nl = data.find(b"\n")
    if nl < 0:
        raise Y4mError("unterminated stream header (no newline before EOF)")
    header = data[:nl].decode("ascii", errors="replace")
    width = height = None
    fps_num = fps_den = None
    for token in header.split(" ")[1:]:
        if not token:
            continue
        tag, rest = token[0], token[1:]
        try:
            if tag == "W":
                width = int(rest)
            elif tag == "H":
                height = int(rest)
            elif tag == "F":
                num, den = rest.split(":")
                fps_num, fps_den = int(num), int(den)
            elif tag == "C":
                if rest not in _ACCEPTED_COLORSPACES:
                    raise Y4mError(
                        f"unsupported color space C{rest} (only 8-bit 4:2:0)"
                    )
            # I/A/X tags carry no information the analyzer needs.
        except ValueError as exc:
            raise Y4mError(f"malformed header token {token!r} at byte 0") from exc
    if width is None or height is None or fps_num is None or fps_den is None:
        raise Y4mError("header missing required W/H/F tags")
    if width <= 0 or height <= 0 or width % 2 or height % 2:
        raise Y4mError(f"unsupported dimensions {width}x{height} (need positive even)")
    if fps_num <= 0 or fps_den <= 0:
        raise Y4mError(f"invalid frame rate {fps_num}:{fps_den}")

    y_size = width * height
    c_size = (width // 2) * (height // 2)
    frame_size = y_size + 2 * c_size

    frames: list[Frame] = []
    pos = nl + 1
    while pos < len(data):
        if not data.startswith(b"FRAME", pos):
            raise Y4mError(f"expected FRAME marker at byte {pos}")
        marker_nl = data.find(b"\n", pos)
        if marker_nl < 0:
            raise Y4mError(f"unterminated FRAME header at byte {pos}")
        payload = pos = marker_nl + 1
        if pos + frame_size > len(data):
            raise Y4mError(
                f"truncated frame payload at byte {payload} "
                f"(need {frame_size} bytes, have {len(data) - payload})"
            )
        raw = np.frombuffer(data, dtype=np.uint8, count=frame_size, offset=payload)
        y = raw[:y_size].reshape(height, width).copy()
        u = raw[y_size : y_size + c_size].reshape(height // 2, width // 2).copy()
        v = raw[y_size + c_size :].reshape(height // 2, width // 2).copy()
        frames.append(Frame(y=y, u=u, v=v, index=len(frames)))
        pos += frame_size

    if not frames:
        raise Y4mError("no frames")
    return VideoSequence(
        width=width,
        height=height,
        fps_num=fps_num,
        fps_den=fps_den,
        frames=tuple(frames),
    )


def write_y4m(seq: VideoSequence) -> bytes:
    """Encode a sequence as YUV4MPEG2 bytes; inverse of parse_y4m."""
    out = bytearray()
    out += (
        f"YUV4MPEG2 W{seq.width} H{seq.height} "
        f"F{seq.fps_num}:{seq.fps_den} Ip A1:1 C420jpeg\n"
    ).encode("ascii")
    for f in seq.frames:
        out += b"FRAME\n"
        out += f.y.tobytes()
        out += f.u.tobytes()
        out += f.v.tobytes()
    return bytes(out)


def load_y4m(path: str | Path) -> VideoSequence:
    return parse_y4m(Path(path).read_bytes())


def save_y4m(seq: VideoSequence, path: str | Path) -> None:
    Path(path).write_bytes(write_y4m(seq))


# ---------------------------------------------------------------------------
# Downsampling


def _half_plane(p: np.ndarray) -> np.ndarray:
    h, w = p.shape
    if h % 2 or w % 2:
        raise ValueError(f"odd dimensions {w}x{h}: cannot halve")
    s = p.reshape(h // 2, 2, w // 2, 2).sum(axis=(1, 3), dtype=np.uint32)
    return ((s + 2) >> 2).astype(np.uint8)  # mean of the 2x2 block, round half up


def downsample_half(frame: Frame) -> Frame:
    """Halve a frame in each dimension; every output sample is the rounded
    mean of its 2x2 source block."""
    return Frame(
        y=_half_plane(frame.y),
        u=_half_plane(frame.u),
        v=_half_plane(frame.v),
        index=frame.index,
    )


# ---------------------------------------------------------------------------
# Synthetic sequences


@dataclass(frozen=True)
class FlatPattern:
    """Constant planes; the degenerate zero-motion, zero-detail case."""

    luma: int = 100
    cb: int = 128
    cr: int = 128


@dataclass(frozen=True)
class NoisePattern:
    """Independent uniform noise in every plane of every frame."""

    seed: int = 0


@dataclass(frozen=True)
class TranslatePattern:
    """A band-limited texture rigidly translating by (dx, dy) px per frame.

    The texture is sampled from a canvas larger than the frame so the
    motion is a true translation everywhere (no wrap seam). ``blur`` is the
    box-filter radius shaping the texture, ``contrast`` scales its
    amplitude, ``brightness`` shifts the luma midpoint, ``chroma_amp``
    scales the U/V texture amplitude.
    """

    dx: int = 0
    dy: int = 0
    seed: int = 0
    blur: int = 7
    contrast: float = 1.0
    brightness: int = 0
    chroma_amp: float = 0.3


@dataclass(frozen=True)
class HardCutPattern:
    """Pattern ``first`` up to (excluding) ``at_frame``, then ``second``
    restarted from its own frame 0."""

    at_frame: int
    first: "Pattern"
    second: "Pattern"


Pattern = FlatPattern | NoisePattern | TranslatePattern | HardCutPattern


@dataclass(frozen=True)
class SyntheticSpec:
    width: int
    height: int
    n_frames: int
    pattern: Pattern
    fps_num: int = 25
    fps_den: int = 1
    source_bitrate: float | None = None


def _box_1d(a: np.ndarray, radius: int, axis: int) -> np.ndarray:
    size = 2 * radius + 1
    pad = [(radius, radius) if ax == axis else (0, 0) for ax in range(a.ndim)]
    padded = np.pad(a, pad, mode="edge")
    c = np.cumsum(padded, axis=axis, dtype=np.float64)
    zshape = list(c.shape)
    zshape[axis] = 1
    c = np.concatenate([np.zeros(zshape), c], axis=axis)
    n = c.shape[axis]
    hi = np.take(c, np.arange(size, n), axis=axis)
    lo = np.take(c, np.arange(0, n - size), axis=axis)
    return (hi - lo) / size


def _box_blur(img: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return img.astype(np.float64)
    return _box_1d(_box_1d(img, radius, 0), radius, 1)


def _texture(rng: np.random.Generator, h: int, w: int, blur: int, mid: float,
             amp: float) -> np.ndarray:
    raw = rng.integers(0, 256, size=(h, w)).astype(np.float64)
    sm = _box_blur(raw, blur)
    lo, hi = sm.min(), sm.max()
    unit = (sm - lo) / (hi - lo) if hi > lo else np.zeros_like(sm)
    return np.clip(np.rint(mid + (unit - 0.5) * amp), 0, 255).astype(np.uint8)


def _flat_frames(p: FlatPattern, w: int, h: int, n: int) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    y = np.full((h, w), np.clip(p.luma, 0, 255), dtype=np.uint8)
    u = np.full((h // 2, w // 2), np.clip(p.cb, 0, 255), dtype=np.uint8)
    v = np.full((h // 2, w // 2), np.clip(p.cr, 0, 255), dtype=np.uint8)
    return [(y, u, v)] * n


def _noise_frames(p: NoisePattern, w: int, h: int, n: int):
    rng = np.random.default_rng(p.seed)
    out = []
    for _ in range(n):
        y = rng.integers(0, 256, size=(h, w), dtype=np.int64).astype(np.uint8)
        u = rng.integers(0, 256, size=(h // 2, w // 2), dtype=np.int64).astype(np.uint8)
        v = rng.integers(0, 256, size=(h // 2, w // 2), dtype=np.int64).astype(np.uint8)
        out.append((y, u, v))
    return out


def _translate_frames(p: TranslatePattern, w: int, h: int, n: int):
    rng = np.random.default_rng(p.seed)
    span_y, span_x = (n - 1) * abs(p.dy), (n - 1) * abs(p.dx)
    mid = float(np.clip(125.5 + p.brightness, 30, 225))
    canvas = _texture(rng, h + span_y, w + span_x, p.blur, mid, 210.0 * p.contrast)
    ch, cw = h // 2, w // 2
    amp_c = 210.0 * p.contrast * p.chroma_amp
    canvas_u = _texture(rng, ch + span_y // 2 + 1, cw + span_x // 2 + 1,
                        max(1, p.blur // 2), 128.0, amp_c)
    canvas_v = _texture(rng, ch + span_y // 2 + 1, cw + span_x // 2 + 1,
                        max(1, p.blur // 2), 128.0, amp_c)
    # Window offset decreases by the motion so content moves by +(dx, dy):
    # frame t+1 at (y, x) equals frame t at (y - dy, x - dx).
    base_y = span_y if p.dy > 0 else 0
    base_x = span_x if p.dx > 0 else 0
    out = []
    for t in range(n):
        oy = base_y - t * p.dy
        ox = base_x - t * p.dx
        y = canvas[oy : oy + h, ox : ox + w]
        u = canvas_u[oy // 2 : oy // 2 + ch, ox // 2 : ox // 2 + cw]
        v = canvas_v[oy // 2 : oy // 2 + ch, ox // 2 : ox // 2 + cw]
        out.append((y.copy(), u.copy(), v.copy()))
    return out


def _pattern_frames(p: Pattern, w: int, h: int, n: int):
    if isinstance(p, FlatPattern):
        return _flat_frames(p, w, h, n)
    if isinstance(p, NoisePattern):
        return _noise_frames(p, w, h, n)
    if isinstance(p, TranslatePattern):
        return _translate_frames(p, w, h, n)
    if isinstance(p, HardCutPattern):
        if not 0 < p.at_frame < n:
            raise ValueError(f"cut frame {p.at_frame} outside (0, {n})")
        return (_pattern_frames(p.first, w, h, p.at_frame)
                + _pattern_frames(p.second, w, h, n - p.at_frame))
    raise TypeError(f"unknown pattern {type(p).__name__}")


def synth_sequence(spec: SyntheticSpec) -> VideoSequence:
    """Build a deterministic synthetic sequence from a pattern spec."""
    if spec.n_frames <= 0:
        raise ValueError("zero frames requested")
    if spec.width % 2 or spec.height % 2 or spec.width <= 0 or spec.height <= 0:
        raise ValueError("dimensions must be positive and even")
    planes = _pattern_frames(spec.pattern, spec.width, spec.height, spec.n_frames)
    frames = tuple(
        Frame(y=y, u=u, v=v, index=i) for i, (y, u, v) in enumerate(planes)
    )
    return VideoSequence(
        width=spec.width,
        height=spec.height,
        fps_num=spec.fps_num,
        fps_den=spec.fps_den,
        frames=frames,
        source_bitrate=spec.source_bitrate,
    )


def pattern_from_string(text: str) -> Pattern:
    """Parse a compact CLI pattern string.

    Examples: ``flat``, ``flat:luma=40``, ``noise:seed=3``,
    ``translate:dx=4,dy=2,seed=7``, ``hardcut:at=60;a=flat;b=noise:seed=1``.
    """
    kind, _, rest = text.partition(":")
    kind = kind.strip().lower()
    if kind == "hardcut":
        fields = dict(
            part.split("=", 1) for part in rest.split(";") if part
        )
        try:
            at = int(fields.pop("at"))
            first = pattern_from_string(fields.pop("a"))
            second = pattern_from_string(fields.pop("b"))
        except KeyError as exc:
            raise ValueError(f"hardcut pattern needs at/a/b fields: {text!r}") from exc
        if fields:
            raise ValueError(f"unknown hardcut fields {sorted(fields)}")
        return HardCutPattern(at_frame=at, first=first, second=second)

    kv: dict[str, str] = {}
    if rest:
        for part in rest.split(","):
            k, _, val = part.partition("=")
            if not val:
                raise ValueError(f"bad pattern field {part!r} in {text!r}")
            kv[k.strip()] = val.strip()
    try:
        if kind == "flat":
            return FlatPattern(**{k: int(v) for k, v in kv.items()})
        if kind == "noise":
            return NoisePattern(**{k: int(v) for k, v in kv.items()})
        if kind == "translate":
            casts = {"contrast": float, "chroma_amp": float}
            return TranslatePattern(
                **{k: casts.get(k, int)(v) for k, v in kv.items()}
            )
    except TypeError as exc:
        raise ValueError(f"bad fields for pattern {kind!r}: {sorted(kv)}") from exc
    raise ValueError(f"unknown pattern kind {kind!r}")
