import numpy as np
import pytest

from carf.video import (
    Frame,
    FlatPattern,
    HardCutPattern,
    NoisePattern,
    SyntheticSpec,
    TranslatePattern,
    VideoSequence,
    Y4mError,
    downsample_half,
    parse_y4m,
    pattern_from_string,
    synth_sequence,
    write_y4m,
)

from oracles import downsample_reference


def _random_sequence(rng, width=32, height=32, n=2, fps=(25, 1)):
    frames = []
    for i in range(n):
        frames.append(Frame(
            y=rng.integers(0, 256, (height, width), dtype=np.int64).astype(np.uint8),
            u=rng.integers(0, 256, (height // 2, width // 2), dtype=np.int64).astype(np.uint8),
            v=rng.integers(0, 256, (height // 2, width // 2), dtype=np.int64).astype(np.uint8),
            index=i,
        ))
    return VideoSequence(width=width, height=height, fps_num=fps[0],
                         fps_den=fps[1], frames=tuple(frames))


class TestParse:
    def test_header_echo(self):
        payload = bytes(16 * 16) + bytes(8 * 8) * 2
        data = b"YUV4MPEG2 W16 H16 F25:1 Ip A1:1 C420jpeg\nFRAME\n" + payload
        seq = parse_y4m(data)
        assert (seq.width, seq.height) == (16, 16)
        assert (seq.fps_num, seq.fps_den) == (25, 1)
        assert seq.n_frames == 1

    def test_no_frames(self):
        with pytest.raises(Y4mError, match="no frames"):
            parse_y4m(b"YUV4MPEG2 W16 H16 F25:1\n")

    def test_round_trip_bit_exact(self):
        rng = np.random.default_rng(0)
        seq = _random_sequence(rng, n=2)
        data = write_y4m(seq)
        parsed = parse_y4m(data)
        assert write_y4m(parsed) == data
        for a, b in zip(seq.frames, parsed.frames):
            assert np.array_equal(a.y, b.y)
            assert np.array_equal(a.u, b.u)
            assert np.array_equal(a.v, b.v)

    def test_truncated_payload_reports_offset(self):
        data = b"YUV4MPEG2 W16 H16 F25:1\nFRAME\n" + bytes(100)
        with pytest.raises(Y4mError, match="truncated frame payload at byte"):
            parse_y4m(data)

    def test_unsupported_colorspace(self):
        with pytest.raises(Y4mError, match="unsupported color space"):
            parse_y4m(b"YUV4MPEG2 W16 H16 F25:1 C444\nFRAME\n" + bytes(16 * 16 * 3))

    def test_bad_signature(self):
        with pytest.raises(Y4mError, match="byte 0"):
            parse_y4m(b"AVI nonsense")

    def test_missing_required_tags(self):
        with pytest.raises(Y4mError, match="W/H/F"):
            parse_y4m(b"YUV4MPEG2 W16 H16\nFRAME\n" + bytes(384))

    def test_garbage_between_frames(self):
        payload = bytes(384)
        data = (b"YUV4MPEG2 W16 H16 F25:1\nFRAME\n" + payload
                + b"JUNK\n" + payload)
        with pytest.raises(Y4mError, match="expected FRAME marker at byte"):
            parse_y4m(data)

    def test_odd_dimensions_rejected(self):
        with pytest.raises(Y4mError, match="unsupported dimensions"):
            parse_y4m(b"YUV4MPEG2 W15 H16 F25:1\nFRAME\n" + bytes(400))


class TestDownsample:
    def test_constant_frame_stays_constant(self):
        f = Frame(y=np.full((16, 16), 128, np.uint8),
                  u=np.full((8, 8), 128, np.uint8),
                  v=np.full((8, 8), 128, np.uint8))
        small = downsample_half(f)
        assert small.y.shape == (8, 8)
        assert np.all(small.y == 128)
        assert np.all(small.u == 128)

    def test_round_half_up(self):
        y = np.zeros((16, 16), np.uint8)
        y[0, 0] = 0
        y[0, 1] = 0
        y[1, 0] = 255
        y[1, 1] = 255
        f = Frame(y=y, u=np.zeros((8, 8), np.uint8), v=np.zeros((8, 8), np.uint8))
        assert downsample_half(f).y[0, 0] == 128

    def test_matches_per_block_oracle(self):
        rng = np.random.default_rng(1)
        f = _random_sequence(rng, 16, 16, 1).frames[0]
        small = downsample_half(f)
        assert np.array_equal(small.y, downsample_reference(f.y))
        assert np.array_equal(small.u, downsample_reference(f.u))
        assert np.array_equal(small.v, downsample_reference(f.v))

    def test_odd_chroma_rejected(self):
        f = Frame(y=np.zeros((18, 18), np.uint8),
                  u=np.zeros((9, 9), np.uint8),
                  v=np.zeros((9, 9), np.uint8))
        with pytest.raises(ValueError, match="odd dimensions"):
            downsample_half(f)


class TestSynth:
    def test_flat_identical_frames(self):
        seq = synth_sequence(SyntheticSpec(32, 32, 10, FlatPattern(luma=100)))
        assert seq.n_frames == 10
        for f in seq.frames:
            assert np.all(f.y == 100)
            assert np.array_equal(f.y, seq.frames[0].y)

    def test_translate_shift_property(self):
        """Each frame is the previous one shifted by (dx, dy) everywhere."""
        spec = SyntheticSpec(48, 48, 6, TranslatePattern(dx=4, dy=2, seed=3))
        seq = synth_sequence(spec)
        for prev, cur in zip(seq.frames, seq.frames[1:]):
            assert np.array_equal(cur.y[2:, 4:], prev.y[:-2, :-4])

    def test_translate_negative_shift(self):
        spec = SyntheticSpec(48, 48, 4, TranslatePattern(dx=-3, dy=-1, seed=3))
        seq = synth_sequence(spec)
        for prev, cur in zip(seq.frames, seq.frames[1:]):
            assert np.array_equal(cur.y[:-1, :-3], prev.y[1:, 3:])

    def test_hard_cut_by_construction(self):
        spec = SyntheticSpec(
            32, 32, 80,
            HardCutPattern(at_frame=60, first=FlatPattern(luma=20),
                           second=NoisePattern(seed=5)),
        )
        seq = synth_sequence(spec)
        ref_a = synth_sequence(SyntheticSpec(32, 32, 60, FlatPattern(luma=20)))
        ref_b = synth_sequence(SyntheticSpec(32, 32, 20, NoisePattern(seed=5)))
        for i in range(60):
            assert np.array_equal(seq.frames[i].y, ref_a.frames[i].y)
        for i in range(20):
            assert np.array_equal(seq.frames[60 + i].y, ref_b.frames[i].y)

    def test_deterministic(self):
        spec = SyntheticSpec(32, 32, 5, TranslatePattern(dx=2, dy=2, seed=9))
        assert write_y4m(synth_sequence(spec)) == write_y4m(synth_sequence(spec))

    def test_zero_frames_rejected(self):
        with pytest.raises(ValueError, match="zero frames"):
            synth_sequence(SyntheticSpec(32, 32, 0, FlatPattern()))


class TestPatternStrings:
    @pytest.mark.parametrize("text,expected", [
        ("flat", FlatPattern()),
        ("flat:luma=40", FlatPattern(luma=40)),
        ("noise:seed=3", NoisePattern(seed=3)),
        ("translate:dx=4,dy=2,seed=7", TranslatePattern(dx=4, dy=2, seed=7)),
    ])
    def test_parse(self, text, expected):
        assert pattern_from_string(text) == expected

    def test_parse_hardcut(self):
        p = pattern_from_string("hardcut:at=60;a=flat:luma=20;b=noise:seed=1")
        assert p == HardCutPattern(at_frame=60, first=FlatPattern(luma=20),
                                   second=NoisePattern(seed=1))

    @pytest.mark.parametrize("text", ["wavelet", "flat:luma", "hardcut:at=60"])
    def test_rejects_malformed(self, text):
        with pytest.raises(ValueError):
            pattern_from_string(text)


class TestInvariants:
    def test_sequence_validation(self):
        with pytest.raises(ValueError, match="even"):
            VideoSequence(width=15, height=16, fps_num=25, fps_den=1, frames=())
        with pytest.raises(ValueError, match="positive"):
            VideoSequence(width=16, height=16, fps_num=0, fps_den=1, frames=())

    def test_frames_are_immutable(self):
        seq = synth_sequence(SyntheticSpec(32, 32, 1, FlatPattern()))
        with pytest.raises(ValueError):
            seq.frames[0].y[0, 0] = 7
