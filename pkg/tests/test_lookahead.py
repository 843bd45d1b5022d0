import numpy as np
import pytest

from carf.lookahead import (
    INTRA_PENALTY,
    FrameStats,
    LookaheadParams,
    MbAnalysis,
    ScenecutParams,
    analyze_frame,
    analyze_sequence,
    detect_scenecut,
    intra_cost,
    motion_search,
    sad,
    satd,
    segment_gops,
    frame_stats_record,
)
from carf.video import (
    FlatPattern,
    Frame,
    HardCutPattern,
    NoisePattern,
    SyntheticSpec,
    TranslatePattern,
    downsample_half,
    synth_sequence,
)

from oracles import (
    exhaustive_motion_search,
    intra_cost_reference,
    sad_reference,
    satd_reference,
)


def _rand_block(rng, shape=(16, 16)):
    return rng.integers(0, 256, shape, dtype=np.int64).astype(np.uint8)


def _frame(y: np.ndarray, index=0) -> Frame:
    h, w = y.shape
    return Frame(y=y, u=np.full((h // 2, w // 2), 128, np.uint8),
                 v=np.full((h // 2, w // 2), 128, np.uint8), index=index)


def _downsampled_pair(dx, dy, seed, blur=7, size=96, contrast=0.7):
    """Two analysis-resolution frames where the second is the first shifted
    by exactly (dx//2, dy//2); dx and dy are full-resolution and even."""
    spec = SyntheticSpec(size, size, 2,
                         TranslatePattern(dx=dx, dy=dy, seed=seed, blur=blur,
                                          contrast=contrast))
    seq = synth_sequence(spec)
    return downsample_half(seq.frames[1]), downsample_half(seq.frames[0])


class TestSad:
    def test_identical_blocks(self):
        b = np.full((16, 16), 77, np.uint8)
        assert sad(b, b) == 0

    def test_full_range(self):
        assert sad(np.zeros((16, 16), np.uint8),
                   np.full((16, 16), 255, np.uint8)) == 65280

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a, b = _rand_block(rng), _rand_block(rng)
            assert sad(a, b) == sad_reference(a, b)

    def test_symmetric(self):
        rng = np.random.default_rng(3)
        a, b = _rand_block(rng), _rand_block(rng)
        assert sad(a, b) == sad(b, a)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            sad(np.zeros((16, 16), np.uint8), np.zeros((8, 8), np.uint8))


class TestSatd:
    def test_identical_blocks(self):
        b = np.full((16, 16), 10, np.uint8)
        assert satd(b, b) == 0

    def test_single_sample_residual(self):
        """A lone residual of r spreads magnitude r over all 64 Hadamard
        coefficients of its sub-block: 64r, halved to 32r."""
        a = np.zeros((16, 16), np.uint8)
        b = a.copy()
        a[3, 5] = 200
        assert satd(a, b) == 32 * 200

    def test_matches_matrix_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            a, b = _rand_block(rng), _rand_block(rng)
            assert satd(a, b) == satd_reference(a, b)

    def test_symmetric_and_zero_iff_identical(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            a, b = _rand_block(rng), _rand_block(rng)
            assert satd(a, b) == satd(b, a)
            if not np.array_equal(a, b):
                assert satd(a, b) > 0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            satd(np.zeros((16, 16), np.uint8), np.zeros((16, 8), np.uint8))


class TestMotionSearch:
    def test_identical_frames_zero_mv(self):
        rng = np.random.default_rng(6)
        f = _frame(_rand_block(rng, (32, 32)))
        assert motion_search(f, f, (0, 0)) == ((0, 0), 0)

    def test_flat_frames_zero_bias_tiebreak(self):
        f = _frame(np.full((32, 32), 90, np.uint8))
        g = _frame(np.full((32, 32), 90, np.uint8), index=1)
        assert motion_search(g, f, (1, 1)) == ((0, 0), 0)

    def test_finds_exact_shift(self):
        """Shifted texture: the true vector is found at zero cost and the
        exhaustive oracle agrees."""
        cur, ref = _downsampled_pair(dx=8, dy=4, seed=11)
        mb = (1, 1)
        mv, cost = motion_search(cur, ref, mb, 16)
        assert mv == (4, 2)
        assert cost == 0
        exp_mv, exp_cost = exhaustive_motion_search(cur.y, ref.y, mb, 16)
        assert (mv, cost) == (exp_mv, exp_cost)

    def test_matches_exhaustive_on_shifted_textures(self):
        rng = np.random.default_rng(7)
        checked = 0
        while checked < 12:
            dx = 2 * int(rng.integers(-6, 7))
            dy = 2 * int(rng.integers(-6, 7))
            cur, ref = _downsampled_pair(dx, dy, seed=int(rng.integers(1 << 31)),
                                         blur=int(rng.choice([5, 7, 9])))
            mb = (int(rng.integers(0, 3)), int(rng.integers(0, 3)))
            ox, oy = mb[0] * 16, mb[1] * 16
            sx, sy = dx // 2, dy // 2
            h, w = cur.y.shape
            if not (0 <= ox - sx and ox - sx + 16 <= w
                    and 0 <= oy - sy and oy - sy + 16 <= h):
                continue
            checked += 1
            got = motion_search(cur, ref, mb, 16)
            assert got == exhaustive_motion_search(cur.y, ref.y, mb, 16)

    def test_cost_bounds_on_unrelated_frames(self):
        """Search cost sits between the exhaustive optimum and the zero-MV
        cost even when the frames share no structure."""
        rng = np.random.default_rng(8)
        for trial in range(5):
            cur = _frame(_rand_block(rng, (48, 48)))
            ref = _frame(_rand_block(rng, (48, 48)), index=1)
            mb = (int(rng.integers(0, 3)), int(rng.integers(0, 3)))
            mv, cost = motion_search(cur, ref, mb, 16)
            _, exh_cost = exhaustive_motion_search(cur.y, ref.y, mb, 16)
            zero_cost = satd(
                cur.y[mb[1] * 16 : mb[1] * 16 + 16, mb[0] * 16 : mb[0] * 16 + 16],
                ref.y[mb[1] * 16 : mb[1] * 16 + 16, mb[0] * 16 : mb[0] * 16 + 16],
            )
            assert exh_cost <= cost <= zero_cost

    def test_rejects_mismatched_frames(self):
        a = _frame(np.zeros((32, 32), np.uint8))
        b = _frame(np.zeros((48, 48), np.uint8))
        with pytest.raises(ValueError, match="dimensions differ"):
            motion_search(a, b, (0, 0))

    def test_rejects_bad_mb(self):
        f = _frame(np.zeros((32, 32), np.uint8))
        with pytest.raises(ValueError, match="outside"):
            motion_search(f, f, (5, 0))


class TestIntraCost:
    def test_flat_interior_is_penalty_only(self):
        f = _frame(np.full((48, 48), 77, np.uint8))
        assert intra_cost(f, (1, 1)) == INTRA_PENALTY

    def test_vertical_stripes_vertical_predictor_wins(self):
        y = np.zeros((48, 48), np.uint8)
        y[:, ::2] = 200  # columns alternate, rows repeat
        f = _frame(y)
        assert intra_cost(f, (1, 1)) == INTRA_PENALTY
        assert intra_cost(f, (1, 1)) == intra_cost_reference(y, (1, 1))

    def test_top_left_uses_default_border(self):
        """With no neighbors, all predictors predict 128."""
        f = _frame(np.full((32, 32), 100, np.uint8))
        expected = satd(np.full((16, 16), 100, np.uint8),
                        np.full((16, 16), 128, np.uint8)) + INTRA_PENALTY
        assert intra_cost(f, (0, 0)) == expected

    def test_matches_hand_oracle_on_random_frames(self):
        rng = np.random.default_rng(9)
        for _ in range(8):
            y = _rand_block(rng, (48, 48))
            f = _frame(y)
            mb = (int(rng.integers(0, 3)), int(rng.integers(0, 3)))
            assert intra_cost(f, mb) == intra_cost_reference(y, mb)


class TestAnalyzeFrame:
    def test_first_frame_is_idr_like(self):
        seq = synth_sequence(SyntheticSpec(64, 64, 1, NoisePattern(seed=1)))
        st = analyze_frame(downsample_half(seq.frames[0]), None)
        assert st.slice_type == "I"
        assert st.inter_cost_total == 0
        assert st.intra_mb_count == st.total_mb_count == 4
        assert all(m.is_intra and m.inter_cost == 0 for m in st.mb_list)

    def test_identical_consecutive_frames(self):
        seq = synth_sequence(SyntheticSpec(64, 64, 2, FlatPattern(luma=50)))
        a = downsample_half(seq.frames[0])
        b = downsample_half(seq.frames[1])
        st = analyze_frame(b, a)
        assert st.slice_type == "P"
        assert st.inter_cost_total == 0
        assert st.intra_mb_count == 0

    def test_translating_texture_prefers_inter(self):
        seq = synth_sequence(
            SyntheticSpec(64, 64, 2, TranslatePattern(dx=4, dy=2, seed=2, blur=7))
        )
        st = analyze_frame(downsample_half(seq.frames[1]),
                           downsample_half(seq.frames[0]))
        assert st.inter_cost_total < st.intra_cost_total

    def test_totals_equal_sums_over_mbs(self):
        seq = synth_sequence(SyntheticSpec(64, 64, 2, NoisePattern(seed=3)))
        st = analyze_frame(downsample_half(seq.frames[1]),
                           downsample_half(seq.frames[0]))
        assert st.intra_cost_total == sum(m.intra_cost for m in st.mb_list)
        assert st.inter_cost_total == sum(m.inter_cost for m in st.mb_list)
        assert st.intra_mb_count == sum(m.is_intra for m in st.mb_list)

    def test_ac_energy_definition(self):
        seq = synth_sequence(SyntheticSpec(32, 32, 1, NoisePattern(seed=4)))
        small = downsample_half(seq.frames[0])  # one 16x16 block
        st = analyze_frame(small, None)
        block = small.y.astype(np.float64)
        assert st.ac_energy_total == pytest.approx(
            ((block - block.mean()) ** 2).sum()
        )

    def test_stats_record_shape(self):
        seq = synth_sequence(SyntheticSpec(64, 64, 2, FlatPattern()))
        st = analyze_frame(downsample_half(seq.frames[1]),
                           downsample_half(seq.frames[0]))
        rec = frame_stats_record(st)
        assert rec["slice_type"] == "P"
        assert set(rec) == {
            "frame_index", "slice_type", "intra_cost_total",
            "inter_cost_total", "intra_mb_pct", "mean_abs_mv",
            "ac_energy_total",
        }


def _stats(index, intra, inter, slice_type="P") -> FrameStats:
    return FrameStats(
        frame_index=index, slice_type=slice_type,
        intra_cost_total=intra, inter_cost_total=inter,
        intra_mb_count=0, total_mb_count=4, mb_list=(),
        ac_energy_total=0.0,
    )


class TestScenecut:
    def test_identical_frames_never_cut(self):
        assert not detect_scenecut(_stats(1, 1000, 0), 50)

    def test_degenerate_zero_costs(self):
        assert not detect_scenecut(_stats(1, 0, 0), 50)

    def test_threshold_with_full_bias(self):
        # at distance >= keyint_min the bias is the full 0.4
        assert detect_scenecut(_stats(1, 1000, 600), 40)
        assert not detect_scenecut(_stats(1, 1000, 599), 40)

    def test_bias_scales_with_distance(self):
        # halfway to keyint_min the bias halves: threshold 0.8 * intra
        assert not detect_scenecut(_stats(1, 1000, 799), 20)
        assert detect_scenecut(_stats(1, 1000, 800), 20)

    def test_monotone_in_inter_cost(self):
        cuts = [detect_scenecut(_stats(1, 1000, inter), 40)
                for inter in range(0, 1200, 25)]
        assert cuts == sorted(cuts)  # False ... False True ... True

    def test_hard_cut_detected(self):
        spec = SyntheticSpec(
            64, 64, 70,
            HardCutPattern(at_frame=60, first=FlatPattern(luma=30),
                           second=NoisePattern(seed=6)),
        )
        stats = analyze_sequence(synth_sequence(spec))
        assert detect_scenecut(stats[60], 60)
        assert not detect_scenecut(stats[30], 30)


class TestSegmentGops:
    def test_static_sequence_single_span(self):
        stats = [_stats(0, 100, 0, "I")] + [_stats(i, 100, 0) for i in range(1, 100)]
        spans = segment_gops(stats, 40, 250)
        assert len(spans) == 1
        assert (spans[0].start_frame, spans[0].end_frame) == (0, 99)
        assert not spans[0].scenecut_triggered

    def test_hard_cut_at_60(self):
        spec = SyntheticSpec(
            64, 64, 100,
            HardCutPattern(at_frame=60, first=TranslatePattern(dx=2, dy=0, seed=8, blur=7),
                           second=NoisePattern(seed=9)),
        )
        stats = analyze_sequence(synth_sequence(spec))
        spans = segment_gops(stats, 40, 250)
        assert (spans[0].start_frame, spans[0].end_frame) == (0, 59)
        assert spans[1].start_frame == 60
        assert spans[1].scenecut_triggered

    def test_keyint_max_forces_idr(self):
        stats = [_stats(0, 100, 0, "I")] + [_stats(i, 100, 0) for i in range(1, 600)]
        spans = segment_gops(stats, 40, 250)
        assert [s.n_frames for s in spans] == [250, 250, 100]
        assert not any(s.scenecut_triggered for s in spans)

    def test_partition_and_length_bounds(self):
        """Spans partition the sequence; all but the last respect
        keyint_min, all respect keyint_max."""
        rng = np.random.default_rng(10)
        for _ in range(20):
            n = int(rng.integers(1, 400))
            stats = [_stats(0, 100, 0, "I")]
            for i in range(1, n):
                inter = int(rng.integers(0, 120)) * 10
                stats.append(_stats(i, 1000, inter))
            kmin = int(rng.integers(1, 50))
            kmax = kmin + int(rng.integers(0, 250))
            spans = segment_gops(stats, kmin, kmax)
            assert spans[0].start_frame == 0
            assert spans[-1].end_frame == n - 1
            for prev, cur in zip(spans, spans[1:]):
                assert cur.start_frame == prev.end_frame + 1
            for s in spans[:-1]:
                assert kmin <= s.n_frames <= kmax
            assert spans[-1].n_frames <= kmax

    def test_cut_suppressed_before_keyint_min(self):
        spec = SyntheticSpec(
            64, 64, 50,
            HardCutPattern(at_frame=20, first=FlatPattern(luma=30),
                           second=NoisePattern(seed=12)),
        )
        stats = analyze_sequence(synth_sequence(spec))
        spans = segment_gops(stats, 40, 250)
        assert spans[0].start_frame == 0
        assert all(s.start_frame != 20 for s in spans)

    def test_empty_stats(self):
        with pytest.raises(ValueError, match="empty"):
            segment_gops([], 40, 250)


class TestLookaheadParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            LookaheadParams(keyint_min=0)
        with pytest.raises(ValueError):
            LookaheadParams(keyint_min=100, keyint_max=50)
        with pytest.raises(ValueError):
            LookaheadParams(search_range=0)

    def test_scenecut_view(self):
        p = LookaheadParams(scenecut_bias=0.3, keyint_min=25)
        assert p.scenecut() == ScenecutParams(base_bias=0.3, keyint_min=25)
