import math

import numpy as np
import pytest

from roadex import _dirscan_py, labels
from roadex.errors import ParameterError, ShapeError
from roadex.labels import (
    DirectionParams,
    angle_classes,
    direction_map_conv,
    direction_map_reference,
    direction_scores,
    probe_offsets,
    structure_target,
)


def naive_direction_map(mask, radius, n_angles):
    """Independent transcription of the scan: offsets, argmax and
    quantization all recomputed from scratch with scalar math."""
    h, w = mask.shape
    out = np.full((h, w), 4, dtype=np.uint8)
    thetas = [k * math.pi / n_angles for k in range(n_angles)]

    def rha(x):
        return int(math.floor(x + 0.5)) if x >= 0 else int(math.ceil(x - 0.5))

    def quant(theta):
        # nearest of {0, pi/4, pi/2, 3pi/4} with wrap at pi; boundary ties
        # to the lower class; theta >= 7pi/8 folds to 0
        best, best_d = 0, None
        for c in range(4):
            center = c * math.pi / 4
            d = min(abs(theta - center), math.pi - abs(theta - center))
            if best_d is None or d < best_d - 1e-12:
                best, best_d = c, d
            elif abs(d - best_d) <= 1e-12:
                # tie: class 0 wins over 3 near pi (wrap), lower index otherwise
                if theta >= 7 * math.pi / 8 - 1e-12 and 0 in (c, best):
                    best = 0
                else:
                    best = min(best, c)
        return best

    for i in range(h):
        for j in range(w):
            if mask[i, j] != 1:
                continue
            best_score, best_theta = -1, 0.0
            for theta in thetas:
                score = 0
                for rho in range(1, radius + 1):
                    dy, dx = rha(rho * math.sin(theta)), rha(rho * math.cos(theta))
                    for yy, xx in ((i + dy, j + dx), (i - dy, j - dx)):
                        if 0 <= yy < h and 0 <= xx < w:
                            score += mask[yy, xx]
                if score > best_score:
                    best_score, best_theta = score, theta
            out[i, j] = quant(best_theta)
    return out


def random_mask(seed, size=64, p=0.3):
    rng = np.random.default_rng(seed)
    return (rng.random((size, size)) < p).astype(np.uint8)


def band_mask(seed, size=64):
    """A single thick straight band through the image, random angle/offset."""
    rng = np.random.default_rng(seed)
    angle = rng.uniform(0, math.pi)
    width = rng.integers(3, 10)
    c = rng.uniform(0.3, 0.7) * size
    yy, xx = np.mgrid[0:size, 0:size]
    # signed distance to the line through (c, c) at `angle`
    d = -(yy - c) * math.cos(angle) + (xx - c) * math.sin(angle)
    return (np.abs(d) <= width / 2).astype(np.uint8)


class TestDirectionParams:
    def test_defaults(self):
        p = DirectionParams()
        assert p.radius == 9 and p.n_angles == 16

    def test_bad_radius(self):
        with pytest.raises(ParameterError):
            DirectionParams(radius=0)

    def test_step_not_dividing_pi(self):
        with pytest.raises(ParameterError):
            DirectionParams(angle_step=1.0)

    def test_from_divisor(self):
        assert DirectionParams.from_divisor(5, 8).n_angles == 8


class TestQuantization:
    def test_sixteen_angles(self):
        # bins centered on multiples of pi/4; boundaries (k=2,6,10) go low,
        # 7pi/8 and above folds to 0
        expected = [0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 0, 0]
        assert angle_classes(16).tolist() == expected

    def test_four_angles(self):
        assert angle_classes(4).tolist() == [0, 1, 2, 3]

    def test_eight_angles(self):
        assert angle_classes(8).tolist() == [0, 0, 1, 1, 2, 2, 3, 0]


class TestReferenceMap:
    def test_horizontal_strip_is_class0(self):
        m = np.zeros((32, 32), dtype=np.uint8)
        m[14:17, :] = 1
        d = direction_map_reference(m)
        assert (d[14:17, :] == 0).all()
        assert (d[m == 0] == 4).all()

    def test_all_zero_mask(self):
        d = direction_map_reference(np.zeros((16, 16), dtype=np.uint8))
        assert (d == 4).all()

    def test_diagonal_line_is_class1(self):
        m = np.eye(32, dtype=np.uint8)  # 45 deg, rows growing downward
        d = direction_map_reference(m, DirectionParams(radius=4, angle_step=math.pi / 8))
        interior = np.diag(d)[8:-8]
        assert (interior == 1).all()

    def test_antidiagonal_line_is_class3(self):
        m = np.eye(32, dtype=np.uint8)[::-1]
        d = direction_map_reference(m, DirectionParams(radius=4, angle_step=math.pi / 8))
        assert (np.diag(d[::-1])[8:-8] == 3).all()

    def test_vertical_strip_is_class2(self):
        m = np.zeros((32, 32), dtype=np.uint8)
        m[:, 10:13] = 1
        d = direction_map_reference(m)
        assert (d[:, 10:13] == 2).all()

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_naive_transcription(self, seed):
        m = random_mask(seed)
        got = direction_map_reference(m, DirectionParams(radius=5, angle_step=math.pi / 8))
        assert np.array_equal(got, naive_direction_map(m, 5, 8))

    def test_matches_naive_on_bands(self):
        m = band_mask(3)
        got = direction_map_reference(m, DirectionParams(radius=6, angle_step=math.pi / 16))
        assert np.array_equal(got, naive_direction_map(m, 6, 16))

    def test_deterministic(self):
        m = random_mask(7)
        assert np.array_equal(direction_map_reference(m), direction_map_reference(m))

    def test_rejects_non_binary(self):
        with pytest.raises(ParameterError):
            direction_map_reference(np.full((8, 8), 2, dtype=np.uint8))

    def test_rejects_bad_shape(self):
        with pytest.raises(ShapeError):
            direction_map_reference(np.zeros((4, 4, 3), dtype=np.uint8))


class TestPythonFallback:
    @pytest.mark.parametrize("seed", range(3))
    def test_matches_native(self, seed):
        m = random_mask(seed, size=32)
        p = DirectionParams(radius=4, angle_step=math.pi / 8)
        off, cls = probe_offsets(p), angle_classes(p.n_angles)
        py = _dirscan_py.scan(m, off, cls)
        assert np.array_equal(py, direction_map_reference(m, p))


class TestConvMap:
    def test_horizontal_strip(self):
        m = np.zeros((32, 32), dtype=np.uint8)
        m[14:17, :] = 1
        assert (direction_map_conv(m)[14:17, :] == 0).all()

    @pytest.mark.parametrize("radius", [3, 6, 9])
    @pytest.mark.parametrize("n", [4, 8, 16])
    def test_bit_exact_with_reference(self, radius, n):
        p = DirectionParams(radius=radius, angle_step=math.pi / n)
        for seed in range(5):
            m = random_mask(seed)
            assert np.array_equal(direction_map_conv(m, p), direction_map_reference(m, p))

    def test_duplicate_offsets_accumulate(self):
        # at 45 deg consecutive rho can round onto one cell; the kernel must
        # count it twice to match the scan
        from roadex.labels import direction_kernels

        p = DirectionParams(radius=9, angle_step=math.pi / 4)
        k = direction_kernels(p)
        assert k.max() >= 2

    def test_class4_support_is_zero_set(self):
        m = random_mask(11)
        d = direction_map_conv(m)
        assert np.array_equal(d == 4, m == 0)


class TestScores:
    def test_scores_match_scan_argmax(self):
        p = DirectionParams(radius=5, angle_step=math.pi / 8)
        m = random_mask(5)
        s = direction_scores(m, p)
        picked = angle_classes(p.n_angles)[np.argmax(s, axis=0)].astype(np.uint8)
        picked[m == 0] = 4
        assert np.array_equal(picked, direction_map_reference(m, p))

    def test_isolated_pixel_scores_zero(self):
        m = np.zeros((21, 21), dtype=np.uint8)
        m[10, 10] = 1
        assert (direction_scores(m)[:, 10, 10] == 0).all()


def ambiguous_pixels(mask, params):
    """Road pixels whose direction class is set by a tie convention rather
    than geometry: the maximal probe response is shared by angles of
    different classes, or is attained at an angle exactly on a quantization
    bin boundary (where the lower-class rule is not flip-equivariant)."""
    n = params.n_angles
    scores = direction_scores(mask, params)
    cls = angle_classes(n)
    top = scores.max(axis=0)
    amb = np.zeros(mask.shape, dtype=bool)
    for c in range(4):
        hit = (scores[cls == c] == top).any(axis=0)
        amb |= hit & (scores[cls != c] == top).any(axis=0)
    boundary = [k for k in range(n) if 8 * k in (n, 3 * n, 5 * n, 7 * n)]
    for k in boundary:
        amb |= scores[k] == top
    return amb & (mask == 1)


class TestSymmetry:
    """Probe responses are exactly equivariant under flips and 90-degree
    rotation, so classes permute wherever the winning class is unique and
    geometric: comparisons skip pixels flagged by ambiguous_pixels, whose
    class is fixed by a tie-break convention rather than by the mask.  The
    ambiguous set is itself equivariant (the boundary-angle set is closed
    under both angle maps and the class permutations are bijections), which
    the tests also check so the screen cannot hide a real asymmetry."""

    @pytest.mark.parametrize("seed", range(5))
    def test_hflip_swaps_1_and_3(self, seed):
        p = DirectionParams()
        m = band_mask(seed) if seed % 2 == 0 else random_mask(seed)
        amb = ambiguous_pixels(m, p)
        d = direction_map_reference(m, p)
        d_f = direction_map_reference(m[:, ::-1], p)
        perm = np.array([0, 3, 2, 1, 4], dtype=np.uint8)
        assert np.array_equal(ambiguous_pixels(m[:, ::-1], p), amb[:, ::-1])
        keep = ~amb[:, ::-1]
        assert np.array_equal(d_f[keep], perm[d[:, ::-1]][keep])
        assert (keep & (m[:, ::-1] == 1)).sum() > 20  # comparison not vacuous

    @pytest.mark.parametrize("seed", range(5))
    def test_rot90_swaps_axes(self, seed):
        p = DirectionParams()
        m = band_mask(seed) if seed % 2 == 0 else random_mask(seed)
        amb = ambiguous_pixels(m, p)
        d = direction_map_reference(m, p)
        d_r = direction_map_reference(np.rot90(m), p)
        perm = np.array([2, 3, 0, 1, 4], dtype=np.uint8)
        assert np.array_equal(ambiguous_pixels(np.rot90(m), p), np.rot90(amb))
        keep = ~np.rot90(amb)
        assert np.array_equal(d_r[keep], perm[np.rot90(d)][keep])
        assert (keep & (np.rot90(m) == 1)).sum() > 20


class TestStructureTarget:
    def test_all_ones(self):
        t = structure_target(np.ones((64, 64), dtype=np.uint8), 8)
        assert t.shape == (8, 8) and (t == 1.0).all()

    def test_half_filled_block(self):
        m = np.zeros((8, 8), dtype=np.uint8)
        m[:4, :] = 1  # 32 of 64
        assert structure_target(m, 8)[0, 0] == 0.5

    def test_block_mean_oracle(self):
        m = random_mask(3, size=128)
        t = structure_target(m, 16)
        for bi in range(8):
            for bj in range(8):
                block = m[16 * bi:16 * bi + 16, 16 * bj:16 * bj + 16]
                assert t[bi, bj] == int(block.sum()) / 256

    def test_padding_to_ceil(self):
        t = structure_target(np.ones((10, 13), dtype=np.uint8), 8)
        assert t.shape == (2, 2)
        assert t[0, 0] == 1.0
        assert t[1, 1] == (2 * 5) / 64  # 2 rows x 5 cols of ones survive

    def test_complement(self):
        m = random_mask(9, size=64)
        np.testing.assert_array_equal(structure_target(1 - m, 8), 1 - structure_target(m, 8))

    def test_bad_scale(self):
        with pytest.raises(ParameterError):
            structure_target(np.ones((8, 8), dtype=np.uint8), 0)


class TestDatasetTie:
    def test_straight_road_from_generator_is_class0(self):
        from roadex.synth import rasterize_road

        m = rasterize_road([(32.0, 4.0), (32.0, 60.0)], width=5, size=64)
        d = direction_map_reference(m)
        assert (d[30:35, 20:45] == 0).all()
