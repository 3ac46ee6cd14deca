import numpy as np
import pytest

from ngfalign.fft_xcorr import (
    accumulate_correlate,
    correlate,
    forward,
    padded_dims_for,
    reset_transform_counts,
    transform_counts,
)


def direct_correlation(f, g):
    """Triple-loop oracle: CC(chi) = sum_x f(x) g(x+chi) on the spec lattice."""
    fa, ga = np.asarray(f, float), np.asarray(g, float)
    lattice = tuple(a + b - 1 for a, b in zip(fa.shape, ga.shape))
    origin = tuple(b - 1 for b in ga.shape)
    out = np.zeros(lattice)
    for ix in range(lattice[0]):
        for iy in range(lattice[1]):
            for iz in range(lattice[2]):
                chi = (ix - origin[0], iy - origin[1], iz - origin[2])
                s = 0.0
                for x in range(fa.shape[0]):
                    for y in range(fa.shape[1]):
                        for z in range(fa.shape[2]):
                            bx, by, bz = x + chi[0], y + chi[1], z + chi[2]
                            if (
                                0 <= bx < ga.shape[0]
                                and 0 <= by < ga.shape[1]
                                and 0 <= bz < ga.shape[2]
                            ):
                                s += fa[x, y, z] * ga[bx, by, bz]
                out[ix, iy, iz] = s
    return out, origin


class TestForward:
    def test_impulse_flat_spectrum(self):
        f = np.zeros((4, 4, 4))
        f[0, 0, 0] = 1.0
        spec = forward(f, (4, 4, 4))
        np.testing.assert_allclose(spec.coeffs, 1.0, atol=1e-12)

    def test_zero_grid(self):
        spec = forward(np.zeros((3, 3, 3)), (5, 5, 5))
        assert (spec.coeffs == 0).all()

    def test_roundtrip(self):
        from scipy.fft import irfftn

        rng = np.random.default_rng(0)
        f = rng.normal(0, 1, (4, 4, 4))
        spec = forward(f, (4, 4, 4))
        back = irfftn(spec.coeffs, s=(4, 4, 4))
        assert np.abs(back - f).max() < 1e-6

    def test_padding_too_small(self):
        with pytest.raises(ValueError):
            forward(np.zeros((4, 4, 4)), (3, 4, 4))

    def test_padded_dims_cover_full_correlation(self):
        padded = padded_dims_for((5, 9, 3), (7, 2, 3))
        assert all(
            p >= a + b - 1
            for p, a, b in zip(padded, (5, 9, 3), (7, 2, 3))
        )


class TestCorrelate:
    def test_impulse_pair(self):
        f = np.zeros((3, 3, 3))
        f[0, 0, 0] = 1.0
        padded = padded_dims_for(f.shape, f.shape)
        grid = correlate(forward(f, padded), forward(f, padded))
        expected = np.zeros(grid.values.shape)
        expected[grid.origin] = 1.0
        assert np.abs(grid.values - expected).max() < 1e-12

    def test_shift_theorem(self):
        f = np.zeros((5, 5, 5))
        f[1, 0, 0] = 1.0
        g = np.zeros((5, 5, 5))
        g[3, 0, 0] = 1.0
        padded = padded_dims_for(f.shape, g.shape)
        grid = correlate(forward(f, padded), forward(g, padded))
        idx = (grid.origin[0] + 2, grid.origin[1], grid.origin[2])
        assert abs(grid.values[idx] - 1.0) < 1e-12
        assert np.abs(grid.values).sum() == pytest.approx(1.0, abs=1e-9)

    def test_matches_direct_oracle(self):
        rng = np.random.default_rng(1)
        f = rng.normal(0, 1, (5, 5, 5))
        g = rng.normal(0, 1, (5, 5, 5))
        padded = padded_dims_for(f.shape, g.shape)
        grid = correlate(forward(f, padded), forward(g, padded))
        expected, origin = direct_correlation(f, g)
        assert grid.origin == origin
        assert np.abs(grid.values - expected).max() < 1e-9

    def test_matches_direct_oracle_mismatched_dims(self):
        rng = np.random.default_rng(2)
        f = rng.normal(0, 1, (4, 5, 3))
        g = rng.normal(0, 1, (6, 2, 5))
        padded = padded_dims_for(f.shape, g.shape)
        grid = correlate(forward(f, padded), forward(g, padded))
        expected, origin = direct_correlation(f, g)
        assert grid.origin == origin
        assert np.abs(grid.values - expected).max() < 1e-9

    def test_dims_mismatch_error(self):
        f = forward(np.zeros((3, 3, 3)), (8, 8, 8))
        g = forward(np.zeros((3, 3, 3)), (9, 8, 8))
        with pytest.raises(ValueError):
            correlate(f, g)


class TestAccumulate:
    def test_single_pair_equals_correlate(self):
        rng = np.random.default_rng(3)
        f = rng.normal(0, 1, (4, 4, 4))
        g = rng.normal(0, 1, (4, 4, 4))
        padded = padded_dims_for(f.shape, g.shape)
        fs, gs = forward(f, padded), forward(g, padded)
        single = correlate(fs, gs)
        acc = accumulate_correlate([(fs, gs)], [1.0])
        assert np.abs(acc.values - single.values).max() < 1e-12

    def test_linearity_doubling(self):
        rng = np.random.default_rng(4)
        f = rng.normal(0, 1, (4, 4, 4))
        g = rng.normal(0, 1, (4, 4, 4))
        padded = padded_dims_for(f.shape, g.shape)
        fs, gs = forward(f, padded), forward(g, padded)
        single = correlate(fs, gs)
        acc = accumulate_correlate([(fs, gs), (fs, gs)], [1.0, 1.0])
        assert np.abs(acc.values - 2 * single.values).max() < 1e-9

    def test_six_weighted_pairs(self):
        rng = np.random.default_rng(5)
        weights = [1, 1, 1, 2, 2, 2]
        fs_list, gs_list, expected = [], [], None
        padded = padded_dims_for((4, 4, 4), (4, 4, 4))
        for w in weights:
            f = rng.normal(0, 1, (4, 4, 4))
            g = rng.normal(0, 1, (4, 4, 4))
            fs_list.append(forward(f, padded))
            gs_list.append(forward(g, padded))
            term, _ = direct_correlation(f, g)
            expected = w * term if expected is None else expected + w * term
        acc = accumulate_correlate(list(zip(fs_list, gs_list)), weights)
        assert np.abs(acc.values - expected).max() < 1e-8

    def test_empty_list(self):
        with pytest.raises(ValueError):
            accumulate_correlate([], [])


class TestCounters:
    def test_counts(self):
        reset_transform_counts()
        rng = np.random.default_rng(6)
        f = rng.normal(0, 1, (4, 4, 4))
        padded = padded_dims_for(f.shape, f.shape)
        fs = forward(f, padded)
        gs = forward(f, padded)
        correlate(fs, gs)
        accumulate_correlate([(fs, gs), (fs, gs)], [1.0, 2.0])
        counts = transform_counts()
        assert counts == {"forward": 2, "inverse": 2}
