"""Bin fitting, histograms, cube assembly, and season cutoffs."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from reference import doy, histogram_naive

from yieldnet.errors import BinFitError
from yieldnet.ingest import (
    BinningManifest,
    CroplandMask,
    RasterImage,
    apply_cutoff,
    assemble_cube,
    composite_start_doy,
    fit_bins,
    histogram,
    histogram_series,
    last_timestep_for_cutoff,
)


def raster_of(values, crop_mask=None):
    values = np.asarray(values, dtype=np.float32)
    if values.ndim == 2:
        values = values[:, :, None]
    r = RasterImage(pixels=values, location_id="L", year=2000, timestep=1)
    mask = np.ones(values.shape[:2], dtype=np.uint8) if crop_mask is None \
        else np.asarray(crop_mask, dtype=np.uint8)
    return r, CroplandMask(values=mask, crop="corn")


class TestFitBins:
    def test_equal_width_edges(self):
        r, m = raster_of([[10.0, 50.0], [30.0, 20.0]])
        manifest = fit_bins([(r, m)], bins=32)
        edges = manifest.edges(0)
        assert np.isclose(edges[1] - edges[0], 1.25)
        assert np.allclose(edges, 10 + 1.25 * np.arange(33))

    def test_constant_band_errors(self):
        r, m = raster_of([[3.0, 3.0], [3.0, 3.0]])
        with pytest.raises(BinFitError, match="band 0.*degenerate"):
            fit_bins([(r, m)], bins=4)

    def test_masked_extreme_ignored(self):
        r, m = raster_of([[1.0, 1000.0], [2.0, 3.0]],
                         crop_mask=[[1, 0], [1, 1]])
        manifest = fit_bins([(r, m)], bins=4)
        assert manifest.uppers[0] == 3.0

    def test_band_with_no_valid_pixels_errors(self):
        values = np.full((2, 2, 2), np.nan, dtype=np.float32)
        values[:, :, 0] = [[1, 2], [3, 4]]
        r, m = raster_of(values)
        with pytest.raises(BinFitError, match="band 1"):
            fit_bins([(r, m)], bins=4)

    def test_streaming_over_multiple_rasters(self):
        r1, m1 = raster_of([[0.0, 5.0]])
        r2, m2 = raster_of([[-2.0, 3.0]])
        manifest = fit_bins([(r1, m1), (r2, m2)], bins=2)
        assert manifest.lowers[0] == -2.0 and manifest.uppers[0] == 5.0

    def test_manifest_json_roundtrip(self, tmp_path):
        r, m = raster_of([[0.25, 0.75]])
        manifest = fit_bins([(r, m)], bins=8, fit_meta={"seed": 3})
        path = tmp_path / "bins.json"
        manifest.save(path)
        back = BinningManifest.load(path)
        assert np.array_equal(back.lowers, manifest.lowers)
        assert np.array_equal(back.uppers, manifest.uppers)
        assert back.bins == 8


class TestHistogram:
    def manifest01(self, bins=4, bands=1):
        return BinningManifest(lowers=np.zeros(bands), uppers=np.ones(bands),
                               bins=bins)

    def test_hand_counts(self):
        r, m = raster_of([[0.1, 0.9], [0.5, 0.5]])
        out = histogram(r, m, self.manifest01())
        assert np.allclose(out[:, 0], [0.25, 0.0, 0.5, 0.25])

    def test_all_masked_out_gives_zeros(self):
        r, m = raster_of([[0.1, 0.9]], crop_mask=[[0, 0]])
        out = histogram(r, m, self.manifest01())
        assert np.array_equal(out, np.zeros((4, 1)))

    def test_out_of_range_clamps_to_edge_bins(self):
        r, m = raster_of([[-5.0, 0.2], [0.7, 99.0]])
        out = histogram(r, m, self.manifest01())
        assert np.allclose(out[:, 0], [0.5, 0.0, 0.25, 0.25])

    def test_upper_edge_lands_in_last_bin(self):
        r, m = raster_of([[1.0, 0.0]])
        out = histogram(r, m, self.manifest01(bins=2))
        assert np.allclose(out[:, 0], [0.5, 0.5])

    def test_nan_pixels_skipped(self):
        r, m = raster_of([[0.1, np.nan], [np.nan, 0.9]])
        out = histogram(r, m, self.manifest01(bins=2))
        assert np.allclose(out[:, 0], [0.5, 0.5])

    def test_band_count_mismatch(self):
        r, m = raster_of([[0.1, 0.9]])
        with pytest.raises(ValueError, match="bands"):
            histogram(r, m, self.manifest01(bands=3))

    def test_matches_naive_reference(self, rng):
        values = rng.uniform(-0.2, 1.2, size=(6, 7)).astype(np.float32)
        r, m = raster_of(values)
        out = histogram(r, m, self.manifest01(bins=5))
        want = histogram_naive(values.reshape(-1).astype(np.float64), 0.0, 1.0, 5)
        assert np.allclose(out[:, 0], want, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.data())
    def test_permutation_invariance(self, data):
        n = data.draw(st.integers(2, 6))
        values = np.array(
            data.draw(st.lists(st.floats(0, 1), min_size=n * n, max_size=n * n)),
            dtype=np.float32).reshape(n, n)
        mask = np.array(
            data.draw(st.lists(st.integers(0, 1), min_size=n * n, max_size=n * n)),
            dtype=np.uint8).reshape(n, n)
        perm = data.draw(st.permutations(list(range(n * n))))
        r1, m1 = raster_of(values, mask)
        pv = values.reshape(-1)[perm].reshape(n, n)
        pm = mask.reshape(-1)[perm].reshape(n, n)
        r2, m2 = raster_of(pv, pm)
        manifest = self.manifest01(bins=6)
        assert np.array_equal(histogram(r1, m1, manifest),
                              histogram(r2, m2, manifest))

    def test_every_valid_pixel_lands_in_one_bin(self, rng):
        values = rng.uniform(-3, 3, size=(8, 8)).astype(np.float32)
        r, m = raster_of(values)
        out = histogram(r, m, self.manifest01(bins=7))
        assert np.isclose(out[:, 0].sum(), 1.0, atol=1e-9)

    def test_series_matches_per_slice(self, rng):
        stack = rng.uniform(0, 1, size=(5, 4, 4, 3)).astype(np.float32)
        stack[stack < 0.05] = np.nan
        mask = (rng.random((4, 4)) < 0.6).astype(np.uint8)
        manifest = BinningManifest(lowers=np.zeros(3), uppers=np.ones(3), bins=6)
        series, valid = histogram_series(stack, mask, manifest)
        for t in range(5):
            r = RasterImage(pixels=stack[t], location_id="L", year=1, timestep=t + 1)
            m = CroplandMask(values=mask, crop="corn")
            assert np.array_equal(series[t], histogram(r, m, manifest))


class TestAssembleCube:
    def slices(self, ts, bins=3, bands=2):
        rng = np.random.default_rng(0)
        out = {}
        for t in ts:
            sl = rng.random((bins, bands))
            out[t] = sl / sl.sum(axis=0)
            rng = np.random.default_rng(t)
        return out

    def test_full_season_shape(self):
        cube = assemble_cube(self.slices(range(1, 31)), 30, "L", 2000, "corn")
        assert cube.values.shape == (30, 3, 2)
        assert cube.timestep_valid.all()

    def test_missing_timesteps_zeroed_invalid(self):
        cube = assemble_cube(self.slices([1]), 30, "L", 2000, "corn")
        assert cube.timestep_valid[0]
        assert not cube.timestep_valid[1:].any()
        assert np.array_equal(cube.values[1:], np.zeros((29, 3, 2)))

    def test_sum_property_inherited(self):
        cube = assemble_cube(self.slices([1, 5]), 10, "L", 2000, "corn")
        sums = cube.values.sum(axis=1)
        for t in range(10):
            assert np.allclose(sums[t], 1.0, atol=1e-9) or not sums[t].any()

    def test_duplicate_timestep_rejected(self):
        sl = np.full((2, 1), 0.5)
        with pytest.raises(ValueError, match="duplicate"):
            assemble_cube([(1, sl), (1, sl)], 5, "L", 2000, "corn")

    def test_out_of_range_timestep_rejected(self):
        sl = np.full((2, 1), 0.5)
        with pytest.raises(ValueError, match="outside"):
            assemble_cube([(31, sl)], 30, "L", 2000, "corn")


class TestApplyCutoff:
    def ones_cube(self):
        values = np.full((30, 4, 2), 0.25)
        return assemble_cube({t: values[t - 1] for t in range(1, 31)},
                             30, "L", 2000, "corn")

    def test_cutoff_doys_match_calendar(self):
        assert doy(7, 23) == 204 and doy(8, 23) == 235
        assert doy(9, 23) == 266 and doy(10, 23) == 296

    def test_last_kept_timesteps(self):
        # composite t is kept iff start_doy(t) + 7 <= cutoff day-of-year
        for cutoff, month, day in [("jul23", 7, 23), ("aug23", 8, 23),
                                   ("sep23", 9, 23), ("oct23", 10, 23)]:
            expect = max(t for t in range(1, 31)
                         if composite_start_doy(t) + 7 <= doy(month, day))
            assert last_timestep_for_cutoff(cutoff) == expect
        assert [last_timestep_for_cutoff(c) for c in
                ("jul23", "aug23", "sep23", "oct23")] == [17, 21, 25, 29]

    def test_jul23_zeroes_tail(self):
        cut = apply_cutoff(self.ones_cube(), "jul23")
        assert cut.values[:17].all() and not cut.values[17:].any()
        assert cut.timestep_valid[:17].all() and not cut.timestep_valid[17:].any()

    def test_oct23_zeroes_only_last(self):
        cut = apply_cutoff(self.ones_cube(), "oct23")
        assert cut.values[:29].all() and not cut.values[29].any()

    def test_idempotent(self):
        once = apply_cutoff(self.ones_cube(), "aug23")
        twice = apply_cutoff(once, "aug23")
        assert np.array_equal(once.values, twice.values)
        assert np.array_equal(once.timestep_valid, twice.timestep_valid)

    def test_monotone_in_cutoff_date(self):
        cube = self.ones_cube()
        kept = None
        for cutoff in ("jul23", "aug23", "sep23", "oct23"):
            cut = apply_cutoff(cube, cutoff)
            now = set(np.nonzero(cut.timestep_valid)[0])
            if kept is not None:
                assert kept <= now
            kept = now

    def test_none_is_identity_copy(self):
        cube = self.ones_cube()
        out = apply_cutoff(cube, None)
        assert np.array_equal(out.values, cube.values)
        out.values[0, 0, 0] = 9.0
        assert cube.values[0, 0, 0] == 0.25

    def test_unknown_cutoff_rejected(self):
        with pytest.raises(ValueError, match="unknown cutoff"):
            apply_cutoff(self.ones_cube(), "nov23")
