import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from tppo.data import ObservationWindow
from tppo.evaluation import (DensityGrid, ade, baseline_report, best_of_k_errors, best_of_k_eval,
                             constant_velocity_baseline, density_map, fde, read_density_grid, sample_futures,
                             sampling_sweep, window_generator, write_density_grid)
from tppo.model import ModelConfig, build_params


def line_window(n_peds=1, obs=8, pred=8, step=(0.5, 0.0), origin=(0.0, 0.0)):
    t = np.arange(obs + pred)[:, None]
    full = np.stack([np.asarray(origin) + [0.0, 3.0 * p] + t * np.asarray(step) for p in range(n_peds)])
    return ObservationWindow(obs, pred, list(range(1, n_peds + 1)), full[:, :obs], full[:, obs:], "w", 0, 0.4)


@pytest.fixture(scope="module")
def params():
    return build_params(ModelConfig(pred_len=8), seed=5)


class TestMetrics:
    def test_constant_offset(self):
        gt = np.zeros((1, 4, 2))
        pred = gt + [0.3, 0.4]
        assert ade(pred, gt) == pytest.approx(0.5)
        assert fde(pred, gt) == pytest.approx(0.5)

    def test_final_only(self):
        gt = np.zeros((1, 4, 2))
        pred = gt.copy()
        pred[0, -1] = [1.0, 0.0]
        assert ade(pred, gt) == pytest.approx(0.25)
        assert fde(pred, gt) == pytest.approx(1.0)

    def test_two_peds_mean(self):
        gt = np.zeros((2, 2, 2))
        pred = gt.copy()
        pred[1, 0] = [0.5, 0.0]
        assert ade(pred, gt) == pytest.approx(0.125)
        assert fde(pred, gt) == 0.0

    def test_identical_zero(self, rng):
        gt = rng.normal(size=(3, 12, 2))
        assert ade(gt, gt) == 0.0 and fde(gt, gt) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ade(np.zeros((1, 4, 2)), np.zeros((1, 5, 2)))
        with pytest.raises(ValueError):
            fde(np.zeros((2, 4, 2)), np.zeros((1, 4, 2)))

    def test_fde_le_max_error(self, rng):
        gt, pred = rng.normal(size=(4, 6, 2)), rng.normal(size=(4, 6, 2))
        d = np.linalg.norm(pred - gt, axis=-1)
        assert ade(pred, gt) <= d.max() and fde(pred, gt) <= d.max()


class TestBestOfK:
    def test_k1_equals_plain(self, rng):
        gt, pred = rng.normal(size=(3, 5, 2)), rng.normal(size=(3, 5, 2))
        a, f = best_of_k_errors(pred[None], gt)
        assert a.mean() == pytest.approx(ade(pred, gt))
        assert f.mean() == pytest.approx(fde(pred, gt))

    def test_perfect_sample_zero(self, rng):
        gt = rng.normal(size=(3, 5, 2))
        samples = np.stack([gt + 1, gt, gt - 1])
        a, f = best_of_k_errors(samples, gt)
        assert np.all(a == 0) and np.all(f == 0)

    def test_fde_of_ade_best(self):
        gt = np.zeros((1, 2, 2))
        good_ade = np.array([[[0.1, 0.0], [0.9, 0.0]]])
        good_fde = np.array([[[2.0, 0.0], [0.0, 0.0]]])
        a, f = best_of_k_errors(np.stack([good_ade, good_fde]), gt)
        assert a[0] == pytest.approx(0.5) and f[0] == pytest.approx(0.9)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 10))
    def test_monotone_in_k(self, seed, k):
        rng = np.random.default_rng(seed)
        gt = rng.normal(size=(2, 4, 2))
        samples = rng.normal(size=(k + 1, 2, 4, 2))
        assert best_of_k_errors(samples, gt)[0].mean() <= best_of_k_errors(samples[:k], gt)[0].mean()


class TestSampling:
    def test_window_generator_reproducible(self):
        a = torch.randn(3, generator=window_generator(1, 2))
        b = torch.randn(3, generator=window_generator(1, 2))
        c = torch.randn(3, generator=window_generator(1, 3))
        assert torch.equal(a, b) and not torch.equal(a, c)

    def test_nested_streams(self, params, cross_windows):
        w = cross_windows[0]
        long = sample_futures(params, w, 10, window_generator(0, 0))
        short = sample_futures(params, w, 4, window_generator(0, 0))
        np.testing.assert_allclose(long[:4], short, atol=1e-6)

    def test_shapes(self, params, cross_windows):
        out = sample_futures(params, cross_windows[0], 3, window_generator(0, 0))
        assert out.shape == (3, cross_windows[0].n_peds, 8, 2)

    def test_deterministic_samples_identical(self, params, cross_windows):
        out = sample_futures(params, cross_windows[0], 4, window_generator(0, 0), stochastic=False)
        assert np.all(out == out[:1])

    def test_sweep_monotone(self, params, cross_windows):
        reports = sampling_sweep(params, cross_windows, [1, 2, 5, 10, 20], seed=3)
        ades = [r.ade for r in reports]
        assert all(a >= b for a, b in zip(ades, ades[1:]))
        assert [r.k for r in reports] == [1, 2, 5, 10, 20]

    def test_sweep_matches_single(self, params, cross_windows):
        (swept,) = sampling_sweep(params, cross_windows, [20], seed=3)
        single = best_of_k_eval(params, cross_windows, 20, seed=3)
        assert swept == single

    def test_sweep_entry_matches_single_k(self, params, cross_windows):
        sweep = sampling_sweep(params, cross_windows, [5, 20], seed=3)
        assert sweep[0].ade == pytest.approx(best_of_k_eval(params, cross_windows, 5, seed=3).ade, rel=1e-6)

    def test_reproducible(self, params, cross_windows):
        assert best_of_k_eval(params, cross_windows, 5, seed=1) == best_of_k_eval(params, cross_windows, 5, seed=1)

    def test_report_counts(self, params, cross_windows):
        r = best_of_k_eval(params, cross_windows, 2)
        assert r.n_pedestrians == sum(w.n_peds for w in cross_windows)
        assert r.pred_len == 8 and r.k == 2

    def test_errors(self, params, cross_windows):
        with pytest.raises(ValueError):
            best_of_k_eval(params, [], 20)
        with pytest.raises(ValueError):
            sampling_sweep(params, cross_windows, [])
        with pytest.raises(ValueError):
            best_of_k_eval(params, cross_windows, 0)
        with pytest.raises(ValueError):
            best_of_k_eval(params, [line_window(pred=12)], 1)

    def test_translation_invariant_metric(self, cross_windows):
        params = build_params(ModelConfig(pred_len=8), seed=5, dtype=torch.float64)
        w = cross_windows[1]
        shift = np.array([40.0, -25.0])
        moved = ObservationWindow(w.obs_len, w.pred_len, w.pedestrians, w.observed + shift, w.future + shift,
                                  w.scene_id, w.start_frame, w.dt)
        a = best_of_k_eval(params, [w], 5, seed=2)
        b = best_of_k_eval(params, [moved], 5, seed=2)
        assert a.ade == pytest.approx(b.ade, abs=1e-9)
        assert a.fde == pytest.approx(b.fde, abs=1e-9)


class TestDensity:
    def test_conservation(self, params, cross_windows):
        grid = density_map(params, cross_windows[0], n_samples=50, grid_cell=0.1)
        assert grid.counts.shape[0] == cross_windows[0].n_peds
        for channel in grid.counts:
            assert channel.sum() == 50 * 8

    def test_deterministic_single_cell(self, params):
        grid = density_map(params, line_window(), n_samples=40, grid_cell=100.0, stochastic=False)
        nz = np.argwhere(grid.counts[0] > 0)
        assert grid.counts[0].sum() == 40 * 8
        # all samples coincide, so each predicted step sits in one cell with count 40
        assert set(np.unique(grid.counts[0][grid.counts[0] > 0])) <= {40 * t for t in range(1, 9)}
        assert len(nz) >= 1

    def test_deterministic_samples_share_cells(self, params):
        grid = density_map(params, line_window(), n_samples=30, grid_cell=0.05, stochastic=False)
        assert np.all(grid.counts[0] % 30 == 0)

    def test_two_channels(self, params):
        grid = density_map(params, line_window(n_peds=2), n_samples=20)
        assert grid.counts.shape[0] == 2
        assert all(c.sum() == 20 * 8 for c in grid.counts)

    def test_cell_of_matches_counts(self, params):
        w = line_window()
        grid = density_map(params, w, n_samples=1, grid_cell=0.2, stochastic=False)
        pts = sample_futures(params, w, 1, window_generator(0, 0), stochastic=False)[0, 0]
        for p in pts:
            r, c = grid.cell_of(p)
            assert grid.counts[0, r, c] >= 1

    def test_invalid(self, params):
        with pytest.raises(ValueError):
            density_map(params, line_window(), n_samples=0)
        with pytest.raises(ValueError):
            density_map(params, line_window(), grid_cell=0.0)

    def test_file_roundtrip(self, params, tmp_path):
        grid = density_map(params, line_window(n_peds=2), n_samples=10)
        write_density_grid(grid, tmp_path / "g.txt")
        back = read_density_grid(tmp_path / "g.txt")
        assert back.origin == grid.origin and back.cell == grid.cell and back.n_samples == 10
        np.testing.assert_array_equal(back.counts, grid.counts)

    def test_grid_dataclass(self):
        g = DensityGrid((0.0, 0.0), 0.5, np.zeros((1, 2, 2), dtype=np.int64), 1)
        assert g.cell_of((0.75, 0.25)) == (0, 1)


class TestBaseline:
    def test_straight_line_exact(self):
        w = line_window(step=(0.3, -0.1))
        pred = constant_velocity_baseline(w).absolute_positions.numpy()
        np.testing.assert_allclose(pred, w.future, atol=1e-12)
        assert baseline_report([w]).ade < 1e-12

    def test_stationary(self):
        w = line_window(step=(0.0, 0.0), origin=(2.0, 1.0))
        disp = constant_velocity_baseline(w).displacements.numpy()
        assert np.all(disp == 0)

    def test_mean_displacement(self):
        obs = np.array([[[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [3.0, 0.0]]])
        w = ObservationWindow(4, 2, [1], obs, np.zeros((1, 2, 2)), "w", 0, 0.4)
        pred = constant_velocity_baseline(w).absolute_positions.numpy()
        np.testing.assert_allclose(pred[0], [[4.0, 0.0], [5.0, 0.0]])

    def test_on_synth_straight(self):
        from tppo.data import synth_generate, windows_from_scenes
        windows = windows_from_scenes(synth_generate("straight", 5, seed=0, n_frames=16), 8, 8)
        r = baseline_report(windows)
        assert r.ade < 0.01 and math.isfinite(r.fde)
