"""Trajectories, event-video rendering and position recovery."""

import numpy as np
import pytest

from ceoptics import baselines, eventsim, optics, tracking
from ceoptics.config import OpticalConfig


def make(grid=64):
    cfg = OpticalConfig.default(grid=grid)
    return cfg, optics.make_pupil_grid(cfg)


class TestTrajectory:
    def test_single_position(self):
        t = tracking.brownian_trajectory(1, seed=0)
        assert t.positions.shape == (1, 3)

    def test_step_magnitudes(self):
        t = tracking.brownian_trajectory(10_001, seed=1)
        steps = np.linalg.norm(np.diff(t.positions, axis=0), axis=1)
        assert abs(steps.mean() * 1e9 - 100.0) < 3.0

    def test_seed_determinism(self):
        a = tracking.brownian_trajectory(50, seed=9)
        b = tracking.brownian_trajectory(50, seed=9)
        assert np.array_equal(a.positions, b.positions)

    def test_reflecting_boundaries(self):
        t = tracking.brownian_trajectory(5000, seed=2,
                                         volume=(1e-6, 1e-6, 0.5e-6))
        half = np.array([0.5e-6, 0.5e-6, 0.25e-6])
        assert np.all(np.abs(t.positions) <= half + 1e-12)

    def test_requires_motion(self):
        with pytest.raises(ValueError, match="move"):
            tracking.Trajectory(np.zeros((3, 3)), dt=1e-3,
                                volume=(1e-6, 1e-6, 1e-6))

    def test_volume_containment_checked(self):
        pos = np.array([[0, 0, 0], [5e-6, 0, 0]])
        with pytest.raises(ValueError, match="volume"):
            tracking.Trajectory(pos, dt=1e-3, volume=(1e-6, 1e-6, 1e-6))


class TestRenderer:
    def test_stationary_scene_all_zero(self):
        cfg, g = make()
        m = optics.Mask.open_aperture(g)
        pos = np.zeros((4, 3))
        pos[1:, 0] = [1e-15, 2e-15, 3e-15]  # negligible but nonzero steps
        traj = tracking.Trajectory(pos, dt=1e-3, volume=tracking.DEFAULT_VOLUME)
        video = tracking.render_coded_event_video(traj, m, cfg, grid=g,
                                                  gaussian_noise=False)
        assert all(np.all(b.counts == 0) for b in video.bins)
        assert len(video.bins) == 3

    def test_single_step_matches_log_difference(self):
        # binned counts track the endpoint log difference within the
        # threshold at every pixel
        cfg, g = make()
        m = baselines.get_baseline("fisher", g)
        traj = tracking.Trajectory(np.array([[0, 0, 0], [100e-9, 0, 0]]),
                                   dt=1e-3, volume=tracking.DEFAULT_VOLUME)
        video = tracking.render_coded_event_video(traj, m, cfg, grid=g,
                                                  gaussian_noise=False)
        beta = cfg.beta_pixel
        h0 = optics.blur_emitter(optics.compute_psf(cfg, g, m, (0, 0, 0)).h,
                                 tracking.EMITTER_DIAMETER, cfg)
        h1 = optics.blur_emitter(
            optics.compute_psf(cfg, g, m, (100e-9, 0, 0)).h,
            tracking.EMITTER_DIAMETER, cfg)
        dl = eventsim.log_diff_measurement(h1 + beta, h0 + beta,
                                           floor=video.floor)
        t = video.threshold
        assert np.all(np.abs(t * video.bins[0].counts - dl) < t)

    def test_fast_step_two_copies(self):
        # a large jump leaves a negative copy at the start and a positive
        # copy at the end
        cfg, g = make()
        m = baselines.get_baseline("fisher", g)
        start = np.array([-0.75e-6, 0, 0])
        stop = np.array([0.75e-6, 0, 0])
        traj = tracking.Trajectory(np.stack([start, stop]), dt=1e-3,
                                   volume=tracking.DEFAULT_VOLUME)
        video = tracking.render_coded_event_video(traj, m, cfg, grid=g,
                                                  gaussian_noise=False)
        counts = video.bins[0].counts
        h_start = optics.compute_psf(cfg, g, m, tuple(start)).h
        h_stop = optics.compute_psf(cfg, g, m, tuple(stop)).h
        core_start = h_start > 0.05 * h_start.max()
        core_stop = h_stop > 0.05 * h_stop.max()
        only_start = core_start & ~core_stop
        only_stop = core_stop & ~core_start
        assert counts[only_start].sum() < 0
        assert counts[only_stop].sum() > 0

    def test_noise_requires_rng(self):
        cfg, g = make()
        m = optics.Mask.open_aperture(g)
        traj = tracking.Trajectory(np.array([[0, 0, 0], [1e-7, 0, 0]]),
                                   dt=1e-3, volume=tracking.DEFAULT_VOLUME)
        with pytest.raises(ValueError, match="rng"):
            tracking.render_coded_event_video(traj, m, cfg, grid=g)


class TestMlEstimate:
    def test_noiseless_single_step(self):
        # self-consistency at a pitch where one 100 nm step is about one
        # pixel, so the quantized measurement actually resolves it; the
        # coarse physical pitch is covered by the looser check below
        cfg = OpticalConfig.default(
            grid=64, pixel_pitch=550e-9 * 111.11 / (4 * 1.4))
        g = optics.make_pupil_grid(cfg)
        m = optics.Mask.open_aperture(g)
        traj = tracking.Trajectory(np.array([[0, 0, 0], [100e-9, 0, 0]]),
                                   dt=1e-3, volume=(5e-6, 5e-6, 3e-6))
        video = tracking.render_coded_event_video(traj, m, cfg, grid=g,
                                                  gaussian_noise=False)
        est = tracking.ml_estimate(video.bins[0], (0, 0, 0), m, cfg, grid=g)
        assert not est.no_information
        err = est.position - np.array([100e-9, 0, 0])
        assert np.linalg.norm(err[:2]) < 20e-9

    def test_noiseless_single_step_coarse_pitch(self):
        # at the physical 49.58 um pitch the step is 0.23 px; the flat
        # quantized depth likelihood couples a few tens of nm into x
        cfg, g = make()
        m = optics.Mask.open_aperture(g)
        traj = tracking.Trajectory(np.array([[0, 0, 0], [100e-9, 0, 0]]),
                                   dt=1e-3, volume=tracking.DEFAULT_VOLUME)
        video = tracking.render_coded_event_video(traj, m, cfg, grid=g,
                                                  gaussian_noise=False)
        est = tracking.ml_estimate(video.bins[0], (0, 0, 0), m, cfg, grid=g)
        err = est.position - np.array([100e-9, 0, 0])
        assert np.linalg.norm(err[:2]) < 60e-9

    def test_all_zero_frame_flagged(self):
        cfg, g = make()
        m = optics.Mask.open_aperture(g)
        frame = eventsim.BinnedFrame(counts=np.zeros((g.n, g.n), np.int32),
                                     t_start=0.0, t_end=1.0, n_subframes=16)
        prev = (50e-9, -20e-9, 0.1e-6)
        est = tracking.ml_estimate(frame, prev, m, cfg, grid=g)
        assert est.no_information
        assert np.array_equal(est.position, np.asarray(prev))


class TestScore:
    def test_perfect_estimates(self):
        truths = np.random.default_rng(0).normal(0, 1e-6, (7, 3))
        res = tracking.score(truths, truths)
        assert res.rmse_3d == 0.0 and res.l1_z == 0.0

    def test_constant_z_offset(self):
        truths = np.zeros((5, 3))
        est = truths + np.array([0, 0, 30e-9])
        res = tracking.score(truths, est)
        assert np.isclose(res.rmse_3d, 30e-9)
        assert np.isclose(res.l1_z, 30e-9)

    def test_hand_computed_table(self):
        truths = np.zeros((2, 3))
        est = np.array([[3e-9, 4e-9, 0.0], [0.0, 0.0, 12e-9]])
        res = tracking.score(truths, est)
        # rmse = sqrt((25 + 144)/2) nm; l1_z = (0 + 12)/2 nm
        assert np.isclose(res.rmse_3d, np.sqrt(169.0 / 2) * 1e-9)
        assert np.isclose(res.l1_z, 6e-9)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            tracking.score(np.zeros((3, 3)), np.zeros((2, 3)))


class TestGroundTruthConvention:
    def test_bin_end_vs_bin_start_bounded_by_step(self):
        # swapping the ground-truth convention changes the z error by at
        # most one mean step magnitude
        cfg, g = make()
        m = optics.Mask.open_aperture(g)
        rng = np.random.default_rng(4)
        traj = tracking.brownian_trajectory(12, seed=3)
        video = tracking.render_coded_event_video(traj, m, cfg, grid=g,
                                                  gaussian_noise=False)
        est = []
        prev = traj.positions[0]
        for b in video.bins:
            e = tracking.ml_estimate(b, prev, m, cfg, grid=g)
            est.append(e.position)
            prev = e.position
        est = np.array(est)
        end_score = tracking.score(traj.positions[1:], est)
        start_score = tracking.score(traj.positions[:-1], est)
        steps = np.linalg.norm(np.diff(traj.positions, axis=0), axis=1)
        assert abs(end_score.l1_z - start_score.l1_z) <= steps.mean()


def test_trajectory_csv(tmp_path):
    traj = tracking.brownian_trajectory(4, seed=0)
    path = tmp_path / "traj.csv"
    tracking.write_trajectory_csv(path, traj.positions)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,x_nm,y_nm,z_nm"
    assert len(lines) == 5


def test_summary_csv(tmp_path):
    path = tmp_path / "summary.csv"
    tracking.write_summary_csv(path, [("open", 1e-9, 2e-9)])
    lines = path.read_text().splitlines()
    assert lines[0] == "mask,rmse3d_nm,l1z_nm"
    assert lines[1].startswith("open,1.0,2.0")
