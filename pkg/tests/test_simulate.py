import math
from dataclasses import replace

import numpy as np
import pytest

from platecal.errors import UnreachableError
from platecal.model import ErrorParams, GantryConfig, PlatePose, WorkVolume, impact_point, plate_to_inertial
from platecal.residual import stack_residuals
from platecal.simulate import (
    NOISELESS,
    CampaignSpec,
    NoiseModel,
    center_beam_on_sensor,
    demo_campaign_spec,
    demo_machine,
    demo_plate,
    generate_campaign,
    generate_raster,
    raster_grid,
    simulate_campaign,
)

N_SEEDS = 1000


class TestCentering:
    def test_straight_beam(self, bare_machine):
        q, L = center_beam_on_sensor([300, 400, 80], 0.0, ErrorParams.zero(), bare_machine)
        np.testing.assert_allclose(q, [300, 400, 0], atol=1e-12)
        assert L == pytest.approx(80.0, abs=1e-12)

    def test_tilted_beam(self, bare_machine):
        tilt = 1e-3
        q, L = center_beam_on_sensor([300, 400, 80], 0.0, ErrorParams(tau_y=tilt), bare_machine)
        np.testing.assert_allclose(q, [300 - 80 * math.tan(tilt), 400, 0], atol=1e-9)
        assert L == pytest.approx(80 / math.cos(tilt), abs=1e-9)
        assert q[0] == pytest.approx(299.92000, abs=1e-5)
        assert L == pytest.approx(80.00004, abs=1e-5)
        hit = impact_point(q, ErrorParams(tau_y=tilt), L, bare_machine)
        np.testing.assert_allclose(hit, [300, 400, 80], atol=1e-9)

    def test_general_errors_land_on_sensor(self, machine):
        target = np.array([420.0, 210.0, 250.0])
        q, L = center_beam_on_sensor(target, 40.0, machine.true_errors, machine)
        assert q[2] == 40.0
        np.testing.assert_allclose(impact_point(q, machine.true_errors, L, machine), target, atol=1e-9)

    def test_outside_reach(self, machine):
        with pytest.raises(UnreachableError, match="unreachable"):
            center_beam_on_sensor([1500.0, 200.0, 250.0], 0.0, machine.true_errors, machine)

    def test_sensor_behind_beam(self, machine):
        with pytest.raises(UnreachableError, match="laser length"):
            center_beam_on_sensor([300.0, 200.0, -100.0], 0.0, machine.true_errors, machine)


class TestCampaign:
    def test_noiseless_matches_truth(self, plate, machine):
        spec = demo_campaign_spec(plate, machine, noise=NOISELESS)
        measurements, truth = simulate_campaign(spec, plate, machine)
        assert len(measurements) == 8
        assert all(m.encoder_snapshots.shape == (4, 3) for m in measurements)
        assert np.abs(stack_residuals(measurements, truth, plate, machine)).max() < 1e-9
        np.testing.assert_allclose([m.gamma_guess for m in measurements], truth.gammas, atol=0)

    def test_impacts_hit_sensor_centres(self, plate, machine):
        spec = demo_campaign_spec(plate, machine, noise=NOISELESS)
        measurements, truth = simulate_campaign(spec, plate, machine)
        for j, (meas, pose) in enumerate(zip(measurements, spec.plate_poses)):
            for k in range(plate.n_sensors):
                hit = impact_point(meas.encoder_snapshots[k], machine.true_errors, truth.lengths[j, k], machine)
                np.testing.assert_allclose(hit, plate_to_inertial(pose, plate.sensors[k]), atol=1e-9)

    def test_length_guess_quantised(self, plate, machine):
        measurements, truth = simulate_campaign(demo_campaign_spec(plate, machine), plate, machine)
        guesses = np.array([m.laser_length_guess for m in measurements])
        np.testing.assert_array_equal(guesses % 5.0, 0.0)
        assert np.abs(guesses - truth.lengths).max() <= 2.5

    def test_same_seed_is_bit_identical(self, plate, machine):
        spec = demo_campaign_spec(plate, machine, rng_seed=11)
        a = generate_campaign(spec, plate, machine)
        b = generate_campaign(spec, plate, machine)
        for x, y in zip(a, b):
            assert np.array_equal(x.encoder_snapshots, y.encoder_snapshots)
            assert x.gamma_guess == y.gamma_guess
            assert np.array_equal(x.laser_length_guess, y.laser_length_guess)

    def test_other_seed_differs(self, plate, machine):
        a = generate_campaign(demo_campaign_spec(plate, machine, rng_seed=1), plate, machine)
        b = generate_campaign(demo_campaign_spec(plate, machine, rng_seed=2), plate, machine)
        assert not np.array_equal(a[0].encoder_snapshots, b[0].encoder_snapshots)

    def test_poses_do_not_share_a_stream(self, plate, machine):
        spec = demo_campaign_spec(plate, machine, rng_seed=3)
        full = generate_campaign(spec, plate, machine)
        head = replace(spec, plate_poses=spec.plate_poses[:3], carriage_heights=spec.carriage_heights[:3])
        for x, y in zip(generate_campaign(head, plate, machine), full):
            assert np.array_equal(x.encoder_snapshots, y.encoder_snapshots)

    def test_requires_ground_truth(self, plate):
        cfg = demo_machine(None)
        with pytest.raises(ValueError, match="ground truth"):
            generate_campaign(demo_campaign_spec(plate, cfg), plate, cfg)

    def test_spec_validation(self):
        pose = PlatePose(np.array([300.0, 200.0, 250.0]), 0.0)
        with pytest.raises(ValueError, match="carriage height"):
            CampaignSpec((pose,), (0.0, 1.0))
        with pytest.raises(ValueError):
            NoiseModel(centering_sigma=-1.0)


def _residual_rms(plate, machine, centering_sigma):
    spec = demo_campaign_spec(plate, machine, noise=NoiseModel(centering_sigma=centering_sigma))
    planar = []
    for seed in range(N_SEEDS):
        measurements, truth = simulate_campaign(replace(spec, rng_seed=seed), plate, machine)
        planar.append(stack_residuals(measurements, truth, plate, machine).reshape(-1, 3)[:, :2])
    return float(np.sqrt(np.mean(np.concatenate(planar) ** 2)))


@pytest.fixture(scope="module")
def noise_rms():
    plate, machine = demo_plate(), demo_machine()
    return {sigma: _residual_rms(plate, machine, sigma) for sigma in (0.05, 0.10)}


class TestNoise:
    def test_planar_rms_matches_two_spot_offsets(self, noise_rms):
        # each planar residual is the difference of two independent spot
        # offsets plus the two encoder errors
        sigma_c, sigma_e = 0.05, NoiseModel().encoder_sigma
        expected = math.sqrt(2 * (sigma_c**2 + sigma_e**2))
        assert noise_rms[0.05] == pytest.approx(expected, rel=0.02)
        assert noise_rms[0.05] == pytest.approx(0.07, abs=0.002)

    def test_doubling_sigma_doubles_rms(self, noise_rms):
        assert noise_rms[0.10] / noise_rms[0.05] == pytest.approx(2.0, rel=0.05)


class TestRaster:
    def test_point_count(self):
        volume = WorkVolume(np.zeros(3), np.array([1000.0, 500.0, 0.0]))
        grid = raster_grid(volume, 250.0)
        assert grid.shape == (15, 3)
        np.testing.assert_array_equal(grid[:5, 0], [0, 250, 500, 750, 1000])

    def test_zero_errors(self):
        cfg = GantryConfig(np.array([0.0, 0.0, -50.0]), WorkVolume(np.zeros(3), np.array([1000.0, 500.0, 0.0])),
                           ErrorParams.zero())
        raster = generate_raster(cfg, 250.0)
        np.testing.assert_array_equal(raster.true_positions, raster.grid_points + cfg.tool_offset)

    def test_squareness_offset(self):
        cfg = GantryConfig(np.zeros(3), WorkVolume(np.zeros(3), np.array([1000.0, 500.0, 0.0])),
                           ErrorParams(alpha_xy=1e-3))
        raster = generate_raster(cfg, 250.0)
        i = np.flatnonzero((raster.grid_points == [0, 500, 0]).all(axis=1))[0]
        assert raster.true_positions[i, 0] == pytest.approx(500 * math.sin(1e-3), abs=1e-12)
        assert raster.true_positions[i, 0] == pytest.approx(0.5000, abs=1e-4)

    def test_spacing_too_large(self):
        with pytest.raises(ValueError, match="empty raster"):
            raster_grid(WorkVolume(np.zeros(3), np.array([100.0, 100.0, 0.0])), 150.0)

    @pytest.mark.parametrize("spacing", [0.0, -5.0])
    def test_spacing_must_be_positive(self, spacing):
        with pytest.raises(ValueError):
            raster_grid(WorkVolume(np.zeros(3), np.ones(3)), spacing)
