import math
from dataclasses import replace

import numpy as np
import pytest

from platecal.model import ErrorParams, PlatePose, rot_z
from platecal.residual import (
    IdentVector,
    Layout,
    PlateProblem,
    PoseMeasurement,
    pack,
    pair_difference_ee_selected,
    pair_difference_inertial,
    residual_plate_frame,
    stack_residuals,
    unpack,
)
from platecal.simulate import NOISELESS, demo_campaign_spec, demo_machine, simulate_campaign

from conftest import random_campaign


def _perturbed(truth: IdentVector, rng, scale=1e-3) -> IdentVector:
    flat = truth.pack()
    flat = flat + rng.normal(0, 1, flat.size) * np.where(np.arange(flat.size) < 8, scale * 1e-2, scale)
    return IdentVector.unpack(flat, truth.lengths.shape[1])


class TestPairDifferences:
    def test_same_snapshot_is_zero(self, bare_machine):
        q = np.array([10.0, 20.0, 30.0])
        p_e = ErrorParams(alpha_xy=1e-3, tau_x=2e-3)
        np.testing.assert_array_equal(pair_difference_inertial(q, q, p_e, 50.0, 50.0, bare_machine), 0)
        np.testing.assert_array_equal(pair_difference_ee_selected(q, q, p_e, bare_machine), 0)

    def test_lengths_cancel_without_tilt(self, bare_machine):
        r = pair_difference_inertial([0, 0, 0], [100, 0, 0], ErrorParams.zero(), 50.0, 50.0, bare_machine)
        np.testing.assert_array_equal(r, [100, 0, 0])

    def test_length_difference_along_tilted_beam(self, bare_machine):
        r = pair_difference_inertial([0, 0, 0], [0, 0, 0], ErrorParams(tau_y=1e-3), 50.0, 150.0, bare_machine)
        np.testing.assert_allclose(r, [100 * math.sin(1e-3), 0, 100 * math.cos(1e-3)], atol=1e-12)

    def test_ee_selected_takes_xy(self, bare_machine):
        r = pair_difference_ee_selected([1, 1, 1], [4, 5, 6], ErrorParams.zero(), bare_machine)
        np.testing.assert_array_equal(r, [3, 4])

    def test_ee_selected_quarter_roll(self, bare_machine):
        # R_EI = Rx(-pi/2) written out by hand
        R_EI = np.array([[1.0, 0, 0], [0, 0, 1.0], [0, -1.0, 0]])
        expected = (R_EI @ np.array([0.0, 0.0, 10.0]))[:2]
        r = pair_difference_ee_selected([0, 0, 0], [0, 0, 10], ErrorParams(tau_x=math.pi / 2), bare_machine)
        np.testing.assert_allclose(r, expected, atol=1e-12)
        np.testing.assert_allclose(r, [0, 10], atol=1e-12)


class TestResidualPlateFrame:
    def test_zero_at_truth(self, noiseless_campaign, plate, machine):
        measurements, truth = noiseless_campaign
        for j, meas in enumerate(measurements):
            for k in range(1, plate.n_sensors):
                r = residual_plate_frame(meas, (0, k), truth.p_e, truth.lengths[j], truth.gammas[j],
                                         plate, machine)
                assert np.abs(r).max() < 1e-9

    def test_yaw_error(self, noiseless_campaign, plate, machine):
        measurements, truth = noiseless_campaign
        j = 3
        r = residual_plate_frame(measurements[j], (0, 1), truth.p_e, truth.lengths[j],
                                 truth.gammas[j] + 1e-3, plate, machine)
        expected = [200 * math.cos(1e-3) - 200, -200 * math.sin(1e-3), 0.0]
        np.testing.assert_allclose(r, expected, atol=1e-9)
        assert r[1] == pytest.approx(-0.2000, abs=1e-4)

    def test_length_error_without_tilt(self, plate):
        cfg = demo_machine(ErrorParams(alpha_xy=5e-4, s_x=1e-4))
        measurements, truth = simulate_campaign(demo_campaign_spec(plate, cfg, noise=NOISELESS), plate, cfg)
        lengths = truth.lengths[0].copy()
        lengths[2] += 0.5
        r = residual_plate_frame(measurements[0], (0, 2), truth.p_e, lengths, truth.gammas[0], plate, cfg)
        np.testing.assert_allclose(r, [0, 0, 0.5], atol=1e-9)

    @pytest.mark.parametrize("pair", [(1, 1), (0, 4)])
    def test_bad_pair(self, noiseless_campaign, plate, machine, pair):
        measurements, truth = noiseless_campaign
        with pytest.raises((ValueError, IndexError)):
            residual_plate_frame(measurements[0], pair, truth.p_e, truth.lengths[0], 0.0, plate, machine)

    def test_frames_agree_without_tilt(self, plate):
        p_e = ErrorParams(alpha_xy=5e-4, alpha_xz=-3e-4, alpha_yz=2e-4, s_x=1e-4, s_y=-2e-4)
        cfg = demo_machine(p_e)
        measurements, truth = simulate_campaign(demo_campaign_spec(plate, cfg, rng_seed=4), plate, cfg)
        rng = np.random.default_rng(0)
        p_eval = _perturbed(truth, rng)
        p_eval = replace(p_eval, p_e=replace(p_eval.p_e, tau_x=0.0, tau_y=0.0))
        for j, meas in enumerate(measurements):
            gamma = p_eval.gammas[j]
            for k in range(1, plate.n_sensors):
                res_m = residual_plate_frame(meas, (0, k), p_eval.p_e, p_eval.lengths[j], gamma, plate, cfg)
                in_e = (rot_z(gamma) @ res_m)[:2]
                q = meas.encoder_snapshots
                selected = pair_difference_ee_selected(q[0], q[k], p_eval.p_e, cfg)
                expected = selected - (rot_z(gamma) @ plate.reference_distance(0, k))[:2]
                np.testing.assert_allclose(in_e, expected, atol=1e-9)

    def test_plate_translation_invariance(self, plate, machine):
        spec = demo_campaign_spec(plate, machine, noise=NOISELESS)
        shifted = replace(spec, plate_poses=tuple(
            PlatePose(p.position + np.array([100.0, 0.0, 0.0]) * (-1 if p.position[0] > 500 else 1), p.gamma)
            for p in spec.plate_poses
        ))
        base, truth = simulate_campaign(spec, plate, machine)
        moved, truth_moved = simulate_campaign(shifted, plate, machine)
        np.testing.assert_allclose(truth_moved.lengths, truth.lengths, atol=1e-9)
        rng = np.random.default_rng(5)
        for _ in range(5):
            p = _perturbed(truth, rng)
            np.testing.assert_allclose(stack_residuals(moved, p, plate, machine),
                                       stack_residuals(base, p, plate, machine), atol=1e-9)


class TestStacking:
    @pytest.mark.parametrize("m, size", [(1, 9), (8, 72)])
    def test_lengths(self, plate, machine, m, size):
        spec = demo_campaign_spec(plate, machine, m=m, noise=NOISELESS)
        measurements, truth = simulate_campaign(spec, plate, machine)
        r = stack_residuals(measurements, truth, plate, machine)
        assert r.shape == (size,)
        assert np.abs(r).max() < 1e-9

    def test_matches_pairwise_evaluation(self, noiseless_campaign, plate, machine):
        measurements, truth = noiseless_campaign
        p = _perturbed(truth, np.random.default_rng(6))
        literal = np.concatenate([
            residual_plate_frame(meas, (0, k), p.p_e, p.lengths[j], p.gammas[j], plate, machine)
            for j, meas in enumerate(measurements)
            for k in range(1, plate.n_sensors)
        ])
        np.testing.assert_allclose(stack_residuals(measurements, p, plate, machine), literal,
                                   rtol=0, atol=1e-10)

    def test_zero_at_truth_random_campaigns(self, plate):
        rng = np.random.default_rng(7)
        for _ in range(10):
            measurements, truth, cfg, _ = random_campaign(rng, plate)
            assert np.abs(stack_residuals(measurements, truth, plate, cfg)).max() < 1e-9

    def test_empty_campaign_rejected(self, plate, machine, noiseless_campaign):
        with pytest.raises(ValueError):
            stack_residuals([], noiseless_campaign[1], plate, machine)

    def test_sensor_count_mismatch(self, plate):
        meas = PoseMeasurement(np.zeros((3, 3)), 0.0, np.ones(3))
        with pytest.raises(ValueError, match="snapshots"):
            PlateProblem([meas], plate)


class TestPacking:
    def test_no_poses(self):
        flat = IdentVector(ErrorParams.zero(), np.zeros((0, 4)), np.zeros(0)).pack()
        assert flat.shape == (8,)

    def test_two_poses(self):
        p = IdentVector(ErrorParams.zero(), np.ones((2, 4)), np.zeros(2))
        assert p.pack().shape == (18,)
        assert p.layout.names[8:13] == ("pose0.L0", "pose0.L1", "pose0.L2", "pose0.L3", "pose0.gamma")

    def test_round_trip(self):
        rng = np.random.default_rng(8)
        flat = rng.normal(size=8 + 3 * 5)
        assert np.array_equal(pack(unpack(flat, 4)), flat)
        p = unpack(flat, 4)
        again = unpack(pack(p), 4)
        assert again.p_e == p.p_e
        assert np.array_equal(again.lengths, p.lengths)
        assert np.array_equal(again.gammas, p.gammas)

    def test_bad_size(self):
        with pytest.raises(ValueError):
            unpack(np.zeros(12), 4)

    def test_layout_indices(self):
        lay = Layout(3, 4)
        assert lay.size == 23
        assert lay.length_index(1, 2) == lay.index("pose1.L2") == 15
        assert lay.gamma_index(2) == lay.index("pose2.gamma") == 22
        assert lay.index("tau_y") == 7

    def test_guess_validation(self):
        with pytest.raises(ValueError, match="positive"):
            PoseMeasurement(np.zeros((4, 3)), 0.0, np.array([1.0, 0.0, 1.0, 1.0]))
        with pytest.raises(ValueError):
            PoseMeasurement(np.zeros((4, 3)), 0.0, np.ones(3))
