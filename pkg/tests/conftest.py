import numpy as np
import pytest

from platecal.model import ErrorParams, GantryConfig, WorkVolume
from platecal.simulate import (
    DEMO_ERRORS,
    DEMO_SENSOR_Z_OFFSETS,
    NOISELESS,
    CampaignSpec,
    demo_campaign_spec,
    demo_machine,
    demo_plate,
    simulate_campaign,
    spread_plate_poses,
)

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def plate():
    return demo_plate()


@pytest.fixture
def flat_plate():
    return demo_plate(flat=True)


@pytest.fixture
def machine():
    return demo_machine(DEMO_ERRORS)


@pytest.fixture
def bare_machine():
    """Zero tool offset and a roomy work volume, handy for closed-form checks."""
    volume = WorkVolume(np.array([-1000.0, -1000.0, -1000.0]), np.array([1000.0, 1000.0, 1000.0]))
    return GantryConfig(tool_offset=np.zeros(3), work_volume=volume, true_errors=ErrorParams.zero())


@pytest.fixture
def noiseless_campaign(plate, machine):
    spec = demo_campaign_spec(plate, machine, noise=NOISELESS)
    return simulate_campaign(spec, plate, machine)


def random_error_params(rng, angle=2e-3, scale=5e-4, s_z=True) -> ErrorParams:
    """Random intrinsics with magnitudes bounded away from zero."""
    mags = np.where(np.arange(8) < 3, angle, 0.0)
    mags[3:6] = scale
    mags[6:] = angle
    values = rng.uniform(0.05, 1.0, 8) * rng.choice([-1.0, 1.0], 8) * mags
    if not s_z:
        values[5] = 0.0
    return ErrorParams.from_array(values)


def random_campaign(rng, plate, p_e=None, m=None, noise=NOISELESS):
    """Noiseless (by default) campaign with jittered plate placements."""
    p_e = random_error_params(rng) if p_e is None else p_e
    cfg = demo_machine(p_e)
    m = int(rng.integers(4, 9)) if m is None else m
    spec = CampaignSpec(
        plate_poses=spread_plate_poses(plate, m, cfg, rng=rng),
        carriage_heights=tuple(rng.uniform(1.0, 10.0, m)),
        sensor_z_offsets=DEMO_SENSOR_Z_OFFSETS,
        noise=noise,
        rng_seed=int(rng.integers(2**31)),
    )
    measurements, truth = simulate_campaign(spec, plate, cfg)
    return measurements, truth, cfg, spec


@pytest.fixture
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
