"""Shared fixtures.

The expensive plant artifacts (steady state, a short excitation run) are
session scoped; everything downstream derives from them cheaply.
"""

import numpy as np
import pytest

from romkit import excitation, plant, pod


@pytest.fixture(scope="session")
def plant_config():
    return plant.PlantConfig()


@pytest.fixture(scope="session")
def nominal_u(plant_config):
    return plant.nominal_input(plant_config)


@pytest.fixture(scope="session")
def steady(plant_config, nominal_u):
    return plant.steady_state(plant_config, nominal_u)


@pytest.fixture(scope="session")
def prms_sim(plant_config, steady):
    """A 400-sample excitation run: (inputs, states) with states n x 401."""
    cfg = excitation.PrmsConfig(horizon_samples=400, seed=7)
    inputs = excitation.generate_prms(cfg)
    states = plant.simulate(plant_config, steady, inputs)
    return inputs, states


@pytest.fixture(scope="session")
def normalization(prms_sim):
    _, states = prms_sim
    return pod.fit_normalization(states)


@pytest.fixture(scope="session")
def normalized_snapshots(prms_sim, normalization):
    _, states = prms_sim
    return pod.normalize(states, normalization)


def random_states(config, steady, rng, count):
    """Physical states scattered around the steady state.

    Concentrations are scaled by lognormal-ish factors and temperatures
    shifted additively, which keeps every sample strictly inside the
    domain the plant accepts.
    """
    lay = plant.layout(config)
    out = np.tile(steady[:, None], (1, count)).astype(float)
    conc = lay.concentration_rows()
    temp = lay.temperature_rows()
    out[conc] *= np.exp(rng.uniform(-0.4, 0.4, size=(conc.size, count)))
    out[temp] += rng.uniform(-12.0, 12.0, size=(temp.size, count))
    return out


def random_inputs(config, rng, count):
    lo = config.input_bounds[:, 0]
    hi = config.input_bounds[:, 1]
    return rng.uniform(lo, hi, size=(count, lo.size))


_ACCEPTANCE_LINES: list[tuple[int, str]] = []


@pytest.fixture
def record_acceptance():
    """Collect one verdict line per acceptance check.

    Lines are echoed immediately (visible with -s or on failure) and
    repeated in a dedicated section after the test summary, so a full
    run ends with all ten verdicts in order.
    """

    def _record(number: int, label: str, passed: bool, detail: str) -> None:
        verdict = "PASS" if passed else "FAIL"
        line = f"[{verdict}] acceptance {number:2d}, {label}: {detail}"
        _ACCEPTANCE_LINES.append((number, line))
        print(line, flush=True)

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance checks")
        for _, line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
