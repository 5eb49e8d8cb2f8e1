import numpy as np
import pytest

from gridreduce import fixture_path
from gridreduce import netmodel as nm
from gridreduce.simulate import Prepared


def two_bus_doc(x_line=0.5, dispatch_p=0.0, load_p=0.0):
    """One machine on bus 1, a reactance to bus 2; flat solved voltages."""
    params = dict(h=3.0, d=1.0, xd=1.0, xq=0.8, xd_p=0.3, xq_p=0.4, ra=0.0, tdo_p=5.0,
                  tqo_p=0.5, tch=0.3, tgv=0.1, r_gov=0.05, ka=20.0, ta=0.2, kf=0.06,
                  tf=0.35, ke=1.0, te=0.3, ae=0.004, be=1.5)
    return {
        "base_mva": 100.0,
        "buses": [{"id": 1, "voltage_magnitude": 1.0, "voltage_angle": 0.0},
                  {"id": 2, "voltage_magnitude": 1.0, "voltage_angle": 0.0, "load_p": load_p}],
        "branches": [{"id": 1, "from_bus": 1, "to_bus": 2, "resistance": 0.0,
                      "reactance": x_line}],
        "generators": [{"id": 1, "bus_id": 1, "dispatch_p": dispatch_p, "dispatch_q": 0.0,
                        "params": params}],
    }


@pytest.fixture
def two_bus():
    return nm.network_from_dict(two_bus_doc())


@pytest.fixture(scope="session")
def small6():
    return nm.load_network(fixture_path("small6.json"))


@pytest.fixture(scope="session")
def synth48():
    return nm.load_network(fixture_path("synth48.json"))


@pytest.fixture(scope="session")
def prep6(small6):
    return Prepared(small6)


@pytest.fixture(scope="session")
def prep48(synth48):
    p = Prepared(synth48)
    p.external_reduction()
    return p


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ------------------------------------------------------------

def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def verdict(request, capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(number: int, name: str, ok: bool, detail: str) -> None:
        line = f"acceptance #{number:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
        request.config._acceptance_lines.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("#")[1].split()[0])):
            terminalreporter.write_line(line)
