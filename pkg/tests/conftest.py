import json
import sys

import pytest

from periodic_sde import CoefficientSource, ModelSpec, NoiseSpec, SigmaSequence


def scalar_spec(a, sigma=None, noise=None, x0=0.0):
    a = list(a)
    return ModelSpec(
        dim=1,
        period=len(a),
        coefficients=CoefficientSource.explicit(a),
        sigma=sigma or SigmaSequence.zero(),
        noise=noise or NoiseSpec("rademacher"),
        x0=(x0,),
    )


def random_spec(target_L, K=2, d=1, sigma=None, noise=None, x0=0.0):
    return ModelSpec(
        dim=d,
        period=K,
        coefficients=CoefficientSource.random(target_L),
        sigma=sigma or SigmaSequence.power(2.0),
        noise=noise or NoiseSpec("rademacher"),
        x0=(x0,) * d,
    )


def base_config(**overrides):
    cfg = {
        "model": {"dimension": 1, "period": 2, "x0": 1.0, "coefficients": {"kind": "explicit", "blocks": [1.0, -0.5]}},
        "sigma": {"kind": "power", "exponent": 2.0},
        "noise": {"law": "rademacher"},
        "mc": {"paths": 50, "horizon": 400, "seed": 3},
        "analysis": {"tolerance": 1e-3},
        "output": {"formats": ["csv", "json"]},
    }
    cfg.update(overrides)
    return cfg


@pytest.fixture
def write_config(tmp_path):
    def write(cfg, name="run.json"):
        path = tmp_path / name
        path.write_text(json.dumps(cfg, indent=2) + "\n")
        return path

    return write


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    results = getattr(acceptance, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results, key=str):
        terminalreporter.write_line(results[key])
