import json

import numpy as np
import pytest

from boltzmann_bvp import verify as vf
from boltzmann_bvp.geometry import ConvexDomain
from boltzmann_bvp.params import PhysParams

ball = ConvexDomain.ball()


def test_interleaved_speeds():
    s, half = vf.interleaved_speeds(1e-2, 10.0, 10)
    assert s[0] == 0 and len(s) == 12
    assert set(np.round(s[half][1:], 12)) >= {1e-2, 10.0}
    assert np.all(np.diff(np.sort(s[1:])) > 0)
    assert half.sum() == 7


def test_holder_modulus_branches():
    h = np.array([1e-2, 1e-1])
    np.testing.assert_allclose(vf.holder_modulus(-2.0, h), h * (np.abs(np.log(h)) + 1))
    np.testing.assert_allclose(vf.holder_modulus(-2.5, h), h**0.5)


def test_plain_json_and_report_dict():
    r = vf.CheckReport("x", -1.0, 0.1, 0.25, 4, 3, np.float64(2.0), [np.int64(1)], True, 1.5,
                       {"a": np.arange(2), "b": np.inf, "c": np.bool_(True)})
    d = r.to_dict()
    assert "seconds" not in d and d["pass_ratio"] == 0.75
    assert json.loads(json.dumps(d))["details"] == {"a": [0, 1], "b": "inf", "c": True}
    assert r.to_dict(timing=True)["seconds"] == 1.5


def test_nu_bounds():
    r = vf.check_nu_bounds(PhysParams(B0=0.1, gamma=0.0))
    assert r.passed
    assert r.details["nu0"] == pytest.approx(np.pi**2.5 * 0.1, rel=1e-12)
    assert r.details["ratio_nu1_nu0"] == pytest.approx(1.0, abs=1e-12)
    r1 = vf.check_nu_bounds(PhysParams(gamma=1.0))
    assert r1.passed and 1 < r1.details["ratio_nu1_nu0"] < 3
    assert vf.check_nu_bounds(PhysParams(gamma=-2.5, beta=2.0)).passed


@pytest.mark.parametrize("gamma,n", [(0.0, 2000), (-1.0, 10000)])
def test_kernel_envelope(gamma, n):
    # at gamma = -1 the near-coincident stratum needs the full sample for a stable sup
    reps = vf.check_kernel_envelope(PhysParams(gamma=gamma), n)
    assert [r.check_id for r in reps] == ["est_k", "est_dk"]
    assert all(r.passed and np.isfinite(r.fitted_constant) for r in reps)


def test_change_of_integration_examples():
    vol, bnd = vf.change_of_integration_sides(lambda x, v: 0 * x[:, 0], ball)
    assert vol == 0 and bnd == 0
    # separable: int_B (1 + x1^2) dx * int exp(-|v|^2) dv
    ref = (4 * np.pi / 3 + 4 * np.pi / 15) * np.pi**1.5
    vol, bnd = vf.change_of_integration_sides(lambda x, v: np.exp(-(v * v).sum(-1)) * (1 + x[:, 0] ** 2), ball)
    assert vol == pytest.approx(ref, rel=1e-6)
    assert bnd == pytest.approx(ref, rel=3e-3)
    assert vf.check_change_of_integration(ball).passed


def test_exit_holder_and_S_decay():
    r = vf.check_exit_holder(ball, 1000)
    assert r.passed and r.n_pass == r.n_samples
    assert vf.check_S_decay(PhysParams(gamma=-2.5, beta=2.0), ball, 1000).passed


def test_averaging_at_zero_frequency_finite():
    p = PhysParams(gamma=0.0)
    val = vf.averaging_integral(p, np.zeros(3), np.zeros(3))
    assert np.isfinite(val) and val > 0
    assert vf.averaging_integral(p, np.array([0, 0, 1e4]), np.zeros(3)) < val


def test_run_suite_dispatch():
    with pytest.raises(ValueError):
        vf.run_suite("nope", PhysParams(), gammas=(0.0,))
    reps = vf.run_suite("geometry", PhysParams(), quick=True)
    assert {r.check_id for r in reps} == {"exit_holder", "change_of_integration"}
    assert all(r.passed for r in reps)
    a = [r.to_dict() for r in vf.run_suite("transport", PhysParams(), gammas=(0.0, -2.5), quick=True)]
    b = [r.to_dict() for r in vf.run_suite("transport", PhysParams(), gammas=(0.0, -2.5), quick=True)]
    assert a == b


def test_gamma_null_residual_small():
    assert vf.gamma_null_residual(PhysParams(gamma=0.0)) < 1e-4
