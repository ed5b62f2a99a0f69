import json

import numpy as np
import pytest

import bdkf


def test_chain_shapes():
    s = bdkf.identical_chain(0.5, 3)
    assert (s.n, s.c, s.d, s.r) == (3, 2, 1, 1)
    np.testing.assert_array_equal(s.subsystem(0)["F"], [[0.9, 0.5], [0.0, 0.9]])
    assert s.dense()["F"].shape == (6, 6)
    with pytest.raises(IndexError):
        s.subsystem(3)


def test_json_round_trip():
    s = bdkf.random_system(2, 1, 2, 4, seed=3)
    t = bdkf.system_from_json(s.to_json())
    np.testing.assert_array_equal(t.subsystem(2)["G"], s.subsystem(2)["G"])
    with pytest.raises(ValueError):
        bdkf.system_from_json(json.dumps({"generator": "identical_chain", "beta": 0.1}))


def test_fast_step_matches_naive():
    s = bdkf.random_system(3, 2, 2, 5, seed=11)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(15)
    P = np.stack([np.eye(3)] * 5)
    y = rng.standard_normal(10)
    fast = bdkf.bd_fast_step(s, x, P, y)
    nx, nP, K = bdkf.bd_naive_step(s, x, P, y)
    np.testing.assert_allclose(fast["x"], nx, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(fast["P"], nP, rtol=1e-9, atol=1e-12)
    assert fast["u_cov"].shape == (2, 2)
    assert K.shape == (15, 10)


def test_steady_ordering():
    s = bdkf.identical_chain(0.1, 8)
    d = s.dense()
    full = bdkf.solve_dare(d["F"], d["H"], d["Q"], d["R"])
    decoupled = bdkf.solve_dare(d["F"], d["H"], d["V"], d["R"])
    bd = bdkf.solve_bd_dare(s)
    gap = np.linalg.eigvalsh(bd["P_minus"] - decoupled["P_minus"]).min()
    assert gap >= -1e-8 * np.linalg.norm(decoupled["P_minus"], 2)
    sigma = bdkf.true_error_cov(d["F"], d["H"], d["Q"], d["R"], full["K"])
    np.testing.assert_allclose(sigma, full["P_plus"], atol=1e-8)


def test_prop2_report():
    rep = bdkf.prop2_analysis(bdkf.scale_coupling(bdkf.identical_chain(0.1, 16), 1e-3))
    assert rep["part2_condition_ok"]
    assert rep["measured_dP_full"] <= rep["part2_bound_P"]
    assert rep["measured_dP_bd"] <= rep["part2_bound_P"]


def test_experiments():
    rows = bdkf.decoupling_study([0.1], [2, 4])
    assert len(rows) == 2 and all(r["converged"] for r in rows)
    csv = bdkf.speckle_study(n_pixels=16, r_modes=2, horizon=5, seeds=[1], run_full=False)
    assert csv.splitlines()[0] == "seed,step,filter,mse,step_time_s"
    assert len(csv.splitlines()) == 1 + 2 * 5
    assert bdkf.loglog_slope([1, 2, 4], [1, 2, 4]) == pytest.approx(1.0)


def test_errors_map_to_python():
    s = bdkf.identical_chain(0.1, 2)
    with pytest.raises(ValueError):
        bdkf.bd_fast_step(s, np.zeros(3), np.stack([np.eye(2)] * 2), np.zeros(2))
