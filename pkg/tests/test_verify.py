import math

import numpy as np
import pytest

from dissipatgrid.gridsim import load_scenario, simulate
from dissipatgrid.gridsim.scenario import Trajectory
from dissipatgrid.matnets import ConstantModel, DissipativityModel, control_pi, supply_rate
from dissipatgrid.training import RegionBounds, TrainConfig, generate_dataset
from dissipatgrid.verify import (
    REPORT_FORMAT,
    check_delta_pd,
    check_dissipativity,
    check_lyapunov_decrease,
    closed_loop_metrics,
    controller_magnitude,
    eval_closed_loop,
    probe_states,
    telescoping_cost_check,
    verify_model,
)


def hook(Q=-1.0, S=0.0, W=1.0):
    """Constant SCIB-shaped model: W = W I, Q = Q I, S = S, R = I."""
    return ConstantModel(W * np.eye(2), Q * np.eye(2), S * np.ones((2, 1)), np.eye(1))


def trained_like(rng):
    return DissipativityModel.init(2, 1, rng, width=8, input_scale=np.array([1 / math.pi, 10.0]),
                                   state_weight=np.array([1.0, 31.4]), storage_gain=100.0)


@pytest.fixture(scope="module")
def scib():
    return load_scenario("scib_fault.json")


def test_dissipativity_flags_violation():
    # V = |x|^2, w = |u|^2 - |x|^2, x+ = x, u = 0: (*) = |x|^2
    x = np.array([[0.3, 0.4]])
    st = check_dissipativity(hook(), (x, x, np.zeros((1, 1))))
    assert st["max"] == pytest.approx(0.25, rel=1e-14)
    assert st["fraction_bad"] == 1.0


def test_dissipativity_zero_tuples():
    z = np.zeros((5, 2))
    st = check_dissipativity(hook(), (z, z, np.zeros((5, 1))))
    assert st["max"] == 0.0 and st["fraction_bad"] == 0.0


def test_delta_pd_examples():
    probes = probe_states(RegionBounds(), 1, 2, 100, seed=0)
    good = check_delta_pd(hook(Q=-1.0), probes)
    assert good["min"] == pytest.approx(1.0) and good["fraction_bad"] == 0.0
    bad = check_delta_pd(hook(Q=1.0), probes)
    assert bad["max"] == pytest.approx(-1.0) and bad["fraction_bad"] == 1.0


def test_probes_inside_region_and_seeded():
    b = RegionBounds(0.1, 2 * math.pi)
    p = probe_states(b, 3, 7, 500, seed=4)
    assert np.all(np.abs(p[:, :3]) <= 2 * math.pi) and np.all(np.abs(p[:, 3:]) <= 0.1)
    assert np.array_equal(p, probe_states(b, 3, 7, 500, seed=4))
    assert len(probe_states(b, 3, 7, 10, seed=4, extra=np.zeros((3, 7)))) == 13


def test_lyapunov_origin_all_zero(rng):
    st = check_lyapunov_decrease(trained_like(rng), np.zeros((20, 2)))
    assert st["max_slack"] == 0.0 and st["fraction_violating"] == 0.0


def test_lyapunov_detects_violation():
    # constant hook with Delta = I and a trajectory that does not move
    xs = np.tile([[0.5, 0.01]], (10, 1))
    st = check_lyapunov_decrease(hook(Q=-1.0), xs)
    assert st["max_slack"] > 0 and st["fraction_violating"] == 1.0


def test_lyapunov_out_of_region_reported_separately():
    xs = np.tile([[4.0, 0.01]], (5, 1))
    st = check_lyapunov_decrease(hook(Q=-1.0), xs, RegionBounds(), 1)
    assert st["out_of_region_steps"] == 4 and st["out_of_region_violating"] == 4
    assert st["fraction_violating"] == 0.0


def test_telescoping_single_step(rng):
    m = trained_like(rng)
    xs = np.array([[0.4, 0.02], [0.38, 0.019]])
    t = telescoping_cost_check(m, xs)
    from dissipatgrid.matnets import storage_V
    assert t["sum"] == pytest.approx(float(storage_V(m, xs[0]) - storage_V(m, xs[1])), rel=1e-12)


def test_telescoping_origin():
    t = telescoping_cost_check(hook(), np.zeros((4, 2)))
    assert t["sum"] == 0.0 and t["residual"] == 0.0


def test_telescoping_is_identity_for_untrained_model(rng, scib):
    m = trained_like(rng)
    from dissipatgrid.matnets import controller
    tr = simulate(scib, controller(m), horizon=1.0)
    t = telescoping_cost_check(m, tr)
    assert abs(t["residual"]) <= 1e-8 * (1 + abs(t["V0"]))


def test_supply_gap_is_quadratic_in_u(rng):
    m = trained_like(rng)
    for _ in range(20):
        x, u = rng.normal(size=2) * [1, 0.05], rng.normal(size=1)
        p = control_pi(m, x)
        R = np.linalg.inv(m.matrix("Rinv", x))
        gap = float(supply_rate(m, x, u) - supply_rate(m, x, p))
        assert gap == pytest.approx(float((u - p) @ R @ (u - p)), rel=1e-10, abs=1e-12)


def test_closed_loop_no_fault():
    sc = load_scenario("scib_nofault.json", horizon=0.3)
    met, _ = eval_closed_loop(sc)
    assert met.synchronism and met.settling_time == 0.0
    assert met.cost == pytest.approx(0.0, abs=1e-20)


def test_closed_loop_uncontrolled_scib_loses_sync(scib):
    met, tr = eval_closed_loop(scib)
    assert not met.synchronism and tr.diverged


def test_zero_controller_metrics_equal_uncontrolled(scib):
    zero = hook(S=0.0)
    a, _ = eval_closed_loop(scib)
    b, _ = eval_closed_loop(scib, zero)
    assert a == b


def test_settling_time_and_cost_by_hand():
    t = np.arange(6) * 0.5
    x = np.zeros((6, 2))
    x[:3, 1] = [0.01, 0.005, 0.002]
    tr = Trajectory(t, x, np.zeros((6, 1)), np.zeros(2), 1, t_clear=0.0)
    met = closed_loop_metrics(tr)
    assert met.settling_time == 1.5
    assert met.cost == pytest.approx(1000 * (1e-4 + 2.5e-5 + 4e-6) * 0.5, rel=1e-12)
    assert met.max_domega == 0.01


def test_controller_magnitude(rng):
    c = ConstantModel(np.eye(2), np.zeros((2, 2)), np.array([[1.0], [0.0]]), 2 * np.eye(1))
    st = controller_magnitude(c, np.array([[0.5, 0.0], [-1.0, 0.0]]))
    assert st["max_inf_norm"] == 2.0


def test_verify_model_report(scib, rng):
    cfg = TrainConfig(n_trajectories=5, traj_length=0.02, record_stride=1)
    ds = generate_dataset(scib, cfg)
    rep = verify_model(trained_like(rng), ds, load_scenario("scib_fault.json", horizon=1.0), n_probes=200)
    assert rep["format"] == REPORT_FORMAT
    assert set(rep["verdicts"]) == {"dissipativity", "delta_pd", "lyapunov_decrease", "telescoping",
                                    "synchronism"}
    assert rep["passed"] == all(rep["verdicts"].values())
    for k in ("dissipativity", "delta_pd"):
        assert 0.0 <= rep[k]["fraction_bad"] <= 1.0
    assert rep["verdicts"]["telescoping"]
