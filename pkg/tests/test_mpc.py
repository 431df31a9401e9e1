import csv
import math
import pickle

import numpy as np
import pytest

from pceocp.measures import MeasureSpec
from pceocp.mpc import (
    ClosedLoopTrace,
    Controller,
    DisturbanceSampler,
    Plant,
    monte_carlo,
    mpc_step,
    path_rng,
    simulate_closed_loop,
    write_summary_csv,
    write_traces_csv,
)
from pceocp.pce import affine_pce, gaussian_mv_pce
from pceocp.solver import SolverError
from pceocp.transcription import StochasticProblem


def lq_problem(**kw):
    args = dict(
        N=6, A=[[1.0, 0.2], [0.0, 0.9]], B=[[0.0], [0.2]], E=[[1.0], [0.5]],
        x_ini=gaussian_mv_pce([1.0, -0.5], np.diag([0.04, 0.01])),
        w=affine_pce(MeasureSpec.uniform(-0.1, 0.1)), Q=np.eye(2), R=np.eye(1),
    )
    args.update(kw)
    return StochasticProblem(**args)


@pytest.fixture(scope="module")
def tank_ctrl(tank_problem):
    return Controller(tank_problem)


@pytest.fixture(scope="module")
def tank_ensemble(tank_ctrl, tank_problem):
    return monte_carlo(tank_ctrl, Plant.from_problem(tank_problem), n_paths=40, T=12, seed=2024, workers=1)


def test_zero_state_gives_zero_input():
    ctrl = Controller(lq_problem())
    np.testing.assert_allclose(ctrl.step([0.0, 0.0]), 0.0, atol=1e-9)


def test_identical_measurements_give_identical_inputs():
    a, b = Controller(lq_problem()), Controller(lq_problem())
    for x in ([1.0, -0.5], [0.3, 0.2]):
        assert np.array_equal(a.step(x), b.step(x))
    assert np.array_equal(a.step([1.0, -0.5]), b.step([1.0, -0.5]))


def test_first_input_is_deterministic(tank_ctrl):
    sol = tank_ctrl.solve([0.5, -0.3, 0.1, 0.0])
    assert sol.optimal
    assert np.abs(sol.u[0, :, 1:]).max() <= 1e-9


def test_measured_state_size_checked():
    with pytest.raises(ValueError, match="2 entries"):
        Controller(lq_problem()).step([1.0, 2.0, 3.0])


def test_non_iid_rejected():
    w = affine_pce(MeasureSpec.uniform(-0.1, 0.1))
    with pytest.raises(ValueError, match="i.i.d"):
        Controller(lq_problem(w=[w] * 6))


def test_on_failure_validated():
    with pytest.raises(ValueError):
        Controller(lq_problem(), on_failure="ignore")


def test_plant_step():
    prob = lq_problem()
    p = Plant.from_problem(prob)
    x = p.step(np.array([1.0, 2.0]), np.array([3.0]), np.array([0.5]))
    np.testing.assert_allclose(x, [1.0 + 0.4 + 0.5, 1.8 + 0.6 + 0.25])


def test_zero_length_trace():
    prob = lq_problem()
    ctrl = Controller(prob)
    tr = simulate_closed_loop(ctrl, Plant.from_problem(prob), DisturbanceSampler(prob.w, 0), 0, [1.0, 0.0])
    assert tr.x.shape == (1, 2) and tr.u.shape == (0, 1) and tr.w.shape == (0, 1)
    assert tr.complete and tr.status == []


def test_negative_length_rejected():
    prob = lq_problem()
    with pytest.raises(ValueError):
        simulate_closed_loop(Controller(prob), Plant.from_problem(prob), DisturbanceSampler(prob.w, 0), -1, [0, 0])


def test_trace_replays_plant_dynamics():
    prob = lq_problem()
    ctrl, plant = Controller(prob), Plant.from_problem(prob)
    tr = simulate_closed_loop(ctrl, plant, DisturbanceSampler(prob.w, 3), 5, [1.0, -0.5])
    for t in range(5):
        np.testing.assert_array_equal(tr.x[t + 1], plant.step(tr.x[t], tr.u[t], tr.w[t]))
    assert all(s == "optimal" for s in tr.status)
    assert np.all(np.abs(tr.w) <= 0.1)


def test_random_streams_depend_only_on_seed_and_path():
    a = path_rng(5, 3, 0, 2).random(4)
    assert np.array_equal(a, path_rng(5, 3, 0, 2).random(4))
    assert not np.array_equal(a, path_rng(5, 4, 0, 2).random(4))
    assert not np.array_equal(a, path_rng(6, 3, 0, 2).random(4))


def test_failure_produces_partial_trace():
    prob = lq_problem(ubx=([2.0, math.inf], [0.1, 0.1]))
    ctrl = Controller(prob)
    tr = simulate_closed_loop(ctrl, Plant.from_problem(prob), DisturbanceSampler(prob.w, 0), 4, [5.0, 0.0])
    assert not tr.complete
    assert tr.steps == 0 and tr.status == ["infeasible"]
    assert "step 0" in tr.error


def test_failure_raises_without_hold():
    ctrl = Controller(lq_problem(ubx=([2.0, math.inf], [0.1, 0.1])))
    with pytest.raises(SolverError):
        mpc_step(ctrl, [5.0, 0.0])


def test_hold_applies_previous_plan():
    ctrl = Controller(lq_problem(ubx=([2.0, math.inf], [0.1, 0.1])), on_failure="hold")
    ctrl.step([1.0, 0.0])
    planned = ctrl.last_solution.u[1, :, 0].copy()
    assert np.array_equal(ctrl.step([5.0, 0.0]), planned)


def test_controller_pickles(tank_ctrl):
    x = [0.4, -0.2, 0.3, 0.1]
    other = pickle.loads(pickle.dumps(tank_ctrl))
    assert np.array_equal(other.step(x), tank_ctrl.step(x))


def test_clone_is_independent(tank_ctrl):
    c = tank_ctrl.clone()
    assert c.solver is not tank_ctrl.solver and c.stats.solves == 0


def test_workers_do_not_change_results(tank_ctrl, tank_problem):
    plant = Plant.from_problem(tank_problem)
    a = monte_carlo(tank_ctrl, plant, n_paths=4, T=3, seed=11, workers=1)
    b = monte_carlo(tank_ctrl, plant, n_paths=4, T=3, seed=11, workers=2)
    assert a.same_as(b)
    c = monte_carlo(tank_ctrl, plant, n_paths=4, T=3, seed=12, workers=1)
    assert not a.same_as(c)


def test_ensemble_arguments_validated(tank_ctrl, tank_problem):
    plant = Plant.from_problem(tank_problem)
    with pytest.raises(ValueError):
        monte_carlo(tank_ctrl, plant, n_paths=0, T=3, seed=1)
    with pytest.raises(ValueError):
        monte_carlo(tank_ctrl, plant, n_paths=1, T=3, seed=1, workers=0)


def test_tank_ensemble_completes(tank_ensemble):
    assert tank_ensemble.n_failed == 0
    assert len(tank_ensemble.traces) == 40
    assert tank_ensemble.states().shape == (40, 13, 4)


def test_tank_realizations_inside_bounds(tank_ensemble):
    X = tank_ensemble.states()[:, :, :2]
    assert np.all(np.abs(X) <= 2.0)
    qs = tank_ensemble.state_quantiles
    assert np.all(np.abs(qs[:, :, :2]) <= 2.0)


def test_tank_violation_frequency(tank_ensemble):
    n = len(tank_ensemble.traces)
    limit = 0.2 + 3 * math.sqrt(0.2 * 0.8 / n)
    assert tank_ensemble.max_violation <= limit
    assert set(tank_ensemble.violation) == {"x0_both", "x1_both"}


def test_csv_export(tank_ensemble, tmp_path):
    write_traces_csv(tank_ensemble.traces, tmp_path / "t.csv", header="hdr")
    write_summary_csv(tank_ensemble, tmp_path / "s.csv", header="hdr")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "# hdr"
    rows = list(csv.DictReader(lines[1:]))
    assert len(rows) == 40 * 13
    first = tank_ensemble.traces[0]
    assert float(rows[1]["x2"]) == first.x[1, 2]
    assert float(rows[0]["u1"]) == first.u[0, 1]
    assert rows[12]["u0"] == "" and rows[0]["status"] == "optimal"
    summary = list(csv.DictReader((tmp_path / "s.csv").read_text().splitlines()[1:]))
    assert len(summary) == 13 and "viol_x0_both" in summary[0]


def test_trace_length_validation():
    with pytest.raises(ValueError):
        ClosedLoopTrace(np.zeros((2, 1)), np.zeros((2, 1)), np.zeros((2, 1)), ["optimal"] * 2, [0.0] * 2, (0, 0))
