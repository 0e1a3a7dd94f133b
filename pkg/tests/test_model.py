import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _reference import loop_objective
from trajq.errors import SpecError
from trajq.model import (
    GenParams,
    ProblemSpec,
    Trajectory,
    default_penalty_strength,
    is_feasible,
    is_feasible_batch,
    objective,
    objective_batch,
    objective_bound,
    penalty,
    random_instance,
)


def test_objective_golden_rebalance():
    spec = random_instance(
        GenParams(2, 3, 3, 2, sigma_mode="dense", initial_holdings_mode="random"),
        42,
    )
    w = np.array([[1, 2, 0], [2, 1, 3]])
    assert loop_objective(spec, w) == pytest.approx(2.0127553125057136, abs=1e-12)
    assert objective(spec, Trajectory(w)) == pytest.approx(
        2.0127553125057136, abs=1e-12
    )


def test_objective_golden_liquidate_sample_variance():
    spec = random_instance(
        GenParams(2, 2, 3, 2, trade_mode="liquidate", risk_mode="sample_variance"),
        9,
    )
    w = np.array([[2, 1], [1, 0]])
    assert loop_objective(spec, w) == pytest.approx(-0.6332493990991976, abs=1e-12)
    assert objective(spec, Trajectory(w)) == pytest.approx(
        -0.6332493990991976, abs=1e-12
    )


@pytest.mark.parametrize("trade_mode", ["rebalance", "liquidate"])
@pytest.mark.parametrize("risk_mode", ["covariance", "sample_variance"])
def test_objective_matches_loop_oracle(trade_mode, risk_mode):
    params = GenParams(
        3, 3, 4, 3,
        trade_mode=trade_mode,
        risk_mode=risk_mode,
        sigma_mode="dense",
        initial_holdings_mode="random",
    )
    rng = np.random.default_rng(1)
    for seed in range(8):
        spec = random_instance(params, seed)
        w = rng.integers(0, 4, size=(5, 3, 3))
        got = objective_batch(spec, w)
        want = [loop_objective(spec, wi) for wi in w]
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_objective_rejects_bad_shapes():
    spec = random_instance(GenParams(2, 2, 2, 2), 0)
    with pytest.raises(SpecError):
        objective(spec, Trajectory(np.zeros((3, 2), dtype=int)))
    with pytest.raises(SpecError):
        objective_batch(spec, np.zeros((4, 2, 3)))


def test_penalty_zero_iff_feasible_rebalance():
    spec = random_instance(GenParams(2, 2, 2, 2), 3)
    for a in range(3):
        for b in range(3):
            w = np.array([[a, a], [b, b]])
            traj = Trajectory(w)
            feasible = a + b == 2
            assert is_feasible(spec, traj) == feasible
            if feasible:
                assert penalty(spec, traj) == 0.0
            else:
                assert penalty(spec, traj) < 0.0


def test_penalty_liquidate_only_charges_overruns():
    spec = random_instance(GenParams(2, 1, 2, 2, trade_mode="liquidate"), 5)
    assert penalty(spec, Trajectory(np.array([[0], [0]]))) == 0.0
    assert penalty(spec, Trajectory(np.array([[1], [1]]))) == 0.0
    assert penalty(spec, Trajectory(np.array([[2], [2]]))) < 0.0
    assert is_feasible(spec, Trajectory(np.array([[1], [0]])))
    assert not is_feasible(spec, Trajectory(np.array([[2], [2]])))


def test_feasibility_enforces_box():
    spec = random_instance(GenParams(2, 2, 4, 2), 1)
    over_box = np.array([[3, 2], [1, 2]])  # sums to 4 but exceeds max_holding
    assert not is_feasible(spec, Trajectory(over_box))
    flags = is_feasible_batch(spec, np.stack([over_box, [[2, 2], [2, 2]]]))
    assert flags.tolist() == [False, True]


def test_objective_bound_dominates_box_values():
    params = GenParams(2, 3, 3, 3, sigma_mode="dense",
                       initial_holdings_mode="random")
    rng = np.random.default_rng(7)
    for seed in range(10):
        spec = random_instance(params, seed)
        bound = objective_bound(spec)
        w = rng.integers(0, spec.max_holding + 1, size=(64, 2, 3))
        assert np.all(np.abs(objective_batch(spec, w)) <= bound + 1e-9)
        assert default_penalty_strength(spec) == pytest.approx(2 * bound + 1)


@given(st.integers(0, 6), st.integers(0, 6))
@settings(max_examples=30, deadline=None)
def test_domain_box_validation(budget, max_holding):
    kwargs = dict(
        n_assets=1,
        n_steps=1,
        budget=budget,
        max_holding=max_holding,
        returns=[[0.1]],
        risk_aversion=1.0,
        covariance=[[[0.2]]],
        temp_cost=[[0.0]],
        perm_cost=[[0.0]],
        initial_holdings=[0],
        penalty_strength=1.0,
    )
    if max_holding <= budget:
        spec = ProblemSpec(**kwargs)
        assert spec.max_holding == max_holding
    else:
        with pytest.raises(SpecError):
            ProblemSpec(**kwargs)


@pytest.mark.parametrize(
    "patch",
    [
        {"n_assets": 0},
        {"n_steps": 0},
        {"budget": -1},
        {"risk_aversion": -0.5},
        {"penalty_strength": 0.0},
        {"risk_mode": "other"},
        {"trade_mode": "other"},
        {"temp_cost": [[-0.1, 0.0], [0.0, 0.0]]},
        {"initial_holdings": [-1, 0]},
        {"covariance": [np.eye(2), [[0.0, 1.0], [0.0, 0.0]]]},
        {"final_holdings": [0, 0]},
    ],
)
def test_spec_validation_rejects(patch):
    base = dict(
        n_assets=2,
        n_steps=2,
        budget=2,
        max_holding=2,
        returns=np.zeros((2, 2)),
        risk_aversion=1.0,
        covariance=np.stack([np.eye(2)] * 2),
        temp_cost=np.zeros((2, 2)),
        perm_cost=np.zeros((2, 2)),
        initial_holdings=[0, 0],
        penalty_strength=1.0,
    )
    base.update(patch)
    with pytest.raises(SpecError):
        ProblemSpec(**base)


def test_liquidate_final_holdings_must_be_zero():
    base = dict(
        n_assets=2,
        n_steps=2,
        budget=2,
        max_holding=2,
        returns=np.zeros((2, 2)),
        risk_aversion=1.0,
        covariance=np.stack([np.eye(2)] * 2),
        temp_cost=np.zeros((2, 2)),
        perm_cost=np.zeros((2, 2)),
        initial_holdings=[0, 0],
        penalty_strength=1.0,
        trade_mode="liquidate",
    )
    spec = ProblemSpec(**base)
    assert spec.final_holdings.tolist() == [0, 0]
    with pytest.raises(SpecError):
        ProblemSpec(**{**base, "final_holdings": [1, 0]})


def test_negative_perm_cost_is_legal():
    spec = random_instance(
        GenParams(2, 2, 2, 2, perm_cost_range=(-0.1, 0.1)), 0
    )
    assert np.isfinite(objective(spec, Trajectory(np.ones((2, 2), dtype=int))))


def test_trajectory_validation():
    with pytest.raises(SpecError):
        Trajectory(np.zeros(3))
    with pytest.raises(SpecError):
        Trajectory(np.array([[0.5]]))
    with pytest.raises(SpecError):
        Trajectory(np.array([[-1]]))
    traj = Trajectory(np.array([[1.0, 2.0]]))
    assert traj.holdings.dtype == np.int64


def test_random_instance_deterministic_and_valid():
    params = GenParams(3, 2, 3, 2, sigma_mode="factor")
    a = random_instance(params, 11)
    b = random_instance(params, 11)
    assert a.to_dict() == b.to_dict()
    assert a.n_assets == 3 and a.budget == 3 and a.max_holding == 2
    for page in a.covariance:
        assert np.linalg.eigvalsh(page).min() >= -1e-9
    c = random_instance(params, 12)
    assert c.to_dict() != a.to_dict()


def test_random_instance_dense_pages_symmetric():
    spec = random_instance(GenParams(2, 3, 2, 2, sigma_mode="dense"), 4)
    for page in spec.covariance:
        assert np.allclose(page, page.T)


def test_spec_dict_round_trip():
    spec = random_instance(
        GenParams(2, 2, 3, 2, trade_mode="liquidate",
                  initial_holdings_mode="random"),
        8,
    )
    again = ProblemSpec.from_dict(spec.to_dict())
    assert again.to_dict() == spec.to_dict()
    with pytest.raises(SpecError):
        ProblemSpec.from_dict({"n_assets": 2})
