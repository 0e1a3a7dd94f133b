"""Integer trajectory model: problem data, objective, penalty, feasibility.

A problem instance asks for integer holdings w[n, t] of N assets over T steps.
The objective rewards expected returns, charges a risk term and temporary
market impact on trades, and credits permanent impact. Budget feasibility is
handled by a quadratic penalty whose strength dominates the objective range.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from trajq.errors import SpecError

RISK_MODES = ("covariance", "sample_variance")
TRADE_MODES = ("rebalance", "liquidate")


def _frozen_array(values, dtype, shape, name):
    arr = np.asarray(values, dtype=dtype)
    if arr.shape != shape:
        raise SpecError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise SpecError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ProblemSpec:
    """Immutable description of one trajectory problem.

    Arrays are stored read-only. ``final_holdings`` is only meaningful in
    liquidate mode, where the forced unwind at step T+1 reuses the step-T
    impact coefficients.
    """

    n_assets: int
    n_steps: int
    budget: int
    max_holding: int
    returns: np.ndarray
    risk_aversion: float
    covariance: np.ndarray
    temp_cost: np.ndarray
    perm_cost: np.ndarray
    initial_holdings: np.ndarray
    penalty_strength: float
    risk_mode: str = "covariance"
    trade_mode: str = "rebalance"
    final_holdings: np.ndarray | None = None

    def __post_init__(self):
        n, t = int(self.n_assets), int(self.n_steps)
        if n < 1:
            raise SpecError("n_assets must be >= 1")
        if t < 1:
            raise SpecError("n_steps must be >= 1")
        if self.budget < 0:
            raise SpecError("budget must be >= 0")
        if not 0 <= self.max_holding <= self.budget:
            raise SpecError("max_holding must satisfy 0 <= max_holding <= budget")
        if self.risk_mode not in RISK_MODES:
            raise SpecError(f"risk_mode must be one of {RISK_MODES}")
        if self.trade_mode not in TRADE_MODES:
            raise SpecError(f"trade_mode must be one of {TRADE_MODES}")
        if self.risk_aversion < 0:
            raise SpecError("risk_aversion must be >= 0")
        if not (math.isfinite(self.penalty_strength) and self.penalty_strength > 0):
            raise SpecError("penalty_strength must be positive and finite")

        object.__setattr__(self, "n_assets", n)
        object.__setattr__(self, "n_steps", t)
        object.__setattr__(self, "budget", int(self.budget))
        object.__setattr__(self, "max_holding", int(self.max_holding))
        object.__setattr__(self, "risk_aversion", float(self.risk_aversion))
        object.__setattr__(self, "penalty_strength", float(self.penalty_strength))

        object.__setattr__(
            self, "returns", _frozen_array(self.returns, np.float64, (n, t), "returns")
        )
        cov = _frozen_array(self.covariance, np.float64, (t, n, n), "covariance")
        for page in range(t):
            p = cov[page]
            scale = max(1.0, float(np.abs(p).max()))
            if not np.allclose(p, p.T, rtol=1e-12, atol=1e-12 * scale):
                raise SpecError(f"covariance page {page} is not symmetric")
        object.__setattr__(self, "covariance", cov)

        temp = _frozen_array(self.temp_cost, np.float64, (n, t), "temp_cost")
        if np.any(temp < 0):
            raise SpecError("temp_cost must be non-negative")
        object.__setattr__(self, "temp_cost", temp)
        object.__setattr__(
            self, "perm_cost", _frozen_array(self.perm_cost, np.float64, (n, t), "perm_cost")
        )

        w0 = _frozen_array(
            self.initial_holdings, np.int64, (n,), "initial_holdings"
        )
        if np.any(w0 < 0):
            raise SpecError("initial_holdings must be non-negative")
        object.__setattr__(self, "initial_holdings", w0)

        if self.trade_mode == "liquidate":
            wf = self.final_holdings
            if wf is None:
                wf = np.zeros(n, dtype=np.int64)
            wf = _frozen_array(wf, np.int64, (n,), "final_holdings")
            if np.any(wf != 0):
                raise SpecError("final_holdings must be all-zero in liquidate mode")
            object.__setattr__(self, "final_holdings", wf)
        else:
            if self.final_holdings is not None:
                raise SpecError("final_holdings is only valid in liquidate mode")

    def to_dict(self) -> dict:
        return {
            "n_assets": self.n_assets,
            "n_steps": self.n_steps,
            "budget": self.budget,
            "max_holding": self.max_holding,
            "returns": self.returns.tolist(),
            "risk_aversion": self.risk_aversion,
            "covariance": self.covariance.tolist(),
            "temp_cost": self.temp_cost.tolist(),
            "perm_cost": self.perm_cost.tolist(),
            "initial_holdings": self.initial_holdings.tolist(),
            "final_holdings": None
            if self.final_holdings is None
            else self.final_holdings.tolist(),
            "penalty_strength": self.penalty_strength,
            "risk_mode": self.risk_mode,
            "trade_mode": self.trade_mode,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProblemSpec":
        fields = {f.name for f in dataclasses.fields(cls)}
        kwargs = {k: v for k, v in data.items() if k in fields}
        missing = fields - set(kwargs) - {"final_holdings", "risk_mode", "trade_mode"}
        if missing:
            raise SpecError(f"problem document missing fields: {sorted(missing)}")
        return cls(**kwargs)


@dataclass(frozen=True)
class Trajectory:
    """Integer holdings, shape (n_assets, n_steps)."""

    holdings: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.holdings)
        if arr.ndim != 2:
            raise SpecError("holdings must be a 2-d array (assets x steps)")
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(arr == np.round(arr)):
                raise SpecError("holdings must be integers")
        arr = arr.astype(np.int64)
        if np.any(arr < 0):
            raise SpecError("holdings must be non-negative")
        arr.setflags(write=False)
        object.__setattr__(self, "holdings", arr)


def _check_traj(spec: ProblemSpec, traj: Trajectory) -> np.ndarray:
    w = traj.holdings
    if w.shape != (spec.n_assets, spec.n_steps):
        raise SpecError(
            f"trajectory shape {w.shape} does not match problem "
            f"({spec.n_assets}, {spec.n_steps})"
        )
    return w


def objective_batch(spec: ProblemSpec, holdings: np.ndarray) -> np.ndarray:
    """Objective values for a batch of trajectories, shape (B, N, T) -> (B,).

    This is the single authoritative implementation; ``objective`` wraps it.
    """
    w = np.asarray(holdings, dtype=np.float64)
    if w.ndim != 3 or w.shape[1:] != (spec.n_assets, spec.n_steps):
        raise SpecError("batch holdings must have shape (B, N, T)")
    mu = spec.returns
    gamma = spec.risk_aversion

    ret = np.einsum("nt,bnt->b", mu, w)

    if spec.risk_mode == "covariance":
        risk = 0.5 * gamma * np.einsum("bnt,tnm,bmt->b", w, spec.covariance, w)
    else:
        r = np.einsum("nt,bnt->bt", mu, w)
        risk = gamma * (
            np.mean(r * r, axis=1) - np.mean(r, axis=1) ** 2
        )

    w0 = spec.initial_holdings.astype(np.float64)
    prev = np.concatenate(
        [np.broadcast_to(w0[None, :, None], (w.shape[0], spec.n_assets, 1)), w[:, :, :-1]],
        axis=2,
    )
    delta = w - prev
    trans = np.einsum("nt,bnt->b", spec.temp_cost, delta * delta)
    perm = np.einsum("nt,bnt->b", spec.perm_cost, delta * w)

    if spec.trade_mode == "liquidate":
        # Forced unwind to final_holdings one step past the horizon, priced
        # with the step-T coefficients.
        wf = spec.final_holdings.astype(np.float64)
        df = wf[None, :] - w[:, :, -1]
        trans = trans + np.einsum("n,bn->b", spec.temp_cost[:, -1], df * df)
        perm = perm + np.einsum("n,bn->b", spec.perm_cost[:, -1], df * wf[None, :])

    return ret - risk - trans + perm


def objective(spec: ProblemSpec, traj: Trajectory) -> float:
    """Returns minus risk minus temporary impact plus permanent impact."""
    w = _check_traj(spec, traj)
    return float(objective_batch(spec, w[None, :, :])[0])


def penalty_batch(spec: ProblemSpec, holdings: np.ndarray) -> np.ndarray:
    w = np.asarray(holdings)
    if not np.issubdtype(w.dtype, np.integer):
        raise SpecError("penalty requires integer holdings")
    sums = w.sum(axis=1, dtype=np.int64)  # (B, T)
    if spec.trade_mode == "rebalance":
        gap = spec.budget - sums
    else:
        gap = np.maximum(sums - spec.budget, 0)
    return -spec.penalty_strength * np.einsum("bt,bt->b", gap, gap).astype(np.float64)


def penalty(spec: ProblemSpec, traj: Trajectory) -> float:
    """Budget penalty, 0 exactly when every step satisfies the budget.

    The inner per-step sums are integer arithmetic, so exact feasibility gives
    an exact zero. In liquidate mode only budget overruns are charged, which
    equals the compiled penalty after minimizing over the slack variable.
    """
    w = _check_traj(spec, traj)
    return float(penalty_batch(spec, w[None, :, :])[0])


def is_feasible_batch(spec: ProblemSpec, holdings: np.ndarray) -> np.ndarray:
    w = np.asarray(holdings)
    box = np.all((w >= 0) & (w <= spec.max_holding), axis=(1, 2))
    sums = w.sum(axis=1)
    if spec.trade_mode == "rebalance":
        budget_ok = np.all(sums == spec.budget, axis=1)
    else:
        budget_ok = np.all(sums <= spec.budget, axis=1)
    return box & budget_ok


def is_feasible(spec: ProblemSpec, traj: Trajectory) -> bool:
    """Box bounds plus the budget: equality per step in rebalance, <= in liquidate."""
    w = _check_traj(spec, traj)
    return bool(is_feasible_batch(spec, w[None, :, :])[0])


def objective_bound(spec: ProblemSpec) -> float:
    """Upper bound on |objective| over the holdings box [0, max_holding]."""
    kp = float(spec.max_holding)
    b0 = float(
        max(
            spec.max_holding,
            int(spec.initial_holdings.max()),
            0 if spec.final_holdings is None else int(spec.final_holdings.max()),
        )
    )
    mu_abs = np.abs(spec.returns)
    bound = float(mu_abs.sum()) * kp

    if spec.risk_mode == "covariance":
        bound += 0.5 * spec.risk_aversion * float(np.abs(spec.covariance).sum()) * kp * kp
    else:
        step_ret = mu_abs.sum(axis=0).max() * kp
        bound += spec.risk_aversion * float(step_ret) ** 2

    trans_coef = float(spec.temp_cost.sum())
    perm_coef = float(np.abs(spec.perm_cost).sum())
    if spec.trade_mode == "liquidate":
        trans_coef += float(spec.temp_cost[:, -1].sum())
        perm_coef += float(np.abs(spec.perm_cost[:, -1]).sum())
    bound += trans_coef * b0 * b0 + perm_coef * b0 * b0
    return bound


def default_penalty_strength(spec_like: ProblemSpec) -> float:
    """Penalty weight that strictly dominates the objective range.

    Any budget violation costs at least this weight, while the objective can
    change by at most twice its box bound, so every feasible trajectory beats
    every infeasible one. The +1 keeps the rule positive for degenerate
    all-zero instances.
    """
    return 2.0 * objective_bound(spec_like) + 1.0


@dataclass(frozen=True)
class GenParams:
    """Knobs for seeded random instance generation."""

    n_assets: int
    n_steps: int
    budget: int
    max_holding: int
    risk_mode: str = "covariance"
    trade_mode: str = "rebalance"
    mu_range: tuple[float, float] = (-1.0, 1.0)
    risk_aversion: float = 1.0
    sigma_scale: float = 0.25
    sigma_mode: str = "factor"
    temp_cost_range: tuple[float, float] = (0.0, 0.25)
    perm_cost_range: tuple[float, float] = (0.0, 0.10)
    initial_holdings_mode: str = "zero"
    penalty_rule: str | float = "auto"

    def __post_init__(self):
        if self.sigma_mode not in ("factor", "dense"):
            raise SpecError("sigma_mode must be 'factor' or 'dense'")
        if self.initial_holdings_mode not in ("zero", "random"):
            raise SpecError("initial_holdings_mode must be 'zero' or 'random'")


def random_instance(params: GenParams, seed: int) -> ProblemSpec:
    """Draw one instance. Same (params, seed) always gives identical data.

    The 'factor' covariance mode produces positive semidefinite pages; the
    'dense' mode draws symmetric pages that may be indefinite.
    """
    rng = np.random.default_rng(seed)
    n, t = params.n_assets, params.n_steps
    lo, hi = params.mu_range
    mu = rng.uniform(lo, hi, size=(n, t))

    pages = []
    for _ in range(t):
        if params.sigma_mode == "factor":
            f = rng.normal(size=(n, max(1, n)))
            page = params.sigma_scale * (f @ f.T) / max(1, n)
        else:
            a = rng.normal(size=(n, n))
            page = params.sigma_scale * (a + a.T) / 2.0
        pages.append(page)
    cov = np.stack(pages)

    c_lo, c_hi = params.temp_cost_range
    p_lo, p_hi = params.perm_cost_range
    temp = rng.uniform(c_lo, c_hi, size=(n, t))
    perm = rng.uniform(p_lo, p_hi, size=(n, t))

    if params.initial_holdings_mode == "zero":
        w0 = np.zeros(n, dtype=np.int64)
    else:
        w0 = rng.integers(0, params.max_holding + 1, size=n)

    final = (
        np.zeros(n, dtype=np.int64) if params.trade_mode == "liquidate" else None
    )

    base = dict(
        n_assets=n,
        n_steps=t,
        budget=params.budget,
        max_holding=params.max_holding,
        returns=mu,
        risk_aversion=params.risk_aversion,
        covariance=cov,
        temp_cost=temp,
        perm_cost=perm,
        initial_holdings=w0,
        final_holdings=final,
        risk_mode=params.risk_mode,
        trade_mode=params.trade_mode,
    )
    if params.penalty_rule == "auto":
        probe = ProblemSpec(penalty_strength=1.0, **base)
        m = default_penalty_strength(probe)
    else:
        m = float(params.penalty_rule)
    return ProblemSpec(penalty_strength=m, **base)
