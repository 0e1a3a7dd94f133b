"""Independent reference implementations used to cross-check the library.

Everything here is written loop-by-loop from the problem statement, on
purpose: these functions must not share code paths with the package.
"""

import numpy as np

from trajq.encoding import build_encoding


def loop_objective(spec, w):
    """Step-by-step objective: returns - risk - temporary + permanent impact."""
    t = spec.n_steps
    total = 0.0
    for step in range(t):
        total += float(spec.returns[:, step] @ w[:, step])
    if spec.risk_mode == "covariance":
        for step in range(t):
            total -= 0.5 * spec.risk_aversion * float(
                w[:, step] @ spec.covariance[step] @ w[:, step]
            )
    else:
        rs = [float(spec.returns[:, step] @ w[:, step]) for step in range(t)]
        total -= spec.risk_aversion * (
            sum(r * r for r in rs) / t - (sum(rs) / t) ** 2
        )
    prev = spec.initial_holdings.astype(float)
    for step in range(t):
        cur = np.asarray(w[:, step], dtype=float)
        for a in range(spec.n_assets):
            d = cur[a] - prev[a]
            total -= spec.temp_cost[a, step] * d * d
            total += spec.perm_cost[a, step] * d * cur[a]
        prev = cur
    if spec.trade_mode == "liquidate":
        wf = spec.final_holdings.astype(float)
        for a in range(spec.n_assets):
            d = wf[a] - prev[a]
            total -= spec.temp_cost[a, -1] * d * d
            total += spec.perm_cost[a, -1] * d * wf[a]
    return total


def decode_from_map(qp, bits):
    """Decode one bit vector by walking the variable map key by key."""
    spec = qp.problem
    n, t = spec.n_assets, spec.n_steps
    w = np.zeros((n, t), dtype=np.int64)
    slack = np.zeros(t, dtype=np.int64)
    hot = np.zeros(t, dtype=np.int64)
    slack_weights = (
        build_encoding("binary", spec.budget).weights
        if spec.trade_mode == "liquidate"
        else None
    )
    for key, bit in zip(qp.variable_map, bits):
        if not bit:
            continue
        if key[0] == "bit":
            _, asset, step, d = key
            w[asset, step] += qp.scheme.weights[d]
        elif key[0] == "slack":
            _, step, d = key
            slack[step] += slack_weights[d]
        else:
            _, step, p = key
            w[:, step] += np.asarray(qp.scheme.partitions[p], dtype=np.int64)
            hot[step] += 1
    return w, slack, hot


def reference_energy(qp, bits):
    """Energy a bit vector should have: minus (objective + penalty).

    The budget penalty is evaluated exactly as compiled: squared equality gap
    per step, with decoded slack absorbing the shortfall in liquidate mode,
    and a one-hot gap instead of a budget gap for the partition kind.
    """
    spec = qp.problem
    w, slack, hot = decode_from_map(qp, bits)
    value = loop_objective(spec, w)
    m = spec.penalty_strength
    sums = w.sum(axis=0)
    if qp.scheme.kind == "partition":
        value -= m * float(((1 - hot) ** 2).sum())
    elif spec.trade_mode == "rebalance":
        value -= m * float(((spec.budget - sums) ** 2).sum())
    else:
        value -= m * float(((spec.budget - sums - slack) ** 2).sum())
    return -value


def all_bit_vectors(dim):
    """Every bit vector of the given length, one per row."""
    count = 1 << dim
    return (np.arange(count)[:, None] >> np.arange(dim)) & 1
