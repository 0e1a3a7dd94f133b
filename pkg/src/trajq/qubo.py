"""Compile trajectory problems to QUBO form and back.

Energy convention: energy(x) = x^T Q x + offset with Q symmetric and binary
x, so minimizing energy maximizes objective + penalty. Holdings enter through
a linear substitution w = S x; the budget penalty (or the one-hot penalty for
the partition kind) is folded into Q.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from trajq._io import sha256_of
from trajq.encoding import EncodingScheme, build_encoding
from trajq.errors import SpecError
from trajq.model import ProblemSpec, Trajectory

VarKey = tuple


@dataclass(frozen=True)
class QuadraticProgram:
    matrix: np.ndarray
    offset: float
    variable_map: tuple[VarKey, ...]
    scheme: EncodingScheme
    problem: ProblemSpec
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        q = np.asarray(self.matrix, dtype=np.float64)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise SpecError("QUBO matrix must be square")
        if not np.allclose(q, q.T, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(q).max())):
            raise SpecError("QUBO matrix must be symmetric")
        if len(self.variable_map) != q.shape[0]:
            raise SpecError("variable_map length must equal the matrix dimension")
        q.setflags(write=False)
        object.__setattr__(self, "matrix", q)
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(
            self, "variable_map", tuple(tuple(v) for v in self.variable_map)
        )

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class IsingModel:
    """Spin model with energy h.s + (1/2) s^T J s + offset, s in {-1, +1}."""

    h: np.ndarray
    couplings: np.ndarray
    offset: float

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.float64)
        j = np.asarray(self.couplings, dtype=np.float64)
        if j.shape != (h.size, h.size):
            raise SpecError("couplings must be square and match h")
        if np.any(np.diag(j) != 0.0):
            raise SpecError("couplings must have zero diagonal")
        if not np.allclose(j, j.T, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(j).max())):
            raise SpecError("couplings must be symmetric")
        h.setflags(write=False)
        j.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "couplings", j)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def n_spins(self) -> int:
        return self.h.size


def _slack_scheme(spec: ProblemSpec) -> EncodingScheme | None:
    if spec.trade_mode != "liquidate":
        return None
    return build_encoding("binary", spec.budget)


def _variable_map(spec: ProblemSpec, scheme: EncodingScheme) -> tuple[VarKey, ...]:
    n, t = spec.n_assets, spec.n_steps
    keys: list[VarKey] = []
    if scheme.kind == "partition":
        for step in range(t):
            for p in range(len(scheme.partitions)):
                keys.append(("partition", step, p))
        return tuple(keys)
    depth = scheme.bit_depth
    for step in range(t):
        for asset in range(n):
            for d in range(depth):
                keys.append(("bit", asset, step, d))
    slack = _slack_scheme(spec)
    if slack is not None:
        for step in range(t):
            for d in range(slack.bit_depth):
                keys.append(("slack", step, d))
    return tuple(keys)


def _substitution(spec: ProblemSpec, scheme: EncodingScheme) -> np.ndarray:
    """Integer substitution matrix S: [w_flat; slack] = S x, t-major w order."""
    n, t = spec.n_assets, spec.n_steps
    slack = _slack_scheme(spec)
    n_int = n * t + (t if slack is not None else 0)
    if scheme.kind == "partition":
        p = len(scheme.partitions)
        sub = np.zeros((n_int, t * p), dtype=np.int64)
        cols = np.array(scheme.partitions, dtype=np.int64)  # (P, N)
        for step in range(t):
            for pi in range(p):
                for asset in range(n):
                    sub[step * n + asset, step * p + pi] = cols[pi, asset]
        return sub
    depth = scheme.bit_depth
    nbits = n * t * depth + (t * slack.bit_depth if slack is not None else 0)
    sub = np.zeros((n_int, nbits), dtype=np.int64)
    for step in range(t):
        for asset in range(n):
            row = step * n + asset
            base = (step * n + asset) * depth
            for d, w in enumerate(scheme.weights):
                sub[row, base + d] = w
    if slack is not None:
        base0 = n * t * depth
        for step in range(t):
            for d, w in enumerate(slack.weights):
                sub[n * t + step, base0 + step * slack.bit_depth + d] = w
    return sub


def compile_qubo(
    spec: ProblemSpec, scheme: EncodingScheme, provenance: dict | None = None
) -> QuadraticProgram:
    """Assemble the QUBO whose energy is minus (objective + penalty).

    In liquidate mode the budget inequality gains per-step binary slack in
    [0, budget]. The partition kind replaces the budget penalty with a
    per-step one-hot penalty of the same strength.
    """
    n, t = spec.n_assets, spec.n_steps
    m_pen = spec.penalty_strength
    if scheme.kind == "partition":
        if spec.trade_mode == "liquidate":
            raise SpecError("partition encoding cannot express a budget inequality")
        if any(len(col) != n for col in scheme.partitions):
            raise SpecError("partition columns do not match n_assets")
        if any(sum(col) != spec.budget for col in scheme.partitions):
            raise SpecError("partition columns do not sum to the budget")
        if any(max(col) > spec.max_holding for col in scheme.partitions):
            raise SpecError("partition columns exceed max_holding")
    else:
        if sum(scheme.weights) < spec.max_holding:
            raise SpecError("encoding cannot reach max_holding")

    slack = _slack_scheme(spec)
    n_w = n * t
    n_int = n_w + (t if slack is not None else 0)

    # Ordered-product accumulators over integer variables:
    # value(y) = c0 + lin . y + sum_{i,j} prod[i, j] y_i y_j.
    c0 = 0.0
    lin = np.zeros(n_int)
    prod = np.zeros((n_int, n_int))

    mu = spec.returns
    gamma = spec.risk_aversion
    w0 = spec.initial_holdings.astype(np.float64)

    def wi(step, asset):
        return step * n + asset

    for step in range(t):
        for asset in range(n):
            lin[wi(step, asset)] += mu[asset, step]

    if spec.risk_mode == "covariance":
        for step in range(t):
            blk = slice(step * n, step * n + n)
            prod[blk, blk] += -0.5 * gamma * spec.covariance[step]
    else:
        g = np.zeros(n_w)
        for step in range(t):
            g[step * n : step * n + n] = mu[:, step]
            mt = mu[:, step]
            blk = slice(step * n, step * n + n)
            prod[blk, blk] += -(gamma / t) * np.outer(mt, mt)
        prod[:n_w, :n_w] += (gamma / (t * t)) * np.outer(g, g)

    c = spec.temp_cost
    cp = spec.perm_cost
    for asset in range(n):
        c0 -= c[asset, 0] * w0[asset] ** 2
        lin[wi(0, asset)] += 2.0 * c[asset, 0] * w0[asset]
        prod[wi(0, asset), wi(0, asset)] -= c[asset, 0]
        lin[wi(0, asset)] -= cp[asset, 0] * w0[asset]
        prod[wi(0, asset), wi(0, asset)] += cp[asset, 0]
        for step in range(1, t):
            prod[wi(step, asset), wi(step, asset)] -= c[asset, step]
            prod[wi(step - 1, asset), wi(step - 1, asset)] -= c[asset, step]
            prod[wi(step, asset), wi(step - 1, asset)] += 2.0 * c[asset, step]
            prod[wi(step, asset), wi(step, asset)] += cp[asset, step]
            prod[wi(step - 1, asset), wi(step, asset)] -= cp[asset, step]

    if spec.trade_mode == "liquidate":
        wf = spec.final_holdings.astype(np.float64)
        for asset in range(n):
            cl = c[asset, t - 1]
            cpl = cp[asset, t - 1]
            prod[wi(t - 1, asset), wi(t - 1, asset)] -= cl
            lin[wi(t - 1, asset)] += 2.0 * cl * wf[asset]
            c0 -= cl * wf[asset] ** 2
            c0 += cpl * wf[asset] ** 2
            lin[wi(t - 1, asset)] -= cpl * wf[asset]

    if scheme.kind != "partition":
        k = float(spec.budget)
        for step in range(t):
            c0 -= m_pen * k * k
            for asset in range(n):
                lin[wi(step, asset)] += 2.0 * m_pen * k
            blk = slice(step * n, step * n + n)
            prod[blk, blk] -= m_pen
            if slack is not None:
                si = n_w + step
                lin[si] += 2.0 * m_pen * k
                prod[si, si] -= m_pen
                for asset in range(n):
                    prod[wi(step, asset), si] -= 2.0 * m_pen

    sub = _substitution(spec, scheme).astype(np.float64)
    lin_b = sub.T @ lin
    prod_b = sub.T @ prod @ sub
    if scheme.kind == "partition":
        p = len(scheme.partitions)
        for step in range(t):
            blk = slice(step * p, step * p + p)
            c0 -= m_pen
            lin_b[blk] += 2.0 * m_pen
            prod_b[blk, blk] -= m_pen

    sym = 0.5 * (prod_b + prod_b.T)
    diag_lin = lin_b + np.diag(sym)
    q = -sym
    np.fill_diagonal(q, -diag_lin)

    prov = dict(provenance or {})
    prov.setdefault("problem_hash", sha256_of(spec.to_dict()))
    return QuadraticProgram(
        matrix=q,
        offset=-c0,
        variable_map=_variable_map(spec, scheme),
        scheme=scheme,
        problem=spec,
        provenance=prov,
    )


def _as_bit_matrix(qp: QuadraticProgram, bits) -> np.ndarray:
    x = np.asarray(bits)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != qp.dimension:
        raise SpecError(f"expected {qp.dimension} bits, got {x.shape[1]}")
    if not np.all((x == 0) | (x == 1)):
        raise SpecError("bits must be 0 or 1")
    return x


def evaluate_batch(qp: QuadraticProgram, bits) -> np.ndarray:
    x = _as_bit_matrix(qp, bits).astype(np.float64)
    return np.einsum("bi,ij,bj->b", x, qp.matrix, x) + qp.offset


def evaluate(qp: QuadraticProgram, bits) -> float:
    """Energy x^T Q x + offset of one bit vector."""
    return float(evaluate_batch(qp, bits)[0])


def decode_batch(qp: QuadraticProgram, bits) -> np.ndarray:
    """Holdings implied by bit vectors, shape (B, N, T), slack dropped.

    This applies the same linear substitution the compiler used, so broken
    one-hot states in the partition kind decode to summed (generally
    infeasible) columns rather than raising.
    """
    x = _as_bit_matrix(qp, bits)
    spec = qp.problem
    sub = _substitution(spec, qp.scheme)
    flat = x @ sub.T  # (B, n_int), t-major holdings then slack
    w = flat[:, : spec.n_assets * spec.n_steps]
    w = w.reshape(x.shape[0], spec.n_steps, spec.n_assets)
    return np.swapaxes(w, 1, 2)


def decode_solution(qp: QuadraticProgram, bits) -> Trajectory:
    return Trajectory(decode_batch(qp, bits)[0])


def slack_values(qp: QuadraticProgram, bits) -> np.ndarray | None:
    """Decoded per-step slack in liquidate mode, else None."""
    if qp.problem.trade_mode != "liquidate":
        return None
    x = _as_bit_matrix(qp, bits)
    sub = _substitution(qp.problem, qp.scheme)
    flat = x @ sub.T
    return flat[:, qp.problem.n_assets * qp.problem.n_steps :]


def encoding_state_ok(qp: QuadraticProgram, bits) -> bool:
    """True when partition steps are exactly one-hot (always true otherwise)."""
    if qp.scheme.kind != "partition":
        return True
    x = _as_bit_matrix(qp, bits)[0]
    p = len(qp.scheme.partitions)
    for step in range(qp.problem.n_steps):
        if int(x[step * p : step * p + p].sum()) != 1:
            return False
    return True


def density(qp: QuadraticProgram) -> float:
    """Fraction of nonzero off-diagonal couplings among all pairs."""
    d = qp.dimension
    if d < 2:
        raise SpecError("density needs at least two variables")
    upper = qp.matrix[np.triu_indices(d, k=1)]
    return float(np.count_nonzero(upper)) / (d * (d - 1) / 2)


def qubo_adjacency(qp: QuadraticProgram) -> dict[int, set[int]]:
    """Coupling graph of the program (nonzero off-diagonal entries)."""
    adj: dict[int, set[int]] = {i: set() for i in range(qp.dimension)}
    rows, cols = np.nonzero(np.triu(qp.matrix, k=1))
    for i, j in zip(rows.tolist(), cols.tolist()):
        adj[i].add(j)
        adj[j].add(i)
    return adj


def qubo_to_ising(qp: QuadraticProgram) -> IsingModel:
    """Change of variables x = (1 + s) / 2; energies are preserved exactly."""
    q = qp.matrix
    d = qp.dimension
    off_diag = q - np.diag(np.diag(q))
    h = 0.5 * np.diag(q) + 0.5 * off_diag.sum(axis=1)
    couplings = 0.5 * off_diag
    offset = (
        qp.offset
        + 0.5 * float(np.diag(q).sum())
        + 0.5 * float(np.triu(off_diag, k=1).sum())
    )
    return IsingModel(h=h, couplings=couplings, offset=offset)


def ising_to_qubo_arrays(model: IsingModel) -> tuple[np.ndarray, float]:
    """Matrix and offset of the equivalent QUBO (s = 2x - 1)."""
    j = model.couplings
    q = 2.0 * j.copy()
    diag = 2.0 * model.h - 2.0 * j.sum(axis=1)
    np.fill_diagonal(q, diag)
    offset = (
        model.offset - float(model.h.sum()) + 0.5 * float(np.triu(j, k=1).sum() * 2)
    )
    return q, offset


def ising_energy(model: IsingModel, spins) -> float:
    s = np.asarray(spins, dtype=np.float64)
    if s.shape != (model.n_spins,):
        raise SpecError("spin vector has the wrong length")
    if not np.all(np.abs(s) == 1.0):
        raise SpecError("spins must be -1 or +1")
    return float(model.h @ s + 0.5 * s @ model.couplings @ s + model.offset)


def ising_energy_batch(model: IsingModel, spins) -> np.ndarray:
    s = np.asarray(spins, dtype=np.float64)
    return s @ model.h + 0.5 * np.einsum("bi,ij,bj->b", s, model.couplings, s) + model.offset


def artifact_dict(qp: QuadraticProgram) -> dict:
    """Serializable form: sparse upper-triangular coefficients, full pair
    weights on off-diagonal entries (energy = sum c_ij x_i x_j + offset)."""
    q = qp.matrix
    coeffs = []
    d = qp.dimension
    for i in range(d):
        if q[i, i] != 0.0:
            coeffs.append([i, i, float(q[i, i])])
        for j in range(i + 1, d):
            if q[i, j] != 0.0:
                coeffs.append([i, j, float(2.0 * q[i, j])])
    return {
        "dimension": d,
        "coefficients": coeffs,
        "offset": qp.offset,
        "variable_map": [list(v) for v in qp.variable_map],
        "encoding": qp.scheme.to_dict(),
        "problem": qp.problem.to_dict(),
        "provenance": qp.provenance,
    }


def artifact_from_dict(data: dict) -> QuadraticProgram:
    d = int(data["dimension"])
    q = np.zeros((d, d))
    for i, j, val in data["coefficients"]:
        if i == j:
            q[i, i] = val
        else:
            q[i, j] = q[j, i] = val / 2.0
    return QuadraticProgram(
        matrix=q,
        offset=float(data["offset"]),
        variable_map=tuple(tuple(v) for v in data["variable_map"]),
        scheme=EncodingScheme.from_dict(data["encoding"]),
        problem=ProblemSpec.from_dict(data["problem"]),
        provenance=dict(data.get("provenance") or {}),
    )
