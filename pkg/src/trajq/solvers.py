"""Exact oracles and heuristic samplers over trajectories and QUBOs.

Simulated annealing stands in for annealing hardware everywhere in this
package: the pipeline reproduces the experimental protocol (embedding,
control noise, gauges, majority-vote readout), not quantum behavior.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from trajq import hardware
from trajq.encoding import enumerate_partitions
from trajq.errors import EmbeddingError, GuardLimitError, SpecError
from trajq.model import ProblemSpec, Trajectory, is_feasible_batch, objective
from trajq.model import objective_batch
from trajq.qubo import (
    IsingModel,
    QuadraticProgram,
    decode_batch,
    decode_solution,
    evaluate_batch,
    ising_energy_batch,
    qubo_to_ising,
)

QUBO_GUARD_BITS = 26
INTEGER_GUARD = 10**7


def _guard(size: int, limit: int, what: str) -> None:
    if size <= limit or os.environ.get("TRAJQ_GUARD_OVERRIDE"):
        return
    raise GuardLimitError(
        f"{what} would enumerate {size} states (guard {limit}); "
        "set TRAJQ_GUARD_OVERRIDE=1 to lift the guard"
    )


@dataclass(frozen=True)
class SampleRecord:
    """One distinct solver state with its energy and multiplicity."""

    state: tuple[int, ...]
    energy: float
    count: int
    gauge: int = 0
    feasible: bool | None = None

    def __post_init__(self):
        if self.count < 1:
            raise SpecError("record count must be >= 1")
        object.__setattr__(self, "state", tuple(int(v) for v in self.state))


@dataclass(frozen=True)
class SampleSet:
    """Distinct states from one solver call, plus run metadata.

    `kind` is "bits" for QUBO states and "spins" for Ising states. Records
    are kept sorted by (energy, state, gauge) so equal runs serialize
    identically; wall_time is informational and never serialized.
    """

    records: tuple[SampleRecord, ...]
    kind: str
    reads: int
    sweeps: int
    seed: int
    wall_time: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if self.kind not in ("bits", "spins"):
            raise SpecError("kind must be 'bits' or 'spins'")
        if not self.records:
            raise SpecError("a sample set needs at least one record")
        ordered = tuple(
            sorted(self.records, key=lambda r: (r.energy, r.state, r.gauge))
        )
        object.__setattr__(self, "records", ordered)

    def best(self) -> SampleRecord:
        return self.records[0]

    def read_energies(self) -> np.ndarray:
        """Energies expanded back to one entry per read."""
        return np.repeat(
            [r.energy for r in self.records], [r.count for r in self.records]
        )

    def total_count(self) -> int:
        return sum(r.count for r in self.records)


def merge_sample_sets(a: SampleSet, b: SampleSet) -> SampleSet:
    """Combine two runs over the same problem; counts add per state."""
    if a.kind != b.kind:
        raise SpecError("cannot merge sample sets of different kinds")
    if a.sweeps != b.sweeps:
        raise SpecError("cannot merge sample sets with different sweeps")
    pooled: dict[tuple, SampleRecord] = {}
    for rec in a.records + b.records:
        key = (rec.state, rec.gauge)
        prev = pooled.get(key)
        if prev is None:
            pooled[key] = rec
        else:
            pooled[key] = SampleRecord(
                rec.state, prev.energy, prev.count + rec.count, rec.gauge,
                prev.feasible,
            )
    return SampleSet(
        records=tuple(pooled.values()),
        kind=a.kind,
        reads=a.reads + b.reads,
        sweeps=a.sweeps,
        seed=a.seed,
        wall_time=a.wall_time + b.wall_time,
    )


def write_sample_set(sample_set: SampleSet, path) -> None:
    """JSON lines: one header object, then one line per distinct state.

    Wall time is excluded so a fixed seed reproduces the file byte for byte.
    """
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "kind": sample_set.kind,
            "reads": sample_set.reads,
            "seed": sample_set.seed,
            "sweeps": sample_set.sweeps,
        }
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for rec in sample_set.records:
            row = {
                "count": rec.count,
                "energy": rec.energy,
                "feasible": rec.feasible,
                "gauge": rec.gauge,
                "state": list(rec.state),
            }
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")


def read_sample_set(path) -> SampleSet:
    with open(path, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines:
        raise SpecError(f"empty sample-set file: {path}")
    header, rows = lines[0], lines[1:]
    records = tuple(
        SampleRecord(
            state=tuple(row["state"]),
            energy=float(row["energy"]),
            count=int(row["count"]),
            gauge=int(row["gauge"]),
            feasible=row["feasible"],
        )
        for row in rows
    )
    return SampleSet(
        records=records,
        kind=header["kind"],
        reads=int(header["reads"]),
        sweeps=int(header["sweeps"]),
        seed=int(header["seed"]),
    )


def _lex_min_rows(rows: np.ndarray) -> np.ndarray:
    """The lexicographically smallest row, column by column."""
    sel = np.arange(rows.shape[0])
    for col in range(rows.shape[1]):
        vals = rows[sel, col]
        sel = sel[vals == vals.min()]
        if sel.size == 1:
            break
    return rows[sel[0]]


def exhaustive_integer(spec: ProblemSpec) -> tuple[Trajectory, float]:
    """Optimal trajectory by enumerating feasible holdings step by step.

    Ties on the objective are broken by the lexicographically smallest
    flattened holdings matrix.
    """
    if spec.trade_mode == "rebalance":
        columns = enumerate_partitions(spec.budget, spec.n_assets, spec.max_holding)
    else:
        columns = tuple(
            part
            for total in range(spec.budget + 1)
            for part in enumerate_partitions(total, spec.n_assets, spec.max_holding)
        )
    if not columns:
        raise SpecError("the budget constraint admits no feasible holdings")
    p = len(columns)
    size = p**spec.n_steps
    _guard(size, INTEGER_GUARD, "exhaustive_integer")

    cols = np.asarray(columns, dtype=np.int64)  # (P, N)
    radix = p ** np.arange(spec.n_steps - 1, -1, -1, dtype=np.int64)
    best_val: float | None = None
    best_flat: np.ndarray | None = None
    chunk = 1 << 14
    for start in range(0, size, chunk):
        idx = np.arange(start, min(start + chunk, size), dtype=np.int64)
        digits = (idx[:, None] // radix[None, :]) % p  # (B, T)
        w = cols[digits]  # (B, T, N)
        w = np.swapaxes(w, 1, 2)  # (B, N, T)
        vals = objective_batch(spec, w)
        top = float(vals.max())
        if best_val is not None and top < best_val:
            continue
        cand = w[vals == top].reshape(-1, spec.n_assets * spec.n_steps)
        flat = _lex_min_rows(cand)
        if best_val is None or top > best_val or (
            top == best_val and tuple(flat) < tuple(best_flat)
        ):
            best_val = top
            best_flat = flat
    holdings = best_flat.reshape(spec.n_assets, spec.n_steps)
    return Trajectory(holdings), float(best_val)


def _all_bit_rows(n: int) -> np.ndarray:
    idx = np.arange(1 << n, dtype=np.int64)
    return ((idx[:, None] >> np.arange(n)[None, :]) & 1).astype(np.float64)


def exhaustive_qubo(qp: QuadraticProgram) -> tuple[np.ndarray, float]:
    """Global QUBO minimum over all bitstrings, lexicographic tie-break."""
    d = qp.dimension
    _guard(1 << d, 1 << QUBO_GUARD_BITS, "exhaustive_qubo")

    q = qp.matrix
    lo = min(d, 18)
    hi = d - lo
    x_lo = _all_bit_rows(lo)
    e_lo = ((x_lo @ q[:lo, :lo]) * x_lo).sum(axis=1)
    # Bit i is more significant than bit i+1 in the tie-break ordering.
    key_lo = (x_lo.astype(np.int64) * (1 << np.arange(d - 1, d - 1 - lo, -1))).sum(
        axis=1
    )
    cross = 2.0 * q[:lo, lo:]
    q_hh = q[lo:, lo:]

    best_e: float | None = None
    best_key = 0
    best_bits: np.ndarray | None = None
    for g in range(1 << hi):
        x_hi = np.array([(g >> j) & 1 for j in range(hi)], dtype=np.float64)
        e = e_lo if hi == 0 else e_lo + (cross @ x_hi) @ x_lo.T + x_hi @ q_hh @ x_hi
        block_min = float(e.min())
        if best_e is not None and block_min > best_e:
            continue
        key_hi = sum(
            ((g >> j) & 1) << (d - 1 - (lo + j)) for j in range(hi)
        )
        tied = np.nonzero(e == block_min)[0]
        key = int(key_lo[tied].min()) + key_hi
        if best_e is None or block_min < best_e or (
            block_min == best_e and key < best_key
        ):
            best_e = block_min
            best_key = key
            row = tied[np.argmin(key_lo[tied])]
            bits = np.empty(d, dtype=np.int64)
            bits[:lo] = x_lo[row].astype(np.int64)
            bits[lo:] = [(g >> j) & 1 for j in range(hi)]
            best_bits = bits
    return best_bits, float(best_e + qp.offset)


def _coupling_csr(j: np.ndarray):
    rows, cols = np.nonzero(j)
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    indptr = np.zeros(j.shape[0] + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    indptr = np.cumsum(indptr)
    return indptr, cols.astype(np.int64), j[rows, cols]


@njit(cache=True)
def _anneal_reads(h, indptr, indices, data, betas, reads, seed):
    n = h.size
    states = np.empty((reads, n), dtype=np.int8)
    for r in range(reads):
        np.random.seed((seed ^ r) & 0xFFFFFFFF)
        s = np.empty(n, dtype=np.int8)
        for i in range(n):
            s[i] = 1 if np.random.random() < 0.5 else -1
        f = h.copy()
        for i in range(n):
            for k in range(indptr[i], indptr[i + 1]):
                f[i] += data[k] * s[indices[k]]
        for b in betas:
            for i in range(n):
                de = -2.0 * s[i] * f[i]
                if de <= 0.0 or np.random.random() < math.exp(-b * de):
                    s[i] = -s[i]
                    for k in range(indptr[i], indptr[i + 1]):
                        f[indices[k]] += 2.0 * data[k] * s[i]
        improved = True
        while improved:
            improved = False
            for i in range(n):
                if -2.0 * s[i] * f[i] < 0.0:
                    s[i] = -s[i]
                    for k in range(indptr[i], indptr[i + 1]):
                        f[indices[k]] += 2.0 * data[k] * s[i]
                    improved = True
        states[r] = s
    return states


def _beta_range(model: IsingModel, seed: int) -> tuple[float, float]:
    """Acceptance-targeted schedule endpoints from a random-state pre-pass.

    The hot end accepts a typical uphill move with probability ~0.8 and the
    cold end accepts a small move with probability ~0.01.
    """
    rng = np.random.default_rng(seed)
    samples = rng.integers(0, 2, size=(16, model.n_spins)) * 2 - 1
    moves = np.abs(2.0 * (samples @ model.couplings + model.h))
    moves = moves[moves > 1e-12]
    if moves.size == 0:
        return 1.0, 1.0
    hot = float(moves.mean())
    cold = float(np.percentile(moves, 10))
    beta_min = math.log(1.0 / 0.8) / hot
    beta_max = math.log(100.0) / max(cold, 1e-12 * hot)
    return beta_min, max(beta_max, beta_min)


def simulated_annealing(
    problem,
    schedule=None,
    reads: int = 1000,
    sweeps: int = 1000,
    seed: int = 0,
) -> SampleSet:
    """Single-flip Metropolis sampling with a geometric beta ladder.

    Read i seeds its own generator with seed XOR i, so any prefix of reads
    is independent of the total read count. Every read finishes with a
    zero-temperature descent, which makes one-variable problems exact. The
    schedule may be None (derived endpoints), an explicit (beta_min,
    beta_max) pair, or a full beta array (overriding `sweeps`).
    """
    if reads < 1 or sweeps < 1:
        raise SpecError("reads and sweeps must be >= 1")
    if seed < 0:
        raise SpecError("seed must be non-negative")
    if isinstance(problem, QuadraticProgram):
        model = qubo_to_ising(problem)
        kind = "bits"
    elif isinstance(problem, IsingModel):
        model = problem
        kind = "spins"
    else:
        raise SpecError("problem must be a QuadraticProgram or an IsingModel")

    if schedule is None:
        lo_beta, hi_beta = _beta_range(model, seed)
        betas = np.geomspace(lo_beta, hi_beta, sweeps)
    else:
        arr = np.asarray(schedule, dtype=np.float64)
        if arr.shape == (2,):
            if np.any(arr <= 0):
                raise SpecError("all betas must be positive")
            betas = np.geomspace(arr[0], arr[1], sweeps)
        elif arr.ndim == 1 and arr.size >= 1:
            betas = arr
        else:
            raise SpecError("schedule must be (beta_min, beta_max) or a beta array")
        if np.any(betas <= 0):
            raise SpecError("all betas must be positive")

    started = time.perf_counter()
    indptr, indices, data = _coupling_csr(model.couplings)
    spins = _anneal_reads(
        model.h, indptr, indices, data, betas, int(reads), int(seed)
    )
    states, counts = np.unique(spins, axis=0, return_counts=True)
    energies = ising_energy_batch(model, states)
    wall = time.perf_counter() - started

    if kind == "bits":
        bits = ((states + 1) // 2).astype(np.int64)
        energies = evaluate_batch(problem, bits)
        holdings = decode_batch(problem, bits)
        feasible = is_feasible_batch(problem.problem, holdings)
        records = tuple(
            SampleRecord(tuple(b), float(e), int(c), 0, bool(ok))
            for b, e, c, ok in zip(bits, energies, counts, feasible)
        )
    else:
        records = tuple(
            SampleRecord(tuple(s), float(e), int(c), 0, None)
            for s, e, c in zip(states, energies, counts)
        )
    return SampleSet(
        records=records,
        kind=kind,
        reads=int(reads),
        sweeps=int(betas.size),
        seed=int(seed),
        wall_time=wall,
    )


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs for the simulated annealer pipeline.

    With gauges == 1 the gauge stays the identity so the degenerate pipeline
    (epsilon 0, unit chains) reproduces plain simulated annealing exactly.
    Setting chain_strength skips the pilot sweep over
    chain_strength_factors.
    """

    reads: int = 1000
    gauges: int = 5
    sweeps: int = 1000
    epsilon: float = 0.03
    seed: int = 0
    chain_strength: float | None = None
    chain_strength_factors: tuple[float, ...] = (0.5, 1.0, 2.0)
    elite_fraction: float = 0.02
    pilot_reads: int = 32
    embedding_seeds: int = 2
    embedding: hardware.Embedding | None = None
    noise_distribution: str = "uniform"
    coupler_range: tuple[float, float] = (-1.0, 1.0)
    field_range: tuple[float, float] = (-2.0, 2.0)

    def __post_init__(self):
        if self.reads < 1 or self.sweeps < 1:
            raise SpecError("reads and sweeps must be >= 1")
        if not 1 <= self.gauges <= self.reads:
            raise SpecError("gauges must be in [1, reads]")
        if self.chain_strength is not None and self.chain_strength <= 0:
            raise SpecError("chain_strength must be positive")
        if not self.chain_strength_factors and self.chain_strength is None:
            raise SpecError("need chain_strength or chain_strength_factors")
        if self.pilot_reads < 1:
            raise SpecError("pilot_reads must be >= 1")


def _ising_adjacency(model: IsingModel) -> dict[int, set[int]]:
    n = model.n_spins
    rows, cols = np.nonzero(model.couplings)
    adj: dict[int, set[int]] = {i: set() for i in range(n)}
    for a, b in zip(rows.tolist(), cols.tolist()):
        if a != b:
            adj[a].add(b)
    return adj


def _candidate_embeddings(adjacency, graph, config) -> tuple[list, list[str]]:
    candidates, sources = [], []
    if config.embedding is not None:
        return [config.embedding], ["config"]
    for k in range(config.embedding_seeds):
        try:
            candidates.append(
                hardware.greedy_embedding(adjacency, graph, config.seed + k)
            )
            sources.append("greedy")
        except EmbeddingError:
            pass
    try:
        candidates.append(hardware.clique_embedding(len(adjacency), graph))
        sources.append("clique")
    except EmbeddingError:
        pass
    if not candidates:
        raise EmbeddingError("no embedding candidate fits the hardware graph")
    return candidates, sources


def _unembedded_records(
    qp, physical, sample_set, gauge_vec, gauge_id, tie_rng
):
    """Physical spins -> logical records plus the broken-read count."""
    phys_states = np.array([r.state for r in sample_set.records], dtype=np.int64)
    counts = np.array([r.count for r in sample_set.records], dtype=np.int64)
    phys_states = phys_states * gauge_vec[None, :].astype(np.int64)
    logical, ties = hardware.unembed(phys_states, physical.chains, tie_rng)
    broken = int(counts[ties.any(axis=1)].sum())
    bits = ((logical + 1) // 2).astype(np.int64)

    merged: dict[tuple, list] = {}
    for row, c in zip(bits, counts):
        key = tuple(int(v) for v in row)
        if key in merged:
            merged[key][1] += int(c)
        else:
            merged[key] = [row, int(c)]
    states = np.array([v[0] for v in merged.values()], dtype=np.int64)
    energies = evaluate_batch(qp, states)
    feasible = is_feasible_batch(qp.problem, decode_batch(qp, states))
    records = [
        SampleRecord(key, float(e), v[1], gauge_id, bool(ok))
        for (key, v), e, ok in zip(merged.items(), energies, feasible)
    ]
    return records, broken


def _choose_chain_strength(qp, ising, emb, graph, config) -> float:
    """Pilot runs scored by the elite mean of decoded logical energies."""
    if config.chain_strength is not None:
        return float(config.chain_strength)
    base = max(
        float(np.abs(ising.couplings).max(initial=0.0)),
        float(np.abs(ising.h).max(initial=0.0)),
        1e-9,
    )
    values = [f * base for f in config.chain_strength_factors]
    if len(values) == 1:
        return values[0]
    scores = []
    for value in values:
        physical = hardware.embed_problem(ising, emb, graph, value)
        noise = hardware.NoiseModel(
            epsilon=config.epsilon,
            coupler_range=config.coupler_range,
            field_range=config.field_range,
            distribution=config.noise_distribution,
            seed=config.seed + 104729,
        )
        noisy = hardware.apply_noise(physical.model, noise)
        pilot = simulated_annealing(
            noisy,
            reads=config.pilot_reads,
            sweeps=config.sweeps,
            seed=config.seed + 15485863,
        )
        gauge = np.ones(physical.model.n_spins)
        records, _ = _unembedded_records(
            qp, physical, pilot, gauge, 0,
            np.random.default_rng(config.seed + 32452843),
        )
        energies = np.repeat(
            [r.energy for r in records], [r.count for r in records]
        )
        scores.append(hardware.pi_elite_score(energies, config.elite_fraction))
    return values[int(np.argmin(scores))]


def annealer_pipeline(
    qp: QuadraticProgram,
    graph: hardware.ChimeraGraph,
    config: PipelineConfig | None = None,
):
    """Embedded, noisy, gauge-averaged annealing over a compiled QUBO.

    Returns (trajectory, objective value, SampleSet, diagnostics). The
    trajectory is the best-energy feasible decode; when every read is
    infeasible the best overall is returned and diagnostics carry
    feasible=False. Chain strength comes from config or a pilot sweep; each
    gauge gets its own control-noise draw and reads // gauges reads (the
    remainder goes to the first gauges).
    """
    if not isinstance(qp, QuadraticProgram):
        raise SpecError("annealer_pipeline needs a compiled QuadraticProgram")
    config = config or PipelineConfig()
    started = time.perf_counter()
    ising = qubo_to_ising(qp)
    adjacency = _ising_adjacency(ising)

    candidates, sources = _candidate_embeddings(adjacency, graph, config)
    order = hardware.rank_embeddings(candidates)
    emb = candidates[order[0]]
    source = sources[order[0]]

    strength = _choose_chain_strength(qp, ising, emb, graph, config)
    physical = hardware.embed_problem(ising, emb, graph, strength)
    n_phys = physical.model.n_spins

    g_count = config.gauges
    master = np.random.default_rng(config.seed)
    if g_count == 1:
        gauge_vecs = [np.ones(n_phys)]
    else:
        gauge_vecs = [hardware.random_gauge(n_phys, master) for _ in range(g_count)]
    base_reads, extra = divmod(config.reads, g_count)

    all_records: list[SampleRecord] = []
    per_gauge_best: list[float] = []
    broken_total = 0
    for g, gauge_vec in enumerate(gauge_vecs):
        gauged = hardware.gauge_transform(physical.model, gauge_vec)
        noise = hardware.NoiseModel(
            epsilon=config.epsilon,
            coupler_range=config.coupler_range,
            field_range=config.field_range,
            distribution=config.noise_distribution,
            seed=config.seed + 7919 * (g + 1),
        )
        noisy = hardware.apply_noise(gauged, noise)
        reads_g = base_reads + (1 if g < extra else 0)
        run = simulated_annealing(
            noisy,
            reads=reads_g,
            sweeps=config.sweeps,
            seed=config.seed + 1_000_003 * g,
        )
        records, broken = _unembedded_records(
            qp, physical, run, gauge_vec, g,
            np.random.default_rng(config.seed + 15013 + g),
        )
        broken_total += broken
        per_gauge_best.append(min(r.energy for r in records))
        all_records.extend(records)

    sample_set = SampleSet(
        records=tuple(all_records),
        kind="bits",
        reads=config.reads,
        sweeps=config.sweeps,
        seed=config.seed,
        wall_time=time.perf_counter() - started,
    )
    feasible_records = [r for r in sample_set.records if r.feasible]
    best = feasible_records[0] if feasible_records else sample_set.best()
    trajectory = decode_solution(qp, np.array(best.state))
    value = objective(qp.problem, trajectory)
    diagnostics = {
        "qubits": len(physical.qubits),
        "max_chain": emb.max_chain_length,
        "chain_strength": strength,
        "embedding_source": source,
        "per_gauge_best": per_gauge_best,
        "reads_per_gauge": [
            base_reads + (1 if g < extra else 0) for g in range(g_count)
        ],
        "broken_reads": broken_total,
        "feasible": bool(best.feasible),
        "epsilon": config.epsilon,
    }
    return trajectory, value, sample_set, diagnostics
