"""Chimera hardware model: graph, minor embeddings, control noise, readout.

A Chimera graph of side s has s*s unit cells of 8 qubits (two sides of a
K_{4,4}); qubit (i, j, u, k) has linear index ((i*s + j)*2 + u)*4 + k. Side
u=0 couples vertically between cells, u=1 horizontally.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from trajq._io import read_json
from trajq.errors import EmbeddingError, SpecError
from trajq.qubo import IsingModel


def chimera_index(side: int, i: int, j: int, u: int, k: int) -> int:
    return ((i * side + j) * 2 + u) * 4 + k


def chimera_coords(side: int, q: int) -> tuple[int, int, int, int]:
    k = q % 4
    u = (q // 4) % 2
    cell = q // 8
    return cell // side, cell % side, u, k


@dataclass(frozen=True)
class ChimeraGraph:
    side: int
    inactive_qubits: frozenset[int] = frozenset()
    inactive_couplers: frozenset[tuple[int, int]] = frozenset()

    def __post_init__(self):
        if self.side < 1:
            raise SpecError("side must be >= 1")
        n = self.n_sites
        bad = [q for q in self.inactive_qubits if not 0 <= q < n]
        if bad:
            raise SpecError(f"inactive qubits out of range: {bad}")
        pristine = set(_pristine_edges(self.side))
        couplers = frozenset(tuple(sorted(c)) for c in self.inactive_couplers)
        bad_c = [c for c in couplers if c not in pristine]
        if bad_c:
            raise SpecError(f"inactive couplers are not edges: {bad_c}")
        object.__setattr__(self, "inactive_qubits", frozenset(self.inactive_qubits))
        object.__setattr__(self, "inactive_couplers", couplers)

    @property
    def n_sites(self) -> int:
        """Total qubit sites including inactive ones: 8 * side^2."""
        return 8 * self.side * self.side

    @cached_property
    def nodes(self) -> tuple[int, ...]:
        return tuple(q for q in range(self.n_sites) if q not in self.inactive_qubits)

    @cached_property
    def edges(self) -> tuple[tuple[int, int], ...]:
        out = []
        for a, b in _pristine_edges(self.side):
            if a in self.inactive_qubits or b in self.inactive_qubits:
                continue
            if (a, b) in self.inactive_couplers:
                continue
            out.append((a, b))
        return tuple(out)

    @cached_property
    def adjacency(self) -> dict[int, frozenset[int]]:
        adj: dict[int, set[int]] = {q: set() for q in self.nodes}
        for a, b in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        return {q: frozenset(s) for q, s in adj.items()}

    def has_edge(self, a: int, b: int) -> bool:
        return b in self.adjacency.get(a, ())


def _pristine_edges(side: int):
    for i in range(side):
        for j in range(side):
            for k0 in range(4):
                a = chimera_index(side, i, j, 0, k0)
                for k1 in range(4):
                    yield (a, chimera_index(side, i, j, 1, k1))
            if i + 1 < side:
                for k in range(4):
                    yield (
                        chimera_index(side, i, j, 0, k),
                        chimera_index(side, i + 1, j, 0, k),
                    )
            if j + 1 < side:
                for k in range(4):
                    yield (
                        chimera_index(side, i, j, 1, k),
                        chimera_index(side, i, j + 1, 1, k),
                    )


def chimera(side: int, inactive_qubits=(), inactive_couplers=()) -> ChimeraGraph:
    return ChimeraGraph(
        side=side,
        inactive_qubits=frozenset(inactive_qubits),
        inactive_couplers=frozenset(tuple(sorted(c)) for c in inactive_couplers),
    )


def max_clique_size(side: int) -> int:
    """Largest complete graph a pristine side-s chip can host: 4s + 1."""
    if side < 1:
        raise SpecError("side must be >= 1")
    return 4 * side + 1


def load_hardware_fixture(path) -> ChimeraGraph:
    data = read_json(path)
    return chimera(
        int(data["side"]),
        data.get("inactive_qubits", ()),
        [tuple(c) for c in data.get("inactive_couplers", ())],
    )


@dataclass(frozen=True)
class Embedding:
    """Chains of physical qubits, one per logical variable (by index)."""

    chains: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "chains", tuple(tuple(int(q) for q in c) for c in self.chains)
        )
        if any(not c for c in self.chains):
            raise SpecError("every chain must be non-empty")

    @property
    def n_variables(self) -> int:
        return len(self.chains)

    @property
    def max_chain_length(self) -> int:
        return max(len(c) for c in self.chains)

    @property
    def total_qubits(self) -> int:
        return sum(len(c) for c in self.chains)

    def to_dict(self) -> dict:
        return {"chains": [list(c) for c in self.chains]}

    @classmethod
    def from_dict(cls, data: dict) -> "Embedding":
        return cls(tuple(tuple(c) for c in data["chains"]))


def verify_embedding(
    graph: ChimeraGraph, emb: Embedding, adjacency: dict[int, set[int]] | None = None
) -> None:
    """Raise EmbeddingError unless chains are disjoint, connected, on active
    hardware, and cover every required logical edge."""
    seen: set[int] = set()
    adj = graph.adjacency
    for v, chain in enumerate(emb.chains):
        cset = set(chain)
        if len(cset) != len(chain):
            raise EmbeddingError(f"chain {v} repeats qubits")
        if cset & seen:
            raise EmbeddingError(f"chain {v} overlaps another chain")
        seen |= cset
        missing = [q for q in chain if q not in adj]
        if missing:
            raise EmbeddingError(f"chain {v} uses inactive or unknown qubits {missing}")
        # connectivity within the induced subgraph
        stack = [chain[0]]
        reached = {chain[0]}
        while stack:
            q = stack.pop()
            for nb in adj[q]:
                if nb in cset and nb not in reached:
                    reached.add(nb)
                    stack.append(nb)
        if reached != cset:
            raise EmbeddingError(f"chain {v} is not connected")
    if adjacency is None:
        return
    chain_sets = [set(c) for c in emb.chains]
    for i, nbrs in adjacency.items():
        for j in nbrs:
            if j <= i:
                continue
            if not _chains_touch(graph, chain_sets[i], chain_sets[j]):
                raise EmbeddingError(f"no physical edge covers logical edge ({i}, {j})")


def _chains_touch(graph: ChimeraGraph, ca: set[int], cb: set[int]) -> bool:
    adj = graph.adjacency
    small, large = (ca, cb) if len(ca) <= len(cb) else (cb, ca)
    return any(bool(adj[q] & large) for q in small)


def clique_embedding(n_vars: int, graph: ChimeraGraph) -> Embedding:
    """Deterministic complete-graph embedding.

    Uses a triangular half-grid layout whose chains pair an L-shaped
    horizontal run with a vertical run; when n_vars is one above a multiple
    of four, a dedicated full-column chain supplies the extra variable.
    Chain lengths stay within ceil(n_vars / 4) + 1.
    """
    if n_vars < 1:
        raise SpecError("n_vars must be >= 1")
    cap = max_clique_size(graph.side)
    if n_vars > cap:
        raise EmbeddingError(
            f"K_{n_vars} does not fit: side {graph.side} caps cliques at {cap}"
        )
    side = graph.side
    if n_vars % 4 == 1 and n_vars > 1:
        m = (n_vars - 1) // 4
        chains = _comb_clique(side, m)
    else:
        m = math.ceil(n_vars / 4)
        chains = _triangle_clique(side, m)[:n_vars]
    emb = Embedding(tuple(chains))
    full = {i: set(range(n_vars)) - {i} for i in range(n_vars)}
    try:
        verify_embedding(graph, emb, full)
    except EmbeddingError as exc:
        raise EmbeddingError(
            f"clique construction intersects inactive hardware: {exc}"
        ) from exc
    return emb


def _triangle_clique(side: int, m: int) -> list[tuple[int, ...]]:
    chains = []
    for a in range(m):
        for k in range(4):
            run = [chimera_index(side, a, c, 1, k) for c in range(a + 1)]
            run += [chimera_index(side, r, a, 0, k) for r in range(a, m)]
            chains.append(tuple(run))
    return chains


def _comb_clique(side: int, m: int) -> list[tuple[int, ...]]:
    """4m + 1 chains on an m x m block; column 0 side-0 hosts the extra chain."""
    chains = []
    for i in range(m - 1):
        for k in range(4):
            run = [chimera_index(side, i, c, 1, k) for c in range(i + 2)]
            run += [chimera_index(side, r, i + 1, 0, k) for r in range(i, m)]
            chains.append(tuple(run))
    for k in range(4):
        run = [chimera_index(side, m - 1, c, 1, k) for c in range(m)]
        if k != 0:
            run.append(chimera_index(side, m - 1, 0, 0, k))
        chains.append(tuple(run))
    chains.append(tuple(chimera_index(side, r, 0, 0, 0) for r in range(m)))
    return chains


def greedy_embedding(
    adjacency: dict[int, set[int]],
    graph: ChimeraGraph,
    seed: int,
    retries: int = 3,
) -> Embedding:
    """Randomized compact-layout embedding heuristic.

    Variables are grouped four to a unit cell on a diagonal of the chip
    (most connected variables share a cell) and each variable holds one
    horizontal and one vertical qubit there. Cross-cell edges are covered
    by stretching one endpoint's row run and the other's column run until
    they meet, so every qubit stays private to one variable and the layout
    is valid by construction. Falls back to the clique construction when
    the diagonal block does not fit or a degraded chip rejects every
    attempt; raises EmbeddingError when that fails too.
    """
    n_vars = len(adjacency)
    if n_vars == 0:
        raise SpecError("adjacency must contain at least one variable")
    if set(adjacency) != set(range(n_vars)):
        raise SpecError("adjacency keys must be 0..n-1")
    rng = np.random.default_rng(seed)
    best: tuple[tuple[int, ...], ...] | None = None
    for _ in range(max(1, retries)):
        chains = _line_layout_attempt(adjacency, graph, rng)
        if chains is None:
            continue
        if best is None or _layout_cost(chains) < _layout_cost(best):
            best = chains
    if best is None:
        try:
            best = clique_embedding(n_vars, graph).chains
        except EmbeddingError:
            raise EmbeddingError(
                f"no embedding found for {n_vars} variables after retries"
            ) from None
    emb = Embedding(best)
    verify_embedding(graph, emb, adjacency)
    return emb


def _layout_cost(chains) -> tuple[int, int]:
    sizes = [len(c) for c in chains]
    return max(sizes), sum(sizes)


def _line_layout_attempt(adjacency, graph: ChimeraGraph, rng):
    """One randomized layout; None when it does not fit or verify."""
    n_vars = len(adjacency)
    groups = _group_variables(adjacency, rng)
    m = len(groups)
    side = graph.side
    if m > side:
        return None
    groups = _order_groups(groups, adjacency, rng)
    diag: dict[int, int] = {}
    slot: dict[int, int] = {}
    for d, grp in enumerate(groups):
        ks = rng.permutation(4)
        for idx, v in enumerate(grp):
            diag[v] = d
            slot[v] = int(ks[idx])
    # Row-run column interval and column-run row interval per variable,
    # both measured in diagonal-cell coordinates.
    hlo = {v: diag[v] for v in range(n_vars)}
    hhi = dict(hlo)
    vlo = dict(hlo)
    vhi = dict(hlo)

    def ext(lo: int, hi: int, x: int) -> int:
        return max(0, lo - x, x - hi)

    edges = [
        (a, b)
        for a in sorted(adjacency)
        for b in sorted(adjacency[a])
        if a < b and diag[a] != diag[b]
    ]
    edges.sort(key=lambda e: (-abs(diag[e[0]] - diag[e[1]]), rng.random()))
    for a, b in edges:
        da, db = diag[a], diag[b]
        len_a = (hhi[a] - hlo[a] + 1) + (vhi[a] - vlo[a] + 1)
        len_b = (hhi[b] - hlo[b] + 1) + (vhi[b] - vlo[b] + 1)
        la1 = len_a + ext(hlo[a], hhi[a], db)
        lb1 = len_b + ext(vlo[b], vhi[b], da)
        la2 = len_a + ext(vlo[a], vhi[a], db)
        lb2 = len_b + ext(hlo[b], hhi[b], da)
        key1 = (max(la1, lb1), la1 + lb1)
        key2 = (max(la2, lb2), la2 + lb2)
        if key1 == key2:
            choice = 1 + int(rng.integers(2))
        else:
            choice = 1 if key1 < key2 else 2
        if choice == 1:
            hlo[a], hhi[a] = min(hlo[a], db), max(hhi[a], db)
            vlo[b], vhi[b] = min(vlo[b], da), max(vhi[b], da)
        else:
            vlo[a], vhi[a] = min(vlo[a], db), max(vhi[a], db)
            hlo[b], hhi[b] = min(hlo[b], da), max(hhi[b], da)

    r0 = int(rng.integers(side - m + 1))
    c0 = int(rng.integers(side - m + 1))
    chains = []
    for v in range(n_vars):
        d, k = diag[v], slot[v]
        qs = [
            chimera_index(side, r0 + d, c0 + j, 1, k)
            for j in range(hlo[v], hhi[v] + 1)
        ]
        qs += [
            chimera_index(side, r0 + i, c0 + d, 0, k)
            for i in range(vlo[v], vhi[v] + 1)
        ]
        chains.append(tuple(sorted(qs)))
    try:
        verify_embedding(graph, Embedding(tuple(chains)), adjacency)
    except EmbeddingError:
        return None
    return tuple(chains)


def _group_variables(adjacency, rng) -> list[list[int]]:
    """Partition variables into cells of four, most connected together."""
    left = set(adjacency)
    groups = []
    while left:
        ranked = sorted(left, key=lambda v: (-len(adjacency[v] & left), rng.random()))
        grp = [ranked[0]]
        left.remove(ranked[0])
        while len(grp) < 4 and left:
            scored = sorted(
                left,
                key=lambda v: (
                    -sum(1 for g in grp if v in adjacency[g]),
                    -len(adjacency[v] & left),
                    rng.random(),
                ),
            )
            grp.append(scored[0])
            left.remove(scored[0])
        groups.append(grp)
    return groups


def _order_groups(groups, adjacency, rng) -> list[list[int]]:
    """Order cells along the diagonal to keep connected groups close."""
    m = len(groups)
    if m <= 1:
        return groups
    gid = {v: i for i, grp in enumerate(groups) for v in grp}
    weight = np.zeros((m, m))
    for a in adjacency:
        for b in adjacency[a]:
            if a < b and gid[a] != gid[b]:
                weight[gid[a], gid[b]] += 1
                weight[gid[b], gid[a]] += 1
    if m <= 6:
        best_perm, best_cost = None, None
        for perm in itertools.permutations(range(m)):
            cost = 0.0
            for i in range(m):
                for j in range(i + 1, m):
                    cost += weight[perm[i], perm[j]] * (j - i)
            if best_cost is None or cost < best_cost:
                best_perm, best_cost = perm, cost
        order = list(best_perm)
    else:
        order = [int(np.argmax(weight.sum(axis=0)))]
        rest = set(range(m)) - set(order)
        while rest:
            last = order[-1]
            nxt = sorted(rest, key=lambda g: (-weight[last, g], rng.random()))[0]
            order.append(nxt)
            rest.remove(nxt)
    return [groups[g] for g in order]


def rank_embeddings(embeddings) -> list[int]:
    """Indices of candidates from best to worst.

    Equal-weight sum of min-max normalized max chain length, total qubits,
    and chain-length variance; ties keep input order.
    """
    if not embeddings:
        raise SpecError("rank_embeddings needs at least one candidate")
    feats = []
    for emb in embeddings:
        lengths = np.array([len(c) for c in emb.chains], dtype=np.float64)
        feats.append((lengths.max(), lengths.sum(), lengths.var()))
    feats = np.array(feats)
    lo, hi = feats.min(axis=0), feats.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    norm = (feats - lo) / span
    scores = norm.mean(axis=1)
    return sorted(range(len(embeddings)), key=lambda i: (scores[i], i))


def pi_elite_score(energies, fraction: float) -> float:
    """Mean of the lowest ceil(fraction * count) energies."""
    e = np.sort(np.asarray(energies, dtype=np.float64))
    if e.size == 0:
        raise SpecError("pi_elite_score needs at least one energy")
    if not 0.0 < fraction <= 1.0:
        raise SpecError("fraction must be in (0, 1]")
    count = math.ceil(fraction * e.size)
    return float(e[:count].mean())


@dataclass(frozen=True)
class EmbeddedIsing:
    """Physical spin problem restricted to the qubits an embedding uses."""

    model: IsingModel
    qubits: tuple[int, ...]
    chains: tuple[tuple[int, ...], ...]  # local indices into `qubits`
    chain_strength: float
    intra_edges: int


def embed_problem(
    model: IsingModel,
    emb: Embedding,
    graph: ChimeraGraph,
    chain_strength: float,
) -> EmbeddedIsing:
    """Map a logical spin model onto hardware chains.

    Fields are split equally along each chain, every logical coupling lands
    on one (lexicographically first) physical edge, intra-chain edges get a
    ferromagnetic -chain_strength, and the offset is shifted so chain-aligned
    states reproduce logical energies exactly.
    """
    if chain_strength <= 0:
        raise SpecError("chain_strength must be positive")
    n = model.n_spins
    if emb.n_variables != n:
        raise EmbeddingError("embedding does not match the model size")
    logical_adj = {
        i: set(np.nonzero(model.couplings[i])[0].tolist()) for i in range(n)
    }
    verify_embedding(graph, emb, logical_adj)

    qubits = tuple(sorted(q for c in emb.chains for q in c))
    local = {q: p for p, q in enumerate(qubits)}
    p_count = len(qubits)
    h = np.zeros(p_count)
    j = np.zeros((p_count, p_count))
    adj = graph.adjacency

    for i, chain in enumerate(emb.chains):
        share = model.h[i] / len(chain)
        for q in chain:
            h[local[q]] += share

    for i in range(n):
        for jdx in sorted(logical_adj[i]):
            if jdx <= i:
                continue
            edge = _first_edge(graph, emb.chains[i], emb.chains[jdx])
            a, b = local[edge[0]], local[edge[1]]
            j[a, b] += model.couplings[i, jdx]
            j[b, a] += model.couplings[i, jdx]

    intra = 0
    chains_local = []
    for chain in emb.chains:
        cset = set(chain)
        chains_local.append(tuple(sorted(local[q] for q in chain)))
        for q in chain:
            for nb in adj[q]:
                if nb in cset and nb > q:
                    a, b = local[q], local[nb]
                    j[a, b] -= chain_strength
                    j[b, a] -= chain_strength
                    intra += 1

    phys = IsingModel(
        h=h, couplings=j, offset=model.offset + chain_strength * intra
    )
    return EmbeddedIsing(
        model=phys,
        qubits=qubits,
        chains=tuple(chains_local),
        chain_strength=float(chain_strength),
        intra_edges=intra,
    )


def _first_edge(graph: ChimeraGraph, ca, cb) -> tuple[int, int]:
    adj = graph.adjacency
    cb_set = set(cb)
    best = None
    for q in sorted(ca):
        hits = sorted(adj[q] & cb_set)
        if hits:
            cand = (q, hits[0]) if q < hits[0] else (hits[0], q)
            if best is None or cand < best:
                best = cand
    if best is None:
        raise EmbeddingError("chains share no physical edge")
    return best


@dataclass(frozen=True)
class NoiseModel:
    """Analog control error: rescale into range, then perturb coefficients."""

    epsilon: float
    coupler_range: tuple[float, float] = (-1.0, 1.0)
    field_range: tuple[float, float] = (-2.0, 2.0)
    distribution: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise SpecError("epsilon must be in [0, 1]")
        for name in ("coupler_range", "field_range"):
            lo, hi = getattr(self, name)
            if not lo < hi or not (lo <= 0.0 <= hi):
                raise SpecError(f"{name} must be increasing and contain zero")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.distribution not in ("uniform", "gaussian"):
            raise SpecError("distribution must be 'uniform' or 'gaussian'")


def _range_scale(values: np.ndarray, lo: float, hi: float) -> float:
    scale = 1.0
    vmax = values.max(initial=0.0)
    vmin = values.min(initial=0.0)
    if vmax > hi:
        scale = min(scale, hi / vmax)
    if vmin < lo:
        scale = min(scale, lo / vmin)
    return scale


def apply_noise(model: IsingModel, noise: NoiseModel) -> IsingModel:
    """Uniformly rescale into the device ranges, then add seeded noise of
    amplitude epsilon times each range's half-width to nonzero coefficients.

    With epsilon 0 and coefficients already in range, the input is returned
    unchanged. The offset is scaled with the coefficients so the energy
    ordering is preserved.
    """
    j = model.couplings
    h = model.h
    scale = min(
        _range_scale(j, *noise.coupler_range), _range_scale(h, *noise.field_range)
    )
    if noise.epsilon == 0.0 and scale == 1.0:
        return model
    h2 = h * scale
    j2 = j * scale
    off2 = model.offset * scale
    if noise.epsilon > 0.0:
        rng = np.random.default_rng(noise.seed)
        h_half = 0.5 * (noise.field_range[1] - noise.field_range[0])
        j_half = 0.5 * (noise.coupler_range[1] - noise.coupler_range[0])

        def draw(count, width):
            if noise.distribution == "uniform":
                return rng.uniform(-noise.epsilon * width, noise.epsilon * width, count)
            return rng.normal(0.0, noise.epsilon * width, count)

        h2 = h2.copy()
        hot = np.nonzero(h2)[0]
        h2[hot] += draw(hot.size, h_half)
        j2 = j2.copy()
        iu, ju = np.triu_indices(model.n_spins, k=1)
        mask = j2[iu, ju] != 0.0
        delta = draw(int(mask.sum()), j_half)
        j2[iu[mask], ju[mask]] += delta
        j2[ju[mask], iu[mask]] += delta
    return IsingModel(h=h2, couplings=j2, offset=off2)


def random_gauge(n_spins: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.integers(0, 2, size=n_spins) * 2 - 1
    return g.astype(np.int64)


def gauge_transform(model: IsingModel, gauge) -> IsingModel:
    """Spin-flip symmetry h -> g h, J -> (g g^T) J; energies invariant under
    s -> g s."""
    g = np.asarray(gauge, dtype=np.float64)
    if g.shape != (model.n_spins,) or not np.all(np.abs(g) == 1.0):
        raise SpecError("gauge must be a vector of +-1 per spin")
    outer = np.outer(g, g)
    return IsingModel(
        h=model.h * g, couplings=model.couplings * outer, offset=model.offset
    )


def unembed(
    spins: np.ndarray,
    chains: tuple[tuple[int, ...], ...],
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Majority-vote chains back to logical spins.

    spins has shape (B, P) over local qubit indices. Returns (B, V) logical
    spins and a (B, V) boolean mask of ties that were settled by the seeded
    coin flips.
    """
    s = np.asarray(spins)
    if s.ndim != 2:
        raise SpecError("spins must be a 2-d batch")
    b = s.shape[0]
    v = len(chains)
    out = np.zeros((b, v), dtype=np.int64)
    ties = np.zeros((b, v), dtype=bool)
    for vi, chain in enumerate(chains):
        sums = s[:, list(chain)].sum(axis=1)
        out[:, vi] = np.sign(sums)
        tied = sums == 0
        if tied.any():
            flips = rng.integers(0, 2, size=int(tied.sum())) * 2 - 1
            out[tied, vi] = flips
            ties[tied, vi] = True
    return out, ties
