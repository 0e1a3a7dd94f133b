import json

import numpy as np
import pytest

from _reference import all_bit_vectors
from trajq.encoding import build_encoding
from trajq.errors import EmbeddingError, SpecError
from trajq.hardware import (
    ChimeraGraph,
    Embedding,
    NoiseModel,
    apply_noise,
    chimera,
    chimera_coords,
    chimera_index,
    clique_embedding,
    embed_problem,
    gauge_transform,
    greedy_embedding,
    load_hardware_fixture,
    max_clique_size,
    pi_elite_score,
    random_gauge,
    rank_embeddings,
    unembed,
    verify_embedding,
)
from trajq.model import GenParams, random_instance
from trajq.qubo import (
    IsingModel,
    compile_qubo,
    ising_energy,
    ising_energy_batch,
    qubo_adjacency,
)


def random_ising(n, seed, density=0.5):
    rng = np.random.default_rng(seed)
    j = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            if rng.random() < density:
                val = rng.normal()
                j[a, b] = j[b, a] = val
    return IsingModel(h=rng.normal(size=n), couplings=j, offset=rng.normal())


def test_site_counts():
    assert chimera(4).n_sites == 128
    assert chimera(8).n_sites == 512
    assert chimera(12).n_sites == 1152
    assert len(chimera(2).nodes) == 32
    with pytest.raises(SpecError):
        chimera(0)


def test_edge_counts():
    # 16 edges inside each cell plus 4 per adjacent cell pair.
    for s in (1, 2, 3):
        expected = 16 * s * s + 8 * s * (s - 1)
        assert len(chimera(s).edges) == expected


def test_index_coords_round_trip():
    s = 3
    for i in range(s):
        for j in range(s):
            for u in range(2):
                for k in range(4):
                    q = chimera_index(s, i, j, u, k)
                    assert chimera_coords(s, q) == (i, j, u, k)
    assert chimera_index(2, 0, 1, 1, 2) == ((0 * 2 + 1) * 2 + 1) * 4 + 2


def test_triangle_free():
    g = chimera(2)
    adj = g.adjacency
    for a, b in g.edges:
        assert not (adj[a] & adj[b]), f"triangle through edge ({a}, {b})"


def test_inactive_elements():
    g = chimera(2, inactive_qubits=[5], inactive_couplers=[(0, 4)])
    assert 5 not in g.nodes
    assert all(5 not in e for e in g.edges)
    assert not g.has_edge(0, 4)
    assert g.has_edge(0, 5 + 0) is False
    with pytest.raises(SpecError):
        chimera(1, inactive_qubits=[99])
    with pytest.raises(SpecError):
        chimera(1, inactive_couplers=[(0, 1)])  # same-side pair, not an edge


def test_fixture_loading(tmp_path):
    path = tmp_path / "chip.json"
    path.write_text(
        json.dumps(
            {"side": 2, "inactive_qubits": [5], "inactive_couplers": [[0, 4]]}
        )
    )
    g = load_hardware_fixture(path)
    assert g.side == 2
    assert 5 not in g.nodes
    assert not g.has_edge(0, 4)


def test_max_clique_size():
    assert max_clique_size(12) == 49
    assert max_clique_size(1) == 5
    with pytest.raises(SpecError):
        max_clique_size(0)


@pytest.mark.parametrize("n_vars", range(1, 13))
def test_clique_embedding_small(n_vars):
    g = chimera(4)
    emb = clique_embedding(n_vars, g)
    assert emb.n_variables == n_vars
    full = {i: set(range(n_vars)) - {i} for i in range(n_vars)}
    verify_embedding(g, emb, full)
    assert emb.max_chain_length <= -(-n_vars // 4) + 1


def test_clique_embedding_capacity():
    g = chimera(12)
    emb = clique_embedding(49, g)
    full = {i: set(range(49)) - {i} for i in range(49)}
    verify_embedding(g, emb, full)
    with pytest.raises(EmbeddingError):
        clique_embedding(50, g)
    with pytest.raises(SpecError):
        clique_embedding(0, g)


def test_clique_embedding_rejects_degraded_chip():
    g = chimera(2, inactive_qubits=[chimera_index(2, 0, 0, 0, 0)])
    with pytest.raises(EmbeddingError):
        clique_embedding(4, g)


def test_verify_embedding_errors():
    g = chimera(2)
    with pytest.raises(EmbeddingError):
        verify_embedding(g, Embedding(((0, 1), (1, 2))))  # overlap
    with pytest.raises(EmbeddingError):
        verify_embedding(g, Embedding(((0, 1),)))  # 0-1 same side: disconnected
    with pytest.raises(EmbeddingError):
        verify_embedding(g, Embedding(((9999,),)))
    # 0 and 12 sit in different cells with no connecting edge between chains.
    with pytest.raises(EmbeddingError):
        verify_embedding(g, Embedding(((0,), (12,))), {0: {1}, 1: {0}})
    with pytest.raises(SpecError):
        Embedding(((0,), ()))


def test_embedding_dict_round_trip():
    emb = Embedding(((0, 4), (1,)))
    assert Embedding.from_dict(emb.to_dict()) == emb
    assert emb.max_chain_length == 2
    assert emb.total_qubits == 3
    assert emb.n_variables == 2


def test_greedy_embedding_on_compiled_problems():
    spec = random_instance(
        GenParams(2, 3, 3, 3, sigma_mode="dense", initial_holdings_mode="random"), 0
    )
    qp = compile_qubo(spec, build_encoding("binary", 3))
    adjacency = {k: set(v) for k, v in qubo_adjacency(qp).items()}
    g = chimera(8)
    for seed in range(20):
        emb = greedy_embedding(adjacency, g, seed)
        verify_embedding(g, emb, adjacency)
        assert emb.max_chain_length <= 4


def test_greedy_embedding_determinism_and_validation():
    adjacency = {0: {1}, 1: {0, 2}, 2: {1}}
    g = chimera(2)
    a = greedy_embedding(adjacency, g, 7)
    b = greedy_embedding(adjacency, g, 7)
    assert a == b
    verify_embedding(g, a, adjacency)
    with pytest.raises(SpecError):
        greedy_embedding({}, g, 0)
    with pytest.raises(SpecError):
        greedy_embedding({1: set()}, g, 0)


def test_greedy_embedding_single_variable():
    emb = greedy_embedding({0: set()}, chimera(1), 0)
    assert emb.n_variables == 1
    verify_embedding(chimera(1), emb)


def test_rank_embeddings():
    short = Embedding(((0,), (4,)))
    long = Embedding(((0, 4, 1), (5,)))
    assert rank_embeddings([long, short]) == [1, 0]
    assert rank_embeddings([short, short]) == [0, 1]
    with pytest.raises(SpecError):
        rank_embeddings([])


def test_pi_elite_score():
    energies = [4.0, 1.0, 3.0, 2.0]
    assert pi_elite_score(energies, 0.5) == pytest.approx(1.5)
    assert pi_elite_score(energies, 1.0) == pytest.approx(2.5)
    assert pi_elite_score(energies, 0.26) == pytest.approx(1.5)  # ceil to 2
    assert pi_elite_score(energies, 0.01) == pytest.approx(1.0)
    with pytest.raises(SpecError):
        pi_elite_score([], 0.5)
    with pytest.raises(SpecError):
        pi_elite_score(energies, 0.0)


def chain_aligned_state(embedded, logical_spins):
    phys = np.zeros(len(embedded.qubits), dtype=np.int64)
    for var, chain in enumerate(embedded.chains):
        for p in chain:
            phys[p] = logical_spins[var]
    return phys


def test_embedded_energy_matches_logical_on_aligned_states():
    model = random_ising(6, 3, density=0.8)
    g = chimera(2)
    emb = clique_embedding(6, g)
    embedded = embed_problem(model, emb, g, chain_strength=2.5)
    assert embedded.intra_edges > 0
    for x in all_bit_vectors(6):
        s = 2 * x - 1
        phys = chain_aligned_state(embedded, s)
        assert ising_energy(embedded.model, phys) == pytest.approx(
            ising_energy(model, s), abs=1e-9
        )


def test_embed_problem_validation():
    model = random_ising(3, 0, density=1.0)
    g = chimera(2)
    emb = clique_embedding(3, g)
    with pytest.raises(SpecError):
        embed_problem(model, emb, g, chain_strength=0.0)
    with pytest.raises(EmbeddingError):
        embed_problem(model, clique_embedding(4, g), g, chain_strength=1.0)


def test_noise_identity_when_in_range():
    model = random_ising(5, 1)
    scale = 2.0 * max(np.abs(model.couplings).max(), 1e-9)
    shrunk = IsingModel(
        h=model.h / scale, couplings=model.couplings / scale,
        offset=model.offset / scale,
    )
    out = apply_noise(shrunk, NoiseModel(epsilon=0.0))
    assert out is shrunk


def test_noise_rescales_into_device_ranges():
    model = IsingModel(
        h=[5.0, -3.0], couplings=[[0.0, 4.0], [4.0, 0.0]], offset=8.0
    )
    out = apply_noise(model, NoiseModel(epsilon=0.0))
    assert np.abs(out.couplings).max() <= 1.0 + 1e-12
    assert out.h.max() <= 2.0 + 1e-12 and out.h.min() >= -2.0 - 1e-12
    # One uniform scale factor: here couplers bind (4 -> 1).
    np.testing.assert_allclose(out.h, [1.25, -0.75])
    assert out.offset == pytest.approx(2.0)
    # Pure rescale preserves the energy order of states.
    spins = 2 * all_bit_vectors(2) - 1
    before = ising_energy_batch(model, spins)
    after = ising_energy_batch(out, spins)
    assert np.array_equal(np.argsort(before), np.argsort(after))


def test_noise_preserves_sparsity_and_symmetry():
    model = random_ising(8, 2, density=0.4)
    noise = NoiseModel(epsilon=0.05, seed=11)
    out = apply_noise(model, noise)
    assert np.array_equal(out.couplings == 0.0, model.couplings == 0.0)
    np.testing.assert_allclose(out.couplings, out.couplings.T)
    zeros = model.h == 0.0
    assert np.array_equal(out.h[zeros], model.h[zeros])
    again = apply_noise(model, noise)
    np.testing.assert_allclose(out.h, again.h)
    np.testing.assert_allclose(out.couplings, again.couplings)


def test_noise_amplitude_bounds():
    model = random_ising(10, 4, density=0.6)
    scale = max(
        np.abs(model.couplings).max() / 1.0,
        model.h.max() / 2.0,
        model.h.min() / -2.0,
        1.0,
    )
    base = IsingModel(
        h=model.h / scale, couplings=model.couplings / scale,
        offset=model.offset / scale,
    )
    eps = 0.03
    out = apply_noise(base, NoiseModel(epsilon=eps, seed=3))
    dj = np.abs(out.couplings - base.couplings)
    assert dj.max() <= eps * 1.0 + 1e-12  # coupler half-width 1
    dh = np.abs(out.h - base.h)
    assert dh.max() <= eps * 2.0 + 1e-12  # field half-width 2
    gauss = apply_noise(base, NoiseModel(epsilon=eps, seed=3,
                                         distribution="gaussian"))
    assert not np.allclose(gauss.h, out.h)


def test_noise_model_validation():
    with pytest.raises(SpecError):
        NoiseModel(epsilon=-0.1)
    with pytest.raises(SpecError):
        NoiseModel(epsilon=1.5)
    with pytest.raises(SpecError):
        NoiseModel(epsilon=0.1, coupler_range=(1.0, 2.0))
    with pytest.raises(SpecError):
        NoiseModel(epsilon=0.1, field_range=(2.0, -2.0))
    with pytest.raises(SpecError):
        NoiseModel(epsilon=0.1, distribution="triangular")


def test_gauge_preserves_spectrum():
    rng = np.random.default_rng(0)
    model = random_ising(8, 5, density=0.5)
    spins = 2 * all_bit_vectors(8) - 1
    base = np.sort(ising_energy_batch(model, spins))
    for _ in range(5):
        g = random_gauge(8, rng)
        gauged = gauge_transform(model, g)
        np.testing.assert_allclose(
            np.sort(ising_energy_batch(gauged, spins)), base, rtol=1e-12, atol=1e-9
        )
        s = 2 * rng.integers(0, 2, size=8) - 1
        assert ising_energy(gauged, g * s) == pytest.approx(
            ising_energy(model, s), abs=1e-9
        )


def test_gauge_validation():
    model = random_ising(3, 0)
    with pytest.raises(SpecError):
        gauge_transform(model, [1, 1])
    with pytest.raises(SpecError):
        gauge_transform(model, [1, 0, 1])


def test_unembed_majority_and_ties():
    chains = ((0, 1, 2), (3, 4))
    spins = np.array([[1, 1, -1, 1, -1], [-1, -1, -1, 1, 1]])
    out, ties = unembed(spins, chains, np.random.default_rng(0))
    assert out[0, 0] == 1 and out[1, 0] == -1
    assert out[1, 1] == 1
    assert ties[0, 1] and not ties[0, 0] and not ties[1, 1]
    assert out[0, 1] in (-1, 1)
    a, _ = unembed(spins, chains, np.random.default_rng(42))
    b, _ = unembed(spins, chains, np.random.default_rng(42))
    assert np.array_equal(a, b)
    with pytest.raises(SpecError):
        unembed(np.array([1, -1]), ((0,), (1,)), np.random.default_rng(0))
