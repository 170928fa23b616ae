import numpy as np
import pytest

from gatetomo.engine import GaussianBelief, default_prior
from gatetomo.errors import DataError
from gatetomo.forward import forward_probabilities
from gatetomo.gates import native_two_qubit_gate_set, pack
from gatetomo.project import average_gateset_fidelity
from gatetomo.rb import (
    RbDataset,
    RbSequence,
    compile_clifford,
    compile_table,
    fit_rb_decay,
    rb_prior_update,
    rb_to_fbt_records,
    records_to_rb_dataset,
    sample_rb_sequences,
    simulate_rb_counts,
    word_unitary,
)
from gatetomo.simulate import TrueDevice, truth_from_config
from gatetomo.tableau import (
    num_symplectics,
    random_clifford_tableau,
    symplectic_from_index,
    Tableau,
    tableau_to_ptm,
)

X = np.array([[0, 1], [1, 0]], dtype=complex)

_MAGIC = np.array(
    [[1, 0, 0, 1j], [0, 1j, 1, 0], [0, 1j, -1, 0], [1, 0, 0, -1j]], dtype=complex
) / np.sqrt(2)

_CLASS_INVARIANTS = {
    "local": (1, 3),
    "cnot": (0, 1),
    "iswap": (0, -1),
    "swap": (-1, -3),
}


def entangling_class(unitary: np.ndarray) -> str:
    """Makhlin-invariant classification of a two-qubit Clifford."""
    ub = _MAGIC.conj().T @ unitary @ _MAGIC
    m = ub.T @ ub
    det = np.linalg.det(unitary)
    g1 = np.trace(m) ** 2 / (16 * det)
    g2 = (np.trace(m) ** 2 - np.trace(m @ m)) / (4 * det)
    for name, (t1, t2) in _CLASS_INVARIANTS.items():
        if abs(g1 - t1) < 1e-8 and abs(g2 - t2) < 1e-8:
            return name
    raise AssertionError(f"unclassifiable invariants {g1}, {g2}")


def test_compile_table_covers_whole_group():
    table = compile_table()
    assert len(table) == 11520


def test_compile_identity_is_empty_word():
    compiled = compile_clifford(np.eye(4, dtype=complex))
    assert compiled.word == ()


def test_compile_pauli_x_on_qubit_one():
    target = np.kron(X, np.eye(2, dtype=complex))
    compiled = compile_clifford(target)
    produced = word_unitary(compiled.word)
    assert abs(abs(np.trace(produced.conj().T @ target)) - 4.0) < 1e-8


def test_compile_random_cliffords_pass_trace_test():
    rng = np.random.default_rng(3)
    for _ in range(200):
        tab = random_clifford_tableau(2, rng)
        compiled = compile_clifford(tab)
        # word PTM must match the tableau PTM exactly (phase-invariant equality)
        assert np.array_equal(
            np.rint(tableau_to_ptm(tab)).astype(int), compiled.ptm.astype(int)
        )


def test_compile_rejects_non_clifford():
    t_gate = np.diag([1, np.exp(1j * np.pi / 4)])
    with pytest.raises(ValueError):
        compile_clifford(np.kron(t_gate, np.eye(2, dtype=complex)))


def test_rb_sequences_have_unit_ideal_survival():
    gs = native_two_qubit_gate_set()
    dataset = sample_rb_sequences(4, [1, 2, 6], rng=7)
    assert len(dataset.sequences) == 12
    for seq in dataset.sequences:
        probs = forward_probabilities(gs, seq.word)
        assert probs[0] == pytest.approx(1.0, abs=1e-9)


def test_rb_length_one_is_single_stabilizing_clifford():
    dataset = sample_rb_sequences(5, [1], rng=11)
    gs = native_two_qubit_gate_set()
    for seq in dataset.sequences:
        assert seq.clifford_length == 1
        probs = forward_probabilities(gs, seq.word)
        assert probs[0] == pytest.approx(1.0, abs=1e-9)


def test_uniform_sampling_matches_entangling_class_sizes():
    # enumerate the class sizes over all 720 symplectic representatives
    sizes = {name: 0 for name in _CLASS_INVARIANTS}
    for i in range(num_symplectics(2)):
        tab = Tableau(n_qubits=2, symp=symplectic_from_index(i, 2), signs=np.zeros(4))
        compiled = compile_clifford(tab)
        sizes[entangling_class(word_unitary(compiled.word))] += 1
    assert sum(sizes.values()) == 720
    # each symplectic class splits into 16 sign cosets
    assert sizes["local"] * 16 + sizes["swap"] * 16 + (
        sizes["cnot"] + sizes["iswap"]
    ) * 16 == 11520

    rng = np.random.default_rng(13)
    n_draws = 10_000
    counts = {name: 0 for name in _CLASS_INVARIANTS}
    for _ in range(n_draws):
        compiled = compile_clifford(random_clifford_tableau(2, rng))
        counts[entangling_class(word_unitary(compiled.word))] += 1
    for name, size in sizes.items():
        p = size / 720
        sigma = np.sqrt(p * (1 - p) / n_draws)
        assert abs(counts[name] / n_draws - p) <= 3 * sigma + 1e-12, name


def _synthetic_dataset(amplitude, r_clifford, baseline, lengths, shots=10**9):
    sequences = []
    word = (0, 1)  # word content is irrelevant for the fit itself
    for length in lengths:
        p = amplitude * (1 - 4 / 3 * r_clifford) ** length + baseline
        hit = int(round(p * shots))
        counts = np.array([hit, shots - hit, 0, 0])
        sequences.append(
            RbSequence(clifford_length=length, word=word, shots=shots, counts=counts)
        )
    return RbDataset(sequences=tuple(sequences))


def test_fit_recovers_exact_synthetic_curve():
    lengths = [1, 2, 4, 8, 16, 32, 64, 100]
    dataset = _synthetic_dataset(0.5, 0.095, 0.5, lengths)
    fit = fit_rb_decay(dataset)
    assert fit.r_clifford == pytest.approx(0.095, abs=1e-6)
    assert fit.amplitude == pytest.approx(0.5, abs=1e-6)
    assert fit.baseline == pytest.approx(0.5, abs=1e-6)


def test_fit_requires_three_lengths():
    dataset = _synthetic_dataset(0.5, 0.1, 0.5, [2, 4])
    with pytest.raises(DataError):
        fit_rb_decay(dataset)


def test_fit_recovers_depolarizing_device():
    p_prim = 0.006
    gs = native_two_qubit_gate_set()
    truth = truth_from_config(gs, {"default": {"kind": "depolarizing", "p": p_prim}})
    device = TrueDevice(truth=truth, seed=17, default_shots=125)
    dataset = sample_rb_sequences(25, [1, 2, 4, 8, 14, 22, 32, 45], rng=19)
    dataset = simulate_rb_counts(dataset, device, shots=125)
    fit = fit_rb_decay(dataset)
    # per-sequence survival: 1/4 + 3/4 (1-p)^k, so the analytic per-Clifford
    # decay uses the dataset's mean primitive count per Clifford
    k_bar = dataset.mean_word_length()
    r_expected = 0.75 * (1.0 - (1.0 - p_prim) ** k_bar)
    assert fit.r_clifford == pytest.approx(r_expected, rel=0.10)
    assert abs(fit.baseline - 0.25) <= max(3 * np.sqrt(fit.stderr_r) * 0.5, 0.06)
    assert fit.f_primitive == pytest.approx(1 - p_prim, abs=0.002)


def test_rb_prior_update_nearly_noop_for_ideal_delta():
    gs = native_two_qubit_gate_set(fit_meas_noise=False)
    packing = gs.packing()
    belief = GaussianBelief(pack(gs), 1e-18 * np.eye(packing.total), packing)
    updated = rb_prior_update(belief, 1.0, 1e-6, 12, gs, rng=23)
    assert np.max(np.abs(updated.mean - belief.mean)) < 1e-4


def test_rb_prior_update_hits_target_fidelity():
    gs = native_two_qubit_gate_set(fit_meas_noise=False)
    belief = default_prior(gs)
    f_bar, sigma_f = 0.982, 0.002
    updated = rb_prior_update(belief, f_bar, sigma_f, 40, gs, rng=29)
    mean_gs = updated.gate_set(gs)
    assert average_gateset_fidelity(mean_gs) == pytest.approx(f_bar, abs=sigma_f)
    # covariance PSD and its (linear) fidelity marginal near sigma_f
    eigs = np.linalg.eigvalsh(updated.cov)
    assert eigs.min() >= -1e-10
    grad = np.zeros(belief.mean.shape[0])
    packing = gs.packing()
    d = gs.dim
    size = gs.size
    for name in (g.name for g in gs.gates):
        sl = packing.slices[name]
        block = np.zeros((size - 1, size))
        block[: size - 1, 1:] = np.eye(size - 1)  # trace of rows 1..15
        grad[sl] = block.ravel() / (gs.n_gates * (d * d + d))
    marginal_std = float(np.sqrt(grad @ updated.cov @ grad))
    assert marginal_std <= 2 * sigma_f


def test_rb_to_fbt_records_roundtrip():
    gs = native_two_qubit_gate_set()
    truth = truth_from_config(gs, {"default": {"kind": "depolarizing", "p": 0.01}})
    device = TrueDevice(truth=truth, seed=31)
    dataset = sample_rb_sequences(2, [1, 3], rng=37)
    dataset = simulate_rb_counts(dataset, device, shots=125)
    records = rb_to_fbt_records(dataset)
    assert len(records) == 4
    for rec, seq in zip(records, dataset.sequences):
        assert rec.sequence == seq.word
        assert rec.clifford_length == seq.clifford_length
        assert rec.counts.sum() == 125
    back = records_to_rb_dataset(records)
    assert back.lengths == dataset.lengths
    assert fit_rb_decay  # fitting the roundtripped dataset is exercised in acceptance
