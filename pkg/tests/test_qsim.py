import numpy as np
import pytest

from qmamba import qsim
from qmamba.errors import DimensionError, NumericError
from qmamba.gradcheck import finite_difference, rel_error
from qmamba.qsim import (
    EncodeResult,
    GateOp,
    Statevector,
    amplitude_encode,
    apply_gate,
    backward_circuit,
    fidelity,
    num_angles,
    probabilities,
    run_circuit,
    zero_state,
)

# --- independent oracles ----------------------------------------------------


def _full_unitary(gate: GateOp, n: int) -> np.ndarray:
    """Dense-kron construction of the gate's 2^n x 2^n matrix; deliberately
    ignorant of the simulator's axis tricks. Qubit 0 is the MSB."""
    if gate.kind == "CNOT":
        dim = 1 << n
        u = np.zeros((dim, dim), dtype=complex)
        cbit = n - 1 - gate.control
        tbit = n - 1 - gate.target
        for j in range(dim):
            j2 = j ^ (1 << tbit) if (j >> cbit) & 1 else j
            u[j2, j] = 1.0
        return u
    if gate.kind == "RY":
        t = gate.angles[0]
        m = np.array(
            [[np.cos(t / 2), -np.sin(t / 2)], [np.sin(t / 2), np.cos(t / 2)]],
            dtype=complex,
        )
    elif gate.kind == "RZ":
        t = gate.angles[0]
        m = np.diag([np.exp(-0.5j * t), np.exp(0.5j * t)])
    else:
        a, b, c = gate.angles
        m = (
            _full_unitary(GateOp("RZ", 0, angles=(a,)), 1)
            @ _full_unitary(GateOp("RY", 0, angles=(b,)), 1)
            @ _full_unitary(GateOp("RZ", 0, angles=(c,)), 1)
        )
    u = np.array([[1.0]], dtype=complex)
    for q in range(n):
        u = np.kron(u, m if q == gate.target else np.eye(2, dtype=complex))
    return u


def _brute_force_run(enc: EncodeResult, circuit) -> np.ndarray:
    amps = enc.state.amps.copy()
    for g in circuit:
        amps = _full_unitary(g, enc.state.n_qubits) @ amps
    return amps


def _flat_angles(circuit) -> np.ndarray:
    return np.array([a for g in circuit for a in g.angles])


def _with_angles(circuit, flat) -> list:
    out, i = [], 0
    for g in circuit:
        k = len(g.angles)
        out.append(GateOp(g.kind, g.target, g.control, tuple(flat[i : i + k])))
        i += k
    return out


def _loss(enc, circuit, grad_probs) -> float:
    return float(np.dot(grad_probs, probabilities(run_circuit(enc, circuit))))


def _parameter_shift(enc, circuit, grad_probs) -> np.ndarray:
    """Exact two-point shift rule for rotations generated by Y/2 or Z/2."""
    base = _flat_angles(circuit)
    grads = np.zeros_like(base)
    for i in range(base.size):
        plus, minus = base.copy(), base.copy()
        plus[i] += np.pi / 2
        minus[i] -= np.pi / 2
        grads[i] = (
            _loss(enc, _with_angles(circuit, plus), grad_probs)
            - _loss(enc, _with_angles(circuit, minus), grad_probs)
        ) / 2.0
    return grads


def _random_circuit(rng, n_qubits, n_gates):
    ops = []
    kinds = ["RY", "RZ", "ROT3"] + (["CNOT"] * 2 if n_qubits >= 2 else [])
    for _ in range(n_gates):
        kind = kinds[rng.integers(len(kinds))]
        if kind == "CNOT":
            c, t = rng.choice(n_qubits, size=2, replace=False)
            ops.append(GateOp("CNOT", int(t), int(c)))
        else:
            n_ang = 3 if kind == "ROT3" else 1
            ops.append(
                GateOp(
                    kind,
                    int(rng.integers(n_qubits)),
                    angles=tuple(rng.uniform(0, 2 * np.pi, size=n_ang)),
                )
            )
    return ops


# --- amplitude encoding -----------------------------------------------------


def test_encode_basis_state():
    enc = amplitude_encode([1, 0, 0, 0], 2)
    np.testing.assert_allclose(enc.state.amps, [1, 0, 0, 0])
    assert enc.norm == 1.0 and enc.padded_len == 4


def test_encode_normalizes():
    enc = amplitude_encode([3, 4], 1)
    np.testing.assert_allclose(enc.state.amps, [0.6, 0.8])
    assert enc.norm == 5.0


def test_encode_uniform():
    enc = amplitude_encode([1, 1, 1, 1], 2)
    np.testing.assert_allclose(enc.state.amps, [0.5, 0.5, 0.5, 0.5])
    assert enc.norm == 2.0


def test_encode_pads_shorter_input():
    enc = amplitude_encode([1.0], 2)
    np.testing.assert_allclose(enc.state.amps, [1, 0, 0, 0])
    assert enc.raw_len == 1 and enc.padded_len == 4


def test_encode_zero_vector_rule():
    enc = amplitude_encode([0.0, 0.0, 0.0], 2)
    assert enc.norm == 0.0
    np.testing.assert_allclose(enc.state.amps, [1, 0, 0, 0])


def test_encode_too_long_raises():
    with pytest.raises(DimensionError):
        amplitude_encode(np.ones(5), 2)


def test_encode_nonfinite_raises():
    with pytest.raises(NumericError):
        amplitude_encode([1.0, np.nan], 1)


@pytest.mark.parametrize("seed", range(5))
def test_encode_probabilities_roundtrip(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=rng.integers(1, 9))
    enc = amplitude_encode(x, 3)
    p = probabilities(enc.state)
    expect = np.zeros(8)
    expect[: x.size] = x**2 / np.sum(x**2)
    np.testing.assert_allclose(p, expect, atol=1e-12)


# --- gates ------------------------------------------------------------------


def test_cnot_truth_table():
    s = Statevector(2, [0, 0, 1, 0])  # |10>
    out = apply_gate(s, GateOp("CNOT", target=1, control=0))
    np.testing.assert_allclose(out.amps, [0, 0, 0, 1])  # |11>


def test_ry_pi_flips():
    out = apply_gate(zero_state(1), GateOp("RY", 0, angles=(np.pi,)))
    np.testing.assert_allclose(out.amps, [0, 1], atol=1e-15)


def test_rz_is_pure_phase():
    theta = 0.7
    out = apply_gate(zero_state(1), GateOp("RZ", 0, angles=(theta,)))
    np.testing.assert_allclose(out.amps[0], np.exp(-0.5j * theta))
    np.testing.assert_allclose(probabilities(out), [1, 0], atol=1e-15)


def test_rot3_is_rz_ry_rz_composition():
    a, b, c = 0.3, 1.1, -0.4
    s = amplitude_encode([0.6, 0.8], 1).state
    composed = apply_gate(s, GateOp("ROT3", 0, angles=(a, b, c)))
    staged = apply_gate(s, GateOp("RZ", 0, angles=(c,)))
    staged = apply_gate(staged, GateOp("RY", 0, angles=(b,)))
    staged = apply_gate(staged, GateOp("RZ", 0, angles=(a,)))
    np.testing.assert_allclose(composed.amps, staged.amps, atol=1e-15)


def test_invalid_qubit_index():
    with pytest.raises(DimensionError):
        apply_gate(zero_state(1), GateOp("RY", 1, angles=(0.1,)))


def test_gateop_validation():
    with pytest.raises(DimensionError):
        GateOp("CNOT", target=0, control=0)
    with pytest.raises(DimensionError):
        GateOp("RY", 0, angles=(0.1, 0.2))
    with pytest.raises(DimensionError):
        GateOp("HADAMARD", 0)


# --- probabilities / fidelity -----------------------------------------------


def test_probabilities_trivials():
    np.testing.assert_allclose(probabilities(zero_state(2)), [1, 0, 0, 0])
    np.testing.assert_allclose(
        probabilities(Statevector(1, [0.6, 0.8])), [0.36, 0.64]
    )
    np.testing.assert_allclose(
        probabilities(Statevector(2, np.full(4, 0.5))), [0.25] * 4
    )


def test_fidelity_identity_orthogonal_overlap():
    s0 = zero_state(1)
    s1 = Statevector(1, [0, 1])
    plus = Statevector(1, np.array([1, 1]) / np.sqrt(2))
    assert fidelity(s0, s0) == pytest.approx(1.0)
    assert fidelity(s0, s1) == pytest.approx(0.0)
    assert fidelity(s0, plus) == pytest.approx(0.5)
    assert fidelity(plus, s0) == pytest.approx(0.5)


def test_fidelity_qubit_mismatch():
    with pytest.raises(DimensionError):
        fidelity(zero_state(1), zero_state(2))


# --- run_circuit ------------------------------------------------------------


def test_empty_circuit_is_identity():
    enc = amplitude_encode([0.6, 0.8], 1)
    out = run_circuit(enc, [])
    np.testing.assert_allclose(out.amps, enc.state.amps)


def test_bell_like_probabilities():
    enc = amplitude_encode([1, 0, 0, 0], 2)
    circuit = [GateOp("RY", 0, angles=(np.pi / 2,)), GateOp("CNOT", 1, 0)]
    out = run_circuit(enc, circuit)
    np.testing.assert_allclose(probabilities(out), [0.5, 0, 0, 0.5], atol=1e-15)
    np.testing.assert_allclose(out.amps, _brute_force_run(enc, circuit), atol=1e-14)


@pytest.mark.parametrize("seed", range(8))
def test_run_circuit_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    enc = amplitude_encode(rng.normal(size=1 << n), n)
    circuit = _random_circuit(rng, n, 8)
    out = run_circuit(enc, circuit)
    np.testing.assert_allclose(out.amps, _brute_force_run(enc, circuit), atol=1e-12)


def test_norm_preserved_over_thousand_gates():
    rng = np.random.default_rng(11)
    enc = amplitude_encode(rng.normal(size=8), 3)
    circuit = _random_circuit(rng, 3, 1000)
    out = run_circuit(enc, circuit)
    assert abs(np.linalg.norm(out.amps) - 1.0) < 1e-10


def test_fidelity_invariant_under_shared_circuit():
    rng = np.random.default_rng(12)
    s = amplitude_encode(rng.normal(size=8), 3)
    t = amplitude_encode(rng.normal(size=8), 3)
    before = fidelity(s.state, t.state)
    circuit = _random_circuit(rng, 3, 20)
    after = fidelity(run_circuit(s, circuit), run_circuit(t, circuit))
    assert abs(before - after) < 1e-10


# --- adjoint gradients --------------------------------------------------------


def test_backward_zero_cotangent_gives_zero_grads():
    rng = np.random.default_rng(0)
    enc = amplitude_encode(rng.normal(size=4), 2)
    circuit = _random_circuit(rng, 2, 6)
    ga, gx = backward_circuit(enc, circuit, np.zeros(4))
    np.testing.assert_allclose(ga, 0.0)
    np.testing.assert_allclose(gx, 0.0)


@pytest.mark.parametrize("theta,expected", [(0.0, 0.0), (np.pi / 2, 0.5)])
def test_single_ry_analytic_gradient(theta, expected):
    # L = p1 = sin^2(theta/2), dL/dtheta = sin(theta)/2
    enc = amplitude_encode([1.0, 0.0], 1)
    circuit = [GateOp("RY", 0, angles=(theta,))]
    grad_probs = np.array([0.0, 1.0])
    ga, _ = backward_circuit(enc, circuit, grad_probs)
    assert ga[0] == pytest.approx(expected, abs=1e-12)
    fd = finite_difference(
        lambda t: _loss(enc, _with_angles(circuit, t), grad_probs),
        np.array([theta]),
    )
    assert ga[0] == pytest.approx(fd[0], abs=1e-8)


@pytest.mark.parametrize("seed", range(10))
def test_adjoint_matches_finite_differences_and_shift_rule(seed):
    rng = np.random.default_rng(200 + seed)
    n = int(rng.integers(1, 4))
    x = rng.normal(size=int(rng.integers(1, (1 << n) + 1)))
    enc = amplitude_encode(x, n)
    circuit = _random_circuit(rng, n, int(rng.integers(3, 10)))
    grad_probs = rng.normal(size=1 << n)
    ga, gx = backward_circuit(enc, circuit, grad_probs)
    assert ga.shape == (num_angles(circuit),)
    assert gx.shape == x.shape

    fd_angles = finite_difference(
        lambda t: _loss(enc, _with_angles(circuit, t), grad_probs),
        _flat_angles(circuit),
    )
    assert rel_error(ga, fd_angles) < 1e-5
    np.testing.assert_allclose(ga, _parameter_shift(enc, circuit, grad_probs), atol=1e-10)

    fd_input = finite_difference(
        lambda v: _loss(amplitude_encode(v, n), circuit, grad_probs), x.copy()
    )
    assert rel_error(gx, fd_input) < 1e-5


def test_backward_zero_norm_input_gradient_is_zero():
    enc = amplitude_encode(np.zeros(3), 2)
    circuit = [GateOp("ROT3", 0, angles=(0.1, 0.2, 0.3)), GateOp("CNOT", 1, 0)]
    ga, gx = backward_circuit(enc, circuit, np.ones(4))
    assert gx.shape == (3,)
    np.testing.assert_allclose(gx, 0.0)
    assert np.all(np.isfinite(ga))


def test_backward_length_mismatch():
    enc = amplitude_encode([1.0, 0.0], 1)
    with pytest.raises(DimensionError):
        backward_circuit(enc, [], np.zeros(4))
