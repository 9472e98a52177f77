"""Exact statevector simulation with adjoint-mode gradients.

Conventions:
  * qubit 0 is the most significant bit of the amplitude index, so for two
    qubits the basis order is |00>, |01>, |10>, |11>;
  * RY(t) = exp(-i t Y / 2), RZ(t) = exp(-i t Z / 2);
  * ROT3(a, b, c) is the matrix product RZ(a) . RY(b) . RZ(c), i.e. RZ(c)
    acts first in time;
  * all arithmetic is complex128, infinite-shot limit (no sampling noise).

The batched helpers (`apply_ops`, `adjoint_backward`) operate on stacks of
statevectors with elementwise numpy arithmetic only, so results per element
are bit-identical whatever the batch composition; the public single-state API
is the batch-of-one special case.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError

__all__ = [
    "Statevector",
    "GateOp",
    "EncodeResult",
    "zero_state",
    "amplitude_encode",
    "apply_gate",
    "run_circuit",
    "probabilities",
    "fidelity",
    "backward_circuit",
    "num_angles",
]

ZERO_NORM_CUTOFF = 1e-12

_GATE_KINDS = {"RY": 1, "RZ": 1, "ROT3": 3, "CNOT": 0}


@dataclass(frozen=True)
class Statevector:
    """Pure n-qubit state; amps has length 2**n_qubits."""

    n_qubits: int
    amps: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amps, dtype=np.complex128)
        object.__setattr__(self, "amps", amps)
        if self.n_qubits < 1:
            raise DimensionError(f"n_qubits must be >= 1, got {self.n_qubits}")
        if amps.shape != (1 << self.n_qubits,):
            raise DimensionError(
                f"amplitude vector of shape {amps.shape} does not match "
                f"{self.n_qubits} qubits (expected length {1 << self.n_qubits})"
            )


@dataclass(frozen=True)
class GateOp:
    """One circuit operation: RY/RZ/ROT3 rotations or a CNOT."""

    kind: str
    target: int
    control: int | None = None
    angles: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in _GATE_KINDS:
            raise DimensionError(f"unknown gate kind {self.kind!r}")
        want = _GATE_KINDS[self.kind]
        if len(self.angles) != want:
            raise DimensionError(
                f"{self.kind} takes {want} angle(s), got {len(self.angles)}"
            )
        if self.kind == "CNOT":
            if self.control is None:
                raise DimensionError("CNOT requires a control qubit")
            if self.control == self.target:
                raise DimensionError("CNOT control and target must differ")
        elif self.control is not None:
            raise DimensionError(f"{self.kind} does not take a control qubit")
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))


@dataclass(frozen=True)
class EncodeResult:
    """Amplitude-encoded input plus the norm the encoding divided out."""

    state: Statevector
    norm: float
    padded_len: int
    raw_len: int = field(default=0)


def zero_state(n_qubits: int) -> Statevector:
    if n_qubits < 1:
        raise DimensionError(f"n_qubits must be >= 1, got {n_qubits}")
    amps = np.zeros(1 << n_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return Statevector(n_qubits, amps)


def amplitude_encode(x, n_qubits: int) -> EncodeResult:
    """Load a real vector into state amplitudes: zero-pad to 2**n, then
    divide by the Euclidean norm. Inputs with norm below 1e-12 map to
    |0...0> with stored norm 0."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if n_qubits < 1:
        raise DimensionError(f"n_qubits must be >= 1, got {n_qubits}")
    dim = 1 << n_qubits
    if x.size > dim:
        raise DimensionError(
            f"input of length {x.size} exceeds 2^{n_qubits} = {dim} amplitudes"
        )
    if not np.all(np.isfinite(x)):
        raise NumericError("amplitude_encode input contains non-finite entries")
    norm = float(np.linalg.norm(x))
    if norm < ZERO_NORM_CUTOFF:
        return EncodeResult(zero_state(n_qubits), 0.0, dim, x.size)
    amps = np.zeros(dim, dtype=np.complex128)
    amps[: x.size] = x / norm
    return EncodeResult(Statevector(n_qubits, amps), norm, dim, x.size)


# ---------------------------------------------------------------------------
# Gate matrices. All accept scalar or batched angle arrays; a batched angle
# of shape (B,) yields a (B, 2, 2) stack.

def _ry_mat(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
    m = np.zeros(theta.shape + (2, 2), dtype=np.complex128)
    m[..., 0, 0] = c
    m[..., 0, 1] = -s
    m[..., 1, 0] = s
    m[..., 1, 1] = c
    return m


def _rz_mat(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    m = np.zeros(theta.shape + (2, 2), dtype=np.complex128)
    m[..., 0, 0] = np.exp(-0.5j * theta)
    m[..., 1, 1] = np.exp(0.5j * theta)
    return m


def _rot3_mat(a, b, c) -> np.ndarray:
    return _rz_mat(a) @ _ry_mat(b) @ _rz_mat(c)


def _apply_1q(amps: np.ndarray, mat: np.ndarray, q: int, n: int) -> np.ndarray:
    """Apply a single-qubit matrix to batched amplitudes (B, 2**n).

    mat is (2, 2) shared across the batch or (B, 2, 2) per element."""
    b = amps.shape[0]
    view = amps.reshape(b, 1 << q, 2, 1 << (n - 1 - q))
    s0 = view[:, :, 0, :]
    s1 = view[:, :, 1, :]
    if mat.ndim == 3:
        m00 = mat[:, 0, 0, None, None]
        m01 = mat[:, 0, 1, None, None]
        m10 = mat[:, 1, 0, None, None]
        m11 = mat[:, 1, 1, None, None]
    else:
        m00, m01, m10, m11 = mat[0, 0], mat[0, 1], mat[1, 0], mat[1, 1]
    out = np.empty_like(view)
    out[:, :, 0, :] = m00 * s0 + m01 * s1
    out[:, :, 1, :] = m10 * s0 + m11 * s1
    return out.reshape(amps.shape)


def _apply_cnot(amps: np.ndarray, control: int, target: int, n: int) -> np.ndarray:
    b = amps.shape[0]
    q0, q1 = (control, target) if control < target else (target, control)
    view = amps.reshape(b, 1 << q0, 2, 1 << (q1 - q0 - 1), 2, 1 << (n - 1 - q1))
    out = view.copy()
    if control < target:
        out[:, :, 1, :, 0, :] = view[:, :, 1, :, 1, :]
        out[:, :, 1, :, 1, :] = view[:, :, 1, :, 0, :]
    else:
        out[:, :, 0, :, 1, :] = view[:, :, 1, :, 1, :]
        out[:, :, 1, :, 1, :] = view[:, :, 0, :, 1, :]
    return out.reshape(amps.shape)


def _check_indices(g: GateOp, n: int) -> None:
    if not (0 <= g.target < n):
        raise DimensionError(f"target qubit {g.target} invalid for {n} qubits")
    if g.control is not None and not (0 <= g.control < n):
        raise DimensionError(f"control qubit {g.control} invalid for {n} qubits")


def _apply_op(amps: np.ndarray, g: GateOp, n: int, invert: bool = False) -> np.ndarray:
    _check_indices(g, n)
    sign = -1.0 if invert else 1.0
    if g.kind == "CNOT":
        return _apply_cnot(amps, g.control, g.target, n)
    if g.kind == "RY":
        return _apply_1q(amps, _ry_mat(sign * g.angles[0]), g.target, n)
    if g.kind == "RZ":
        return _apply_1q(amps, _rz_mat(sign * g.angles[0]), g.target, n)
    # ROT3: inverse reverses the factor order as well as the signs
    a, bb, c = g.angles
    if invert:
        mat = _rz_mat(-c) @ _ry_mat(-bb) @ _rz_mat(-a)
    else:
        mat = _rot3_mat(a, bb, c)
    return _apply_1q(amps, mat, g.target, n)


def apply_ops(amps: np.ndarray, circuit, n_qubits: int) -> np.ndarray:
    """Run a gate sequence over batched amplitudes (B, 2**n)."""
    for g in circuit:
        amps = _apply_op(amps, g, n_qubits)
    return amps


def apply_gate(state: Statevector, gate: GateOp) -> Statevector:
    amps = apply_ops(state.amps[None, :], (gate,), state.n_qubits)[0]
    return Statevector(state.n_qubits, amps)


def run_circuit(enc: EncodeResult, circuit) -> Statevector:
    """Apply a gate sequence, in order, to an encoded state."""
    state = enc.state
    amps = apply_ops(state.amps[None, :].copy(), circuit, state.n_qubits)[0]
    return Statevector(state.n_qubits, amps)


def probabilities(state: Statevector) -> np.ndarray:
    return np.abs(state.amps) ** 2


def fidelity(a: Statevector, b: Statevector) -> float:
    """Squared overlap |<a|b>|^2."""
    if a.n_qubits != b.n_qubits:
        raise DimensionError(
            f"fidelity needs equal qubit counts, got {a.n_qubits} and {b.n_qubits}"
        )
    return float(np.abs(np.vdot(a.amps, b.amps)) ** 2)


def num_angles(circuit) -> int:
    """Total trainable angle count, in flat gradient order (gate order,
    each gate's angles in declared order)."""
    return sum(len(g.angles) for g in circuit)


# ---------------------------------------------------------------------------
# Adjoint differentiation. A ROT3 is expanded into its three elementary
# rotations (RZ(c) first in time) so each angle gets its own generator term.

def _expand_elementary(circuit):
    """Yield (kind, target, control, angle, flat_angle_index_or_None) in
    time order."""
    expanded = []
    base = 0
    for g in circuit:
        if g.kind == "CNOT":
            expanded.append(("CNOT", g.target, g.control, 0.0, None))
        elif g.kind in ("RY", "RZ"):
            expanded.append((g.kind, g.target, None, g.angles[0], base))
            base += 1
        else:  # ROT3: angles (a, b, c); time order RZ(c), RY(b), RZ(a)
            a, b, c = g.angles
            expanded.append(("RZ", g.target, None, c, base + 2))
            expanded.append(("RY", g.target, None, b, base + 1))
            expanded.append(("RZ", g.target, None, a, base + 0))
            base += 3
    return expanded, base


def _apply_elem(amps, kind, target, control, angle, n):
    if kind == "CNOT":
        return _apply_cnot(amps, control, target, n)
    mat = _ry_mat(angle) if kind == "RY" else _rz_mat(angle)
    return _apply_1q(amps, mat, target, n)


def _apply_generator(amps: np.ndarray, kind: str, q: int, n: int) -> np.ndarray:
    """(-i/2) G |amps> for G in {Y, Z}, the derivative factor of RY/RZ."""
    b = amps.shape[0]
    view = amps.reshape(b, 1 << q, 2, 1 << (n - 1 - q))
    s0 = view[:, :, 0, :]
    s1 = view[:, :, 1, :]
    out = np.empty_like(view)
    if kind == "RY":  # (-i/2) Y = [[0, -1/2], [1/2, 0]]
        out[:, :, 0, :] = -0.5 * s1
        out[:, :, 1, :] = 0.5 * s0
    else:  # (-i/2) Z = diag(-i/2, i/2)
        out[:, :, 0, :] = -0.5j * s0
        out[:, :, 1, :] = 0.5j * s1
    return out.reshape(amps.shape)


def adjoint_backward(
    amps0: np.ndarray, circuit, n_qubits: int, grad_probs: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Exact reverse-mode gradients through a circuit and the |.|^2 readout.

    amps0: initial states (B, 2**n); grad_probs: dL/dp (B, 2**n) real.
    Returns (dL/dangles summed over the batch, dL/d amps0 treating the
    initial amplitudes as real parameters, shape (B, 2**n)).
    """
    n = n_qubits
    dim = 1 << n
    amps0 = np.asarray(amps0, dtype=np.complex128)
    grad_probs = np.asarray(grad_probs, dtype=np.float64)
    if amps0.ndim != 2 or amps0.shape[1] != dim:
        raise DimensionError(f"amps0 shape {amps0.shape} != (batch, {dim})")
    if grad_probs.shape != amps0.shape:
        raise DimensionError(
            f"grad_probs shape {grad_probs.shape} != states shape {amps0.shape}"
        )
    for g in circuit:
        _check_indices(g, n)
    ops, n_params = _expand_elementary(circuit)
    psi = amps0.copy()
    for kind, t, c, ang, _ in ops:
        psi = _apply_elem(psi, kind, t, c, ang, n)
    # lam_k = U_{k+1}^† ... U_G^† (grad_probs ⊙ psi_final); at the last gate
    # this is just the readout cotangent.
    lam = grad_probs * psi
    grad_angles = np.zeros(n_params, dtype=np.float64)
    for kind, t, c, ang, idx in reversed(ops):
        if idx is not None:
            dpsi = _apply_generator(psi, kind, t, n)
            grad_angles[idx] += 2.0 * float(
                np.real(np.sum(np.conj(lam) * dpsi))
            )
        if kind == "CNOT":
            psi = _apply_cnot(psi, c, t, n)
            lam = _apply_cnot(lam, c, t, n)
        else:
            mat = _ry_mat(-ang) if kind == "RY" else _rz_mat(-ang)
            psi = _apply_1q(psi, mat, t, n)
            lam = _apply_1q(lam, mat, t, n)
    grad_amps0 = 2.0 * np.real(lam)
    return grad_angles, grad_amps0


def encode_input_grad(
    enc: EncodeResult, grad_state: np.ndarray
) -> np.ndarray:
    """Chain a gradient w.r.t. the encoded (unit) amplitudes back to the raw
    pre-normalization input. Zero-norm inputs get a zero gradient (the
    encoding is constant there)."""
    if enc.norm == 0.0:
        return np.zeros(enc.raw_len, dtype=np.float64)
    unit = np.real(enc.state.amps)
    g = (grad_state - unit * float(np.dot(grad_state, unit))) / enc.norm
    return g[: enc.raw_len]


def backward_circuit(
    enc: EncodeResult, circuit, grad_probs
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of L = sum(grad_probs * probabilities(final state)) with
    respect to every rotation angle (flat, gate order) and to the raw input
    vector that was amplitude-encoded."""
    grad_probs = np.asarray(grad_probs, dtype=np.float64).reshape(-1)
    dim = enc.padded_len
    if grad_probs.shape != (dim,):
        raise DimensionError(
            f"grad_probs length {grad_probs.size} != state dimension {dim}"
        )
    grad_angles, grad_amps0 = adjoint_backward(
        enc.state.amps[None, :], circuit, enc.state.n_qubits, grad_probs[None, :]
    )
    return grad_angles, encode_input_grad(enc, grad_amps0[0])
