"""Layered strongly-entangling circuits and the quantum projection layer.

A projector maps a real feature vector through four stages: optional trainable
pre-compression down to the simulable width, amplitude encoding, the layered
rotation+entanglement circuit, and an affine readout of the computational
basis probabilities. The norm that amplitude encoding divides out multiplies
the probability vector before readout so that token magnitude survives the
encoding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from . import qsim
from .errors import ConfigError, DimensionError
from .qsim import GateOp

__all__ = [
    "AnsatzConfig",
    "AnsatzParams",
    "QuantumProjectorConfig",
    "ProjectorGrads",
    "build_circuit",
    "init_params",
    "init_readout",
    "init_precompress",
    "required_qubits",
    "quantum_project",
    "quantum_project_backward",
    "quantum_project_batch",
    "quantum_project_batch_backward",
    "make_projector_op",
]

_PATTERNS = ("ring", "all_to_all", "none")


@dataclass(frozen=True)
class AnsatzConfig:
    """Circuit template: per-layer 3-angle rotations plus an entangler round.

    n_layers=0 is the idle (identity) circuit used as an expressivity
    baseline; the projector path requires n_layers >= 1.
    """

    n_qubits: int
    n_layers: int = 1
    entangle_pattern: str = "ring"

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ConfigError(f"n_qubits must be >= 1, got {self.n_qubits}")
        if self.n_layers < 0:
            raise ConfigError(f"n_layers must be >= 0, got {self.n_layers}")
        if self.entangle_pattern not in _PATTERNS:
            raise ConfigError(
                f"entangle_pattern must be one of {_PATTERNS}, got "
                f"{self.entangle_pattern!r}"
            )

    @property
    def n_angles(self) -> int:
        return self.n_layers * self.n_qubits * 3

    @property
    def angles_shape(self) -> tuple[int, int, int]:
        return (self.n_layers, self.n_qubits, 3)


@dataclass(frozen=True)
class AnsatzParams:
    """Trainable rotation angles, shape (n_layers, n_qubits, 3) radians."""

    angles: np.ndarray

    def __post_init__(self):
        angles = np.asarray(self.angles, dtype=np.float64)
        object.__setattr__(self, "angles", angles)
        if angles.ndim != 3 or angles.shape[2] != 3:
            raise ConfigError(
                f"angles must have shape (layers, qubits, 3), got {angles.shape}"
            )


def _check_params(cfg: AnsatzConfig, params: AnsatzParams) -> None:
    if params.angles.shape != cfg.angles_shape:
        raise ConfigError(
            f"params shape {params.angles.shape} does not match config "
            f"shape {cfg.angles_shape}"
        )


def build_circuit(cfg: AnsatzConfig, params: AnsatzParams) -> list[GateOp]:
    """Per layer: one ROT3 per qubit, then the entangler round (ring CNOTs
    q -> q+1 mod n; or every ordered pair i<j for all_to_all; or none)."""
    _check_params(cfg, params)
    n = cfg.n_qubits
    ops: list[GateOp] = []
    for layer in range(cfg.n_layers):
        for q in range(n):
            ops.append(GateOp("ROT3", q, angles=tuple(params.angles[layer, q])))
        if cfg.entangle_pattern == "ring" and n >= 2:
            for q in range(n):
                ops.append(GateOp("CNOT", target=(q + 1) % n, control=q))
        elif cfg.entangle_pattern == "all_to_all":
            for i in range(n):
                for j in range(i + 1, n):
                    ops.append(GateOp("CNOT", target=j, control=i))
    return ops


def init_params(cfg: AnsatzConfig, seed: int) -> AnsatzParams:
    """Angles i.i.d. uniform on [0, 2pi) from numpy's PCG64 stream."""
    rng = np.random.default_rng(seed)
    return AnsatzParams(rng.uniform(0.0, 2.0 * np.pi, size=cfg.angles_shape))


def run_ansatz_batch(cfg: AnsatzConfig, angle_stack: np.ndarray) -> np.ndarray:
    """Simulate the ansatz from |0...0> for a stack of angle settings.

    angle_stack: (stack, n_layers, n_qubits, 3); returns (stack, 2**n) final
    amplitudes. Gate order matches build_circuit, with the rotation matrices
    built per stack element.
    """
    angle_stack = np.asarray(angle_stack, dtype=np.float64)
    if angle_stack.ndim != 4 or angle_stack.shape[1:] != cfg.angles_shape:
        raise ConfigError(
            f"angle stack shape {angle_stack.shape} != (stack, *{cfg.angles_shape})"
        )
    n = cfg.n_qubits
    amps = np.zeros((angle_stack.shape[0], 1 << n), dtype=np.complex128)
    amps[:, 0] = 1.0
    for layer in range(cfg.n_layers):
        for q in range(n):
            mat = qsim._rot3_mat(
                angle_stack[:, layer, q, 0],
                angle_stack[:, layer, q, 1],
                angle_stack[:, layer, q, 2],
            )
            amps = qsim._apply_1q(amps, mat, q, n)
        if cfg.entangle_pattern == "ring" and n >= 2:
            for q in range(n):
                amps = qsim._apply_cnot(amps, q, (q + 1) % n, n)
        elif cfg.entangle_pattern == "all_to_all":
            for i in range(n):
                for j in range(i + 1, n):
                    amps = qsim._apply_cnot(amps, i, j, n)
    return amps


def required_qubits(d_in: int, max_qubits: int = 8) -> int:
    return min(max_qubits, max(1, math.ceil(math.log2(max(d_in, 2)))))


@dataclass(frozen=True)
class QuantumProjectorConfig:
    """Dimensions of one quantum projection layer."""

    d_in: int
    d_out: int
    ansatz: AnsatzConfig
    max_qubits: int = 8

    def __post_init__(self):
        if self.d_in < 1 or self.d_out < 1:
            raise ConfigError(f"d_in/d_out must be >= 1, got {self.d_in}/{self.d_out}")
        want = required_qubits(self.d_in, self.max_qubits)
        if self.ansatz.n_qubits != want:
            raise ConfigError(
                f"ansatz has {self.ansatz.n_qubits} qubits; d_in={self.d_in} with "
                f"max_qubits={self.max_qubits} requires {want}"
            )
        if self.ansatz.n_layers < 1:
            raise ConfigError("projector ansatz needs n_layers >= 1")

    @property
    def state_dim(self) -> int:
        return 1 << self.ansatz.n_qubits

    @property
    def needs_precompress(self) -> bool:
        return self.d_in > self.state_dim


def init_readout(rng: np.random.Generator, state_dim: int, d_out: int):
    """Affine readout with uniform fan-in scaling, zero bias."""
    bound = 1.0 / math.sqrt(state_dim)
    w = rng.uniform(-bound, bound, size=(state_dim, d_out))
    return w, np.zeros(d_out)


def init_precompress(rng: np.random.Generator, d_in: int, state_dim: int):
    bound = 1.0 / math.sqrt(d_in)
    return rng.uniform(-bound, bound, size=(d_in, state_dim))


class ProjectorGrads(NamedTuple):
    angles: np.ndarray
    readout_w: np.ndarray
    readout_b: np.ndarray
    x: np.ndarray
    precompress: np.ndarray | None


def _check_projector_args(cfg, params, readout_w, readout_b, x2d, precompress):
    _check_params(cfg.ansatz, params)
    dim = cfg.state_dim
    if readout_w.shape != (dim, cfg.d_out):
        raise DimensionError(
            f"readout matrix shape {readout_w.shape} != ({dim}, {cfg.d_out})"
        )
    if readout_b.shape != (cfg.d_out,):
        raise DimensionError(f"readout bias shape {readout_b.shape} != ({cfg.d_out},)")
    if x2d.ndim != 2 or x2d.shape[1] != cfg.d_in:
        raise DimensionError(f"input shape {x2d.shape} != (tokens, {cfg.d_in})")
    if cfg.needs_precompress:
        if precompress is None:
            raise DimensionError(
                f"d_in={cfg.d_in} exceeds {dim} amplitudes; pre-compression "
                "matrix required"
            )
        if precompress.shape != (cfg.d_in, dim):
            raise DimensionError(
                f"pre-compression shape {precompress.shape} != ({cfg.d_in}, {dim})"
            )
    elif precompress is not None:
        raise DimensionError("pre-compression given but d_in fits the state")


def _stage_forward(cfg, params, x2d, precompress):
    """Common forward plumbing; returns everything backward needs."""
    dim = cfg.state_dim
    compressed = x2d @ precompress if precompress is not None else x2d
    m = compressed.shape[1]
    norms = np.linalg.norm(compressed, axis=1)
    live = norms >= qsim.ZERO_NORM_CUTOFF
    unit = np.zeros((x2d.shape[0], dim), dtype=np.float64)
    unit[:, 0] = 1.0  # zero-norm rows encode to |0...0>
    unit[live, :m] = compressed[live] / norms[live, None]
    unit[live, m:] = 0.0
    norms = np.where(live, norms, 0.0)
    circuit = build_circuit(cfg.ansatz, params)
    psi = qsim.apply_ops(unit.astype(np.complex128), circuit, cfg.ansatz.n_qubits)
    probs = np.abs(psi) ** 2
    feats = norms[:, None] * probs
    return compressed, m, norms, live, unit, circuit, probs, feats


def quantum_project_batch(
    cfg: QuantumProjectorConfig,
    params: AnsatzParams,
    readout_w: np.ndarray,
    readout_b: np.ndarray,
    x: np.ndarray,
    precompress: np.ndarray | None = None,
) -> np.ndarray:
    """Project a stack of tokens (tokens, d_in) -> (tokens, d_out)."""
    x = np.asarray(x, dtype=np.float64)
    _check_projector_args(cfg, params, readout_w, readout_b, x, precompress)
    *_, feats = _stage_forward(cfg, params, x, precompress)
    return feats @ readout_w + readout_b


def quantum_project_batch_backward(
    cfg: QuantumProjectorConfig,
    params: AnsatzParams,
    readout_w: np.ndarray,
    readout_b: np.ndarray,
    x: np.ndarray,
    grad_out: np.ndarray,
    precompress: np.ndarray | None = None,
) -> ProjectorGrads:
    """Exact gradients of sum(grad_out * output) for every trainable stage."""
    x = np.asarray(x, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    _check_projector_args(cfg, params, readout_w, readout_b, x, precompress)
    if grad_out.shape != (x.shape[0], cfg.d_out):
        raise DimensionError(
            f"grad_out shape {grad_out.shape} != ({x.shape[0]}, {cfg.d_out})"
        )
    compressed, m, norms, live, unit, circuit, probs, feats = _stage_forward(
        cfg, params, x, precompress
    )
    grad_b = grad_out.sum(axis=0)
    grad_w = feats.T @ grad_out
    grad_feats = grad_out @ readout_w.T
    grad_probs = norms[:, None] * grad_feats
    grad_norms = np.sum(grad_feats * probs, axis=1)
    grad_angles, grad_unit = qsim.adjoint_backward(
        unit.astype(np.complex128), circuit, cfg.ansatz.n_qubits, grad_probs
    )
    # normalization chain: unit = compressed / norm (zero-padded), plus the
    # norm factor feeding the feature scaling
    grad_c = np.zeros_like(compressed)
    if np.any(live):
        gl = grad_unit[live]
        ul = unit[live]
        inner = np.sum(gl * ul, axis=1, keepdims=True)
        grad_c[live] = (gl - ul * inner)[:, :m] / norms[live, None]
        grad_c[live] += ul[:, :m] * grad_norms[live, None]
    if precompress is not None:
        grad_x = grad_c @ precompress.T
        grad_p = x.T @ grad_c
    else:
        grad_x = grad_c
        grad_p = None
    return ProjectorGrads(
        grad_angles.reshape(cfg.ansatz.angles_shape), grad_w, grad_b, grad_x, grad_p
    )


def quantum_project(
    cfg: QuantumProjectorConfig,
    params: AnsatzParams,
    readout_w: np.ndarray,
    readout_b: np.ndarray,
    x: np.ndarray,
    precompress: np.ndarray | None = None,
) -> np.ndarray:
    """Single-token projection (d_in,) -> (d_out,)."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return quantum_project_batch(cfg, params, readout_w, readout_b, x, precompress)[0]


def quantum_project_backward(
    cfg: QuantumProjectorConfig,
    params: AnsatzParams,
    readout_w: np.ndarray,
    readout_b: np.ndarray,
    x: np.ndarray,
    grad_out: np.ndarray,
    precompress: np.ndarray | None = None,
) -> ProjectorGrads:
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    grad_out = np.asarray(grad_out, dtype=np.float64).reshape(1, -1)
    grads = quantum_project_batch_backward(
        cfg, params, readout_w, readout_b, x, grad_out, precompress
    )
    return ProjectorGrads(
        grads.angles, grads.readout_w, grads.readout_b, grads.x[0], grads.precompress
    )


def make_projector_op(cfg: QuantumProjectorConfig):
    """Autodiff-graph wrapper: op(x, angles, readout_w, readout_b[, precompress])
    over Tensors, with x of shape (tokens, d_in)."""

    def forward(x, angles, w, b, *rest):
        p = rest[0] if rest else None
        params = AnsatzParams(angles)
        out = quantum_project_batch(cfg, params, w, b, x, p)
        return out, (x, params, w, b, p)

    def backward(ctx, grad_out):
        x, params, w, b, p = ctx
        grads = quantum_project_batch_backward(cfg, params, w, b, x, grad_out, p)
        out = [grads.x, grads.angles, grads.readout_w, grads.readout_b]
        if p is not None:
            out.append(grads.precompress)
        return tuple(out)

    return ad.custom_op(forward, backward, name="quantum_project")
