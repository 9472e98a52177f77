"""Selective state-space core and the gated sequence-classifier model.

The recurrence per batch element and channel i is

    h_t[j] = exp(delta_t[i] * A[i,j]) * h_{t-1}[j] + delta_t[i] * B_t[j] * u_t[i]
    y_t[i] = sum_j C_t[j] * h_t[j] + D[i] * u_t[i]

with A = -exp(A_log) kept strictly negative so every decay factor lies in
(0, 1). Delta, B and C are per-token functions of the input (the selective
part); when they are time-invariant the same recurrence collapses to a causal
convolution with a geometric kernel, which `ssm_conv_kernel` materializes.

A block wraps the scan in the usual gated pipeline: width expansion, causal
depthwise convolution, SiLU, the scan, multiplicative SiLU gate, and a
projection back down. The three wide projections are backend-switchable
(classical affine or simulated quantum projector); the step-size projection
always stays classical.
"""
from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from . import ansatz as az
from .errors import (
    CheckpointError,
    ConfigError,
    DimensionError,
    DomainError,
    UsageError,
)

__all__ = [
    "MambaLayerConfig",
    "ModelConfig",
    "SsmParams",
    "ScanInputs",
    "discretize",
    "selective_scan_sequential",
    "ssm_conv_kernel",
    "lti_conv_apply",
    "selective_scan_op",
    "Param",
    "MambaBlock",
    "MambaModel",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
]

PROJECTION_NAMES = ("in_proj", "x_proj", "out_proj")
BACKENDS = ("classical", "quantum")
GROUPS = ("in_proj", "x_proj", "out_proj", "classical")


def _default_backends() -> dict:
    return {name: "classical" for name in PROJECTION_NAMES}


@dataclass(frozen=True)
class MambaLayerConfig:
    """Dimensions and per-projection backend selection for one block."""

    d_model: int
    expand: int = 4
    d_state: int = 16
    dt_rank: int = 0  # 0 means the ceil(d_model/16) default
    d_conv: int = 4
    backends: dict = field(default_factory=_default_backends)
    ansatz_layers: int = 1
    entangle_pattern: str = "ring"
    max_qubits: int = 8

    def __post_init__(self):
        if min(self.d_model, self.expand, self.d_state, self.d_conv) < 1:
            raise ConfigError(f"all dimensions must be >= 1: {self}")
        if self.dt_rank == 0:
            object.__setattr__(self, "dt_rank", max(1, math.ceil(self.d_model / 16)))
        if self.dt_rank < 1:
            raise ConfigError(f"dt_rank must be >= 1, got {self.dt_rank}")
        if set(self.backends) != set(PROJECTION_NAMES):
            raise ConfigError(
                f"backends must map exactly {PROJECTION_NAMES}, got "
                f"{sorted(self.backends)}"
            )
        for key, val in self.backends.items():
            if val not in BACKENDS:
                raise ConfigError(f"backend for {key} must be one of {BACKENDS}")

    @property
    def d_inner(self) -> int:
        return self.expand * self.d_model


@dataclass(frozen=True)
class ModelConfig:
    """Stacked classifier configuration."""

    d_model: int = 128
    n_layers: int = 2
    expand: int = 4
    d_state: int = 16
    dt_rank: int = 0
    d_conv: int = 4
    num_classes: int = 10
    input_mode: str = "real"  # "real": (b, l, feat) floats; "bins": (b, l) ints
    feat_dim: int = 1
    vocab_size: int = 256
    backends: dict = field(default_factory=_default_backends)
    ansatz_layers: int = 1
    entangle_pattern: str = "ring"
    max_qubits: int = 8

    def __post_init__(self):
        if self.n_layers < 1 or self.num_classes < 2:
            raise ConfigError(f"need n_layers >= 1 and num_classes >= 2: {self}")
        if self.input_mode not in ("real", "bins"):
            raise ConfigError(f"unknown input mode {self.input_mode!r}")
        self.layer_config()  # validate the per-layer slice eagerly

    def layer_config(self) -> MambaLayerConfig:
        return MambaLayerConfig(
            d_model=self.d_model,
            expand=self.expand,
            d_state=self.d_state,
            dt_rank=self.dt_rank,
            d_conv=self.d_conv,
            backends=dict(self.backends),
            ansatz_layers=self.ansatz_layers,
            entangle_pattern=self.entangle_pattern,
            max_qubits=self.max_qubits,
        )

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model,
            "n_layers": self.n_layers,
            "expand": self.expand,
            "d_state": self.d_state,
            "dt_rank": self.dt_rank,
            "d_conv": self.d_conv,
            "num_classes": self.num_classes,
            "input_mode": self.input_mode,
            "feat_dim": self.feat_dim,
            "vocab_size": self.vocab_size,
            "backends": dict(self.backends),
            "ansatz_layers": self.ansatz_layers,
            "entangle_pattern": self.entangle_pattern,
            "max_qubits": self.max_qubits,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# Functional scan API (numpy in, numpy out; the reference semantics)


@dataclass(frozen=True)
class SsmParams:
    """State-space parameters: A = -exp(a_log) diagonal-in-state per channel,
    the skip weights D, and the step-size projection."""

    a_log: np.ndarray  # (d_inner, d_state)
    d_skip: np.ndarray  # (d_inner,)
    dt_weight: np.ndarray  # (dt_rank, d_inner)
    dt_bias: np.ndarray  # (d_inner,)

    def __post_init__(self):
        a_log = np.asarray(self.a_log, dtype=np.float64)
        object.__setattr__(self, "a_log", a_log)
        object.__setattr__(self, "d_skip", np.asarray(self.d_skip, dtype=np.float64))
        if a_log.ndim != 2:
            raise DimensionError(f"a_log must be (d_inner, d_state), got {a_log.shape}")
        if self.d_skip.shape != (a_log.shape[0],):
            raise DimensionError(
                f"d_skip shape {self.d_skip.shape} != ({a_log.shape[0]},)"
            )

    @property
    def a_matrix(self) -> np.ndarray:
        return -np.exp(self.a_log)


@dataclass(frozen=True)
class ScanInputs:
    """Per-token scan drive: activations u, positive step sizes delta, and
    the input/output state projections B_t, C_t."""

    u: np.ndarray  # (batch, length, d_inner)
    delta: np.ndarray  # (batch, length, d_inner), > 0
    b_t: np.ndarray  # (batch, length, d_state)
    c_t: np.ndarray  # (batch, length, d_state)

    def __post_init__(self):
        for name in ("u", "delta", "b_t", "c_t"):
            object.__setattr__(
                self, name, np.asarray(getattr(self, name), dtype=np.float64)
            )
        if self.u.ndim != 3:
            raise DimensionError(f"u must be (batch, length, d_inner), got {self.u.shape}")
        if self.delta.shape != self.u.shape:
            raise DimensionError(
                f"delta shape {self.delta.shape} != u shape {self.u.shape}"
            )
        want = self.u.shape[:2]
        if self.b_t.shape[:2] != want or self.c_t.shape[:2] != want:
            raise DimensionError("b_t/c_t batch/length differ from u")
        if self.b_t.shape != self.c_t.shape or self.b_t.ndim != 3:
            raise DimensionError(
                f"b_t {self.b_t.shape} and c_t {self.c_t.shape} must match (b, l, d_state)"
            )
        if np.any(self.delta <= 0):
            raise DomainError("delta must be strictly positive")


def discretize(a: np.ndarray, delta_t: np.ndarray, b_t: np.ndarray):
    """Zero-order hold on A, Euler on B for one time step:
    Abar[i,j] = exp(delta[i] A[i,j]); Bbar[i,j] = delta[i] B[j]."""
    a = np.asarray(a, dtype=np.float64)
    delta_t = np.asarray(delta_t, dtype=np.float64)
    b_t = np.asarray(b_t, dtype=np.float64)
    if a.ndim != 2 or delta_t.shape != (a.shape[0],) or b_t.shape != (a.shape[1],):
        raise DimensionError(
            f"discretize shapes: A {a.shape}, delta {delta_t.shape}, B {b_t.shape}"
        )
    if np.any(delta_t <= 0):
        raise DomainError("delta must be strictly positive")
    a_bar = np.exp(delta_t[:, None] * a)
    b_bar = delta_t[:, None] * b_t[None, :]
    return a_bar, b_bar


def _scan_forward(u, delta, a, b, c, d_skip):
    """Core recurrence; returns (y, decay, states) with states kept for the
    backward pass."""
    n_batch, length, d_inner = u.shape
    d_state = a.shape[1]
    decay = np.exp(delta[..., None] * a)  # (b, l, d_inner, d_state)
    drive = delta[..., None] * b[:, :, None, :] * u[..., None]
    states = np.empty((n_batch, length, d_inner, d_state))
    h = np.zeros((n_batch, d_inner, d_state))
    for t in range(length):
        h = decay[:, t] * h + drive[:, t]
        states[:, t] = h
    y = np.einsum("blij,blj->bli", states, c) + d_skip * u
    return y, decay, states


def _scan_backward(ctx, grad_y):
    u, delta, a, b, c, d_skip, decay, states = ctx
    n_batch, length, d_inner = u.shape
    grad_y = np.asarray(grad_y, dtype=np.float64)
    grad_u = grad_y * d_skip
    grad_d = np.einsum("bli,bli->i", grad_y, u)
    grad_c = np.einsum("bli,blij->blj", grad_y, states)
    grad_delta = np.zeros_like(delta)
    grad_a = np.zeros_like(a)
    grad_b = np.zeros_like(b)
    gh = np.zeros((n_batch, d_inner, a.shape[1]))
    for t in range(length - 1, -1, -1):
        gh = gh + grad_y[:, t, :, None] * c[:, t, None, :]
        prev = states[:, t - 1] if t > 0 else 0.0
        g_decay = gh * prev  # dL/d decay_t
        grad_delta[:, t] = np.einsum("bij,bij,ij->bi", g_decay, decay[:, t], a)
        grad_a += np.einsum("bij,bij,bi->ij", g_decay, decay[:, t], delta[:, t])
        # drive_t = delta_t * B_t * u_t
        grad_delta[:, t] += np.einsum("bij,bj,bi->bi", gh, b[:, t], u[:, t])
        grad_b[:, t] = np.einsum("bij,bi,bi->bj", gh, delta[:, t], u[:, t])
        grad_u[:, t] += np.einsum("bij,bi,bj->bi", gh, delta[:, t], b[:, t])
        gh = gh * decay[:, t]
    return grad_u, grad_delta, grad_a, grad_b, grad_c, grad_d


def selective_scan_sequential(params: SsmParams, inputs: ScanInputs) -> np.ndarray:
    """Reference sequential scan, numpy arrays in and out."""
    if inputs.u.shape[2] != params.a_log.shape[0]:
        raise DimensionError(
            f"u has d_inner={inputs.u.shape[2]} but A has {params.a_log.shape[0]}"
        )
    if inputs.b_t.shape[2] != params.a_log.shape[1]:
        raise DimensionError(
            f"b_t has d_state={inputs.b_t.shape[2]} but A has {params.a_log.shape[1]}"
        )
    y, _, _ = _scan_forward(
        inputs.u, inputs.delta, params.a_matrix, inputs.b_t, inputs.c_t, params.d_skip
    )
    return y


def ssm_conv_kernel(
    params: SsmParams, delta: np.ndarray, b: np.ndarray, c: np.ndarray, length: int
) -> np.ndarray:
    """Convolution kernel of the time-invariant special case:
    K[k, i] = sum_j C[j] * Abar[i,j]^k * Bbar[i,j]."""
    delta = np.asarray(delta, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if delta.ndim != 1 or b.ndim != 1 or c.ndim != 1:
        raise UsageError(
            "ssm_conv_kernel is the LTI special case: delta, B, C must be "
            "single time-invariant vectors, not per-step arrays"
        )
    if length < 1:
        raise DimensionError(f"length must be >= 1, got {length}")
    a_bar, b_bar = discretize(params.a_matrix, delta, b)
    powers = a_bar[None, :, :] ** np.arange(length)[:, None, None]
    return np.einsum("j,kij,ij->ki", c, powers, b_bar)


def lti_conv_apply(kernel: np.ndarray, u: np.ndarray, d_skip: np.ndarray) -> np.ndarray:
    """Causal per-channel convolution of u (length, d_inner) with the kernel,
    plus the D skip path."""
    length, d_inner = u.shape
    if kernel.shape != (length, d_inner):
        raise DimensionError(f"kernel shape {kernel.shape} != {(length, d_inner)}")
    y = np.zeros_like(u)
    for k in range(length):
        y[k:] += kernel[k] * u[: length - k]
    return y + d_skip * u


def selective_scan_op(
    u: ad.Tensor,
    delta: ad.Tensor,
    a: ad.Tensor,
    b: ad.Tensor,
    c: ad.Tensor,
    d_skip: ad.Tensor,
) -> ad.Tensor:
    """Autodiff-graph scan over Tensors; same core as the functional path."""

    def forward(u_, delta_, a_, b_, c_, d_):
        y, decay, states = _scan_forward(u_, delta_, a_, b_, c_, d_)
        return y, (u_, delta_, a_, b_, c_, d_, decay, states)

    return ad.custom_op(forward, _scan_backward, name="selective_scan")(
        u, delta, a, b, c, d_skip
    )


# ---------------------------------------------------------------------------
# Parameters and projection backends


class Param(NamedTuple):
    name: str
    group: str  # one of GROUPS
    tensor: ad.Tensor


class ClassicalProjection:
    """Plain affine map with fan-in uniform init."""

    def __init__(self, rng, d_in: int, d_out: int, name: str, group: str):
        bound = 1.0 / math.sqrt(d_in)
        self.weight = ad.Tensor(
            rng.uniform(-bound, bound, size=(d_in, d_out)), requires_grad=True
        )
        self.bias = ad.Tensor(np.zeros(d_out), requires_grad=True)
        self.name, self.group = name, group
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        return ad.add(ad.matmul(x, self.weight), self.bias)

    def params(self) -> list[Param]:
        return [
            Param(f"{self.name}.weight", self.group, self.weight),
            Param(f"{self.name}.bias", self.group, self.bias),
        ]


class QuantumProjection:
    """Simulated variational-circuit projector applied per token."""

    def __init__(
        self,
        rng,
        d_in: int,
        d_out: int,
        name: str,
        group: str,
        ansatz_layers: int,
        entangle_pattern: str,
        max_qubits: int,
    ):
        n_qubits = az.required_qubits(d_in, max_qubits)
        self.cfg = az.QuantumProjectorConfig(
            d_in,
            d_out,
            az.AnsatzConfig(n_qubits, ansatz_layers, entangle_pattern),
            max_qubits,
        )
        angle_seed = int(rng.integers(1 << 62))
        self.angles = ad.Tensor(
            az.init_params(self.cfg.ansatz, angle_seed).angles, requires_grad=True
        )
        w, bias = az.init_readout(rng, self.cfg.state_dim, d_out)
        self.readout_w = ad.Tensor(w, requires_grad=True)
        self.readout_b = ad.Tensor(bias, requires_grad=True)
        self.precompress = (
            ad.Tensor(
                az.init_precompress(rng, d_in, self.cfg.state_dim), requires_grad=True
            )
            if self.cfg.needs_precompress
            else None
        )
        self._op = az.make_projector_op(self.cfg)
        self.name, self.group = name, group
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        lead = x.shape[:-1]
        flat = ad.reshape(x, (-1, self.d_in))
        args = [flat, self.angles, self.readout_w, self.readout_b]
        if self.precompress is not None:
            args.append(self.precompress)
        out = self._op(*args)
        return ad.reshape(out, lead + (self.d_out,))

    def params(self) -> list[Param]:
        out = [
            Param(f"{self.name}.angles", self.group, self.angles),
            Param(f"{self.name}.readout_w", self.group, self.readout_w),
            Param(f"{self.name}.readout_b", self.group, self.readout_b),
        ]
        if self.precompress is not None:
            out.append(Param(f"{self.name}.precompress", self.group, self.precompress))
        return out


def _make_projection(backend, rng, d_in, d_out, name, group, cfg: MambaLayerConfig):
    if backend == "classical":
        return ClassicalProjection(rng, d_in, d_out, name, group)
    return QuantumProjection(
        rng,
        d_in,
        d_out,
        name,
        group,
        cfg.ansatz_layers,
        cfg.entangle_pattern,
        cfg.max_qubits,
    )


def _staged(stage: str, fn, *args):
    try:
        return fn(*args)
    except DimensionError as exc:
        raise DimensionError(f"{stage}: {exc}") from exc


def _softplus_inverse(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


class MambaBlock:
    """One gated selective-SSM block (pre-norm and residual live in the
    caller)."""

    def __init__(self, cfg: MambaLayerConfig, rng, name: str):
        self.cfg = cfg
        self.name = name
        d_in, d_inner = cfg.d_model, cfg.d_inner
        self.in_proj = _make_projection(
            cfg.backends["in_proj"], rng, d_in, 2 * d_inner, f"{name}.in_proj",
            "in_proj", cfg,
        )
        conv_bound = 1.0 / math.sqrt(cfg.d_conv)
        self.conv_w = ad.Tensor(
            rng.uniform(-conv_bound, conv_bound, size=(d_inner, cfg.d_conv)),
            requires_grad=True,
        )
        self.conv_b = ad.Tensor(np.zeros(d_inner), requires_grad=True)
        self.x_proj = _make_projection(
            cfg.backends["x_proj"], rng, d_inner, cfg.dt_rank + 2 * cfg.d_state,
            f"{name}.x_proj", "x_proj", cfg,
        )
        # dt projection stays classical; bias set so softplus lands
        # log-uniformly in [1e-3, 1e-1], keeping early decay factors away
        # from both 0 and 1
        dt_bound = 1.0 / math.sqrt(cfg.dt_rank)
        self.dt_w = ad.Tensor(
            rng.uniform(-dt_bound, dt_bound, size=(cfg.dt_rank, d_inner)),
            requires_grad=True,
        )
        dt_init = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=d_inner))
        self.dt_b = ad.Tensor(_softplus_inverse(dt_init), requires_grad=True)
        self.a_log = ad.Tensor(
            np.log(np.tile(np.arange(1.0, cfg.d_state + 1.0), (d_inner, 1))),
            requires_grad=True,
        )
        self.d_skip = ad.Tensor(np.ones(d_inner), requires_grad=True)
        self.out_proj = _make_projection(
            cfg.backends["out_proj"], rng, d_inner, d_in, f"{name}.out_proj",
            "out_proj", cfg,
        )

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        cfg = self.cfg
        d_inner = cfg.d_inner
        if x.data.ndim != 3 or x.shape[2] != cfg.d_model:
            raise DimensionError(
                f"block input shape {x.shape} != (batch, length, {cfg.d_model})"
            )
        proj = _staged("in_proj", self.in_proj, x)
        main = ad.narrow(proj, 2, 0, d_inner)
        gate = ad.narrow(proj, 2, d_inner, d_inner)
        u = ad.silu(
            _staged("conv1d", ad.conv1d_causal, main, self.conv_w, self.conv_b)
        )
        xdbc = _staged("x_proj", self.x_proj, u)
        dt_raw = ad.narrow(xdbc, 2, 0, cfg.dt_rank)
        b_t = ad.narrow(xdbc, 2, cfg.dt_rank, cfg.d_state)
        c_t = ad.narrow(xdbc, 2, cfg.dt_rank + cfg.d_state, cfg.d_state)
        delta = ad.softplus(
            _staged("dt_proj", lambda r: ad.add(ad.matmul(r, self.dt_w), self.dt_b), dt_raw)
        )
        a = ad.mul(ad.exp(self.a_log), -1.0)
        y = _staged(
            "selective_scan", selective_scan_op, u, delta, a, b_t, c_t, self.d_skip
        )
        y = ad.mul(y, ad.silu(gate))
        return _staged("out_proj", self.out_proj, y)

    def params(self) -> list[Param]:
        own = [
            Param(f"{self.name}.conv_w", "classical", self.conv_w),
            Param(f"{self.name}.conv_b", "classical", self.conv_b),
            Param(f"{self.name}.dt_w", "classical", self.dt_w),
            Param(f"{self.name}.dt_b", "classical", self.dt_b),
            Param(f"{self.name}.a_log", "classical", self.a_log),
            Param(f"{self.name}.d_skip", "classical", self.d_skip),
        ]
        return self.in_proj.params() + own + self.x_proj.params() + self.out_proj.params()


class MambaModel:
    """Input lift -> n x (rmsnorm -> block -> residual) -> rmsnorm ->
    mean-pool -> affine head."""

    def __init__(self, cfg: ModelConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        rng = np.random.default_rng(seed)
        layer_cfg = cfg.layer_config()
        if cfg.input_mode == "bins":
            self.embed = ad.Tensor(
                rng.normal(0.0, 0.02, size=(cfg.vocab_size, cfg.d_model)),
                requires_grad=True,
            )
            self.lift_w = self.lift_b = None
        else:
            bound = 1.0 / math.sqrt(cfg.feat_dim)
            self.lift_w = ad.Tensor(
                rng.uniform(-bound, bound, size=(cfg.feat_dim, cfg.d_model)),
                requires_grad=True,
            )
            # nonzero bias: with feat_dim=1 a bias-free lift is rank-1 and the
            # following rmsnorm would erase token magnitude entirely
            self.lift_b = ad.Tensor(
                rng.uniform(-bound, bound, size=cfg.d_model), requires_grad=True
            )
            self.embed = None
        self.blocks = [
            MambaBlock(layer_cfg, rng, f"layers.{i}") for i in range(cfg.n_layers)
        ]
        self.norm_gains = [
            ad.Tensor(np.ones(cfg.d_model), requires_grad=True)
            for _ in range(cfg.n_layers)
        ]
        self.final_gain = ad.Tensor(np.ones(cfg.d_model), requires_grad=True)
        # zero-initialized head: an untrained model scores exactly
        # ln(num_classes) cross-entropy
        self.head_w = ad.Tensor(
            np.zeros((cfg.d_model, cfg.num_classes)), requires_grad=True
        )
        self.head_b = ad.Tensor(np.zeros(cfg.num_classes), requires_grad=True)
        self._check_groups()

    def forward(self, inputs) -> ad.Tensor:
        """inputs: (batch, length, feat) floats in real mode, or
        (batch, length) integer bins; returns (batch, num_classes) logits."""
        cfg = self.cfg
        if cfg.input_mode == "bins":
            ids = np.asarray(inputs)
            if ids.ndim != 2:
                raise DimensionError(f"bins input must be 2-d, got shape {ids.shape}")
            x = ad.embedding_lookup(self.embed, ids)
        else:
            t = inputs if isinstance(inputs, ad.Tensor) else ad.Tensor(inputs)
            if t.data.ndim != 3 or t.shape[2] != cfg.feat_dim:
                raise DimensionError(
                    f"real input shape {t.shape} != (batch, length, {cfg.feat_dim})"
                )
            x = ad.add(ad.matmul(t, self.lift_w), self.lift_b)
        for block, gain in zip(self.blocks, self.norm_gains):
            x = ad.add(x, block(ad.rmsnorm(x, gain)))
        x = ad.rmsnorm(x, self.final_gain)
        pooled = ad.reduce_mean(x, axis=1)
        return ad.add(ad.matmul(pooled, self.head_w), self.head_b)

    def parameters(self) -> list[Param]:
        out: list[Param] = []
        if self.embed is not None:
            out.append(Param("embed", "classical", self.embed))
        else:
            out.append(Param("lift.weight", "classical", self.lift_w))
            out.append(Param("lift.bias", "classical", self.lift_b))
        for i, (block, gain) in enumerate(zip(self.blocks, self.norm_gains)):
            out.append(Param(f"norms.{i}.gain", "classical", gain))
            out.extend(block.params())
        out.append(Param("final_norm.gain", "classical", self.final_gain))
        out.append(Param("head.weight", "classical", self.head_w))
        out.append(Param("head.bias", "classical", self.head_b))
        return out

    def _check_groups(self) -> None:
        # grouping must be exhaustive and disjoint
        seen: set[str] = set()
        for p in self.parameters():
            if p.group not in GROUPS:
                raise ConfigError(f"parameter {p.name} in unknown group {p.group}")
            if p.name in seen:
                raise ConfigError(f"parameter {p.name} registered twice")
            seen.add(p.name)

    def num_parameters(self) -> int:
        return sum(p.tensor.data.size for p in self.parameters())

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.tensor.zero_grad()

    def save(self, path) -> None:
        save_checkpoint(
            path,
            self.cfg.to_dict(),
            [(p.name, p.group, p.tensor.data) for p in self.parameters()],
        )

    @classmethod
    def load(cls, path) -> "MambaModel":
        cfg_dict, blocks = load_checkpoint(path)
        model = cls(ModelConfig.from_dict(cfg_dict), seed=0)
        model.load_state(blocks)
        return model

    def load_state(self, blocks: dict) -> None:
        params = {p.name: p for p in self.parameters()}
        if set(blocks) != set(params):
            missing = sorted(set(params) - set(blocks))
            extra = sorted(set(blocks) - set(params))
            raise CheckpointError(
                f"checkpoint/model parameter mismatch (missing {missing}, "
                f"unexpected {extra})"
            )
        for name, (group, arr) in blocks.items():
            p = params[name]
            if p.group != group:
                raise CheckpointError(
                    f"{name}: checkpoint group {group} != model group {p.group}"
                )
            if arr.shape != p.tensor.data.shape:
                raise CheckpointError(
                    f"{name}: checkpoint shape {arr.shape} != model shape "
                    f"{p.tensor.data.shape}"
                )
            p.tensor.data = arr.astype(np.float64)


# ---------------------------------------------------------------------------
# Checkpoint format: magic, u32 version, u32 config-json length, config json
# (sorted keys), u32 block count, then per block: u16 name length, name,
# u16 group length, group, u32 ndim, u32 dims..., float64 little-endian data.

CHECKPOINT_MAGIC = b"QMAMBACK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, config: dict, blocks) -> None:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    cfg_bytes = json.dumps(config, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg_bytes)))
    buf.write(cfg_bytes)
    buf.write(struct.pack("<I", len(blocks)))
    for name, group, arr in blocks:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        name_b, group_b = name.encode("utf-8"), group.encode("utf-8")
        buf.write(struct.pack("<H", len(name_b)))
        buf.write(name_b)
        buf.write(struct.pack("<H", len(group_b)))
        buf.write(group_b)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    view = io.BytesIO(raw)

    def take(n, what):
        chunk = view.read(n)
        if len(chunk) != n:
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        return chunk

    if take(8, "magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack("<I", take(4, "config length"))
    config = json.loads(take(cfg_len, "config").decode("utf-8"))
    (n_blocks,) = struct.unpack("<I", take(4, "block count"))
    blocks = {}
    for _ in range(n_blocks):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (group_len,) = struct.unpack("<H", take(2, "group length"))
        group = take(group_len, "group").decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4, "ndim"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "shape"))
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(take(8 * size, f"data of {name}"), dtype="<f8")
        blocks[name] = (group, data.reshape(shape).copy())
    return config, blocks
