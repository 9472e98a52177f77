"""Finite-difference oracles and the gradient-check suites behind the CLI.

The central-difference estimator here is the independent reference every
analytic gradient in the package is judged against; it never calls any
backward code path. The three suites cover the circuit simulator's adjoint
gradients, the full quantum projector, and whole-model training gradients
for both projection backends.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from . import ansatz as az
from . import qsim

__all__ = [
    "finite_difference",
    "rel_error",
    "check_qsim",
    "check_ansatz",
    "check_model",
]


def finite_difference(
    f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-4
) -> np.ndarray:
    """Central-difference gradient of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return g


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-3) -> float:
    """Vector-relative error: ||a - b||_inf scaled by the larger gradient
    magnitude, floored so near-zero gradients compare absolutely."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), floor)
    return float(np.max(np.abs(a - b)) / scale)


def check_qsim(n_instances: int = 100, seed: int = 0) -> float:
    """Adjoint vs central finite differences on random layered circuits of
    up to 4 qubits and 3 layers; returns the worst relative error."""
    rng = np.random.default_rng(seed)
    patterns = ("ring", "all_to_all", "none")
    worst = 0.0
    for _ in range(n_instances):
        cfg = az.AnsatzConfig(
            n_qubits=int(rng.integers(1, 5)),
            n_layers=int(rng.integers(1, 4)),
            entangle_pattern=patterns[rng.integers(3)],
        )
        params = az.init_params(cfg, int(rng.integers(1 << 30)))
        circuit = az.build_circuit(cfg, params)
        dim = 1 << cfg.n_qubits
        x = rng.normal(size=int(rng.integers(1, dim + 1)))
        grad_probs = rng.normal(size=dim)
        enc = qsim.amplitude_encode(x, cfg.n_qubits)
        grad_angles, grad_x = qsim.backward_circuit(enc, circuit, grad_probs)

        flat = params.angles.reshape(-1).copy()

        def loss_angles(a):
            p = az.AnsatzParams(a.reshape(cfg.angles_shape))
            state = qsim.run_circuit(enc, az.build_circuit(cfg, p))
            return float(np.dot(grad_probs, qsim.probabilities(state)))

        def loss_input(v):
            state = qsim.run_circuit(qsim.amplitude_encode(v, cfg.n_qubits), circuit)
            return float(np.dot(grad_probs, qsim.probabilities(state)))

        worst = max(worst, rel_error(grad_angles, finite_difference(loss_angles, flat)))
        worst = max(worst, rel_error(grad_x, finite_difference(loss_input, x.copy())))
    return worst


def check_ansatz(n_instances: int = 50, seed: int = 0) -> float:
    """Full projector gradients vs finite differences on random instances
    with d_in <= 16, including the pre-compression path."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(n_instances):
        d_in = int(rng.integers(2, 17))
        d_out = int(rng.integers(1, 5))
        max_qubits = 3 if k % 3 == 0 and d_in > 8 else 8
        nq = az.required_qubits(d_in, max_qubits)
        cfg = az.QuantumProjectorConfig(
            d_in, d_out, az.AnsatzConfig(nq, int(rng.integers(1, 3))), max_qubits
        )
        params = az.init_params(cfg.ansatz, int(rng.integers(1 << 30)))
        w, _ = az.init_readout(rng, cfg.state_dim, d_out)
        b = rng.normal(size=d_out)
        p = (
            az.init_precompress(rng, d_in, cfg.state_dim)
            if cfg.needs_precompress
            else None
        )
        x = rng.normal(size=d_in)
        gy = rng.normal(size=d_out)
        grads = az.quantum_project_backward(cfg, params, w, b, x, gy, p)

        def loss(angles=params.angles, wv=w, bv=b, xv=x, pv=p):
            out = az.quantum_project(cfg, az.AnsatzParams(angles), wv, bv, xv, pv)
            return float(np.dot(gy, out))

        pairs = [
            (grads.angles, lambda a: loss(angles=a), params.angles),
            (grads.readout_w, lambda v: loss(wv=v), w),
            (grads.readout_b, lambda v: loss(bv=v), b),
            (grads.x, lambda v: loss(xv=v), x),
        ]
        if p is not None:
            pairs.append((grads.precompress, lambda v: loss(pv=v), p))
        for got, f, base in pairs:
            worst = max(worst, rel_error(got, finite_difference(f, base.copy())))
    return worst


def check_model(seed: int = 0) -> dict:
    """Whole-model gradient check on the tiny two-qubit configuration for
    both backends; returns the worst relative error per (backend, group)."""
    from .mamba import MambaModel, ModelConfig  # deferred: avoids import cycle

    rng = np.random.default_rng(seed)
    out: dict[tuple[str, str], float] = {}
    for backend in ("classical", "quantum"):
        cfg = ModelConfig(
            d_model=2,
            n_layers=1,
            expand=2,
            d_state=2,
            dt_rank=1,
            d_conv=2,
            num_classes=4,
            input_mode="real",
            feat_dim=1,
            backends={k: backend for k in ("in_proj", "x_proj", "out_proj")},
            max_qubits=2,
        )
        model = MambaModel(cfg, seed=seed)
        model.head_w.data[:] = rng.normal(size=model.head_w.shape) * 0.3
        x = rng.uniform(0.2, 1.0, size=(2, 3, 1))
        labels = rng.integers(0, 4, size=2)

        def loss_value():
            return ad.softmax_cross_entropy(model.forward(x), labels)

        model.zero_grads()
        loss_value().backward()
        for p in model.parameters():
            def f(probe, tensor=p.tensor):
                saved = tensor.data.copy()
                tensor.data = probe
                try:
                    return loss_value().item()
                finally:
                    tensor.data = saved

            fd = finite_difference(f, p.tensor.data.copy())
            err = rel_error(p.tensor.grad, fd)
            key = (backend, p.group)
            out[key] = max(out.get(key, 0.0), err)
    return out
