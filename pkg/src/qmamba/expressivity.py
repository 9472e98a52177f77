"""Ansatz expressivity: sampled fidelity distributions against the Haar
baseline.

Two parameter settings are drawn at random, both circuits are run from
|0...0>, and the squared overlap of the outputs is one fidelity sample. The
histogram of many such samples is compared, bin by bin, against the
closed-form Haar fidelity law P(F) = (N-1)(1-F)^(N-2); the KL divergence of
the two is the expressivity score (lower = more Haar-like coverage).

Report document schema (one `key = value` per line, '#' comments ignored):
    schema_version, n_qubits, n_layers, entangle_pattern, hilbert_dim,
    n_pairs, n_bins, seed, expr_kl, expr_max, frame_potential_1,
    frame_potential_2
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ansatz import AnsatzConfig, init_params, run_ansatz_batch
from .errors import DomainError

__all__ = [
    "FidelityHistogram",
    "ExpressivityReport",
    "haar_pdf",
    "haar_bin_probs",
    "histogram_fidelities",
    "sample_fidelities",
    "kl_expressivity",
    "frame_potential",
    "analyze",
    "format_report",
    "write_report",
    "write_fidelities_csv",
]

DEFAULT_BINS = 75
_Q_FLOOR = 1e-300


@dataclass(frozen=True)
class FidelityHistogram:
    """Counts of fidelity samples over a uniform partition of [0, 1].

    Bins are right-open except the last, which includes F = 1.
    """

    n_bins: int
    counts: np.ndarray
    n_samples: int
    edges: np.ndarray


@dataclass(frozen=True)
class ExpressivityReport:
    expr_kl: float
    expr_max: float
    frame_potentials: dict[int, float]
    hilbert_dim: int


def haar_pdf(f, n_dim: int):
    """Density of the fidelity of two Haar-random pure states in dimension
    n_dim: (N-1)(1-F)^(N-2)."""
    if n_dim < 2:
        raise DomainError(f"Haar fidelity pdf needs dimension >= 2, got {n_dim}")
    f = np.asarray(f, dtype=np.float64)
    out = (n_dim - 1) * (1.0 - f) ** (n_dim - 2)
    return float(out) if out.ndim == 0 else out


def haar_bin_probs(n_dim: int, n_bins: int) -> np.ndarray:
    """Exact Haar probability mass per uniform bin, via CDF differences:
    q_b = (1-lo)^(N-1) - (1-hi)^(N-1)."""
    if n_dim < 2:
        raise DomainError(f"Haar bin masses need dimension >= 2, got {n_dim}")
    if n_bins < 1:
        raise DomainError(f"n_bins must be >= 1, got {n_bins}")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    upper_tail = (1.0 - edges) ** (n_dim - 1)
    return upper_tail[:-1] - upper_tail[1:]


def histogram_fidelities(fidelities, n_bins: int = DEFAULT_BINS) -> FidelityHistogram:
    """Bin fidelity samples on [0, 1]; values are clipped against 1-ulp
    numerical overshoot."""
    fidelities = np.asarray(fidelities, dtype=np.float64)
    if fidelities.size == 0:
        raise DomainError("cannot histogram an empty fidelity sample")
    if n_bins < 1:
        raise DomainError(f"n_bins must be >= 1, got {n_bins}")
    clipped = np.clip(fidelities, 0.0, 1.0)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    counts, _ = np.histogram(clipped, bins=edges)
    return FidelityHistogram(n_bins, counts, int(fidelities.size), edges)


def sample_fidelities(cfg: AnsatzConfig, n_pairs: int, seed: int) -> np.ndarray:
    """Fidelities of n_pairs independently drawn parameter pairs, both run on
    the fixed input |0...0>. Sub-seeds derive deterministically from `seed`."""
    if n_pairs < 1:
        raise DomainError(f"n_pairs must be >= 1, got {n_pairs}")
    sub = np.random.SeedSequence(seed).generate_state(2 * n_pairs)
    thetas = np.stack([init_params(cfg, int(s)).angles for s in sub[0::2]])
    phis = np.stack([init_params(cfg, int(s)).angles for s in sub[1::2]])
    a = run_ansatz_batch(cfg, thetas)
    b = run_ansatz_batch(cfg, phis)
    overlaps = np.einsum("ij,ij->i", a.conj(), b)
    return np.abs(overlaps) ** 2


def kl_expressivity(hist: FidelityHistogram, n_dim: int) -> float:
    """KL divergence of the sampled fidelity distribution from the Haar
    baseline, summed over occupied bins; empty Haar bins are floored at
    1e-300 rather than dropped."""
    if hist.n_samples < 1:
        raise DomainError("empty fidelity histogram")
    p_hat = hist.counts / hist.n_samples
    q = np.maximum(haar_bin_probs(n_dim, hist.n_bins), _Q_FLOOR)
    mask = p_hat > 0
    return float(np.sum(p_hat[mask] * np.log(p_hat[mask] / q[mask])))


def frame_potential(fidelities, t: int) -> float:
    """t-th moment of the fidelity samples."""
    if t < 1:
        raise DomainError(f"frame potential order must be >= 1, got {t}")
    fidelities = np.asarray(fidelities, dtype=np.float64)
    if fidelities.size == 0:
        raise DomainError("frame potential of an empty sample")
    return float(np.mean(fidelities**t))


def analyze(
    cfg: AnsatzConfig,
    n_pairs: int,
    n_bins: int = DEFAULT_BINS,
    seed: int = 0,
) -> tuple[ExpressivityReport, np.ndarray]:
    """Sample, histogram, and score one ansatz; returns the report plus the
    raw fidelity samples."""
    n_dim = 1 << cfg.n_qubits
    fids = sample_fidelities(cfg, n_pairs, seed)
    hist = histogram_fidelities(fids, n_bins)
    report = ExpressivityReport(
        expr_kl=kl_expressivity(hist, n_dim),
        expr_max=(n_dim - 1) * float(np.log(n_bins)),
        frame_potentials={1: frame_potential(fids, 1), 2: frame_potential(fids, 2)},
        hilbert_dim=n_dim,
    )
    return report, fids


def format_report(
    report: ExpressivityReport,
    cfg: AnsatzConfig,
    n_pairs: int,
    n_bins: int,
    seed: int,
) -> str:
    lines = [
        "# ansatz expressivity report",
        "schema_version = 1",
        f"n_qubits = {cfg.n_qubits}",
        f"n_layers = {cfg.n_layers}",
        f"entangle_pattern = {cfg.entangle_pattern}",
        f"hilbert_dim = {report.hilbert_dim}",
        f"n_pairs = {n_pairs}",
        f"n_bins = {n_bins}",
        f"seed = {seed}",
        f"expr_kl = {report.expr_kl:.12g}",
        f"expr_max = {report.expr_max:.12g}",
        f"frame_potential_1 = {report.frame_potentials[1]:.12g}",
        f"frame_potential_2 = {report.frame_potentials[2]:.12g}",
    ]
    return "\n".join(lines) + "\n"


def write_report(
    path,
    report: ExpressivityReport,
    cfg: AnsatzConfig,
    n_pairs: int,
    n_bins: int,
    seed: int,
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_report(report, cfg, n_pairs, n_bins, seed))


def write_fidelities_csv(path, fidelities) -> None:
    fidelities = np.asarray(fidelities, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("fidelity\n")
        for f in fidelities:
            fh.write(f"{f:.17g}\n")
