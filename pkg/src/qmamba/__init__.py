"""Hybrid quantum-classical selective state-space sequence classifier.

Subpackages:
    qsim          exact statevector simulation with adjoint gradients
    ansatz        entangling circuit templates and the quantum projector
    expressivity  Haar-baseline fidelity analysis of ansaetze
    autodiff      minimal reverse-mode AD over dense float64 tensors
    mamba         selective scan, gated blocks, the classifier model
    data          IDX ingestion, synthetic tasks, deterministic batching
    optim         parameter-grouped AdamW
    train         training/eval loops, config files, metrics
    cli           command-line entry points
"""

__version__ = "0.1.0"

from . import ansatz, autodiff, data, expressivity, gradcheck, mamba, optim, qsim, train

__all__ = [
    "ansatz",
    "autodiff",
    "data",
    "expressivity",
    "gradcheck",
    "mamba",
    "optim",
    "qsim",
    "train",
    "__version__",
]
