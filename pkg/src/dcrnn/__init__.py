"""Recurrent networks with learnable skip coefficients and eigenvalue-placement regularization.

Modules: ``linalg`` (dense eigensolver), ``dynsys`` (Lorenz and copy data),
``net`` (DCRNN, RNN and LSTM cells), ``grad`` (backprop through time),
``stability`` (linearized system and spectral penalty), ``train`` and
``harness`` (experiments, checkpoints, CLI).
"""
__version__ = "0.1.0"
