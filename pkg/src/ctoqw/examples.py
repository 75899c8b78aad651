"""Built-in example models used by the CLI and the test suite.

Three walks with known closed-form limit behaviour:

1. a symmetric qubit walk on Z with d0 = -I/2 (zero drift),
2. a biased qubit walk on Z with diagonal d0 (drift -1/10),
3. a qubit walk on Z^2 (drift (-1/22, -5/22)).

``classical_model`` builds the n=1 walk on Z whose position is a plain
birth-death chain with rates (lam, mu); it is the standard sanity oracle.
"""
from __future__ import annotations

import math

import numpy as np

from .model import WalkModel, build_model, model_from_d0

__all__ = ["builtin_model", "classical_model", "BUILTIN_INDICES"]

BUILTIN_INDICES = (1, 2, 3)


def builtin_model(index: int) -> WalkModel:
    if index == 1:
        s = 1.0 / math.sqrt(3.0)
        return model_from_d0(
            1,
            -0.5 * np.eye(2),
            [
                s * np.array([[1.0, 1.0], [0.0, 1.0]]),
                s * np.array([[1.0, 0.0], [-1.0, 1.0]]),
            ],
        )
    if index == 2:
        return model_from_d0(
            1,
            np.diag([-3.0 / 8.0, -1.0 / 4.0]),
            [
                np.array([[0.0, 0.5], [0.5, 0.0]]),
                np.array([[0.0, 0.5], [1.0 / math.sqrt(2.0), 0.0]]),
            ],
        )
    if index == 3:
        s6 = 1.0 / math.sqrt(6.0)
        return model_from_d0(
            2,
            np.diag([-1.0 / 2.0, -3.0 / 8.0]),
            [
                s6 * np.array([[1.0, 1.0], [0.0, 1.0]]),
                (1.0 / (2.0 * math.sqrt(2.0))) * np.array([[0.0, 1.0], [0.0, 1.0]]),
                s6 * np.array([[1.0, 0.0], [-1.0, 1.0]]),
                (1.0 / math.sqrt(2.0)) * np.array([[1.0, 0.0], [0.0, 0.0]]),
            ],
        )
    raise ValueError(f"unknown example index {index}; available: {BUILTIN_INDICES}")


def classical_model(lam: float, mu: float) -> WalkModel:
    """n=1 walk on Z jumping right at rate lam and left at rate mu."""
    if lam < 0 or mu < 0:
        raise ValueError("rates must be nonnegative")
    return build_model(
        1,
        np.zeros((1, 1)),
        [np.array([[math.sqrt(lam)]]), np.array([[math.sqrt(mu)]])],
    )
