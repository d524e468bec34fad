"""Model parameters and regularity thresholds.

PhysParams bundles the constants that appear in every kernel formula:
the cross-section amplitude ``B0``, the collision exponent ``gamma``,
the Gaussian and polynomial weight exponents ``alpha`` and ``beta``, and
the envelope slack ``delta`` used by the estimate checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .errors import (AlphaOutOfRange, B0OutOfRange, BetaOutOfRange,
                     DeltaOutOfRange, EpsilonOutOfRange, GammaOutOfRange)

DEFAULT_EPSILON = 0.05


def default_delta(alpha: float) -> float:
    """Default envelope slack, half of the largest admissible value 1/2 - alpha."""
    return 0.5 * (0.5 - alpha)


@dataclass(frozen=True)
class PhysParams:
    """Physical constants of the linearized problem.

    ``delta=None`` selects :func:`default_delta`.
    """

    B0: float = 1.0
    gamma: float = 0.0
    alpha: float = 0.0
    beta: float = 2.0
    delta: float | None = field(default=None)

    def __post_init__(self):
        if self.delta is None:
            object.__setattr__(self, "delta", default_delta(self.alpha))

    def with_(self, **changes) -> "PhysParams":
        """Copy with fields replaced; ``delta`` is re-derived unless given."""
        if "alpha" in changes and "delta" not in changes:
            changes["delta"] = None
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return {"B0": self.B0, "gamma": self.gamma, "alpha": self.alpha,
                "beta": self.beta, "delta": self.delta}


def validate(params: PhysParams) -> PhysParams:
    """Return ``params`` unchanged if every invariant holds, else raise.

    Checks are ordered so that the collision exponent is reported first.
    """
    g, a, b = params.gamma, params.alpha, params.beta
    for name, err in _FIELD_ERRORS.items():
        if not math.isfinite(getattr(params, name)):
            raise err(f"{name} must be finite")
    if not (-3.0 < g <= 1.0):
        raise GammaOutOfRange(f"gamma={g} outside (-3, 1]")
    if not (0.0 <= a < 0.5):
        raise AlphaOutOfRange(f"alpha={a} outside [0, 1/2)")
    if not (b > (3.0 + g) / 2.0):
        raise BetaOutOfRange(f"beta={b} must exceed (3+gamma)/2={(3 + g) / 2}")
    if not (params.B0 > 0.0):
        raise B0OutOfRange(f"B0={params.B0} must be positive")
    if not (0.0 < params.delta < 1.0):
        raise DeltaOutOfRange(f"delta={params.delta} outside (0, 1)")
    return params


_FIELD_ERRORS = {"gamma": GammaOutOfRange, "alpha": AlphaOutOfRange,
                 "beta": BetaOutOfRange, "B0": B0OutOfRange,
                 "delta": DeltaOutOfRange}


@dataclass(frozen=True)
class RegularityThresholds:
    s_gamma: float
    s2_gamma: float
    s3_gamma: float
    epsilon: float


def thresholds(gamma: float, epsilon: float = DEFAULT_EPSILON) -> RegularityThresholds:
    """Spatial regularity ceiling and the averaging/smoothing gains.

    >>> thresholds(-2.5).s_gamma
    0.75
    """
    if not (-3.0 < gamma <= 1.0):
        raise GammaOutOfRange(f"gamma={gamma} outside (-3, 1]")
    if not (0.0 < epsilon < 0.5):
        raise EpsilonOutOfRange(f"epsilon={epsilon} outside (0, 1/2)")
    if gamma >= -2.0:
        s = 1.0
    else:
        s = (4.0 + gamma) / 2.0
    if gamma > -2.0:
        s2 = 0.5
        s3 = 1.0
    elif gamma == -2.0:
        s2 = 0.5 - epsilon
        s3 = 0.5 - epsilon
    else:
        s2 = (3.0 + gamma) / 2.0
        s3 = (3.0 + gamma) / 2.0 - epsilon
    return RegularityThresholds(s_gamma=s, s2_gamma=s2, s3_gamma=s3, epsilon=epsilon)


def weighted_alphas(alpha: float, delta: float | None = None) -> tuple[float, float]:
    """Constants (alpha_1, alpha_2) of the weighted-kernel envelope.

    With ``delta=None`` the proof's choice delta = 1/2 - alpha is used.
    """
    if delta is None:
        delta = 0.5 - alpha
    a1 = (1 - delta + 2 * alpha) * (1 - delta - 2 * alpha) / (4 * (1 - delta))
    a2 = (1 - delta - 2 * alpha) / (2 * (1 - delta))
    return a1, a2
