"""Two-photon polarization statistics of a noisy phi+ pair.

Linear-polarization analyzers at angles ``a`` (Alice) and ``b`` (Bob) give
correlations ``E = Vz cos2a' cos2b + Vx sin2a' sin2b`` with ``a' = a - rotation``.
The isotropic (Werner) case has ``Vz = Vx = V`` and reduces to
``E = V cos 2(a - b - rotation)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Analyzer angles of the asymmetric Ekert scheme (radians).
A_KEY = 0.0
A_0 = math.pi / 8
A_1 = -math.pi / 8
B_0 = 0.0
B_1 = math.pi / 4


def wrap_angle(theta):
    """Map an angle onto [0, pi); polarization analyzers are pi-periodic."""
    return np.mod(theta, math.pi)


@dataclass(frozen=True)
class BasisAngle:
    angle: float

    def __post_init__(self):
        object.__setattr__(self, "angle", float(wrap_angle(self.angle)))


@dataclass(frozen=True)
class PairState:
    """Bell-diagonal pair close to phi+.

    ``visibility`` is the isotropic contrast. ``visibility_x`` switches on the
    anisotropic mode, where the H/V contrast is ``visibility`` and the
    diagonal contrast is ``visibility_x``.
    """

    visibility: float = 1.0
    rotation_offset: float = 0.0
    visibility_x: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError(f"visibility must lie in [0, 1], got {self.visibility}")
        if self.visibility_x is not None:
            vx, vz = self.visibility_x, self.visibility
            if not 0.0 <= vx <= 1.0:
                raise ValueError(f"visibility_x must lie in [0, 1], got {vx}")
            # Bell-diagonal weights with correlation tensor diag(vx, -vx, vz)
            if min(1 - vz, 1 + vz - 2 * vx) < -1e-12:
                raise ValueError(f"(visibility={vz}, visibility_x={vx}) is not a physical state")
        object.__setattr__(self, "rotation_offset", float(wrap_angle(self.rotation_offset)))

    @property
    def vz(self) -> float:
        return self.visibility

    @property
    def vx(self) -> float:
        return self.visibility if self.visibility_x is None else self.visibility_x

    @property
    def isotropic(self) -> bool:
        return self.visibility_x is None

    def with_rotation(self, rotation: float) -> "PairState":
        return PairState(self.visibility, rotation, self.visibility_x)


def _angle(x):
    return x.angle if isinstance(x, BasisAngle) else x


def correlation(state: PairState, a, b, rotation=None):
    """Correlation coefficient E(a, b); array-valued when the angles are arrays.

    ``rotation`` overrides ``state.rotation_offset`` (e.g. a per-photon array).
    """
    rot = state.rotation_offset if rotation is None else rotation
    a_eff = np.asarray(_angle(a), dtype=float) - rot
    b = np.asarray(_angle(b), dtype=float)
    if state.isotropic:
        e = state.visibility * np.cos(2 * (a_eff - b))
    else:
        e = state.vz * np.cos(2 * a_eff) * np.cos(2 * b) + state.vx * np.sin(2 * a_eff) * np.sin(2 * b)
    return float(e) if np.ndim(e) == 0 else e


def joint_probability(state: PairState, a, b, sa: int, sb: int) -> float:
    """P(sa, sb) = (1 + sa*sb*E) / 4; outcomes are +1/-1."""
    if sa not in (1, -1) or sb not in (1, -1):
        raise ValueError("outcomes must be +1 or -1")
    return 0.25 * (1.0 + sa * sb * correlation(state, a, b))


def sample_outcomes(state: PairState, a, b, rng: np.random.Generator, rotation=None):
    """Draw (alice, bob) outcomes in {+1, -1}.

    Scalars in, scalars out; arrays broadcast to per-pair draws. Alice's
    outcome is a fair coin and Bob agrees with probability (1 + E) / 2, which
    reproduces the joint distribution exactly.
    """
    return sample_from_correlation(correlation(state, a, b, rotation), rng)


def sample_from_correlation(e, rng: np.random.Generator):
    """Outcome pairs with the given correlation coefficient(s) and unbiased marginals."""
    e = np.asarray(e, dtype=np.float64)
    shape = e.shape
    alice = np.where(rng.random(shape) < 0.5, 1, -1).astype(np.int8)
    agree = rng.random(shape) < 0.5 * (1.0 + e)
    bob = np.where(agree, alice, -alice).astype(np.int8)
    if shape == ():
        return int(alice), int(bob)
    return alice, bob


def visibility_from_fidelity(fidelity: float) -> float:
    """Werner relation F = (1 + 3V) / 4, inverted."""
    if not 0.25 <= fidelity <= 1.0:
        raise ValueError(f"fidelity must lie in [0.25, 1], got {fidelity}")
    return (4.0 * fidelity - 1.0) / 3.0


def fidelity_from_visibility(visibility: float) -> float:
    return (1.0 + 3.0 * visibility) / 4.0


def chsh_value(state: PairState) -> float:
    """Analytic S for the scheme's monitoring angles."""
    e = lambda a, b: correlation(state, a, b)  # noqa: E731
    return e(A_0, B_0) + e(A_0, B_1) + e(A_1, B_0) - e(A_1, B_1)


def anisotropic_for_targets(qber: float, s_value: float) -> PairState:
    """State whose key-basis QBER and CHSH value hit the given targets.

    With the scheme's angles, QBER = (1 - Vz)/2 and S = sqrt(2) (Vz + Vx).
    """
    vz = 1.0 - 2.0 * qber
    vx = s_value / math.sqrt(2.0) - vz
    return PairState(visibility=vz, visibility_x=vx)
