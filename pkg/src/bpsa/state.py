"""Population state of the two-type process and its embedded-chain update.

A state is the tuple ``(cx, cy, ax, ay)``: current (alive) and total
(ever produced, net of attacks) counts of each type.  Events are deaths;
the dying individual's type receives ``gamma_own`` offspring and the other
type changes by ``gamma_cross`` (negative values are attacks).
"""

from __future__ import annotations

from enum import IntEnum
from typing import NamedTuple

from .errors import ExtinctStateError, LawContractError, UndefinedProportionError

_COUNT_LIMIT = 2**63 - 1


class Dying(IntEnum):
    """Type of the individual dying at an epoch; the int value is the H indicator."""

    Y = 0
    X = 1


class PopulationState(NamedTuple):
    cx: int
    cy: int
    ax: int
    ay: int

    @property
    def s_c(self) -> int:
        return self.cx + self.cy

    @property
    def s_a(self) -> int:
        return self.ax + self.ay

    @classmethod
    def initial(cls, cx0: int, cy0: int) -> "PopulationState":
        return cls(int(cx0), int(cy0), int(cx0), int(cy0))


class OffspringSample(NamedTuple):
    gamma_own: int
    gamma_cross: int


class ProportionVector(NamedTuple):
    """Scaled counts ``(psi_c, theta_c, psi_a, theta_a)``."""

    psi_c: float
    theta_c: float
    psi_a: float
    theta_a: float

    @property
    def beta_c(self) -> float:
        if self.psi_c <= 0:
            raise UndefinedProportionError("current proportion undefined: psi_c = 0")
        return self.theta_c / self.psi_c

    @property
    def beta_a(self) -> float:
        if self.psi_a <= 0:
            raise UndefinedProportionError("total proportion undefined: psi_a = 0")
        return self.theta_a / self.psi_a


def apply_event(state: PopulationState, dying: Dying,
                sample: OffspringSample) -> PopulationState:
    """Return the state after one death with the given offspring sample.

    Raises ExtinctStateError if no individual of the dying type is alive and
    LawContractError if the sample would drive any count negative.
    """
    cx, cy, ax, ay = state
    own, cross = sample
    if dying == Dying.X:
        if cx < 1:
            raise ExtinctStateError(f"no x-type individual alive in {tuple(state)}")
        new = (cx + own - 1, cy + cross, ax + own, ay + cross)
    else:
        if cy < 1:
            raise ExtinctStateError(f"no y-type individual alive in {tuple(state)}")
        new = (cx + cross, cy + own - 1, ax + cross, ay + own)
    if min(new) < 0:
        raise LawContractError(
            f"sample {tuple(sample)} for dying {dying.name} makes {tuple(state)} negative: {new}")
    if max(new) > _COUNT_LIMIT:
        raise OverflowError(f"population count overflow: {new}")
    return PopulationState(*new)


def is_extinct(state: PopulationState) -> bool:
    return state.cx + state.cy == 0


def exact_proportions(state: PopulationState, n: int) -> ProportionVector:
    """Counts scaled by the epoch index: ``(S^c/n, C^x/n, S^a/n, A^x/n)``."""
    if n < 1:
        raise ValueError(f"epoch index must be >= 1, got {n}")
    cx, cy, ax, ay = state
    return ProportionVector((cx + cy) / n, cx / n, (ax + ay) / n, ax / n)
