"""Hysteretic insulator-metal-transition (IMT) device model.

An IMT device is a two-terminal element that switches abruptly between an
insulating state (conductance ``g_di``, usually idealized to 0) and a
metallic state (conductance ``g_dm``) depending on the voltage across it.
Switching is hysteretic: above ``v_h`` the device is forced metallic, below
``v_l`` it is forced insulating, and in between it keeps whatever state it
was in. All voltages are normalized to the supply rail, so thresholds live
in (0, 1).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass


class ConductionState(enum.IntEnum):
    """Binary device state. Encoding: 0 = metallic, 1 = insulating."""

    METALLIC = 0
    INSULATING = 1


@dataclass(frozen=True)
class DeviceParams:
    """Parameters of one IMT device.

    Attributes:
        v_l: lower threshold (switch to insulating at or below), normalized.
        v_h: upper threshold (switch to metallic at or above), normalized.
        g_dm: metallic-state conductance.
        g_di: insulating-state conductance (default 0, the usual idealization).
        c_int: internal device capacitance; contributes to the node it hangs on.
    """

    v_l: float
    v_h: float
    g_dm: float
    g_di: float = 0.0
    c_int: float = 1.0

    def __post_init__(self) -> None:
        if not (0.0 < self.v_l < self.v_h < 1.0):
            raise ValueError(
                f"thresholds must satisfy 0 < v_l < v_h < 1, got v_l={self.v_l}, v_h={self.v_h}"
            )
        if not (self.g_dm > self.g_di >= 0.0):
            raise ValueError(
                f"conductances must satisfy g_dm > g_di >= 0, got g_dm={self.g_dm}, g_di={self.g_di}"
            )
        if not self.c_int > 0.0:
            raise ValueError(f"c_int must be positive, got {self.c_int}")


def next_state(dev: DeviceParams, s: ConductionState, v_dev: float) -> ConductionState:
    """Hysteretic state-transition rule.

    Comparisons are inclusive so that a state located exactly on a threshold
    by event detection switches deterministically.
    """
    if v_dev >= dev.v_h:
        return ConductionState.METALLIC
    if v_dev <= dev.v_l:
        return ConductionState.INSULATING
    return s


def conductance(dev: DeviceParams, s: ConductionState) -> float:
    """Conductance of the device in state ``s``."""
    return dev.g_dm if s == ConductionState.METALLIC else dev.g_di
