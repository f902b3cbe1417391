"""Per-unit base quantities shared across the library."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class SystemBase:
    """Nominal frequency and power base of one study.

    Every electrical quantity in the library is per-unit on
    ``s_base_mva``; the power base is carried only so reports can be
    converted back to engineering units.
    """

    f0_hz: float = 50.0
    s_base_mva: float = 100.0

    def __post_init__(self) -> None:
        if self.f0_hz <= 0.0:
            raise ValueError(f"nominal frequency must be positive, got {self.f0_hz}")
        if self.s_base_mva <= 0.0:
            raise ValueError(f"power base must be positive, got {self.s_base_mva}")

    @property
    def omega0(self) -> float:
        """Nominal angular frequency in rad/s."""
        return 2.0 * math.pi * self.f0_hz
