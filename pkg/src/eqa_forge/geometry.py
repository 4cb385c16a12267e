"""Axis-aligned geometric primitives shared across the package.

World frame: x/y horizontal, z up, units in meters. An axis-aligned
rectangle is a plane patch whose normal is one coordinate axis; its
extent lives on the other two axes, called (u, v) in ascending axis
order. Example: axis=2 (a floor) has u=x, v=y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# (u_axis, v_axis) for each normal axis
AXIS_UV = ((1, 2), (0, 2), (0, 1))


@dataclass(frozen=True)
class Rect3:
    """Axis-aligned rectangle: {p | p[axis] == offset, p[u,v] in bounds}."""

    axis: int
    offset: float
    u_lo: float
    u_hi: float
    v_lo: float
    v_hi: float

    def area(self) -> float:
        return (self.u_hi - self.u_lo) * (self.v_hi - self.v_lo)

    def corners(self) -> np.ndarray:
        """4x3 corner array, CCW in the (u, v) plane."""
        ua, va = AXIS_UV[self.axis]
        out = np.empty((4, 3), dtype=np.float64)
        out[:, self.axis] = self.offset
        out[:, ua] = (self.u_lo, self.u_hi, self.u_hi, self.u_lo)
        out[:, va] = (self.v_lo, self.v_lo, self.v_hi, self.v_hi)
        return out


@dataclass(frozen=True)
class Box3:
    """Closed axis-aligned box [lo, hi] in 3D."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def faces(self) -> list[Rect3]:
        """The six boundary rectangles."""
        out = []
        for axis in range(3):
            ua, va = AXIS_UV[axis]
            for offset in (self.lo[axis], self.hi[axis]):
                out.append(
                    Rect3(axis, offset, self.lo[ua], self.hi[ua], self.lo[va], self.hi[va])
                )
        return out

    def center(self) -> tuple[float, float, float]:
        return (
            0.5 * (self.lo[0] + self.hi[0]),
            0.5 * (self.lo[1] + self.hi[1]),
            0.5 * (self.lo[2] + self.hi[2]),
        )

    def footprint(self) -> tuple[float, float, float, float]:
        """(x_lo, y_lo, x_hi, y_hi) projection onto the ground plane."""
        return (self.lo[0], self.lo[1], self.hi[0], self.hi[1])


def pack_rects(rects: list[Rect3]) -> tuple[np.ndarray, np.ndarray]:
    """Pack rectangles into the flat arrays the kernels consume.

    Returns (axes, params): axes is (K,) int32, params is (K, 5) float64
    rows of [offset, u_lo, u_hi, v_lo, v_hi].
    """
    k = len(rects)
    axes = np.empty(k, dtype=np.int32)
    params = np.empty((k, 5), dtype=np.float64)
    for i, r in enumerate(rects):
        axes[i] = r.axis
        params[i] = (r.offset, r.u_lo, r.u_hi, r.v_lo, r.v_hi)
    return axes, params


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a > math.pi:
        a -= 2.0 * math.pi
    elif a <= -math.pi:
        a += 2.0 * math.pi
    return a


def wrap_heading(a: float) -> float:
    """Wrap to [0, 2*pi)."""
    a = math.fmod(a, 2.0 * math.pi)
    if a < 0.0:
        a += 2.0 * math.pi
    # -tiny + 2*pi rounds to exactly 2*pi; keep the interval half-open
    return 0.0 if a >= 2.0 * math.pi else a
