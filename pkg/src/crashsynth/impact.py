"""Collinear rear-end impact mechanics.

Speed changes follow momentum conservation for a two-body collinear impact
with a speed-dependent restitution coefficient fitted to crash-test data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

# Restitution polynomial coefficients in log10(closing speed).
RESTITUTION_COEFFS = (0.47477, -0.26139, 0.03382, -0.1139)


@dataclass(frozen=True)
class ImpactResult:
    dv_pre: float  # pre-impact closing speed, m/s
    e: float       # restitution coefficient
    dv_f: float    # follower speed change, m/s (<= 0)
    dv_l: float    # lead speed change, m/s (>= 0)


def restitution(dv_pre: float) -> float:
    """Restitution coefficient for a closing speed in m/s, clamped to [0, 1].

    Cubic in log10 of the closing speed; exactly 0.47477 at 1 m/s.
    """
    if dv_pre <= 0:
        raise ValueError(f"closing speed must be > 0, got {dv_pre}")
    x = math.log10(dv_pre)
    c0, c1, c2, c3 = RESTITUTION_COEFFS
    e = c0 + c1 * x + c2 * x * x + c3 * x * x * x
    return min(1.0, max(0.0, e))


def transform_delta_v(dv_f: float, rho: float) -> float:
    """Lead-vehicle speed change implied by the follower's speed change and
    the striking/struck mass ratio rho = m_f / m_l."""
    if rho <= 0:
        raise ValueError(f"mass ratio must be > 0, got {rho}")
    return -rho * dv_f


def collinear_impact(v_f: float, v_l: float, rho: float) -> ImpactResult:
    """Speed changes of both vehicles for a collinear impact.

    v_f and v_l are the speeds at the moment of contact; the follower must
    be closing (v_f > v_l). rho is the striking/struck mass ratio.
    """
    if rho <= 0:
        raise ValueError(f"mass ratio must be > 0, got {rho}")
    dv_pre = v_f - v_l
    if dv_pre <= 0:
        raise ValueError(f"impact requires closing speed > 0, got {dv_pre}")
    e = restitution(dv_pre)
    dv_f = -(1.0 + e) / (1.0 + rho) * dv_pre
    dv_l = (1.0 + e) * rho / (1.0 + rho) * dv_pre
    return ImpactResult(dv_pre=dv_pre, e=e, dv_f=dv_f, dv_l=dv_l)
