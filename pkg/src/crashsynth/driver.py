"""Follower driver behavior: car-following, visual looming, brake response.

The follower is driven by a car-following model for ordinary accelerating
behavior, a looming-evidence brake trigger for crash-relevant braking, and
an optional "abnormal acceleration" mode in which a stationary follower
launches at a fixed acceleration while ignoring the lead vehicle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

# Car-following defaults.
IDM_A_MAX = 3.0    # maximum acceleration, m/s^2
IDM_B_COMF = 4.0   # comfortable deceleration, m/s^2
IDM_C = 0.4        # speed-dependent spacing gain, s^2/m scaled
IDM_D0 = 2.0       # standstill gap, m
IDM_EXPONENT = 4   # free-flow exponent

# Brake-response defaults.
BRAKE_GAIN = 80.0          # accumulator gain K, 1/(rad/s)/s scaled
BRAKE_LEAK = 0.01          # evidence leak lambda, 1/s scaled
BRAKE_THRESHOLD = 1.0      # accumulated-evidence trigger A_thr
BRAKE_OFFROAD_SHARE = 0.2  # gamma: perceptual gain while eyes are off-road
BRAKE_JERK = 15.0          # ramp-in jerk toward the brake floor, m/s^3
VEHICLE_WIDTH = 1.8        # lead width for the looming geometry, m

# Abnormal-launch acceleration.
ABNORMAL_ACCEL = 1.8  # m/s^2

# Off-road glance trigger: inverse time-to-collision threshold.
TTC_INV_ANCHOR = 0.2  # 1/s


@dataclass(frozen=True)
class IdmParams:
    a_max: float = IDM_A_MAX
    b_comf: float = IDM_B_COMF
    c: float = IDM_C
    d_0: float = IDM_D0
    v_0: float = 13.9     # desired speed (road speed limit), m/s
    headway: float = 1.5  # desired time headway T, s


@dataclass(frozen=True)
class BrakeParams:
    gain: float = BRAKE_GAIN
    leak: float = BRAKE_LEAK
    threshold: float = BRAKE_THRESHOLD
    offroad_share: float = BRAKE_OFFROAD_SHARE
    jerk: float = BRAKE_JERK
    width: float = VEHICLE_WIDTH


@dataclass(frozen=True)
class GlanceSchedule:
    """A single off-road glance of duration t_glance, opened when the
    conflict first crosses the inverse-TTC anchor."""

    t_glance: float = 0.0
    anchored: bool = True


@dataclass(frozen=True)
class FollowerState:
    """Per-simulation follower state, including Eq.-style transients:
    the accumulated brake evidence, the latched braking flag, the current
    brake-ramp acceleration and the last commanded acceleration."""

    x: float = 0.0
    v: float = 0.0
    accum: float = 0.0
    braking: bool = False
    a_brake: float = 0.0
    a_cmd: float = 0.0


def idm_accel(p: IdmParams, v: float, dv: float, d: float) -> float:
    """Car-following acceleration.

    dv is the lead speed minus the follower speed (positive when the gap is
    opening). The desired gap is floored at the standstill gap d_0.
    """
    if d <= 0:
        raise ValueError(f"gap must be > 0, got {d}")
    d_star = (
        p.d_0
        + v * p.headway
        + p.c * v * v / p.b_comf
        - v * dv / (2.0 * math.sqrt(p.a_max * p.b_comf))
    )
    if d_star < p.d_0:
        d_star = p.d_0
    ratio = d_star / d
    return p.a_max * (1.0 - (v / p.v_0) ** IDM_EXPONENT - ratio * ratio)


def looming(d: float, d_dot: float, width: float = VEHICLE_WIDTH) -> tuple[float, float]:
    """Optical size and expansion rate of the lead vehicle.

    Returns (theta, theta_dot): the visual angle subtended by a lead of the
    given width at gap d, and its time derivative for gap rate d_dot
    (negative d_dot = closing = positive expansion).
    """
    if d <= 0:
        raise ValueError(f"gap must be > 0, got {d}")
    theta = 2.0 * math.atan(width / (2.0 * d))
    theta_dot = -width * d_dot / (d * d + width * width / 4.0)
    return theta, theta_dot


def glance_signal(g: GlanceSchedule, t_anchor: float, t: float) -> bool:
    """True while the driver's eyes are on the road at time t.

    The single off-road glance covers [t_anchor, t_anchor + t_glance).
    """
    if not g.anchored or g.t_glance <= 0.0 or math.isinf(t_anchor):
        return True
    return not (t_anchor <= t < t_anchor + g.t_glance)


def brake_response_step(
    p: BrakeParams,
    s: FollowerState,
    loom: float,
    loom_pred: float,
    on_road: bool,
    a_f_min: float,
    dt: float,
) -> tuple[FollowerState, float]:
    """Advance the looming-evidence accumulator one tick.

    Evidence is the positive part of the looming prediction error, scaled
    by the off-road perception share when the eyes are off the road, minus
    a constant leak. Once the accumulated evidence crosses the threshold,
    braking latches and the brake acceleration ramps from 0 toward a_f_min
    at the configured jerk and holds there. The returned acceleration is
    never positive.
    """
    if a_f_min > 0.0:
        a_f_min = 0.0  # brake floor cannot command acceleration
    eps = loom - loom_pred
    if eps < 0.0:
        eps = 0.0
    gain_share = 1.0 if on_road else p.offroad_share
    accum = s.accum + p.gain * (gain_share * eps - p.leak) * dt
    if accum < 0.0:
        accum = 0.0
    braking = s.braking or accum >= p.threshold
    a_brake = s.a_brake
    if braking:
        a_brake = max(a_f_min, a_brake - p.jerk * dt)
    return replace(s, accum=accum, braking=braking, a_brake=a_brake), a_brake


def combined_accel(
    idm: IdmParams,
    t_abnormal: float,
    abnormal_accel: float,
    v: float,
    dv: float,
    d: float,
    a_brake: float,
    t: float,
) -> float:
    """Merge the behavior modes into one commanded acceleration at time t
    (simulation clock; the nominal impact sits at t = 5 s).

    Before an abnormal onset the follower holds still; after it, it
    accelerates at the fixed abnormal rate ignoring the lead. Without
    abnormal behavior the brake output wins whenever it is active, and the
    car-following model contributes only its non-negative part.
    """
    if t_abnormal < 5.0:
        if t < t_abnormal:
            return 0.0
        return abnormal_accel
    if a_brake == 0.0:
        return max(idm_accel(idm, v, dv, d), 0.0)
    return a_brake
