"""Piecewise-linear fitting of pre-crash speed series.

A speed series sampled on the impact clock (impact at t = 0) is fitted with
up to three contiguous segments, forward in time: an optional sloped
segment (accel a_2), an optional sloped segment (accel a_1), and an
optional terminal steady segment (slope 0, level v_c). The final fitted
segment is extrapolated to t = 0, so v_c estimates the speed at impact and
the segment durations cover the whole span back from impact.

Breakpoints are searched exhaustively over sample times; every candidate is
an exact least-squares fit, and the variant with the highest adjusted R^2
wins (ties go to the simpler model).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import SpeedProfile

# Search-time floor on observed segment duration.
MIN_SEGMENT = 0.2  # s
# A final fitted slope smaller than this is reported as a steady segment.
STEADY_SNAP = 0.05  # m/s^2
# Model variants, in order of increasing parameter count.
_VARIANTS = ("S", "1", "1S", "21", "21S")
_N_PARAMS = {"S": 1, "1": 2, "1S": 3, "21": 4, "21S": 5}


@dataclass(frozen=True)
class FitResult:
    profile: SpeedProfile
    n_b: int        # breakpoint count of the returned profile (0-2)
    r2_adj: float   # adjusted R^2 of the selected fit


def evaluate_profile(profile: SpeedProfile, t_rel: float) -> float:
    """Lead speed at simulation time t_rel for a profile anchored so that
    its end (the impact) falls at t_rel = 5 s.

    Before the profile span the speed holds at the initial profile speed;
    after t_rel = 5 s it holds at v_c. The result is clamped at 0.
    """
    u = t_rel - (5.0 - profile.duration)
    u = min(max(u, 0.0), profile.duration)
    v = (
        profile.v_l_init
        + profile.a_2 * min(u, profile.tau_2)
        + profile.a_1 * min(max(u - profile.tau_2, 0.0), profile.tau_1)
    )
    return max(0.0, v)


def profile_speed_grid(profile: SpeedProfile, t_rel: np.ndarray) -> np.ndarray:
    """Vectorized evaluate_profile over an array of simulation times."""
    u = np.clip(np.asarray(t_rel, dtype=float) - (5.0 - profile.duration), 0.0, profile.duration)
    v = (
        profile.v_l_init
        + profile.a_2 * np.minimum(u, profile.tau_2)
        + profile.a_1 * np.clip(u - profile.tau_2, 0.0, profile.tau_1)
    )
    return np.maximum(0.0, v)


def min_fitted_accel(profile: SpeedProfile) -> float:
    """Strongest (minimum) acceleration over segments with positive duration.

    A present steady segment contributes 0.
    """
    candidates = []
    if profile.tau_s > 0:
        candidates.append(0.0)
    if profile.tau_1 > 0:
        candidates.append(profile.a_1)
    if profile.tau_2 > 0:
        candidates.append(profile.a_2)
    if not candidates:
        raise ValueError("profile has no positive-duration segment")
    return min(candidates)


def _safe_div_det(det):
    # avoid divide-by-zero warnings; degenerate candidates get NaN and are
    # masked out by the caller's determinant check
    return np.where(det == 0.0, np.nan, det) if np.ndim(det) else (det or np.nan)


def _solve2(a11, a12, a22, b1, b2):
    det = a11 * a22 - a12 * a12
    safe = _safe_div_det(det)
    c1 = (b1 * a22 - a12 * b2) / safe
    c2 = (a11 * b2 - b1 * a12) / safe
    return c1, c2, det


def _solve3(a11, a12, a13, a22, a23, a33, b1, b2, b3):
    """Cramer's rule for symmetric 3x3 systems, elementwise over arrays."""
    det = (
        a11 * (a22 * a33 - a23 * a23)
        - a12 * (a12 * a33 - a23 * a13)
        + a13 * (a12 * a23 - a22 * a13)
    )
    d1 = (
        b1 * (a22 * a33 - a23 * a23)
        - a12 * (b2 * a33 - a23 * b3)
        + a13 * (b2 * a23 - a22 * b3)
    )
    d2 = (
        a11 * (b2 * a33 - a23 * b3)
        - b1 * (a12 * a33 - a23 * a13)
        + a13 * (a12 * b3 - b2 * a13)
    )
    d3 = (
        a11 * (a22 * b3 - b2 * a23)
        - a12 * (a12 * b3 - b2 * a13)
        + b1 * (a12 * a23 - a22 * a13)
    )
    safe = _safe_div_det(det)
    return d1 / safe, d2 / safe, d3 / safe, det


@dataclass
class _Candidate:
    variant: str
    sse: float
    coeffs: tuple
    cuts: tuple


def _prefix(x: np.ndarray) -> np.ndarray:
    return np.concatenate(([0.0], np.cumsum(x)))


def fit_piecewise(
    t: np.ndarray,
    v: np.ndarray,
    *,
    min_segment: float = MIN_SEGMENT,
    steady_snap: float = STEADY_SNAP,
) -> FitResult:
    """Fit a speed series with the best piecewise-linear profile.

    Expects >= 4 samples with strictly increasing t < 0 (impact clock) and
    finite speeds. Intended for vehicle speed traces; the returned profile
    is not re-validated against the non-negativity invariants, so callers
    fitting pathological series should validate before reusing it.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    if t.ndim != 1 or t.shape != v.shape:
        raise ValueError("t and v must be 1-D arrays of equal length")
    if t.size < 4:
        raise ValueError(f"need >= 4 samples, got {t.size}")
    if not np.all(np.diff(t) > 0):
        raise ValueError("t must be strictly increasing")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
        raise ValueError("t and v must be finite")
    if t[-1] > 0:
        raise ValueError("series must end at or before the impact (t <= 0)")

    n = t.size
    sum_v = float(np.sum(v))
    sum_vv = float(np.sum(v * v))
    sum_t = float(np.sum(t))
    sum_tt = float(np.sum(t * t))
    sum_tv = float(np.sum(t * v))
    mean_v = sum_v / n
    sst = sum_vv - n * mean_v * mean_v

    St, Stt = _prefix(t), _prefix(t * t)
    Sv, Stv = _prefix(v), _prefix(t * v)

    tol = min_segment - 1e-9
    candidates: list[_Candidate] = []

    # variant S: constant speed
    candidates.append(_Candidate("S", sst, (mean_v,), ()))

    # variant 1: single line v = alpha + m * t (alpha is the t=0 value)
    m, alpha, det = None, None, None
    a11, a12, a22 = float(n), sum_t, sum_tt
    alpha, m, det = _solve2(a11, a12, a22, sum_v, sum_tv)
    if abs(det) > 1e-12 * max(1.0, a11 * a22):
        sse1 = max(0.0, sum_vv - (alpha * sum_v + m * sum_tv))
        candidates.append(_Candidate("1", sse1, (alpha, m), ()))

    # single-breakpoint cut indices: sample k starts the later branch
    ks = np.arange(2, n - 1)
    ks = ks[(t[ks] - t[0] >= tol) & (t[-1] - t[ks] >= tol)]

    if ks.size:
        b = t[ks]
        kf = ks.astype(float)
        Su = St[ks] - kf * b
        Suu = Stt[ks] - 2.0 * b * St[ks] + kf * b * b
        Suv = Stv[ks] - b * Sv[ks]

        # variant 1S: sloped then steady; basis [1, min(t - b, 0)]
        c0, c1, det = _solve2(float(n), Su, Suu, sum_v, Suv)
        ok = np.abs(det) > 1e-10
        sse = np.where(ok, sum_vv - (c0 * sum_v + c1 * Suv), np.inf)
        best = int(np.argmin(sse))
        if np.isfinite(sse[best]):
            candidates.append(
                _Candidate("1S", max(0.0, float(sse[best])),
                           (float(c0[best]), float(c1[best])), (int(ks[best]),))
            )

        # variant 21: two slopes; basis [1, t - te, min(t - b, 0)]
        te = float(t[-1])
        s_tau = sum_t - n * te
        s_tautau = sum_tt - 2.0 * te * sum_t + n * te * te
        s_tauv = sum_tv - te * sum_v
        Sut = Stt[ks] - b * St[ks]
        Sutau = Sut - te * Su
        c0, c1, c2, det = _solve3(
            float(n), s_tau, Su,
            s_tautau, Sutau,
            Suu,
            sum_v, s_tauv, Suv,
        )
        ok = np.abs(det) > 1e-10
        sse = np.where(ok, sum_vv - (c0 * sum_v + c1 * s_tauv + c2 * Suv), np.inf)
        best = int(np.argmin(sse))
        if np.isfinite(sse[best]):
            candidates.append(
                _Candidate("21", max(0.0, float(sse[best])),
                           (float(c0[best]), float(c1[best]), float(c2[best]), te),
                           (int(ks[best]),))
            )

    # variant 21S: two slopes then steady; cuts k1 < k2,
    # basis [1, u1, u2] with u1 = min(t - b2, 0), u2 = min(t - b1, 0)
    k1g, k2g = np.meshgrid(ks, ks, indexing="ij")
    mask = (
        (k2g - k1g >= 2)
        & (t[k2g] - t[k1g] >= tol)
        & (t[k1g] - t[0] >= tol)
        & (t[-1] - t[k2g] >= tol)
    )
    k1s, k2s = k1g[mask], k2g[mask]
    if k1s.size:
        b1, b2 = t[k1s], t[k2s]
        f1, f2 = k1s.astype(float), k2s.astype(float)
        Su1 = St[k2s] - f2 * b2
        Su1u1 = Stt[k2s] - 2.0 * b2 * St[k2s] + f2 * b2 * b2
        Su1v = Stv[k2s] - b2 * Sv[k2s]
        Su2 = St[k1s] - f1 * b1
        Su2u2 = Stt[k1s] - 2.0 * b1 * St[k1s] + f1 * b1 * b1
        Su2v = Stv[k1s] - b1 * Sv[k1s]
        Su1u2 = Stt[k1s] - (b1 + b2) * St[k1s] + f1 * b1 * b2
        c0, c1, c2, det = _solve3(
            float(n), Su1, Su2,
            Su1u1, Su1u2,
            Su2u2,
            sum_v, Su1v, Su2v,
        )
        ok = np.abs(det) > 1e-10
        sse = np.where(ok, sum_vv - (c0 * sum_v + c1 * Su1v + c2 * Su2v), np.inf)
        best = int(np.argmin(sse))
        if np.isfinite(sse[best]):
            candidates.append(
                _Candidate("21S", max(0.0, float(sse[best])),
                           (float(c0[best]), float(c1[best]), float(c2[best])),
                           (int(k1s[best]), int(k2s[best])))
            )

    best_cand, best_score = None, -math.inf
    for cand in candidates:  # ordered simple -> complex, ties keep simpler
        p = _N_PARAMS[cand.variant]
        if n - p - 1 < 1:
            continue
        score = _adjusted_r2(cand.sse, sst, n, p)
        if score > best_score + 1e-12:
            best_cand, best_score = cand, score
    if best_cand is None:
        raise ValueError("no admissible model variant for this series")

    profile = _extract_profile(best_cand, t, steady_snap)
    n_b = sum(1 for tau in (profile.tau_s, profile.tau_1, profile.tau_2) if tau > 0) - 1
    return FitResult(profile=profile, n_b=max(0, n_b), r2_adj=best_score)


def _adjusted_r2(sse: float, sst: float, n: int, p: int) -> float:
    if sst < 1e-12:
        return 1.0 if sse < 1e-10 else 0.0
    r2 = 1.0 - sse / sst
    adj = 1.0 - (1.0 - r2) * (n - 1) / (n - p - 1)
    if sse <= 1e-12 * sst:
        return 1.0
    return adj


def _extract_profile(cand: _Candidate, t: np.ndarray, steady_snap: float) -> SpeedProfile:
    """Turn a fitted candidate into profile parameters, extrapolating the
    final segment to t = 0 and applying the steady-snap rule."""
    t0 = float(t[0])
    if cand.variant == "S":
        (c0,) = cand.coeffs
        return _steady(max(0.0, c0), -t0)

    if cand.variant == "1":
        alpha, m = cand.coeffs
        return _sloped_tail(v_c=alpha, a_tail=m, tail_start=t0, a_head=0.0,
                            head_dur=0.0, snap=steady_snap)

    if cand.variant == "1S":
        c0, c1 = cand.coeffs
        b = float(t[cand.cuts[0]])
        return SpeedProfile(v_c=max(0.0, c0), a_1=c1, a_2=0.0,
                            tau_s=-b, tau_1=b - t0, tau_2=0.0)

    if cand.variant == "21":
        c0, c1, c2, te = cand.coeffs
        b = float(t[cand.cuts[0]])
        v_c = c0 - c1 * te
        return _sloped_tail(v_c=v_c, a_tail=c1, tail_start=b, a_head=c1 + c2,
                            head_dur=b - t0, snap=steady_snap)

    c0, c1, c2 = cand.coeffs
    b1, b2 = float(t[cand.cuts[0]]), float(t[cand.cuts[1]])
    return SpeedProfile(v_c=max(0.0, c0), a_1=c1, a_2=c1 + c2,
                        tau_s=-b2, tau_1=b2 - b1, tau_2=b1 - t0)


def _steady(v_c: float, tau_s: float) -> SpeedProfile:
    return SpeedProfile(v_c=v_c, a_1=0.0, a_2=0.0, tau_s=tau_s, tau_1=0.0, tau_2=0.0)


def _sloped_tail(v_c: float, a_tail: float, tail_start: float, a_head: float,
                 head_dur: float, snap: float) -> SpeedProfile:
    """Shape a fit whose final segment is sloped: snap near-zero tail slopes
    to a steady segment, and clamp tails that extrapolate below zero speed
    by stopping the vehicle early."""
    if abs(a_tail) < snap:
        # near-steady tail: report it as segment S
        if head_dur > 0:
            return SpeedProfile(v_c=max(0.0, v_c), a_1=a_head, a_2=0.0,
                                tau_s=-tail_start, tau_1=head_dur, tau_2=0.0)
        return _steady(max(0.0, v_c), -tail_start)
    if v_c < 0.0:
        # the fitted line reaches zero speed before t = 0: hold at zero after
        t_stop = -v_c / a_tail  # in (tail_start, 0) when a_tail < 0
        if a_tail < 0 and tail_start < t_stop < 0:
            if head_dur > 0:
                return SpeedProfile(v_c=0.0, a_1=a_tail, a_2=a_head,
                                    tau_s=-t_stop, tau_1=t_stop - tail_start,
                                    tau_2=head_dur)
            return SpeedProfile(v_c=0.0, a_1=a_tail, a_2=0.0,
                                tau_s=-t_stop, tau_1=t_stop - tail_start, tau_2=0.0)
        v_c = 0.0
    if head_dur > 0:
        return SpeedProfile(v_c=v_c, a_1=a_tail, a_2=a_head,
                            tau_s=0.0, tau_1=-tail_start, tau_2=head_dur)
    return SpeedProfile(v_c=v_c, a_1=a_tail, a_2=0.0,
                        tau_s=0.0, tau_1=-tail_start, tau_2=0.0)
