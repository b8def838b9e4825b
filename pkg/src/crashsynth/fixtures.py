"""Synthetic fixture world for end-to-end runs.

Generates a self-consistent rear-end crash population and writes the seven
input files the pipeline consumes: a mass-pair table, two follower-side
severity tables (one severity-biased, one biased toward low severity), two
kinematic series datasets (10 Hz naturalistic, 100 Hz reconstruction with a
severity censor and a speed spike), an unbiased lead-side reference table,
and a large regenerated lead-profile sample.

Every event is built the same way: a lead speed profile, a piecewise-linear
follower speed trace, an initial gap equal to the closing distance so the
impact lands exactly at the end of the 5 s window, and an impact severity
split by restitution and the mass ratio.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .core import SpeedProfile, WeightedDataset, derive_seed, write_table
from .distmodels import (
    ABNORMAL_S4_SHARE,
    REFERENCE_STATE_PROPORTIONS,
    MixtureConfig,
    PatternLabeler,
    fit_mixture,
    sample_mixture,
)
from .impact import collinear_impact
from .profilefit import profile_speed_grid

STATE_PROPORTIONS = REFERENCE_STATE_PROPORTIONS


@dataclass(frozen=True)
class WorldConfig:
    n_ciss_m: int = 900
    n_ciss_f: int = 1400
    n_shrp2_f: int = 900
    n_shrp2_b: int = 260
    n_pcm_b: int = 240
    n_ref_l: int = 2600
    n_ref_sl: int = 10000
    noise_sd: float = 0.02
    seed: int = 0


@dataclass
class TruthEvent:
    state: str
    profile: SpeedProfile
    abnormal: bool
    t_a: float          # abnormal onset, simulation clock (inf = none)
    knots_t: np.ndarray  # follower speed breakpoints, impact clock
    knots_v: np.ndarray
    d_init: float
    dv_pre: float
    rho: float
    m_f: float
    m_l: float
    dv_f: float
    dv_l: float


_DENSE = np.linspace(-5.0, 0.0, 2501)  # 2 ms grid for gap checks


def _follower_speed(ev_t: np.ndarray, ev_v: np.ndarray, t: np.ndarray) -> np.ndarray:
    return np.interp(t, ev_t, ev_v)


def _lead_speed(profile: SpeedProfile, t: np.ndarray) -> np.ndarray:
    return profile_speed_grid(profile, t + 5.0)


def _pick_state(rng: np.random.Generator) -> str:
    labels = list(STATE_PROPORTIONS)
    probs = np.array([STATE_PROPORTIONS[k] for k in labels])
    return labels[int(rng.choice(len(labels), p=probs / probs.sum()))]


def _lead_brake_accel(rng: np.random.Generator, v_f: float) -> float:
    # harder lead braking behind faster followers; keeps the pooled
    # speed/acceleration correlation negative
    mag = 1.0 + 0.14 * v_f + abs(rng.normal(0.0, 0.7))
    return -float(np.clip(mag, 0.6, 8.5))


def _steady(v: float) -> SpeedProfile:
    return SpeedProfile(v_c=v, a_1=0.0, a_2=0.0, tau_s=5.0, tau_1=0.0, tau_2=0.0)


def _braking_profile(
    rng: np.random.Generator,
    v_l: float,
    v_f: float,
    p_through: float = 0.40,
    p_early: float = 0.40,
    steady_lo: float = 0.3,
    steady_hi: float = 2.5,
) -> SpeedProfile:
    a_1 = _lead_brake_accel(rng, v_f)
    kind = rng.random()
    if kind < p_through:  # braking through the impact
        tau_1 = rng.uniform(0.8, 4.0)
        v_c = v_l + a_1 * tau_1
        if v_c < 0:
            tau_1 = min(v_l / -a_1, 4.8)
            v_c = v_l + a_1 * tau_1
        return SpeedProfile(v_c=v_c, a_1=a_1, a_2=0.0,
                            tau_s=0.0, tau_1=tau_1, tau_2=0.0)
    if kind < p_through + p_early:  # brake (possibly to a stop), then steady
        v_c = v_l * rng.uniform(0.0, 0.6)
        if v_c < 0.4:
            v_c = 0.0
        tau_1 = (v_l - v_c) / -a_1
        if tau_1 > 4.2:
            tau_1 = rng.uniform(1.0, 4.0)
            a_1 = -(v_l - v_c) / tau_1
        tau_s = rng.uniform(steady_lo, max(steady_lo + 0.01, min(steady_hi, 4.9 - tau_1)))
        return SpeedProfile(v_c=v_c, a_1=a_1, a_2=0.0,
                            tau_s=tau_s, tau_1=tau_1, tau_2=0.0)
    # gentle then hard braking
    a_2 = a_1 * rng.uniform(0.25, 0.6)
    tau_2 = rng.uniform(0.6, 1.8)
    v_mid = v_l + a_2 * tau_2
    v_c = v_mid * rng.uniform(0.0, 0.5)
    if v_c < 0.4:
        v_c = 0.0
    tau_1 = (v_mid - v_c) / -a_1
    if tau_1 + tau_2 > 4.6 or v_mid <= 0.3:
        return SpeedProfile(v_c=max(v_l + a_1 * 1.5, 0.0), a_1=a_1, a_2=0.0,
                            tau_s=0.0, tau_1=min(1.5, v_l / -a_1), tau_2=0.0)
    return SpeedProfile(v_c=v_c, a_1=a_1, a_2=a_2,
                        tau_s=0.0, tau_1=tau_1, tau_2=tau_2)


def _draw_profile(rng: np.random.Generator, state: str, v_f: float) -> SpeedProfile:
    """Lead profile consistent with the state's initial speed relation.

    Braking leads occur in every moving-lead state (the states split on the
    follower's reaction, not the lead's); a faster lead that gets hit by a
    non-accelerating follower must have braked, so S6 leads nearly always do.
    """
    if state in ("S3", "S4"):
        return _steady(0.0)
    if state in ("S1", "S2"):
        v_l = v_f * rng.uniform(0.45, 0.85)
        brake_p = 0.50 if state == "S1" else 0.80
    else:  # S5, S6
        # a faster lead that still gets hit has nearly always slowed down;
        # the follower-acceleration flavor is the rare one
        v_l = v_f + rng.uniform(0.3, 2.5)
        brake_p = 0.85 if state == "S5" else 0.90
    if rng.random() < brake_p:
        if state == "S5":
            # a never-braking follower reaches the lead only when the lead
            # slowed early and settled well below the follower's speed
            return _braking_profile(rng, v_l, v_f, p_through=0.15, p_early=0.75,
                                    steady_lo=1.2, steady_hi=3.5)
        return _braking_profile(rng, v_l, v_f)
    if rng.random() < 0.7:
        return _steady(v_l)
    a_1 = rng.uniform(0.1, 0.8)
    tau_1 = rng.uniform(1.0, 3.5)
    return SpeedProfile(v_c=v_l + a_1 * tau_1, a_1=a_1, a_2=0.0,
                        tau_s=0.0, tau_1=tau_1, tau_2=0.0)


def _draw_follower(
    rng: np.random.Generator, state: str, profile: SpeedProfile
) -> tuple[np.ndarray, np.ndarray, bool, float] | None:
    """Piecewise-linear follower speed over the impact-clock window.

    Returns (knot times, knot speeds, abnormal flag, abnormal onset on the
    simulation clock), or None when the draw should be retried.
    """
    v_lead_end = float(_lead_speed(profile, np.array([0.0]))[0])
    if state == "S4":
        if rng.random() < ABNORMAL_S4_SHARE:
            t_a = float(np.clip(rng.normal(2.2, 1.0), 0.3, 4.5))
            t_launch = t_a - 5.0
            v_end = 1.8 * (5.0 - t_a)
            return (np.array([-5.0, t_launch, 0.0]),
                    np.array([0.0, 0.0, v_end]), True, t_a)
        # normal: launch, cruise, brake but still hit; the end speed is
        # drawn first so the implied deceleration is always survivable
        t_launch = rng.uniform(-4.5, -2.2)
        a_up = rng.uniform(1.2, 2.6)
        dur_up = rng.uniform(0.8, min(2.2, -t_launch - 0.8))
        v_peak = a_up * dur_up
        # the slowdown must clear the launch detector's drawdown margin
        # even though the series stops 0.1 s short of the impact
        if v_peak < 1.45:
            return None
        t_cruise_end = rng.uniform(t_launch + dur_up, -0.3)
        v_end = rng.uniform(0.5, v_peak - 0.9)
        a_dn = (v_end - v_peak) / (0.0 - t_cruise_end)
        if not -4.8 <= a_dn <= -0.3:
            return None
        return (np.array([-5.0, t_launch, t_launch + dur_up, t_cruise_end, 0.0]),
                np.array([0.0, 0.0, v_peak, v_peak, v_end]), False, math.inf)
    if state == "S5":
        # faster lead, follower never brakes: either the lead already
        # braked below the follower, or the follower accelerates past it
        v_f0 = profile.v_l_init - rng.uniform(0.3, 2.5)
        if v_f0 <= 0.5:
            return None
        if v_lead_end <= v_f0 - 0.4 and rng.random() < 0.8:
            return (np.array([-5.0, 0.0]), np.array([v_f0, v_f0]), False, math.inf)
        a_up = rng.uniform(0.6, 2.2)
        dur_up = rng.uniform(2.0, 4.6)
        v_peak = v_f0 + a_up * dur_up
        t_up_end = -5.0 + dur_up
        if v_peak < v_lead_end + 0.4:
            return None
        return (np.array([-5.0, t_up_end, 0.0]),
                np.array([v_f0, v_peak, v_peak]), False, math.inf)

    # remaining moving-follower states: constant speed, then a late brake
    # in the states defined by a braking follower
    if state == "S1":
        v_f0 = profile.v_l_init / rng.uniform(0.45, 0.85)
        brake_p = 0.0
    elif state == "S2":
        v_f0 = profile.v_l_init / rng.uniform(0.5, 0.85)
        brake_p = 1.0
    elif state == "S3":
        v_f0 = rng.uniform(5.0, 18.0)
        brake_p = 0.45
    else:  # S6
        v_f0 = profile.v_l_init - rng.uniform(0.3, 3.0)
        if v_f0 <= 0.5:
            return None
        brake_p = 1.0
    if rng.random() >= brake_p:
        return (np.array([-5.0, 0.0]), np.array([v_f0, v_f0]), False, math.inf)
    # brake leg drawn end-speed first so the hit stays consistent
    t_b = rng.uniform(-2.6, -0.35)
    hi = v_f0 - 0.3
    lo = v_lead_end + 0.45
    if hi <= lo:
        return None
    v_end = rng.uniform(lo, hi)
    a_dn = (v_end - v_f0) / (0.0 - t_b)
    if not -4.8 <= a_dn <= -0.3:
        return None
    return (np.array([-5.0, t_b, 0.0]), np.array([v_f0, v_f0, v_end]), False, math.inf)


def draw_event(rng: np.random.Generator, state: str | None = None) -> TruthEvent:
    """One crash from the world population, retrying internally until the
    kinematic constraints hold (gap stays positive, closing at impact)."""
    for _ in range(200):
        st = state or _pick_state(rng)
        if st == "S4":
            v_f_hint = 0.0
        elif st == "S1":
            v_f_hint = rng.uniform(8.0, 22.0)
        elif st == "S2":
            v_f_hint = rng.uniform(7.0, 24.0)
        elif st == "S3":
            v_f_hint = rng.uniform(5.0, 18.0)
        elif st == "S5":
            v_f_hint = rng.uniform(3.0, 8.0)
        else:
            v_f_hint = rng.uniform(7.0, 13.0)
        profile = _draw_profile(rng, st, v_f_hint)
        try:
            profile.validate()
        except ValueError:
            continue
        follower = _draw_follower(rng, st, profile)
        if follower is None:
            continue
        knots_t, knots_v, abnormal, t_a = follower
        v_f_dense = _follower_speed(knots_t, knots_v, _DENSE)
        v_l_dense = _lead_speed(profile, _DENSE)
        closing = v_f_dense - v_l_dense
        cum = np.concatenate([[0.0], np.cumsum(
            (closing[1:] + closing[:-1]) * 0.5 * (_DENSE[1] - _DENSE[0])
        )])
        d_init = float(cum[-1])
        if d_init <= 0.3:
            continue
        # the gap must stay open through the last written sample (t = -0.1)
        if np.any(cum[_DENSE <= -0.1 + 1e-12] >= d_init - 0.01):
            continue
        dv_pre = float(v_f_dense[-1] - v_l_dense[-1])
        if dv_pre < 0.3:
            continue
        m_f = float(np.clip(rng.normal(1450.0, 250.0), 850.0, 2600.0))
        m_l = float(np.clip(rng.normal(1450.0, 250.0), 850.0, 2600.0))
        rho = m_f / m_l
        imp = collinear_impact(float(v_f_dense[-1]), float(v_l_dense[-1]), rho)
        return TruthEvent(
            state=st, profile=profile, abnormal=abnormal, t_a=t_a,
            knots_t=knots_t, knots_v=knots_v, d_init=d_init,
            dv_pre=dv_pre, rho=rho, m_f=m_f, m_l=m_l,
            dv_f=imp.dv_f, dv_l=imp.dv_l,
        )
    raise RuntimeError(f"could not draw a consistent event for state {state}")


# ---------------------------------------------------------------------------
# Sampling biases


def _accept_severe(rng: np.random.Generator, dv_l: float) -> bool:
    return rng.random() < float(np.clip((dv_l / 4.0) ** 1.6, 0.02, 1.0))


def _accept_mild(rng: np.random.Generator, dv_l: float) -> bool:
    return rng.random() < float(np.clip(math.exp(-dv_l / 4.0), 0.05, 1.0))


def _series_arrays(
    ev: TruthEvent, rate_hz: float, noise_sd: float, rng: np.random.Generator
):
    """Sampled kinematics on [-5, -0.1]; zero speeds stay exactly zero."""
    n = int(round((5.0 - 0.1) * rate_hz)) + 1
    t = -5.0 + np.arange(n) / rate_hz
    v_f = _follower_speed(ev.knots_t, ev.knots_v, t)
    v_l = _lead_speed(ev.profile, t)
    closing_dense = _follower_speed(ev.knots_t, ev.knots_v, _DENSE) - _lead_speed(
        ev.profile, _DENSE
    )
    cum = np.concatenate([[0.0], np.cumsum(
        (closing_dense[1:] + closing_dense[:-1]) * 0.5 * (_DENSE[1] - _DENSE[0])
    )])
    d = ev.d_init - np.interp(t, _DENSE, cum)
    moving_f = v_f > 0
    moving_l = v_l > 0
    v_f = np.where(moving_f, np.maximum(v_f + rng.normal(0, noise_sd, n), 0.0), 0.0)
    v_l = np.where(moving_l, np.maximum(v_l + rng.normal(0, noise_sd, n), 0.0), 0.0)
    return t, v_f, v_l, np.maximum(d, 0.01)


def _append_series(cols: dict, eid: str, source: str, t, v_f, v_l, d) -> None:
    n = t.size
    cols["event_id"].extend([eid] * n)
    cols["source"].extend([source] * n)
    cols["t"].extend(float(x) for x in t)
    cols["v_f"].extend(float(x) for x in v_f)
    cols["v_l"].extend(float(x) for x in v_l)
    cols["d"].extend(float(x) for x in d)


def generate_fixtures(out_dir: str, cfg: WorldConfig = WorldConfig()) -> dict[str, str]:
    """Write all fixture files into out_dir; returns {name: path}."""
    os.makedirs(out_dir, exist_ok=True)
    paths: dict[str, str] = {}

    # mass pairs
    rng = np.random.default_rng(derive_seed(cfg.seed, "masses"))
    m_f = np.clip(rng.normal(1450.0, 250.0, cfg.n_ciss_m), 850.0, 2600.0)
    m_l = np.clip(rng.normal(1450.0, 250.0, cfg.n_ciss_m), 850.0, 2600.0)
    paths["ciss_m"] = os.path.join(out_dir, "ciss_m.csv")
    write_table(paths["ciss_m"], {"m_f": list(m_f), "m_l": list(m_l)})

    # follower-side severity tables
    for name, count, accept in (
        ("ciss_f", cfg.n_ciss_f, _accept_severe),
        ("shrp2_f", cfg.n_shrp2_f, _accept_mild),
    ):
        rng = np.random.default_rng(derive_seed(cfg.seed, name))
        rows_v, rows_dv = [], []
        while len(rows_v) < count:
            ev = draw_event(rng)
            if not accept(rng, ev.dv_l):
                continue
            rows_v.append(ev.knots_v[0] if ev.state != "S4" else 0.0)
            rows_dv.append(ev.dv_f)
        source = "CISS" if name == "ciss_f" else "SHRP2"
        paths[name] = os.path.join(out_dir, f"{name}.csv")
        write_table(paths[name], {
            "event_id": [f"{source}-F-{i:05d}" for i in range(count)],
            "source": [source] * count,
            "v_f_init": rows_v,
            "dv_f": rows_dv,
            "dv_l": [""] * count,
        })

    # kinematic series
    for name, count, rate, source in (
        ("shrp2_b", cfg.n_shrp2_b, 10.0, "SHRP2"),
        ("pcm_b", cfg.n_pcm_b, 100.0, "PCM"),
    ):
        rng = np.random.default_rng(derive_seed(cfg.seed, name))
        cols = {"event_id": [], "source": [], "t": [], "v_f": [], "v_l": [], "d": []}
        kept = 0
        while kept < count:
            force_spike = name == "pcm_b" and rng.random() < 0.15
            ev = draw_event(rng)
            if name == "pcm_b":
                if ev.dv_l < 2.0:
                    continue
                if force_spike:
                    if ev.state == "S4" or ev.knots_v[0] <= 0:
                        continue
                    # reconstruction tools pin unknown initial speeds at 13.9
                    scale = 13.9 / ev.knots_v[0]
                    if not 0.55 < scale < 1.8:
                        continue
                    ev = _rescale_event(ev, scale)
                    if ev is None:
                        continue
            elif not _accept_mild(rng, ev.dv_l):
                continue
            # reconstruction output carries no sensor noise
            noise = cfg.noise_sd if name == "shrp2_b" else 0.0
            t, v_f, v_l, d = _series_arrays(ev, rate, noise, rng)
            _append_series(cols, f"{source}-B-{kept:05d}", source, t, v_f, v_l, d)
            kept += 1
        paths[name] = os.path.join(out_dir, f"{name}.csv")
        write_table(paths[name], cols)

    # unbiased lead-side reference
    rng = np.random.default_rng(derive_seed(cfg.seed, "ref_l"))
    ref_cols = {k: [] for k in (
        "dv_l", "v_c", "a_1", "a_2", "tau_s", "tau_1", "tau_2"
    )}
    for _ in range(cfg.n_ref_l):
        ev = draw_event(rng)
        ref_cols["dv_l"].append(ev.dv_l)
        for k in ("v_c", "a_1", "a_2", "tau_s", "tau_1", "tau_2"):
            ref_cols[k].append(getattr(ev.profile, k))
    paths["ref_l"] = os.path.join(out_dir, "ref_l.csv")
    write_table(paths["ref_l"], ref_cols)

    # regenerated lead-profile sample
    profile_cols = ("v_c", "a_1", "a_2", "tau_s", "tau_1", "tau_2")
    ref_l_ds = WeightedDataset(
        columns={k: np.array(ref_cols[k]) for k in profile_cols},
        weights=np.ones(cfg.n_ref_l),
    )
    labeler = PatternLabeler()
    model = fit_mixture(ref_l_ds, profile_cols, labeler, MixtureConfig())
    sample, _ = sample_mixture(
        model, cfg.n_ref_sl, derive_seed(cfg.seed, "ref_sl"), labeler, MixtureConfig()
    )
    paths["ref_sl"] = os.path.join(out_dir, "ref_sl.csv")
    sample.to_csv(paths["ref_sl"])
    return paths


def _rescale_event(ev: TruthEvent, scale: float) -> TruthEvent | None:
    """Scale all speeds of an event by a constant; distances scale along."""
    profile = SpeedProfile(
        v_c=ev.profile.v_c * scale,
        a_1=ev.profile.a_1 * scale,
        a_2=ev.profile.a_2 * scale,
        tau_s=ev.profile.tau_s,
        tau_1=ev.profile.tau_1,
        tau_2=ev.profile.tau_2,
    )
    knots_v = ev.knots_v * scale
    # the pinned speed must be an exact atom in the output marginal
    knots_v[ev.knots_v == ev.knots_v[0]] = 13.9
    dv_pre = ev.dv_pre * scale
    if dv_pre < 0.3:
        return None
    imp = collinear_impact(
        float(knots_v[-1]),
        float(_lead_speed(profile, np.array([0.0]))[0]),
        ev.rho,
    )
    return TruthEvent(
        state=ev.state, profile=profile, abnormal=ev.abnormal, t_a=ev.t_a,
        knots_t=ev.knots_t, knots_v=knots_v, d_init=ev.d_init * scale,
        dv_pre=dv_pre, rho=ev.rho, m_f=ev.m_f, m_l=ev.m_l,
        dv_f=imp.dv_f, dv_l=imp.dv_l,
    )
