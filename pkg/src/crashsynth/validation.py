"""Validation of synthetic crash datasets against reference distributions.

Produces a flat table of comparison rows: per-category marginal KS tests
for state and profile parameters, per-category joint-distribution tests on
a 1-D t-SNE embedding, global driver-parameter marginals, and the lead
speed-change comparison. The report records statistics and p-values only;
it does not declare pass or fail.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .core import WeightedDataset
from .distmodels import PatternLabeler, STATE_LABELS
from .weighting import draw_rows, weighted_ks

STATE_PARAMS = ("d_init", "v_f_init", "a_f_min", "v_l_init", "a_l_min")
PROFILE_PARAMS = ("v_c", "a_1", "a_2", "tau_s", "tau_1", "tau_2")


@dataclass(frozen=True)
class ValidationConfig:
    n_perm: int = 200
    tsne_cap: int = 1200
    tsne_iters: int = 500
    tsne_perplexity: float = 30.0
    min_rows: int = 5
    seed: int = 0


# ---------------------------------------------------------------------------
# Exact 1-D t-SNE


def _joint_probabilities(d2: np.ndarray, perplexity: float) -> np.ndarray:
    """Row-conditional Gaussian affinities with per-row bandwidth found by
    binary search to the target entropy, then symmetrized."""
    n = d2.shape[0]
    target = math.log(perplexity)
    p = np.zeros((n, n))
    for i in range(n):
        di = np.delete(d2[i], i)
        beta_lo, beta_hi = 0.0, math.inf
        beta = 1.0
        for _ in range(50):
            expo = np.exp(-di * beta)
            s = expo.sum()
            if s <= 0:
                beta /= 2
                continue
            probs = expo / s
            h = -np.sum(probs * np.log(np.maximum(probs, 1e-300)))
            if abs(h - target) < 1e-5:
                break
            if h > target:
                beta_lo = beta
                beta = beta * 2 if math.isinf(beta_hi) else 0.5 * (beta + beta_hi)
            else:
                beta_hi = beta
                beta = beta / 2 if beta_lo == 0.0 else 0.5 * (beta + beta_lo)
        row = np.zeros(n)
        row[np.arange(n) != i] = expo / max(s, 1e-300)
        p[i] = row
    p = (p + p.T) / (2.0 * n)
    return np.maximum(p, 1e-300)


def tsne_1d(
    x: np.ndarray,
    perplexity: float = 30.0,
    n_iter: int = 500,
    learning_rate: float = 200.0,
    seed: int = 0,
) -> np.ndarray:
    """Exact 1-D t-SNE embedding (full pairwise gradient, no tree
    approximation). Columns are standardized before the distance matrix."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < 8:
        raise ValueError("need at least 8 rows")
    perplexity = min(perplexity, max((n - 1) / 3.0, 2.0))
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    z = (x - mu) / sd
    sq = np.sum(z * z, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (z @ z.T), 0.0)
    p = _joint_probabilities(d2, perplexity)

    rng = np.random.default_rng(seed)
    y = rng.normal(0.0, 1e-4, n)
    update = np.zeros(n)
    exaggeration = 4.0
    for it in range(n_iter):
        pe = p * exaggeration if it < 100 else p
        diff = y[:, None] - y[None, :]
        inv = 1.0 / (1.0 + diff * diff)
        np.fill_diagonal(inv, 0.0)
        q = inv / inv.sum()
        grad = 4.0 * np.sum((pe - q) * inv * diff, axis=1)
        momentum = 0.5 if it < 250 else 0.8
        update = momentum * update - learning_rate * grad
        y = y + update
        y = y - y.mean()
    return y


def tsne_ks(
    a: WeightedDataset,
    b: WeightedDataset,
    cols: tuple[str, ...],
    cfg: ValidationConfig,
    seed: int,
) -> tuple[float, float]:
    """Joint-distribution comparison: embed a weighted subsample of both
    datasets together with 1-D t-SNE, then compare the two embedded groups
    with the weighted KS test."""
    half = cfg.tsne_cap // 2
    sub_a = draw_rows(a, min(half, max(a.n, 1) * 4), derive(seed, 1)) if a.n > 0 else a
    sub_b = draw_rows(b, min(half, max(b.n, 1) * 4), derive(seed, 2)) if b.n > 0 else b
    xa = sub_a.matrix(cols)
    xb = sub_b.matrix(cols)
    pooled = np.vstack([xa, xb])
    y = tsne_1d(
        pooled, perplexity=cfg.tsne_perplexity, n_iter=cfg.tsne_iters,
        seed=derive(seed, 3),
    )
    ya, yb = y[: xa.shape[0]], y[xa.shape[0]:]
    return weighted_ks(
        ya, None, yb, None, n_perm=cfg.n_perm, seed=derive(seed, 4)
    )


def derive(seed: int, salt: int) -> int:
    return (seed * 1_000_003 + salt) % (2**63)


# ---------------------------------------------------------------------------
# Report assembly


def _ks_row(section, label, parameter, x1, w1, x2, w2, cfg, seed) -> dict:
    stat, p = weighted_ks(x1, w1, x2, w2, n_perm=cfg.n_perm, seed=seed)
    return {
        "section": section,
        "label": label,
        "parameter": parameter,
        "ks": stat,
        "p_value": p,
        "n_synth": int(np.size(x1)),
        "n_ref": int(np.size(x2)),
    }


def compare_states(
    synth: WeightedDataset,
    ref_sb: WeightedDataset,
    cfg: ValidationConfig,
) -> list[dict]:
    """Per-state marginal and joint rows; both datasets carry a "label"
    column with state codes."""
    rows = []
    s_codes = synth.col("label")
    r_codes = ref_sb.col("label")
    for code, label in enumerate(STATE_LABELS, start=1):
        sm = s_codes == code
        rm = r_codes == code
        if np.sum(sm) < cfg.min_rows or np.sum(rm) < cfg.min_rows:
            continue
        ssub = synth.subset(np.flatnonzero(sm))
        rsub = ref_sb.subset(np.flatnonzero(rm))
        for param in STATE_PARAMS:
            vals = ssub.col(param)
            ref_vals = rsub.col(param)
            if np.ptp(ref_vals) <= 1e-12 and np.ptp(vals) <= 1e-12:
                continue  # constant on both sides by construction
            rows.append(_ks_row(
                "state", label, param, vals, ssub.weights, ref_vals, rsub.weights,
                cfg, derive(cfg.seed, 100 + code * 10 + len(rows)),
            ))
        varying = [
            p for p in STATE_PARAMS
            if np.ptp(rsub.col(p)) > 1e-12 or np.ptp(ssub.col(p)) > 1e-12
        ]
        if len(varying) >= 2:
            stat, p = tsne_ks(ssub, rsub, tuple(varying), cfg, derive(cfg.seed, 900 + code))
            rows.append({
                "section": "state", "label": label, "parameter": "joint",
                "ks": stat, "p_value": p, "n_synth": ssub.n, "n_ref": rsub.n,
            })
    return rows


def compare_profiles(
    synth: WeightedDataset,
    ref_sl: WeightedDataset,
    cfg: ValidationConfig,
) -> list[dict]:
    """Per-pattern marginal and joint rows for the lead profile parameters."""
    labeler = PatternLabeler()
    rows = []
    s_labels = np.array(labeler.label_rows(synth))
    r_labels = np.array(labeler.label_rows(ref_sl))
    for li, label in enumerate(sorted(set(r_labels))):
        sm = s_labels == label
        rm = r_labels == label
        if np.sum(sm) < cfg.min_rows or np.sum(rm) < cfg.min_rows:
            continue
        ssub = synth.subset(np.flatnonzero(sm))
        rsub = ref_sl.subset(np.flatnonzero(rm))
        varying = []
        for param in PROFILE_PARAMS:
            ref_vals = rsub.col(param)
            vals = ssub.col(param)
            if np.ptp(ref_vals) <= 1e-12 and np.ptp(vals) <= 1e-12:
                continue
            varying.append(param)
            rows.append(_ks_row(
                "profile", label, param, vals, ssub.weights, ref_vals, rsub.weights,
                cfg, derive(cfg.seed, 2000 + li * 10 + len(rows)),
            ))
        if len(varying) >= 2:
            stat, p = tsne_ks(ssub, rsub, tuple(varying), cfg, derive(cfg.seed, 2900 + li))
            rows.append({
                "section": "profile", "label": label, "parameter": "joint",
                "ks": stat, "p_value": p, "n_synth": ssub.n, "n_ref": rsub.n,
            })
    return rows


def compare_globals(
    synth: WeightedDataset,
    headway_dist,
    glance_dist,
    onset_dist,
    abnormal_p: float,
    cfg: ValidationConfig,
    n_ref_draws: int = 4000,
) -> list[dict]:
    """Driver-parameter marginals against their target distributions, plus
    the abnormal-share row."""
    rows = []
    rng = np.random.default_rng(derive(cfg.seed, 5000))
    ref_T = headway_dist.sample(n_ref_draws, rng)
    rows.append(_ks_row(
        "global", "all", "headway", synth.col("headway"), synth.weights,
        ref_T, None, cfg, derive(cfg.seed, 5001),
    ))
    ref_g = glance_dist.sample(n_ref_draws, rng)
    rows.append(_ks_row(
        "global", "all", "t_glance", synth.col("t_glance"), synth.weights,
        ref_g, None, cfg, derive(cfg.seed, 5002),
    ))
    abn = synth.col("abnormal") > 0.5
    w = synth.weights
    share = float(np.sum(w[abn]) / np.sum(w)) if np.sum(w) > 0 else 0.0
    s4 = synth.col("label") == 4.0
    s4_share = (
        float(np.sum(w[abn & s4]) / np.sum(w[s4])) if np.any(s4) else math.nan
    )
    rows.append({
        "section": "global", "label": "all", "parameter": "abnormal_share_s4",
        "ks": abs(s4_share - abnormal_p) if not math.isnan(s4_share) else math.nan,
        "p_value": math.nan,
        "n_synth": int(np.sum(abn)), "n_ref": 0,
    })
    if np.sum(abn) >= cfg.min_rows and onset_dist is not None:
        ref_a = onset_dist.sample(n_ref_draws, rng)
        rows.append(_ks_row(
            "global", "all", "t_abnormal", synth.col("t_abnormal")[abn], w[abn],
            ref_a, None, cfg, derive(cfg.seed, 5003),
        ))
    return rows


def compare_delta_v(
    synth: WeightedDataset,
    ref_dv: np.ndarray,
    ref_w: np.ndarray | None,
    cfg: ValidationConfig,
    n_bins: int = 20,
) -> dict:
    """Lead speed-change comparison: weighted KS plus equal-width histogram
    fractions over the pooled range."""
    dv = synth.col("dv_l")
    stat, p = weighted_ks(
        dv, synth.weights, ref_dv, ref_w, n_perm=cfg.n_perm,
        seed=derive(cfg.seed, 6000),
    )
    ref_w_arr = np.ones_like(ref_dv) if ref_w is None else np.asarray(ref_w, float)
    lo = min(float(dv.min()), float(np.min(ref_dv)))
    hi = max(float(dv.max()), float(np.max(ref_dv)))
    edges = np.linspace(lo, hi, n_bins + 1)
    idx_s = np.clip(np.searchsorted(edges, dv, side="right") - 1, 0, n_bins - 1)
    idx_r = np.clip(np.searchsorted(edges, ref_dv, side="right") - 1, 0, n_bins - 1)
    hist_s = np.bincount(idx_s, weights=synth.weights, minlength=n_bins)
    hist_r = np.bincount(idx_r, weights=ref_w_arr, minlength=n_bins)
    return {
        "ks": stat,
        "p_value": p,
        "bin_edges": edges.tolist(),
        "synth_fraction": (hist_s / hist_s.sum()).tolist(),
        "ref_fraction": (hist_r / hist_r.sum()).tolist(),
    }


def label_proportions(codes: np.ndarray, weights: np.ndarray) -> dict[str, float]:
    total = float(np.sum(weights))
    out = {}
    for code, label in enumerate(STATE_LABELS, start=1):
        out[label] = float(np.sum(weights[codes == code]) / total) if total > 0 else 0.0
    return out


def build_report(
    synth: WeightedDataset,
    ref_sb: WeightedDataset,
    ref_sl: WeightedDataset,
    ref_dv: np.ndarray,
    ref_dv_w: np.ndarray | None,
    headway_dist,
    glance_dist,
    onset_dist,
    abnormal_p: float,
    target_proportions: dict[str, float],
    cfg: ValidationConfig = ValidationConfig(),
) -> dict:
    rows = []
    rows += compare_states(synth, ref_sb, cfg)
    rows += compare_profiles(synth, ref_sl, cfg)
    rows += compare_globals(synth, headway_dist, glance_dist, onset_dist, abnormal_p, cfg)
    dv_cmp = compare_delta_v(synth, ref_dv, ref_dv_w, cfg)
    props = label_proportions(synth.col("label"), synth.weights)
    return {
        "rows": rows,
        "delta_v": dv_cmp,
        "proportions": props,
        "target_proportions": target_proportions,
        "proportion_abs_error": {
            k: abs(props[k] - target_proportions.get(k, 0.0)) for k in props
        },
        "n_rows": len(rows),
        "n_synth": synth.n,
    }


def write_report_json(report: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_report_csv(report: dict, path: str) -> None:
    fields = ("section", "label", "parameter", "ks", "p_value", "n_synth", "n_ref")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in report["rows"]:
            writer.writerow([row[f] for f in fields])
