"""Combining follower-side and lead-side crash datasets.

The follower-side data carries impact severity but no lead kinematics; the
lead-side data carries pre-crash kinematics but is biased. This module
deduces lead speed changes from follower speed changes via the mass-ratio
distribution, reweights each side toward reference marginals, and pairs
follower rows with lead rows so the joint distribution reproduces target
correlations without leaking severity information into the pairing.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .core import WeightedDataset, derive_seed
from .distmodels import GengammaFit
from .weighting import KnnConfig, draw_rows, knn_weight, select_k, weighted_pearson

DEFAULT_REL_SPEED_THD = 1.31
GUARD_LIMIT = 0.3


def deduce_delta_v(
    ds: WeightedDataset,
    rho_fit: GengammaFit,
    seed: int,
    dv_f_col: str = "dv_f",
    out_col: str = "dv_l",
) -> WeightedDataset:
    """Add a lead speed-change column deduced from the follower speed change
    and a mass ratio drawn per row from the fitted distribution."""
    dv_f = ds.col(dv_f_col)
    rng = np.random.default_rng(seed)
    rho = rho_fit.sample(ds.n, rng)
    cols = {name: ds.col(name) for name in ds.names}
    cols[out_col] = -rho * dv_f
    return WeightedDataset(columns=cols, weights=ds.weights.copy())


def weight_to_reference(
    raw: WeightedDataset,
    reference: WeightedDataset,
    match_cols: tuple[str, ...],
    cfg: KnnConfig = KnnConfig(),
) -> tuple[WeightedDataset, int, dict[int, float]]:
    """Weight raw rows toward a weighted reference: draw from the reference,
    pick k by marginal fit, then apply the nearest-neighbor weighting."""
    draws = draw_rows(reference, cfg.n_draws, cfg.seed)
    best_k, losses = select_k(raw, draws, match_cols, cfg)
    weighted = knn_weight(raw, draws, match_cols, dataclasses.replace(cfg, k=best_k))
    return weighted, best_k, losses


def build_ref_f(
    com_f: WeightedDataset,
    ref_l: WeightedDataset,
    cfg: KnnConfig = KnnConfig(),
    match_cols: tuple[str, ...] = ("dv_l",),
) -> tuple[WeightedDataset, int, dict[int, float]]:
    """Follower-side reference: weight the combined follower data so its
    lead speed-change marginal follows the unbiased reference."""
    return weight_to_reference(com_f, ref_l, match_cols, cfg)


def build_ref_b(
    com_b: WeightedDataset,
    ref_i: WeightedDataset,
    cfg: KnnConfig = KnnConfig(),
    match_cols: tuple[str, ...] = ("v_f_init", "dv_l", "v_l_init", "a_l_min"),
) -> tuple[WeightedDataset, int, dict[int, float]]:
    """Lead-side reference: weight the combined kinematics data toward the
    paired intermediate reference on initial speeds, lead speed change, and
    minimum lead acceleration."""
    return weight_to_reference(com_b, ref_i, match_cols, cfg)


def elbow_threshold(values: np.ndarray, weights: np.ndarray | None = None) -> float:
    """Elbow of a weighted ECDF: the value maximizing the perpendicular
    distance from the chord through the curve's endpoints, with the value
    axis normalized to [0, 1]."""
    values = np.asarray(values, dtype=float)
    weights = np.ones_like(values) if weights is None else np.asarray(weights, float)
    keep = weights > 0
    values, weights = values[keep], weights[keep]
    if values.size < 3:
        raise ValueError("need at least 3 positively weighted values")
    order = np.argsort(values, kind="stable")
    xs = values[order]
    ys = np.cumsum(weights[order])
    ys = ys / ys[-1]
    span = xs[-1] - xs[0]
    if span <= 0:
        raise ValueError("values are all identical")
    xn = (xs - xs[0]) / span
    # chord from (xn[0], ys[0]) to (1, 1)
    dx = 1.0 - xn[0]
    dy = 1.0 - ys[0]
    norm = math.hypot(dx, dy)
    dist = np.abs(dy * (xn - xn[0]) - dx * (ys - ys[0])) / norm
    return float(xs[int(np.argmax(dist))])


# ---------------------------------------------------------------------------
# Pairing


@dataclass(frozen=True)
class PairConfig:
    eta_grid: tuple[float, ...] = tuple(np.round(np.arange(0.0, 1.0001, 0.02), 2))
    rel_speed_thd: float = DEFAULT_REL_SPEED_THD
    guard_limit: float = GUARD_LIMIT
    seed: int = 0


@dataclass
class PairResult:
    paired: WeightedDataset
    eta: float
    loss: float
    corr_speed: float
    corr_accel: float
    guard_speed: float
    guard_accel: float
    losses_by_eta: dict[float, float]


class KdeDensity:
    """1-D Gaussian kernel density with the rule-of-thumb bandwidth
    0.9 * min(sd, IQR/1.34) * n^(-1/5); n is the effective sample size
    when weights are given."""

    def __init__(self, data: np.ndarray, weights: np.ndarray | None = None):
        data = np.asarray(data, dtype=float)
        if data.size < 2:
            raise ValueError("need at least 2 points")
        if weights is None:
            weights = np.ones_like(data)
        else:
            weights = np.asarray(weights, dtype=float)
            keep = weights > 0
            data, weights = data[keep], weights[keep]
            if data.size < 2:
                raise ValueError("need at least 2 positively weighted points")
        self.data = data
        total = float(weights.sum())
        self.weights = weights / total
        n_eff = total * total / float(np.sum(weights * weights))
        mean = float(np.sum(self.weights * data))
        sd = math.sqrt(max(float(np.sum(self.weights * (data - mean) ** 2)), 0.0))
        order = np.argsort(data, kind="stable")
        cum = np.cumsum(self.weights[order])
        q25, q75 = np.interp([0.25, 0.75], cum, data[order])
        iqr = float(q75 - q25)
        spread_options = [s for s in (sd, iqr / 1.34) if s > 0]
        spread = min(spread_options) if spread_options else 1.0
        self.bandwidth = max(0.9 * spread * n_eff ** (-0.2), 1e-6)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        z = (x[:, None] - self.data[None, :]) / self.bandwidth
        dens = (np.exp(-0.5 * z * z) * self.weights[None, :]).sum(axis=1)
        dens /= self.bandwidth * math.sqrt(2 * math.pi)
        return dens


def _pair_once(
    v_f: np.ndarray,
    b_vl_sorted: np.ndarray,
    dens_sorted: np.ndarray,
    order_f: np.ndarray,
    thd: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Pair each follower (in the given order) with one lead row.

    Lead rows are pre-sorted by initial speed. Eligible leads are those not
    yet taken whose speed is at most the follower speed plus the threshold;
    the pick is proportional to the reference lead-speed density, falling
    back to the slowest remaining lead when none are eligible.
    """
    n = b_vl_sorted.size
    alive = np.ones(n, dtype=bool)
    assign_sorted = np.empty(v_f.size, dtype=np.int64)
    for i in order_f:
        limit = int(np.searchsorted(b_vl_sorted, v_f[i] + thd, side="right"))
        pick = -1
        if limit > 0:
            mass = np.where(alive[:limit], dens_sorted[:limit], 0.0)
            total = mass.sum()
            if total > 0:
                cum = np.cumsum(mass)
                u = rng.random() * total
                # side="right" with u < total never lands on a zero-mass slot
                pick = min(int(np.searchsorted(cum, u, side="right")), limit - 1)
        if pick < 0 or not alive[pick]:
            pick = int(np.flatnonzero(alive)[0])  # slowest remaining lead
        alive[pick] = False
        assign_sorted[i] = pick
    return assign_sorted


def pair_datasets(
    f_draws: WeightedDataset,
    b_draws: WeightedDataset,
    lead_cols: tuple[str, ...],
    r_speed: float,
    r_accel: float,
    cfg: PairConfig = PairConfig(),
    ref_density: KdeDensity | None = None,
) -> PairResult:
    """Pair follower rows with lead rows, sweeping the share of rows paired
    in random order.

    For each candidate share eta, a random eta-fraction of followers is
    paired first in random order and the rest in ascending follower-speed
    order; each follower takes one remaining lead sampled from the
    reference lead-speed density among eligible leads (lead speed at most
    follower speed plus the threshold). The swept share minimizing the
    distance to the target speed and acceleration correlations is kept,
    provided the severity-leak guards (correlation of lead speed change
    with either paired lead column) stay below the limit.

    ref_density carries the unbiased lead-speed marginal; without one the
    lead draws' own marginal stands in.
    """
    if f_draws.n != b_draws.n:
        raise ValueError("follower and lead draws must have the same row count")
    n = f_draws.n
    v_f = f_draws.col("v_f_init")
    dv_l = f_draws.col("dv_l")
    b_vl = b_draws.col("v_l_init")
    b_al = b_draws.col("a_l_min")

    sort_b = np.argsort(b_vl, kind="stable")
    b_vl_sorted = b_vl[sort_b]
    kde = ref_density if ref_density is not None else KdeDensity(b_vl)
    dens_sorted = np.maximum(kde.evaluate(b_vl_sorted), 1e-300)

    best = None
    losses_by_eta: dict[float, float] = {}
    for eta in cfg.eta_grid:
        rng = np.random.default_rng(derive_seed(cfg.seed, f"pair-eta-{eta:.4f}"))
        n_random = int(round(eta * n))
        perm = rng.permutation(n)
        random_part = perm[:n_random]
        rest = perm[n_random:]
        rest_sorted = rest[np.argsort(v_f[rest], kind="stable")]
        order_f = np.concatenate([random_part, rest_sorted])
        assign_sorted = _pair_once(v_f, b_vl_sorted, dens_sorted, order_f, cfg.rel_speed_thd, rng)
        lead_idx = sort_b[assign_sorted]
        r_vv = weighted_pearson(v_f, b_vl[lead_idx], None)
        r_va = weighted_pearson(v_f, b_al[lead_idx], None)
        g_v = abs(weighted_pearson(dv_l, b_vl[lead_idx], None))
        g_a = abs(weighted_pearson(dv_l, b_al[lead_idx], None))
        if g_v < cfg.guard_limit and g_a < cfg.guard_limit:
            loss = abs(r_vv - r_speed) + abs(r_va - r_accel)
        else:
            loss = math.inf
        losses_by_eta[float(eta)] = loss
        if best is None or loss < best[0]:
            best = (loss, float(eta), lead_idx, r_vv, r_va, g_v, g_a)

    loss, eta, lead_idx, r_vv, r_va, g_v, g_a = best
    columns = {name: f_draws.col(name).copy() for name in f_draws.names}
    for name in lead_cols:
        if name in columns:
            raise ValueError(f"lead column {name} collides with a follower column")
        columns[name] = b_draws.col(name)[lead_idx].copy()
    paired = WeightedDataset(columns=columns, weights=np.ones(n))
    return PairResult(
        paired=paired,
        eta=eta,
        loss=loss,
        corr_speed=r_vv,
        corr_accel=r_va,
        guard_speed=g_v,
        guard_accel=g_a,
        losses_by_eta=losses_by_eta,
    )
