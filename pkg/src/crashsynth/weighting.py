"""Sample weighting and weighted two-sample statistics.

Biased datasets are aligned with reference distributions two ways: a
nearest-neighbor weighting pass that distributes one unit of weight per
reference draw across the nearest data rows, and an iterative proportional
fitting pass that adjusts weights marginal-by-marginal against binned
reference targets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import WeightedDataset

KS_PERMUTATIONS = 1000
IPF_BINS = 20
IPF_MAX_ITER = 100


@dataclass(frozen=True)
class KnnConfig:
    k: int = 1
    k_grid: tuple[int, ...] = tuple(range(1, 21))
    n_draws: int = 10000
    seed: int = 0


@dataclass(frozen=True)
class IpfConfig:
    n_bins: int = IPF_BINS
    max_iter: int = IPF_MAX_ITER


# ---------------------------------------------------------------------------
# Weighted summary statistics


def weighted_mean(x: np.ndarray, w: np.ndarray) -> float:
    return float(np.sum(w * x) / np.sum(w))


def weighted_var(x: np.ndarray, w: np.ndarray) -> float:
    m = weighted_mean(x, w)
    return float(np.sum(w * (x - m) ** 2) / np.sum(w))


def weighted_pearson(x: np.ndarray, y: np.ndarray, w: np.ndarray | None = None) -> float:
    """Weighted Pearson correlation coefficient."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(x) if w is None else np.asarray(w, dtype=float)
    if not (x.shape == y.shape == w.shape):
        raise ValueError("x, y, w must have identical shapes")
    total = np.sum(w)
    if total <= 0:
        raise ValueError("weights must have positive sum")
    dx = x - np.sum(w * x) / total
    dy = y - np.sum(w * y) / total
    vx = np.sum(w * dx * dx)
    vy = np.sum(w * dy * dy)
    if vx <= 0 or vy <= 0:
        raise ValueError("both columns need positive weighted variance")
    return float(np.sum(w * dx * dy) / np.sqrt(vx * vy))


def weighted_quantile(values: np.ndarray, weights: np.ndarray, probs) -> np.ndarray:
    """Step-function quantiles of a weighted sample (smallest value whose
    cumulative weight fraction reaches each probability)."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    order = np.argsort(values, kind="stable")
    vs = values[order]
    cw = np.cumsum(weights[order])
    if cw[-1] <= 0:
        raise ValueError("weights must have positive sum")
    fractions = cw / cw[-1]
    probs = np.atleast_1d(np.asarray(probs, dtype=float))
    idx = np.searchsorted(fractions, np.clip(probs, 0.0, 1.0), side="left")
    return vs[np.minimum(idx, vs.size - 1)]


# ---------------------------------------------------------------------------
# Weighted two-sample Kolmogorov-Smirnov


def _pooled_order(x1, x2):
    xs = np.concatenate([x1, x2])
    order = np.argsort(xs, kind="stable")
    sorted_vals = xs[order]
    # evaluate the ECDF difference only after the last of each tie run
    last_of_run = np.r_[sorted_vals[1:] != sorted_vals[:-1], True]
    return order, last_of_run


def weighted_ks_stat(x1, w1, x2, w2) -> float:
    """sup |F1 - F2| between two weighted step ECDFs over pooled support."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    w1 = np.ones_like(x1) if w1 is None else np.asarray(w1, dtype=float)
    w2 = np.ones_like(x2) if w2 is None else np.asarray(w2, dtype=float)
    if x1.size == 0 or x2.size == 0:
        raise ValueError("both samples must be non-empty")
    s1, s2 = np.sum(w1), np.sum(w2)
    if s1 <= 0 or s2 <= 0:
        raise ValueError("weights must have positive sum")
    order, last = _pooled_order(x1, x2)
    contrib1 = np.concatenate([w1 / s1, np.zeros_like(w2)])[order]
    contrib2 = np.concatenate([np.zeros_like(w1), w2 / s2])[order]
    diff = np.cumsum(contrib1) - np.cumsum(contrib2)
    return float(np.max(np.abs(diff[last])))


def weighted_ks(
    x1, w1, x2, w2, *, n_perm: int = KS_PERMUTATIONS, seed: int = 0
) -> tuple[float, float]:
    """Weighted two-sample KS statistic with a permutation p-value.

    Pooled rows keep their weights; permutations reassign rows between the
    two groups preserving the group sizes. Returns (statistic, p_value)
    with the add-one permutation estimate.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    w1 = np.ones_like(x1) if w1 is None else np.asarray(w1, dtype=float)
    w2 = np.ones_like(x2) if w2 is None else np.asarray(w2, dtype=float)
    stat = weighted_ks_stat(x1, w1, x2, w2)
    if n_perm <= 0:
        return stat, float("nan")

    order, last = _pooled_order(x1, x2)
    w_pool = np.concatenate([w1, w2])[order]
    n1, n = x1.size, x1.size + x2.size
    rng = np.random.default_rng(seed)
    base = np.zeros(n, dtype=bool)
    base[:n1] = True
    exceed = 0
    chunk = max(1, min(n_perm, 4_000_000 // max(n, 1)))
    done = 0
    while done < n_perm:
        m = min(chunk, n_perm - done)
        labels = rng.permuted(np.tile(base, (m, 1)), axis=1)
        wl = np.where(labels, w_pool, 0.0)
        wr = np.where(labels, 0.0, w_pool)
        c1 = np.cumsum(wl, axis=1)
        c2 = np.cumsum(wr, axis=1)
        t1 = c1[:, -1:]
        t2 = c2[:, -1:]
        valid = (t1[:, 0] > 0) & (t2[:, 0] > 0)
        diff = np.abs(c1 / np.where(t1 > 0, t1, 1.0) - c2 / np.where(t2 > 0, t2, 1.0))
        stats = np.max(diff[:, last], axis=1)
        exceed += int(np.sum(stats[valid] >= stat - 1e-12))
        exceed += int(np.sum(~valid))  # degenerate splits count as extreme
        done += m
    return stat, (1.0 + exceed) / (1.0 + n_perm)


# ---------------------------------------------------------------------------
# Nearest-neighbor reference weighting


def draw_rows(ds: WeightedDataset, n: int, seed: int) -> WeightedDataset:
    """Weighted bootstrap: n rows drawn with replacement, weights reset to 1."""
    if n <= 0:
        raise ValueError("n must be > 0")
    total = np.sum(ds.weights)
    if total <= 0:
        raise ValueError("dataset weights must have positive sum")
    rng = np.random.default_rng(seed)
    idx = rng.choice(ds.n, size=n, replace=True, p=ds.weights / total)
    out = ds.subset(idx)
    return out.with_weights(np.ones(n))


def _standardize_pair(raw: np.ndarray, draws: np.ndarray):
    mean = raw.mean(axis=0)
    sd = raw.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (raw - mean) / sd, (draws - mean) / sd


def _topk_neighbors(raw_std: np.ndarray, draw_std: np.ndarray, kmax: int):
    """Indices and distances of each draw's kmax nearest raw rows, ties
    resolved toward the lower raw index."""
    n_raw = raw_std.shape[0]
    kmax = min(kmax, n_raw)
    idx_chunks, dist_chunks = [], []
    block = max(1, 40_000_000 // (8 * max(n_raw, 1)))
    for start in range(0, draw_std.shape[0], block):
        chunk = draw_std[start:start + block]
        d2 = np.maximum(
            ((chunk[:, None, :] - raw_std[None, :, :]) ** 2).sum(axis=2), 0.0
        )
        if kmax < n_raw:
            part = np.argpartition(d2, kmax - 1, axis=1)[:, :kmax]
        else:
            part = np.broadcast_to(np.arange(n_raw), d2.shape).copy()
        d2_part = np.take_along_axis(d2, part, axis=1)
        # sort the slice by raw index first so the stable distance sort
        # breaks exact ties toward lower indices
        by_idx = np.argsort(part, axis=1, kind="stable")
        part = np.take_along_axis(part, by_idx, axis=1)
        d2_part = np.take_along_axis(d2_part, by_idx, axis=1)
        by_dist = np.argsort(d2_part, axis=1, kind="stable")
        idx_chunks.append(np.take_along_axis(part, by_dist, axis=1))
        dist_chunks.append(np.sqrt(np.take_along_axis(d2_part, by_dist, axis=1)))
    return np.vstack(idx_chunks), np.vstack(dist_chunks)


def _knn_weights_from_neighbors(idx: np.ndarray, dist: np.ndarray, k: int, n_raw: int):
    """Algorithm core: distribute one unit of weight per reference draw over
    its k nearest rows, proportional to inverse distance (or split equally
    over exact-distance-zero ties), then scale so the weight total equals
    the count of positively weighted rows."""
    idx_k = idx[:, :k]
    dist_k = dist[:, :k]
    zero_rows = dist_k[:, 0] == 0.0
    with np.errstate(divide="ignore"):
        inv = 1.0 / dist_k
    omega = np.where(zero_rows[:, None], (dist_k == 0.0).astype(float), inv)
    share = omega / omega.sum(axis=1, keepdims=True)
    w = np.bincount(idx_k.ravel(), weights=share.ravel(), minlength=n_raw)
    positive = int(np.count_nonzero(w > 0))
    total = w.sum()
    if total > 0:
        w *= positive / total
    return w


def knn_weight(
    raw: WeightedDataset,
    ref_samples: WeightedDataset,
    match_cols: tuple[str, ...],
    cfg: KnnConfig = KnnConfig(),
) -> WeightedDataset:
    """Weight raw rows so their distribution follows the reference draws.

    ref_samples rows are used directly as the reference draws (one unit of
    weight each); use draw_rows first to sample from a weighted reference.
    Distances are Euclidean over the match columns standardized with the
    raw-side mean and standard deviation.
    """
    if not match_cols:
        raise ValueError("need at least one match column")
    raw_m = raw.matrix(match_cols)
    draw_m = ref_samples.matrix(match_cols)
    if draw_m.shape[0] == 0:
        raise ValueError("reference draws are empty")
    k = int(cfg.k)
    if k < 1 or k > raw.n:
        raise ValueError(f"k must be in [1, {raw.n}], got {k}")
    raw_std, draw_std = _standardize_pair(raw_m, draw_m)
    idx, dist = _topk_neighbors(raw_std, draw_std, k)
    w = _knn_weights_from_neighbors(idx, dist, k, raw.n)
    return raw.with_weights(w)


def select_k(
    raw: WeightedDataset,
    ref_samples: WeightedDataset,
    match_cols: tuple[str, ...],
    cfg: KnnConfig = KnnConfig(),
) -> tuple[int, dict[int, float]]:
    """Pick k from cfg.k_grid minimizing the summed weighted KS distance
    between the weighted raw marginals and the reference draws.

    Returns (best_k, loss_by_k); ties go to the smallest k.
    """
    if not cfg.k_grid:
        raise ValueError("k_grid must be non-empty")
    grid = sorted(set(int(k) for k in cfg.k_grid))
    if grid[0] < 1:
        raise ValueError("k values must be >= 1")
    grid = [k for k in grid if k <= raw.n]
    if not grid:
        raise ValueError("no k in grid is <= row count")
    raw_m = raw.matrix(match_cols)
    draw_m = ref_samples.matrix(match_cols)
    raw_std, draw_std = _standardize_pair(raw_m, draw_m)
    idx, dist = _topk_neighbors(raw_std, draw_std, max(grid))
    losses: dict[int, float] = {}
    best_k, best_loss = None, np.inf
    for k in grid:
        w = _knn_weights_from_neighbors(idx, dist, k, raw.n)
        if not np.any(w > 0):
            losses[k] = np.inf
            continue
        loss = 0.0
        for j, col in enumerate(match_cols):
            loss += weighted_ks_stat(raw_m[:, j], w, draw_m[:, j], None)
        losses[k] = loss
        if loss < best_loss - 1e-15:
            best_k, best_loss = k, loss
    if best_k is None:
        raise ValueError("all k values produced empty weightings")
    return best_k, losses


# ---------------------------------------------------------------------------
# Iterative proportional fitting


@dataclass(frozen=True)
class IpfTarget:
    """One marginal constraint: a data column, the reference marginal it
    should follow, and an optional row subset the constraint applies to.

    mass_share fixes the subset's share of the total weight (the reference
    sub-dataset proportion); without it the adjustment preserves whatever
    mass the subset currently holds."""

    name: str
    column: str
    ref_values: np.ndarray
    ref_weights: np.ndarray | None = None
    subset: np.ndarray | None = None  # boolean row mask; None = all rows
    mass_share: float | None = None

    def __post_init__(self):
        rv = np.asarray(self.ref_values, dtype=float)
        rw = (
            np.ones_like(rv)
            if self.ref_weights is None
            else np.asarray(self.ref_weights, dtype=float)
        )
        if rv.size == 0:
            raise ValueError(f"target {self.name}: empty reference marginal")
        if rw.shape != rv.shape or np.any(rw < 0) or rw.sum() <= 0:
            raise ValueError(f"target {self.name}: bad reference weights")
        if self.mass_share is not None and not (0.0 < self.mass_share <= 1.0):
            raise ValueError(f"target {self.name}: mass_share must lie in (0, 1]")
        object.__setattr__(self, "ref_values", rv)
        object.__setattr__(self, "ref_weights", rw)


def _bin_cuts(ref_values: np.ndarray, ref_weights: np.ndarray, n_bins: int) -> np.ndarray:
    """Interior cut points from reference quantiles; midpoints between
    distinct quantiles keep discrete categories in separate bins."""
    probs = np.linspace(0.0, 1.0, n_bins + 1)
    qs = weighted_quantile(ref_values, ref_weights, probs)
    uq = np.unique(qs)
    if uq.size < 2:
        return np.empty(0)
    return (uq[1:] + uq[:-1]) / 2.0


def ipf_reweight(
    data: WeightedDataset,
    targets: list[IpfTarget],
    cfg: IpfConfig = IpfConfig(),
) -> tuple[WeightedDataset, dict]:
    """Iterative proportional fitting of row weights toward binned reference
    marginals.

    Weights start at 1. Each iteration applies every target in order
    (callers put sub-dataset-scoped targets before global ones), multiplying
    the weights of each bin's rows by the ratio of the target bin mass to
    the current bin mass; bins empty on either side keep their weights. A
    target with a mass_share pins its subset's total at that share of the
    overall weight, so scoped targets re-impose the reference sub-dataset
    proportions on every pass. The weight vector is rescaled to the row
    count after each iteration, and a loss (the weight-mass-scaled sum of
    squared marginal KS statistics) is tracked per iteration. The weights
    of the minimum-loss iteration are returned, with the all-ones start
    included as a candidate.
    """
    if not targets:
        raise ValueError("need at least one target")
    n = data.n
    prepared = []
    for tgt in targets:
        col = data.col(tgt.column)
        subset = (
            np.ones(n, dtype=bool) if tgt.subset is None else np.asarray(tgt.subset, bool)
        )
        if subset.shape != (n,):
            raise ValueError(f"target {tgt.name}: subset mask length != row count")
        if not np.any(subset):
            raise ValueError(f"target {tgt.name}: subset selects no rows")
        cuts = _bin_cuts(tgt.ref_values, tgt.ref_weights, cfg.n_bins)
        ref_bins = np.searchsorted(cuts, tgt.ref_values, side="right")
        ref_mass = np.bincount(ref_bins, weights=tgt.ref_weights, minlength=cuts.size + 1)
        ref_frac = ref_mass / ref_mass.sum()
        row_bins = np.searchsorted(cuts, col[subset], side="right")
        prepared.append(
            {
                "target": tgt,
                "subset": subset,
                "row_bins": row_bins,
                "ref_frac": ref_frac,
                "n_bins": cuts.size + 1,
                "x": col[subset],
            }
        )

    def loss_of(w: np.ndarray) -> float:
        total = 0.0
        for prep in prepared:
            tgt = prep["target"]
            ws = w[prep["subset"]]
            if not np.any(ws > 0):
                total += np.sum(w[prep["subset"]])
                continue
            s = weighted_ks_stat(prep["x"], ws, tgt.ref_values, tgt.ref_weights)
            total += s * s * float(np.sum(ws))
        return total

    w = np.ones(n)
    best_w = w.copy()
    best_loss = loss_of(w)
    best_iter = 0
    losses = [best_loss]
    for iteration in range(1, cfg.max_iter + 1):
        for prep in prepared:
            mask = prep["subset"]
            ws = w[mask]
            cur = np.bincount(prep["row_bins"], weights=ws, minlength=prep["n_bins"])
            total = cur.sum()
            if total <= 0:
                continue
            share = prep["target"].mass_share
            if share is not None:
                total = share * float(w.sum())
            ref_frac = prep["ref_frac"]
            factors = np.ones(prep["n_bins"])
            adjustable = (ref_frac > 0) & (cur > 0)
            factors[adjustable] = ref_frac[adjustable] * total / cur[adjustable]
            w[mask] = ws * factors[prep["row_bins"]]
        total_w = w.sum()
        if total_w <= 0:
            raise ValueError("all weights collapsed to zero")
        w *= n / total_w
        cur_loss = loss_of(w)
        losses.append(cur_loss)
        if cur_loss < best_loss - 1e-15:
            best_loss, best_iter = cur_loss, iteration
            best_w = w.copy()
    diag = {
        "losses": losses,
        "best_iteration": best_iter,
        "best_loss": best_loss,
        "n_targets": len(targets),
    }
    return data.with_weights(best_w), diag
