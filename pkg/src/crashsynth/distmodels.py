"""Distribution models for crash-state and speed-profile parameters.

Three layers: hard categorization of pre-crash states, parametric fits for
single-parameter marginals (generalized gamma for positive quantities,
truncated normal for bounded onset times), and a per-category Gaussian
copula mixture with empirical marginals used to regenerate representative
parameter sets from small weighted datasets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import gammainc, gammaincinv, gammaln, ndtr, ndtri

from .core import WeightedDataset
from .weighting import weighted_pearson

STATE_LABELS = ("S1", "S2", "S3", "S4", "S5", "S6")
STATE_CODES = {label: i + 1 for i, label in enumerate(STATE_LABELS)}
# crash-population shares of the six pre-crash states, and the share of
# stopped-pair crashes caused by an unprovoked launch into the lead vehicle
REFERENCE_STATE_PROPORTIONS = {
    "S1": 0.096,
    "S2": 0.309,
    "S3": 0.131,
    "S4": 0.163,
    "S5": 0.126,
    "S6": 0.175,
}
ABNORMAL_S4_SHARE = 0.562
MIN_COMPONENT_EFF = 10.0
MIN_GENGAMMA_N = 20
MIN_TRUNCNORM_N = 5


# ---------------------------------------------------------------------------
# Pre-crash state categorization


def categorize(v_f: float, v_l: float, a_f_min: float) -> str:
    """Assign a pre-crash state from the two initial speeds and the
    follower's minimum fitted acceleration. Comparisons are exact; zero
    speed means a true standstill, and a_f_min >= 0 means the follower
    never braked before the impact.

    S1/S2: closing on a slower moving lead (follower not braking /
    braking). S3: moving toward a stopped lead. S4: both stopped. S5/S6:
    lead as fast or faster (follower not braking / braking).
    """
    if not (math.isfinite(v_f) and math.isfinite(v_l) and math.isfinite(a_f_min)):
        raise ValueError("non-finite state values")
    if v_f < 0 or v_l < 0:
        raise ValueError(f"negative speed: v_f={v_f}, v_l={v_l}")
    if v_f > v_l > 0:
        return "S1" if a_f_min >= 0 else "S2"
    if v_f > v_l == 0:
        return "S3"
    if v_f == v_l == 0:
        return "S4"
    if 0 < v_f <= v_l:
        return "S5" if a_f_min >= 0 else "S6"
    # remaining: v_f == 0 < v_l, a stopped follower hit by nothing
    raise ValueError(f"uncategorizable state: v_f={v_f}, v_l={v_l}")


def categorize_rows(
    v_f: np.ndarray, v_l: np.ndarray, a_min: np.ndarray
) -> list[str]:
    out = []
    for i in range(len(v_f)):
        try:
            out.append(categorize(float(v_f[i]), float(v_l[i]), float(a_min[i])))
        except ValueError as exc:
            raise ValueError(f"row {i}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# Generalized gamma fit (positive support)


@dataclass(frozen=True)
class GengammaFit:
    """Three-parameter generalized gamma: scale a, shape d, power p."""

    a: float
    d: float
    p: float
    n: int
    ks_stat: float
    converged: bool

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        pos = x > 0
        out[pos] = gammainc(self.d / self.p, (x[pos] / self.a) ** self.p)
        return out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(n)
        return self.a * gammaincinv(self.d / self.p, u) ** (1.0 / self.p)


def _gengamma_nll(theta: np.ndarray, x: np.ndarray, w: np.ndarray) -> float:
    log_a, log_d, log_p = theta
    if abs(log_a) > 20 or abs(log_d) > 8 or abs(log_p) > 8:
        return 1e12
    a, d, p = math.exp(log_a), math.exp(log_d), math.exp(log_p)
    z = x / a
    logpdf = (
        math.log(p)
        - d * math.log(a)
        + (d - 1.0) * np.log(x)
        - z**p
        - gammaln(d / p)
    )
    val = -float(np.sum(w * logpdf) / np.sum(w))
    return val if math.isfinite(val) else 1e12


def _ks_one_sample(x: np.ndarray, w: np.ndarray, cdf_values: np.ndarray) -> float:
    order = np.argsort(x, kind="stable")
    cw = np.cumsum(w[order])
    frac_after = cw / cw[-1]
    frac_before = np.r_[0.0, frac_after[:-1]]
    f = cdf_values[order]
    return float(max(np.max(np.abs(f - frac_after)), np.max(np.abs(f - frac_before))))


def fit_gengamma(x: np.ndarray, w: np.ndarray | None = None) -> GengammaFit:
    """Weighted maximum-likelihood generalized gamma fit.

    Starts from the moment-matched plain gamma (power fixed at 1) and
    refines all three parameters on the log scale with Nelder-Mead.
    """
    x = np.asarray(x, dtype=float)
    w = np.ones_like(x) if w is None else np.asarray(w, dtype=float)
    keep = w > 0
    x, w = x[keep], w[keep]
    if x.size < MIN_GENGAMMA_N:
        raise ValueError(f"need at least {MIN_GENGAMMA_N} positively weighted values")
    if np.any(x <= 0):
        raise ValueError("values must be strictly positive")
    m = weighted_mean_arr(x, w)
    v = max(weighted_var_arr(x, w), 1e-12)
    start = np.array([math.log(v / m), math.log(m * m / v), 0.0])
    res = optimize.minimize(
        _gengamma_nll,
        start,
        args=(x, w),
        method="Nelder-Mead",
        options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 4000, "maxfev": 6000},
    )
    log_a, log_d, log_p = res.x
    fit = GengammaFit(
        a=math.exp(log_a),
        d=math.exp(log_d),
        p=math.exp(log_p),
        n=int(x.size),
        ks_stat=0.0,
        converged=bool(res.success),
    )
    ks = _ks_one_sample(x, w, fit.cdf(x))
    object.__setattr__(fit, "ks_stat", float(ks))
    return fit


def weighted_mean_arr(x: np.ndarray, w: np.ndarray) -> float:
    return float(np.sum(w * x) / np.sum(w))


def weighted_var_arr(x: np.ndarray, w: np.ndarray) -> float:
    m = weighted_mean_arr(x, w)
    return float(np.sum(w * (x - m) ** 2) / np.sum(w))


# ---------------------------------------------------------------------------
# Truncated normal fit (bounded support)


@dataclass(frozen=True)
class TruncNormalFit:
    mu: float
    sigma: float
    lo: float
    hi: float
    n: int
    ks_stat: float
    converged: bool

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        alpha = ndtr((self.lo - self.mu) / self.sigma)
        beta = ndtr((self.hi - self.mu) / self.sigma)
        raw = ndtr((np.clip(x, self.lo, self.hi) - self.mu) / self.sigma)
        return (raw - alpha) / (beta - alpha)

    def ppf(self, u) -> np.ndarray:
        alpha = ndtr((self.lo - self.mu) / self.sigma)
        beta = ndtr((self.hi - self.mu) / self.sigma)
        u = np.clip(np.asarray(u, dtype=float), 1e-12, 1 - 1e-12)
        return self.mu + self.sigma * ndtri(alpha + (beta - alpha) * u)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        alpha = ndtr((self.lo - self.mu) / self.sigma)
        beta = ndtr((self.hi - self.mu) / self.sigma)
        u = alpha + (beta - alpha) * rng.random(n)
        return self.mu + self.sigma * ndtri(u)


def fit_truncnormal(
    x: np.ndarray, lo: float, hi: float, w: np.ndarray | None = None
) -> TruncNormalFit:
    """Weighted maximum-likelihood normal fit truncated to [lo, hi]."""
    x = np.asarray(x, dtype=float)
    w = np.ones_like(x) if w is None else np.asarray(w, dtype=float)
    keep = w > 0
    x, w = x[keep], w[keep]
    if x.size < MIN_TRUNCNORM_N:
        raise ValueError(f"need at least {MIN_TRUNCNORM_N} positively weighted values")
    if np.any(x < lo) or np.any(x > hi):
        raise ValueError("values outside the truncation interval")
    m0 = weighted_mean_arr(x, w)
    s0 = max(math.sqrt(weighted_var_arr(x, w)), 1e-3)

    def nll(theta):
        mu, log_sigma = theta
        if abs(log_sigma) > 8 or abs(mu) > 1e3:
            return 1e12
        sigma = math.exp(log_sigma)
        alpha = ndtr((lo - mu) / sigma)
        beta = ndtr((hi - mu) / sigma)
        span = beta - alpha
        if span <= 1e-300:
            return 1e12
        ll = -math.log(sigma) - 0.5 * ((x - mu) / sigma) ** 2 - math.log(span)
        val = -float(np.sum(w * ll) / np.sum(w))
        return val if math.isfinite(val) else 1e12

    res = optimize.minimize(
        nll,
        np.array([m0, math.log(s0)]),
        method="Nelder-Mead",
        options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 2000},
    )
    mu, sigma = float(res.x[0]), float(math.exp(res.x[1]))
    fit = TruncNormalFit(
        mu=mu, sigma=sigma, lo=float(lo), hi=float(hi),
        n=int(x.size), ks_stat=0.0, converged=bool(res.success),
    )
    ks = _ks_one_sample(x, w, fit.cdf(x))
    object.__setattr__(fit, "ks_stat", float(ks))
    return fit


# ---------------------------------------------------------------------------
# Off-road glance duration marginal


@dataclass(frozen=True)
class GlanceMarginal:
    """Glance-duration model: a point mass at zero (attentive drivers) plus
    a capped exponential tail for off-road glance lengths.

    Crash populations oversample long glances; the tail must reach the cap
    or steady-lead scenarios can never stay unmitigated to the impact."""

    p_zero: float = 0.45
    scale: float = 1.2
    cap: float = 4.5

    def ppf(self, u) -> np.ndarray:
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0 - 1e-12)
        tail = (u - self.p_zero) / (1.0 - self.p_zero)
        vals = np.where(u <= self.p_zero, 0.0,
                        np.minimum(-self.scale * np.log1p(-np.clip(tail, 0, 1 - 1e-15)),
                                   self.cap))
        return vals

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.ppf(rng.random(n))


# ---------------------------------------------------------------------------
# Row labelers for the copula mixture


class StateLabeler:
    """Labels rows by pre-crash state from the initial speeds and the
    follower's minimum fitted acceleration, and re-checks the same
    conditions on sampled rows.

    State S1 never brakes by definition, so its a_f_min is pinned to the
    constant 0 rather than modeled."""

    name = "state"
    columns = ("v_f_init", "v_l_init", "a_f_min")

    def __init__(self, v_f_col="v_f_init", v_l_col="v_l_init", a_col="a_f_min"):
        self.v_f_col = v_f_col
        self.v_l_col = v_l_col
        self.a_col = a_col

    def label_rows(self, ds: WeightedDataset) -> list[str]:
        return categorize_rows(ds.col(self.v_f_col), ds.col(self.v_l_col), ds.col(self.a_col))

    def forced_constants(self, label: str) -> dict[str, float]:
        return {self.a_col: 0.0} if label == "S1" else {}

    def row_ok(self, label: str, row: dict[str, float]) -> bool:
        if row.get("d_init", 1.0) <= 0.0:
            return False
        try:
            got = categorize(row[self.v_f_col], row[self.v_l_col], row[self.a_col])
        except ValueError:
            return False
        return got == label


class PatternLabeler:
    """Labels speed-profile rows by which segments have positive duration
    plus the sign of the primary slope, with a dedicated label for profiles
    that are a standstill throughout."""

    name = "pattern"

    def __init__(self, tiny: float = 1e-9):
        self.tiny = tiny

    def _label(self, v_c, a_1, a_2, tau_s, tau_1, tau_2) -> str:
        has2 = tau_2 > self.tiny
        has1 = tau_1 > self.tiny
        has_s = tau_s > self.tiny
        if not (has1 or has2):
            if not has_s:
                raise ValueError("profile with no positive-duration segment")
            return "stat" if abs(v_c) <= self.tiny else "steady"
        segs = ("2" if has2 else "") + ("1" if has1 else "") + ("S" if has_s else "")
        if has1:
            sign = "d" if a_1 < 0 else "a"
        else:
            sign = "d" if a_2 < 0 else "a"
        return f"{segs}_{sign}"

    def label_rows(self, ds: WeightedDataset) -> list[str]:
        v_c, a_1, a_2 = ds.col("v_c"), ds.col("a_1"), ds.col("a_2")
        tau_s, tau_1, tau_2 = ds.col("tau_s"), ds.col("tau_1"), ds.col("tau_2")
        return [
            self._label(v_c[i], a_1[i], a_2[i], tau_s[i], tau_1[i], tau_2[i])
            for i in range(ds.n)
        ]

    def forced_constants(self, label: str) -> dict[str, float]:
        return {}

    def row_ok(self, label: str, row: dict[str, float]) -> bool:
        vals = [row[c] for c in ("v_c", "a_1", "a_2", "tau_s", "tau_1", "tau_2")]
        try:
            got = self._label(*vals)
        except ValueError:
            return False
        if got != label:
            return False
        duration = row["tau_s"] + row["tau_1"] + row["tau_2"]
        if duration > 5.0 + 1e-9 or min(row["tau_s"], row["tau_1"], row["tau_2"]) < 0:
            return False
        v_init = row["v_c"] - row["a_1"] * row["tau_1"] - row["a_2"] * row["tau_2"]
        mid = row["v_c"] - row["a_1"] * row["tau_1"]
        return row["v_c"] >= 0 and v_init >= 0 and mid >= 0


# ---------------------------------------------------------------------------
# Gaussian copula mixture over labeled components


@dataclass(frozen=True)
class MixtureConfig:
    min_effective: float = MIN_COMPONENT_EFF
    strict: bool = False
    constant_tol: float = 1e-9
    max_reject_rounds: int = 1000


@dataclass
class CopulaComponent:
    label: str
    proportion: float
    modeled: tuple[str, ...]
    constants: dict[str, float]
    # weighted order statistics per modeled column: (values, mid-rank fractions)
    marginal_values: dict[str, np.ndarray]
    marginal_fracs: dict[str, np.ndarray]
    corr: np.ndarray
    chol: np.ndarray


@dataclass
class BootstrapComponent:
    """Fallback for components too small to support a copula fit: sampling
    bootstraps the original weighted rows."""

    label: str
    proportion: float
    columns: tuple[str, ...]
    rows: np.ndarray
    weights: np.ndarray


@dataclass
class MixtureModel:
    param_cols: tuple[str, ...]
    labels: tuple[str, ...]
    components: dict
    labeler_name: str


def _hazen_fracs(values: np.ndarray, weights: np.ndarray):
    """Sorted values with mid-rank cumulative weight fractions."""
    order = np.argsort(values, kind="stable")
    vs = values[order]
    ws = weights[order]
    cw = np.cumsum(ws)
    total = cw[-1]
    fracs = (cw - 0.5 * ws) / total
    return vs, fracs


def _normal_scores(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ws = weights[order]
    cw = np.cumsum(ws)
    fracs = (cw - 0.5 * ws) / cw[-1]
    scores = np.empty_like(values)
    scores[order] = ndtri(np.clip(fracs, 1e-12, 1 - 1e-12))
    return scores


def _psd_corr(r: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(r)
    if np.all(vals > 1e-8):
        return r
    vals = np.maximum(vals, 1e-8)
    fixed = vecs @ np.diag(vals) @ vecs.T
    scale = np.sqrt(np.diag(fixed))
    fixed = fixed / np.outer(scale, scale)
    np.fill_diagonal(fixed, 1.0)
    return fixed


def _effective_size(w: np.ndarray) -> float:
    s = np.sum(w)
    q = np.sum(w * w)
    return float(s * s / q) if q > 0 else 0.0


def fit_mixture(
    ds: WeightedDataset,
    param_cols: tuple[str, ...],
    labeler,
    cfg: MixtureConfig = MixtureConfig(),
) -> MixtureModel:
    """Fit a per-label Gaussian copula mixture to a weighted dataset.

    Within each label: columns whose positively weighted values span less
    than constant_tol are held constant; the rest get weighted empirical
    marginals and a correlation matrix estimated from mid-rank normal
    scores. The labeler may also force columns to a constant for specific
    labels (the no-braking states pin a_f_min at 0). Labels whose
    effective sample size falls below min_effective fall back to a
    weighted bootstrap of their rows (or raise in strict mode).
    """
    labels = labeler.label_rows(ds)
    total_w = float(np.sum(ds.weights))
    if total_w <= 0:
        raise ValueError("dataset weights must have positive sum")
    unique = sorted(set(labels))
    label_arr = np.array(labels)
    components: dict = {}
    for label in unique:
        mask = label_arr == label
        rows_w = ds.weights[mask]
        keep = rows_w > 0
        if not np.any(keep):
            continue
        proportion = float(np.sum(rows_w) / total_w)
        sub_vals = {c: ds.col(c)[mask][keep] for c in param_cols}
        sub_w = rows_w[keep]
        for c, val in labeler.forced_constants(label).items():
            if c in sub_vals:
                sub_vals[c] = np.full(sub_vals[c].shape, float(val))
        n_eff = _effective_size(sub_w)
        if n_eff < cfg.min_effective:
            if cfg.strict:
                raise ValueError(
                    f"component {label}: effective size {n_eff:.1f} below "
                    f"{cfg.min_effective}"
                )
            rows = np.column_stack([sub_vals[c] for c in param_cols])
            components[label] = BootstrapComponent(
                label=label, proportion=proportion, columns=tuple(param_cols),
                rows=rows, weights=sub_w.copy(),
            )
            continue
        constants: dict[str, float] = {}
        modeled: list[str] = []
        for c in param_cols:
            v = sub_vals[c]
            if float(v.max() - v.min()) <= cfg.constant_tol:
                constants[c] = float(np.sum(sub_w * v) / np.sum(sub_w))
            else:
                modeled.append(c)
        marg_v: dict[str, np.ndarray] = {}
        marg_f: dict[str, np.ndarray] = {}
        scores = []
        for c in modeled:
            vs, fr = _hazen_fracs(sub_vals[c], sub_w)
            marg_v[c] = vs
            marg_f[c] = fr
            scores.append(_normal_scores(sub_vals[c], sub_w))
        q = len(modeled)
        if q == 0:
            corr = np.empty((0, 0))
            chol = np.empty((0, 0))
        else:
            corr = np.eye(q)
            for i in range(q):
                for j in range(i + 1, q):
                    corr[i, j] = corr[j, i] = weighted_pearson(scores[i], scores[j], sub_w)
            corr = _psd_corr(corr)
            chol = np.linalg.cholesky(corr)
        components[label] = CopulaComponent(
            label=label, proportion=proportion, modeled=tuple(modeled),
            constants=constants, marginal_values=marg_v, marginal_fracs=marg_f,
            corr=corr, chol=chol,
        )
    if not components:
        raise ValueError("no components with positive weight")
    return MixtureModel(
        param_cols=tuple(param_cols),
        labels=tuple(sorted(components)),
        components=components,
        labeler_name=labeler.name,
    )


def _sample_component(comp, n: int, rng: np.random.Generator, labeler, cfg: MixtureConfig):
    if isinstance(comp, BootstrapComponent):
        p = comp.weights / comp.weights.sum()
        idx = rng.choice(comp.rows.shape[0], size=n, replace=True, p=p)
        return {c: comp.rows[idx, j].copy() for j, c in enumerate(comp.columns)}

    all_cols = tuple(comp.modeled) + tuple(comp.constants)
    out = {c: np.empty(n) for c in all_cols}
    filled = 0
    q = len(comp.modeled)
    rounds = 0
    while filled < n:
        rounds += 1
        if rounds > cfg.max_reject_rounds:
            raise RuntimeError(
                f"component {comp.label}: rejection sampling stalled "
                f"({filled}/{n} rows after {rounds - 1} rounds)"
            )
        need = n - filled
        batch = max(16, int(need * 1.4) + 8)
        if q > 0:
            z = rng.standard_normal((batch, q)) @ comp.chol.T
            u = ndtr(z)
            drawn = {
                c: np.interp(u[:, j], comp.marginal_fracs[c], comp.marginal_values[c])
                for j, c in enumerate(comp.modeled)
            }
        else:
            drawn = {}
        for c, val in comp.constants.items():
            drawn[c] = np.full(batch, val)
        ok = np.ones(batch, dtype=bool)
        for i in range(batch):
            row = {c: float(drawn[c][i]) for c in all_cols}
            if not labeler.row_ok(comp.label, row):
                ok[i] = False
        take = min(int(np.sum(ok)), need)
        sel = np.flatnonzero(ok)[:take]
        for c in all_cols:
            out[c][filled:filled + take] = drawn[c][sel]
        filled += take
    return out


def sample_mixture(
    model: MixtureModel,
    n: int,
    seed: int,
    labeler,
    cfg: MixtureConfig = MixtureConfig(),
) -> tuple[WeightedDataset, list[str]]:
    """Draw n rows from the mixture with component counts apportioned by
    largest remainder, so realized label shares track the fitted ones."""
    if n <= 0:
        raise ValueError("n must be > 0")
    rng = np.random.default_rng(seed)
    labels = model.labels
    props = np.array([model.components[lb].proportion for lb in labels])
    props = props / props.sum()
    raw = props * n
    counts = np.floor(raw).astype(int)
    short = n - counts.sum()
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    col_chunks: dict[str, list[np.ndarray]] = {c: [] for c in model.param_cols}
    out_labels: list[str] = []
    for lb, cnt in zip(labels, counts):
        if cnt == 0:
            continue
        drawn = _sample_component(model.components[lb], int(cnt), rng, labeler, cfg)
        for c in model.param_cols:
            col_chunks[c].append(drawn[c])
        out_labels.extend([lb] * int(cnt))
    columns = {c: np.concatenate(col_chunks[c]) for c in model.param_cols}
    ds = WeightedDataset(columns=columns, weights=np.ones(n))
    return ds, out_labels


# ---------------------------------------------------------------------------
# JSON serialization for mixture models


def mixture_to_dict(model: MixtureModel) -> dict:
    comps = {}
    for lb, comp in model.components.items():
        if isinstance(comp, BootstrapComponent):
            comps[lb] = {
                "kind": "bootstrap",
                "proportion": comp.proportion,
                "columns": list(comp.columns),
                "rows": comp.rows.tolist(),
                "weights": comp.weights.tolist(),
            }
        else:
            comps[lb] = {
                "kind": "copula",
                "proportion": comp.proportion,
                "modeled": list(comp.modeled),
                "constants": comp.constants,
                "marginal_values": {c: v.tolist() for c, v in comp.marginal_values.items()},
                "marginal_fracs": {c: v.tolist() for c, v in comp.marginal_fracs.items()},
                "corr": comp.corr.tolist(),
            }
    return {
        "param_cols": list(model.param_cols),
        "labels": list(model.labels),
        "labeler": model.labeler_name,
        "components": comps,
    }


def mixture_from_dict(payload: dict) -> MixtureModel:
    components: dict = {}
    for lb, d in payload["components"].items():
        if d["kind"] == "bootstrap":
            components[lb] = BootstrapComponent(
                label=lb,
                proportion=float(d["proportion"]),
                columns=tuple(d["columns"]),
                rows=np.asarray(d["rows"], dtype=float).reshape(len(d["weights"]), -1),
                weights=np.asarray(d["weights"], dtype=float),
            )
        else:
            corr = np.asarray(d["corr"], dtype=float)
            q = corr.shape[0] if corr.size else 0
            corr = corr.reshape(q, q)
            chol = np.linalg.cholesky(corr) if q else np.empty((0, 0))
            components[lb] = CopulaComponent(
                label=lb,
                proportion=float(d["proportion"]),
                modeled=tuple(d["modeled"]),
                constants={k: float(v) for k, v in d["constants"].items()},
                marginal_values={
                    c: np.asarray(v, dtype=float) for c, v in d["marginal_values"].items()
                },
                marginal_fracs={
                    c: np.asarray(v, dtype=float) for c, v in d["marginal_fracs"].items()
                },
                corr=corr,
                chol=chol,
            )
    return MixtureModel(
        param_cols=tuple(payload["param_cols"]),
        labels=tuple(payload["labels"]),
        components=components,
        labeler_name=payload["labeler"],
    )
