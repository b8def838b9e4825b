"""Staged generation pipeline from raw crash datasets to a validated,
reweighted synthetic crash dataset.

Stages, in order:

  fit-profiles    fit lead speed profiles and extract per-event states from
                  the kinematic series datasets
  fit-dists       fit the mass-ratio and launch-onset distributions
  fuse            combine follower-side severity tables, deduce lead speed
                  change, and weight toward the unbiased lead reference
  model-refb      pair follower severity with lead kinematics, weight the
                  series states toward the paired set, fit the state mixture
  sample-refsb    sample the pre-crash state reference from the mixture
  match-simulate  assemble and simulate synthetic scenarios
  ipf             reweight simulated scenarios to the marginal targets
  validate        compare the weighted output against the references

Each stage reads its inputs from disk (raw input files and artifacts of
earlier stages) and writes its artifacts into the output directory, so any
stage can be rerun on its own. All randomness is derived from one master
seed; reruns with the same seed and inputs are byte-identical.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .core import (
    EVENT_END,
    TA_SENTINEL,
    SchemaError,
    WeightedDataset,
    derive_seed,
    load_events,
    load_mass_records,
    read_table,
    write_table,
)
from .distmodels import (
    STATE_CODES,
    STATE_LABELS,
    GengammaFit,
    GlanceMarginal,
    MixtureConfig,
    StateLabeler,
    TruncNormalFit,
    categorize,
    fit_gengamma,
    fit_mixture,
    fit_truncnormal,
    mixture_from_dict,
    mixture_to_dict,
    sample_mixture,
)
from .driver import BrakeParams, IdmParams
from .fusion import (
    KdeDensity,
    PairConfig,
    build_ref_b,
    build_ref_f,
    deduce_delta_v,
    elbow_threshold,
    pair_datasets,
    weight_to_reference,
)
from .impact import restitution
from .profilefit import fit_piecewise, min_fitted_accel
from .simengine import MatchConfig, SimConfig, match_and_simulate
from .validation import (
    ValidationConfig,
    build_report,
    label_proportions,
    write_report_csv,
    write_report_json,
)
from .weighting import (
    IpfConfig,
    IpfTarget,
    KnnConfig,
    draw_rows,
    ipf_reweight,
    weighted_pearson,
)

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - py310 fallback
    import tomli as tomllib  # type: ignore[no-redef]

INPUT_NAMES = ("ciss_m", "ciss_f", "shrp2_f", "shrp2_b", "pcm_b", "ref_l", "ref_sl")
STAGES = (
    "fit-profiles",
    "fit-dists",
    "fuse",
    "model-refb",
    "sample-refsb",
    "match-simulate",
    "ipf",
    "validate",
)
STATE_PARAM_COLS = ("d_init", "v_f_init", "a_f_min", "v_l_init", "a_l_min")
PROFILE_COLS = ("v_c", "a_1", "a_2", "tau_s", "tau_1", "tau_2")


@dataclass
class PipelineConfig:
    inputs: dict[str, str] = field(
        default_factory=lambda: {n: os.path.join("fixtures", f"{n}.csv") for n in INPUT_NAMES}
    )
    out_dir: str = "out"
    seed: int = 0
    n_target: int = 5000
    ref_sb_size: int = 10000
    pair_draws: int = 2000
    emit_tick_logs: bool = False
    rel_speed_override: float | None = None
    idm: IdmParams = field(default_factory=IdmParams)
    brake: BrakeParams = field(default_factory=BrakeParams)
    sim: SimConfig = field(default_factory=SimConfig)
    knn: KnnConfig = field(default_factory=KnnConfig)
    ipf: IpfConfig = field(default_factory=IpfConfig)
    pair: PairConfig = field(default_factory=PairConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    validation: ValidationConfig = field(default_factory=ValidationConfig)
    glance: GlanceMarginal = field(default_factory=GlanceMarginal)
    # desired-headway target marginal: N(1.5, 0.4^2) truncated to physical range
    headway_mu: float = 1.5
    headway_sigma: float = 0.4
    headway_lo: float = 0.5
    headway_hi: float = 3.0
    # launch-onset fallback when too few abnormal events are observed
    ta_mu: float = 2.2
    ta_sigma: float = 1.0

    def headway_dist(self) -> TruncNormalFit:
        return TruncNormalFit(
            mu=self.headway_mu, sigma=self.headway_sigma,
            lo=self.headway_lo, hi=self.headway_hi,
            n=0, ks_stat=float("nan"), converged=True,
        )

    def validate(self) -> "PipelineConfig":
        missing = [n for n in INPUT_NAMES if n not in self.inputs]
        if missing:
            raise SchemaError(f"config: missing input paths for {missing}")
        if self.n_target <= 0 or self.ref_sb_size <= 0 or self.pair_draws <= 0:
            raise SchemaError("config: n_target, ref_sb_size, pair_draws must be > 0")
        return self


def _build_section(cls, data: dict, section: str):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise SchemaError(f"config section [{section}]: unknown keys {unknown}")
    return cls(**data)


def load_config(path: str | None = None, **overrides) -> PipelineConfig:
    """Build a pipeline configuration from an optional TOML file.

    Recognized sections: run, inputs, idm, brake, sim, knn, ipf, pair,
    match, validate, glance, headway, t_abnormal. Keyword overrides
    (seed, n_target, out_dir, emit_tick_logs, inputs) win over the file.
    """
    if path is None:
        data = {}
    else:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    known = {
        "run", "inputs", "idm", "brake", "sim", "knn", "ipf",
        "pair", "match", "validate", "glance", "headway", "t_abnormal",
    }
    unknown = sorted(set(data) - known)
    if unknown:
        raise SchemaError(f"config: unknown sections {unknown}")

    cfg = PipelineConfig()
    run = dict(data.get("run", {}))
    rel_override = run.pop("rel_speed_thd", None)
    run_allowed = {
        "seed", "n_target", "out_dir", "ref_sb_size", "pair_draws", "emit_tick_logs",
    }
    bad = sorted(set(run) - run_allowed)
    if bad:
        raise SchemaError(f"config section [run]: unknown keys {bad}")
    for key, value in run.items():
        setattr(cfg, key, value)
    if rel_override is not None:
        cfg.rel_speed_override = float(rel_override)

    if "inputs" in data:
        bad = sorted(set(data["inputs"]) - set(INPUT_NAMES))
        if bad:
            raise SchemaError(f"config section [inputs]: unknown keys {bad}")
        cfg.inputs.update({k: str(v) for k, v in data["inputs"].items()})

    section_types = {
        "idm": ("idm", IdmParams),
        "brake": ("brake", BrakeParams),
        "sim": ("sim", SimConfig),
        "knn": ("knn", KnnConfig),
        "ipf": ("ipf", IpfConfig),
        "match": ("match", MatchConfig),
        "validate": ("validation", ValidationConfig),
        "glance": ("glance", GlanceMarginal),
    }
    for section, (attr, cls) in section_types.items():
        if section in data:
            body = dict(data[section])
            if section == "knn" and "k_grid" in body:
                body["k_grid"] = tuple(int(k) for k in body["k_grid"])
            setattr(cfg, attr, _build_section(cls, body, section))
    if "pair" in data:
        body = dict(data["pair"])
        step = body.pop("eta_step", None)
        if step is not None:
            body["eta_grid"] = tuple(
                float(x) for x in np.round(np.arange(0.0, 1.0 + float(step) / 2, float(step)), 6)
            )
        cfg.pair = _build_section(PairConfig, body, "pair")
    if "headway" in data:
        body = dict(data["headway"])
        bad = sorted(set(body) - {"mu", "sigma", "lo", "hi"})
        if bad:
            raise SchemaError(f"config section [headway]: unknown keys {bad}")
        for k, v in body.items():
            setattr(cfg, f"headway_{k}", float(v))
    if "t_abnormal" in data:
        body = dict(data["t_abnormal"])
        bad = sorted(set(body) - {"mu", "sigma"})
        if bad:
            raise SchemaError(f"config section [t_abnormal]: unknown keys {bad}")
        for k, v in body.items():
            setattr(cfg, f"ta_{k}", float(v))

    for key, value in overrides.items():
        if value is None:
            continue
        if key == "inputs":
            cfg.inputs.update(value)
        elif hasattr(cfg, key):
            setattr(cfg, key, value)
        else:
            raise ValueError(f"unknown config override {key!r}")
    return cfg.validate()


# ---------------------------------------------------------------------------
# Small shared helpers


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _read_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _numeric_dataset(path: str, skip: tuple[str, ...] = ()) -> WeightedDataset:
    """Load a CSV as a weighted dataset, ignoring non-numeric columns."""
    raw = read_table(path)
    cols: dict[str, np.ndarray] = {}
    weights = None
    for name, values in raw.items():
        if name in skip:
            continue
        try:
            arr = np.array([float(v) for v in values])
        except ValueError:
            continue
        if name == "w":
            weights = arr
        else:
            cols[name] = arr
    if not cols:
        raise SchemaError(f"{path}: no numeric columns")
    return WeightedDataset(cols, weights)


def _with_profile_derived(ds: WeightedDataset) -> WeightedDataset:
    """Fill in whichever of v_c, v_l_init, and a_l_min is missing from the
    lead profile parameters. The two speed anchors convert into each other
    through the ramp segments; the minimum acceleration scans the segments
    with positive duration (a steady segment contributes 0)."""
    a_1, a_2 = ds.col("a_1"), ds.col("a_2")
    tau_s, tau_1, tau_2 = ds.col("tau_s"), ds.col("tau_1"), ds.col("tau_2")
    cols = {name: ds.col(name) for name in ds.names}
    if "v_c" in ds.names:
        if "v_l_init" not in ds.names:
            cols["v_l_init"] = ds.col("v_c") - a_1 * tau_1 - a_2 * tau_2
    elif "v_l_init" in ds.names:
        cols["v_c"] = ds.col("v_l_init") + a_1 * tau_1 + a_2 * tau_2
    else:
        raise SchemaError("profile table needs a v_c or v_l_init column")
    if "a_l_min" not in ds.names:
        a_min = np.full(ds.n, np.inf)
        a_min = np.where(tau_s > 0, np.minimum(a_min, 0.0), a_min)
        a_min = np.where(tau_1 > 0, np.minimum(a_min, a_1), a_min)
        a_min = np.where(tau_2 > 0, np.minimum(a_min, a_2), a_min)
        cols["a_l_min"] = a_min
    return WeightedDataset(cols, ds.weights.copy())


def _truncnorm_from_dict(d: dict) -> TruncNormalFit:
    return TruncNormalFit(
        mu=d["mu"], sigma=d["sigma"], lo=d["lo"], hi=d["hi"],
        n=int(d.get("n", 0)), ks_stat=d.get("ks_stat", float("nan")),
        converged=bool(d.get("converged", True)),
    )


def _gengamma_from_dict(d: dict) -> GengammaFit:
    return GengammaFit(
        a=d["a"], d=d["d"], p=d["p"], n=int(d.get("n", 0)),
        ks_stat=d.get("ks_stat", float("nan")), converged=bool(d.get("converged", True)),
    )


# ---------------------------------------------------------------------------
# Pipeline


class Pipeline:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg.validate()
        os.makedirs(cfg.out_dir, exist_ok=True)

    def art(self, name: str) -> str:
        return os.path.join(self.cfg.out_dir, name)

    def _require_inputs(self, *names: str) -> None:
        missing = [
            f"{n} ({self.cfg.inputs[n]})"
            for n in names
            if not os.path.exists(self.cfg.inputs[n])
        ]
        if missing:
            raise FileNotFoundError(f"missing input files: {', '.join(missing)}")

    def _require_artifacts(self, *names: str) -> None:
        missing = [n for n in names if not os.path.exists(self.art(n))]
        if missing:
            raise FileNotFoundError(
                f"missing artifacts {missing} in {self.cfg.out_dir}; "
                "run the earlier stages first"
            )

    # -- stage 1 ------------------------------------------------------------

    def stage_fit_profiles(self) -> dict:
        """Fit lead profiles on the series window and extract per-event
        pre-crash states, including launch-onset estimates for crashes
        caused by an unprovoked start from standstill."""
        self._require_inputs("shrp2_b", "pcm_b")
        events = []
        for key in ("shrp2_b", "pcm_b"):
            events.extend(load_events(self.cfg.inputs[key], schema="series"))
        prof_cols: dict[str, list] = {k: [] for k in (
            "event_id", "source", *PROFILE_COLS, "n_b", "r2_adj",
        )}
        state_cols: dict[str, list] = {k: [] for k in (
            "event_id", "source", "v_f_init", "v_l_init", "a_f_min", "a_l_min",
            "d_init", "dv_pre", "state_code", "abnormal", "t_abnormal", "label",
        )}
        skipped = []
        for ev in events:
            if ev.v_l is None or ev.v_f is None or ev.d is None:
                skipped.append((ev.event_id, "missing speed or gap series"))
                continue
            if float(ev.d[0]) <= 0.0:
                skipped.append((ev.event_id, "non-positive initial gap"))
                continue
            mask = ev.t <= EVENT_END + 1e-9
            fit = fit_piecewise(ev.t[mask], ev.v_l[mask])
            p = fit.profile
            # the follower series gets the same treatment; its fitted minimum
            # acceleration separates braking from non-braking states
            fit_f = fit_piecewise(ev.t[mask], ev.v_f[mask])
            p_f = fit_f.profile
            v_f_init = float(ev.v_f[0])
            v_l_init = float(p.v_l_init)
            a_l_min = float(min_fitted_accel(p))
            a_f_min = float(min_fitted_accel(p_f))
            try:
                label = categorize(v_f_init, v_l_init, a_f_min)
            except ValueError as exc:
                skipped.append((ev.event_id, str(exc)))
                continue
            # follower speed at impact comes from its own fitted profile,
            # which extrapolates the final segment to the moment of contact
            v_f_impact = max(float(p_f.v_c), 0.0)
            dv_pre = max(v_f_impact - p.v_c, 0.1)
            abnormal = False
            t_a = math.inf
            if label == "S4" and float(np.max(ev.v_f)) > 0.05:
                run_max = np.maximum.accumulate(ev.v_f)
                drawdown = float(np.max(run_max - ev.v_f))
                if drawdown < 0.3:  # moved off but never slowed: a launch
                    abnormal = True
                    i = int(np.argmax(ev.v_f > 1e-9))
                    launch_slope = (
                        (ev.v_f[i + 1] - ev.v_f[i]) / (ev.t[i + 1] - ev.t[i])
                        if i + 1 < ev.v_f.size and ev.v_f[i + 1] > ev.v_f[i]
                        else self.cfg.sim.abnormal_accel
                    )
                    t_launch = ev.t[i] - ev.v_f[i] / launch_slope
                    t_a = float(np.clip(t_launch + 5.0, 0.05, 4.95))
            prof_cols["event_id"].append(ev.event_id)
            prof_cols["source"].append(ev.source)
            for c in PROFILE_COLS:
                prof_cols[c].append(getattr(p, c))
            prof_cols["n_b"].append(fit.n_b)
            prof_cols["r2_adj"].append(fit.r2_adj)
            state_cols["event_id"].append(ev.event_id)
            state_cols["source"].append(ev.source)
            state_cols["v_f_init"].append(v_f_init)
            state_cols["v_l_init"].append(v_l_init)
            state_cols["a_f_min"].append(a_f_min)
            state_cols["a_l_min"].append(a_l_min)
            state_cols["d_init"].append(float(ev.d[0]))
            state_cols["dv_pre"].append(dv_pre)
            state_cols["state_code"].append(float(STATE_CODES[label]))
            state_cols["abnormal"].append(1.0 if abnormal else 0.0)
            state_cols["t_abnormal"].append(t_a if abnormal else TA_SENTINEL)
            state_cols["label"].append(label)
        if not state_cols["event_id"]:
            raise SchemaError("no usable series events")
        write_table(self.art("profiles_lead.csv"), prof_cols)
        write_table(self.art("states.csv"), state_cols)
        diag = {
            "n_events": len(events),
            "n_fitted": len(state_cols["event_id"]),
            "n_abnormal": int(sum(state_cols["abnormal"])),
            "skipped": [list(s) for s in skipped],
        }
        _write_json(self.art("fit_profiles_diag.json"), diag)
        return diag

    # -- stage 2 ------------------------------------------------------------

    def stage_fit_dists(self) -> dict:
        """Fit the mass-ratio distribution from the injury database mass
        pairs and the launch-onset distribution from the detected abnormal
        events."""
        self._require_inputs("ciss_m")
        self._require_artifacts("states.csv")
        records = load_mass_records(self.cfg.inputs["ciss_m"])
        rho = np.array([r.ratio for r in records])
        rho_fit = fit_gengamma(rho)

        states = _numeric_dataset(self.art("states.csv"), skip=("event_id", "source", "label"))
        ab = states.col("abnormal") > 0.5
        ta_vals = states.col("t_abnormal")[ab]
        fallback = ta_vals.size < 5
        if fallback:
            ta_fit = TruncNormalFit(
                mu=self.cfg.ta_mu, sigma=self.cfg.ta_sigma, lo=0.0, hi=5.0,
                n=int(ta_vals.size), ks_stat=float("nan"), converged=True,
            )
        else:
            ta_fit = fit_truncnormal(ta_vals, lo=0.0, hi=5.0)
        payload = {
            "rho": dataclasses.asdict(rho_fit),
            "t_abnormal": dataclasses.asdict(ta_fit),
            "t_abnormal_fallback": fallback,
            "headway": dataclasses.asdict(self.cfg.headway_dist()),
            "glance": dataclasses.asdict(self.cfg.glance),
        }
        _write_json(self.art("dists.json"), payload)
        return payload

    def _load_dists(self):
        self._require_artifacts("dists.json")
        d = _read_json(self.art("dists.json"))
        rho_fit = _gengamma_from_dict(d["rho"])
        ta_fit = _truncnorm_from_dict(d["t_abnormal"])
        headway = _truncnorm_from_dict(d["headway"])
        glance = GlanceMarginal(**d["glance"])
        return rho_fit, ta_fit, headway, glance

    # -- stage 3 ------------------------------------------------------------

    def stage_fuse(self) -> dict:
        """Combine the follower-side severity tables, deduce the lead speed
        change with sampled mass ratios, and weight the combined rows so
        the lead severity marginal follows the unbiased reference."""
        self._require_inputs("ciss_f", "shrp2_f", "ref_l")
        rho_fit, _, _, _ = self._load_dists()
        rows_v, rows_dv, dropped = [], [], 0
        for key in ("ciss_f", "shrp2_f"):
            for ev in load_events(self.cfg.inputs[key], schema="scalar"):
                if ev.v_f_init is None or ev.dv_f is None:
                    dropped += 1
                    continue
                rows_v.append(ev.v_f_init)
                rows_dv.append(ev.dv_f)
        if not rows_v:
            raise SchemaError("no usable follower-side severity rows")
        com = WeightedDataset({
            "v_f_init": np.array(rows_v), "dv_f": np.array(rows_dv),
        })
        com_f = deduce_delta_v(com, rho_fit, derive_seed(self.cfg.seed, "fuse-dv"))
        ref_l = _numeric_dataset(self.cfg.inputs["ref_l"])
        knn = dataclasses.replace(self.cfg.knn, seed=derive_seed(self.cfg.seed, "fuse-knn"))
        ref_f, best_k, losses = build_ref_f(com_f, ref_l, knn)
        com_f.to_csv(self.art("com_f.csv"))
        ref_f.to_csv(self.art("ref_f.csv"))
        diag = {
            "n_rows": com_f.n,
            "n_dropped": dropped,
            "best_k": best_k,
            "losses": {str(k): float(v) for k, v in losses.items()},
            "positive_weights": int(np.sum(ref_f.weights > 0)),
        }
        _write_json(self.art("fuse_diag.json"), diag)
        return diag

    # -- stage 4 ------------------------------------------------------------

    def stage_model_refb(self) -> dict:
        """Pair follower severity rows with lead kinematic rows under the
        target correlations, weight the series states toward the paired
        set, and fit the per-state mixture model."""
        self._require_inputs("ref_l")
        self._require_artifacts("states.csv", "ref_f.csv")
        rho_fit, _, _, _ = self._load_dists()
        seed = self.cfg.seed

        states = _numeric_dataset(self.art("states.csv"), skip=("event_id", "source", "label"))
        # lead severity for the series events, split like the follower side
        dv_pre = states.col("dv_pre")
        rng = np.random.default_rng(derive_seed(seed, "refb-dv"))
        rho = rho_fit.sample(states.n, rng)
        e = np.array([restitution(float(x)) for x in dv_pre])
        dv_l = (1.0 + e) * rho / (1.0 + rho) * dv_pre
        cols = {name: states.col(name) for name in states.names}
        cols["dv_l"] = dv_l
        com_b = WeightedDataset(cols, states.weights.copy())

        ref_f = WeightedDataset.from_csv(self.art("ref_f.csv"))
        knn_sev = dataclasses.replace(self.cfg.knn, seed=derive_seed(seed, "refb-sev"))
        w_b, k_sev, losses_sev = weight_to_reference(
            com_b, ref_f, ("v_f_init", "dv_l"), knn_sev
        )
        r_speed = weighted_pearson(w_b.col("v_f_init"), w_b.col("v_l_init"), w_b.weights)
        r_accel = weighted_pearson(w_b.col("v_f_init"), w_b.col("a_l_min"), w_b.weights)

        if self.cfg.rel_speed_override is not None:
            rel_thd = float(self.cfg.rel_speed_override)
        else:
            excess = w_b.col("v_l_init") - w_b.col("v_f_init")
            m = (excess > 0) & (w_b.weights > 0)
            if int(np.sum(m)) >= 3 and float(np.ptp(excess[m])) > 0:
                rel_thd = float(elbow_threshold(excess[m], w_b.weights[m]))
            else:
                rel_thd = self.cfg.pair.rel_speed_thd

        f_draws = draw_rows(ref_f, self.cfg.pair_draws, derive_seed(seed, "pair-f"))
        b_draws = draw_rows(w_b, self.cfg.pair_draws, derive_seed(seed, "pair-b"))
        pair_cfg = dataclasses.replace(
            self.cfg.pair, rel_speed_thd=rel_thd, seed=derive_seed(seed, "pair"),
        )
        # the pairing picks leads in proportion to the unbiased lead-speed
        # density, not the biased pool's own marginal
        ref_lead = _with_profile_derived(_numeric_dataset(self.cfg.inputs["ref_l"]))
        ref_density = KdeDensity(ref_lead.col("v_l_init"), ref_lead.weights)
        pairing = pair_datasets(
            f_draws, b_draws, ("v_l_init", "a_l_min"), r_speed, r_accel, pair_cfg,
            ref_density=ref_density,
        )
        ref_i = pairing.paired
        ref_i.to_csv(self.art("ref_i.csv"))

        knn_b = dataclasses.replace(self.cfg.knn, seed=derive_seed(seed, "refb-knn"))
        ref_b, k_b, losses_b = build_ref_b(com_b, ref_i, knn_b)
        ref_b.to_csv(self.art("ref_b.csv"))

        model = fit_mixture(ref_b, STATE_PARAM_COLS, StateLabeler(), MixtureConfig())
        _write_json(self.art("refb_model.json"), mixture_to_dict(model))
        diag = {
            "k_severity": k_sev,
            "k_refb": k_b,
            "rel_speed_thd": rel_thd,
            "target_corr_speed": r_speed,
            "target_corr_accel": r_accel,
            "pair_eta": pairing.eta,
            "pair_loss": pairing.loss,
            "pair_corr_speed": pairing.corr_speed,
            "pair_corr_accel": pairing.corr_accel,
            "pair_guard_speed": pairing.guard_speed,
            "pair_guard_accel": pairing.guard_accel,
            "mixture_labels": list(model.labels),
        }
        _write_json(self.art("model_refb_diag.json"), diag)
        return diag

    # -- stage 5 ------------------------------------------------------------

    def stage_sample_refsb(self) -> dict:
        self._require_artifacts("refb_model.json")
        model = mixture_from_dict(_read_json(self.art("refb_model.json")))
        ds, labels = sample_mixture(
            model, self.cfg.ref_sb_size, derive_seed(self.cfg.seed, "refsb"),
            StateLabeler(), MixtureConfig(),
        )
        cols = {name: ds.col(name) for name in ds.names}
        cols["label"] = np.array([float(STATE_CODES[l]) for l in labels])
        out = WeightedDataset(cols, ds.weights.copy())
        out.to_csv(self.art("ref_sb.csv"))
        shares = label_proportions(out.col("label"), out.weights)
        diag = {"n_rows": out.n, "label_shares": shares}
        _write_json(self.art("sample_refsb_diag.json"), diag)
        return diag

    # -- stage 6 ------------------------------------------------------------

    def stage_match_simulate(self) -> dict:
        self._require_inputs("ref_sl")
        self._require_artifacts("ref_sb.csv")
        rho_fit, ta_fit, headway, glance = self._load_dists()
        ref_sb = WeightedDataset.from_csv(self.art("ref_sb.csv"))
        ref_sl = _with_profile_derived(_numeric_dataset(self.cfg.inputs["ref_sl"]))
        match_cfg = dataclasses.replace(
            self.cfg.match, seed=derive_seed(self.cfg.seed, "match")
        )
        result = match_and_simulate(
            ref_sb, ref_sl, rho_fit, headway, glance, ta_fit,
            self.cfg.n_target, self.cfg.idm, self.cfg.brake, self.cfg.sim,
            match_cfg, emit_logs=self.cfg.emit_tick_logs,
        )
        result.scenarios.to_csv(self.art("synthetic_crashes.csv"))
        _write_json(self.art("match_diag.json"), result.diagnostics)
        if self.cfg.emit_tick_logs and result.logs:
            log_dir = self.art("tick_logs")
            os.makedirs(log_dir, exist_ok=True)
            for i, log in enumerate(result.logs):
                write_table(os.path.join(log_dir, f"run_{i:05d}.csv"), {
                    "t": log.t, "x_f": log.x_f, "v_f": log.v_f, "a_f": log.a_f,
                    "x_l": log.x_l, "v_l": log.v_l, "gap": log.gap,
                })
        return result.diagnostics

    # -- stage 7 ------------------------------------------------------------

    def stage_ipf(self) -> dict:
        """Reweight the simulated scenarios: state-scoped marginals first
        (each carrying its reference sub-dataset share, which re-imposes
        the state proportions), then the global driver-parameter
        marginals."""
        self._require_artifacts("synthetic_crashes.csv", "ref_b.csv")
        _, ta_fit, headway, glance = self._load_dists()
        synth_raw = WeightedDataset.from_csv(self.art("synthetic_crashes.csv"))
        # the output schema omits lead columns that the profile parameters
        # already determine; restore them for the scoped marginals
        synth = _with_profile_derived(synth_raw)
        ref_b = WeightedDataset.from_csv(self.art("ref_b.csv"))
        ref_codes = np.array(
            [float(STATE_CODES[l]) for l in StateLabeler().label_rows(ref_b)]
        )
        shares = label_proportions(ref_codes, ref_b.weights)
        synth_codes = synth.col("label")
        targets = []
        for label in STATE_LABELS:
            code = float(STATE_CODES[label])
            rmask = ref_codes == code
            smask = synth_codes == code
            if int(np.sum(rmask)) < 5 or int(np.sum(smask)) < 5:
                continue
            rw = ref_b.weights[rmask]
            if float(np.sum(rw)) <= 0:
                continue
            for param in STATE_PARAM_COLS:
                rv = ref_b.col(param)[rmask]
                # a marginal pinned to a constant on either side carries no
                # usable target (S1 has its brake floor fixed at 0)
                if float(np.ptp(rv[rw > 0])) <= 1e-12:
                    continue
                if float(np.ptp(synth.col(param)[smask])) <= 1e-12:
                    continue
                targets.append(IpfTarget(
                    f"{label}-{param}", param, ref_values=rv, ref_weights=rw,
                    subset=smask, mass_share=shares[label],
                ))
        rng = np.random.default_rng(derive_seed(self.cfg.seed, "ipf-ref"))
        n_ref = 4000
        targets.append(IpfTarget(
            "global-headway", "headway", ref_values=headway.sample(n_ref, rng)
        ))
        targets.append(IpfTarget(
            "global-t_glance", "t_glance", ref_values=glance.sample(n_ref, rng)
        ))
        p_ab = shares.get("S4", 0.0) * self.cfg.match.abnormal_p
        k_ab = int(round(n_ref * p_ab))
        ta_ref = np.concatenate([
            ta_fit.sample(k_ab, rng), np.full(n_ref - k_ab, TA_SENTINEL),
        ])
        targets.append(IpfTarget("global-t_abnormal", "t_abnormal", ref_values=ta_ref))

        weighted, diag = ipf_reweight(synth, targets, self.cfg.ipf)
        out = WeightedDataset(
            {name: synth_raw.col(name) for name in synth_raw.names},
            weighted.weights.copy(),
        )
        out.to_csv(self.art("synthetic_weighted.csv"))
        diag = dict(diag)
        diag["n_targets"] = len(targets)
        diag["target_names"] = [t.name for t in targets]
        diag["reference_proportions"] = shares
        diag["proportions"] = label_proportions(weighted.col("label"), weighted.weights)
        _write_json(self.art("ipf_diag.json"), diag)
        return diag

    # -- stage 8 ------------------------------------------------------------

    def stage_validate(self) -> dict:
        self._require_inputs("ref_l", "ref_sl")
        self._require_artifacts("synthetic_weighted.csv", "ref_sb.csv", "ref_b.csv")
        _, ta_fit, headway, glance = self._load_dists()
        synth = _with_profile_derived(
            WeightedDataset.from_csv(self.art("synthetic_weighted.csv"))
        )
        ref_sb = WeightedDataset.from_csv(self.art("ref_sb.csv"))
        ref_sl = _with_profile_derived(_numeric_dataset(self.cfg.inputs["ref_sl"]))
        ref_l = _numeric_dataset(self.cfg.inputs["ref_l"])
        ref_b = WeightedDataset.from_csv(self.art("ref_b.csv"))
        ref_codes = np.array(
            [float(STATE_CODES[l]) for l in StateLabeler().label_rows(ref_b)]
        )
        shares = label_proportions(ref_codes, ref_b.weights)
        val_cfg = dataclasses.replace(
            self.cfg.validation, seed=derive_seed(self.cfg.seed, "validate")
        )
        report = build_report(
            synth, ref_sb, ref_sl, ref_l.col("dv_l"), ref_l.weights,
            headway, glance, ta_fit, self.cfg.match.abnormal_p,
            shares, val_cfg,
        )
        write_report_json(report, self.art("report.json"))
        write_report_csv(report, self.art("report.csv"))
        return report

    # -- driver --------------------------------------------------------------

    def run_stage(self, stage: str) -> dict:
        runners = {
            "fit-profiles": self.stage_fit_profiles,
            "fit-dists": self.stage_fit_dists,
            "fuse": self.stage_fuse,
            "model-refb": self.stage_model_refb,
            "sample-refsb": self.stage_sample_refsb,
            "match-simulate": self.stage_match_simulate,
            "ipf": self.stage_ipf,
            "validate": self.stage_validate,
        }
        if stage not in runners:
            raise ValueError(f"unknown stage {stage!r}; expected one of {STAGES}")
        return runners[stage]()

    def run_all(self) -> dict:
        out = {}
        for stage in STAGES:
            out[stage] = self.run_stage(stage)
        return out
