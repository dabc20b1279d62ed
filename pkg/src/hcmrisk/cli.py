"""Command-line entry point: synth, train, validate, survival, longitudinal, esc-score."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cohort import (
    CohortError,
    EndpointSpec,
    apply_inclusion,
    demo_schema,
    derive_labels,
    load_cohort,
    load_schema,
)
from .escscore import esc_risk_matrix, esc_threshold_groups
from .explain import pool_importance
from .longitudinal import fold_trajectories, slope_summary
from .metrics import friedman_test, mann_whitney_u, mean_roc, roc_auc
from .models import DEFAULT_GRIDS, KINDS
from .pipeline import CvPlan, EnsembleModel, NestedCvResult, external_validate, nested_cv
from .survival import kaplan_meier, log_rank, stratify_by_prediction
from .svg import PALETTE, Figure, slope_color
from .synth import GeneratorSpec, generate_cohort, preset, write_cohort

log = logging.getLogger("hcmrisk")


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ helpers

def _dump(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    """Resolved config plus the output directory and the files read."""

    def __init__(self, command: str, config_path: str, seed, out, threads):
        self.command = command
        self.config_path = Path(config_path)
        try:
            self.config = json.loads(self.config_path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {config_path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {config_path} is not valid JSON: {exc}") from None
        if not isinstance(self.config, dict):
            raise ConfigError("config must be a JSON object")
        if seed is not None:
            self.config["seed"] = seed
        if "seed" not in self.config:
            raise ConfigError("config must set 'seed' (or pass --seed)")
        if not isinstance(self.config["seed"], int) or self.config["seed"] < 0:
            raise ConfigError("'seed' must be a nonnegative integer")
        self.seed = int(self.config["seed"])
        out = out or self.config.get("out")
        if not out:
            raise ConfigError("config must set 'out' (or pass --out)")
        self.out = self.path(out, must_exist=False)
        self.threads = threads
        self.inputs: dict[str, str] = {}

    def path(self, value, must_exist: bool = True) -> Path:
        p = Path(value)
        if not p.is_absolute():
            p = self.config_path.parent / p
        if must_exist and not p.exists():
            raise ConfigError(f"input {value} not found (resolved to {p})")
        return p

    def input(self, key: str) -> Path:
        if key not in self.config:
            raise ConfigError(f"config lacks required key {key!r}")
        p = self.path(self.config[key])
        self.inputs[key] = _digest(p) if p.is_file() else "directory"
        return p

    def write(self, name: str, text: str) -> None:
        _write(self.out / name, text)

    def manifest(self) -> None:
        import numba
        import scipy
        doc = {
            "command": self.command,
            "seed": self.seed,
            "config": self.config,
            "input_sha256": dict(sorted(self.inputs.items())),
            "versions": {"hcmrisk": __version__, "python": platform.python_version(), "numpy": np.__version__,
                         "scipy": scipy.__version__, "numba": numba.__version__},
        }
        self.write("manifest.json", _dump(doc))


def _schema(run: Run):
    if "schema" in run.config:
        return load_schema(run.input("schema"))
    return demo_schema()


def _cohort(run: Run, key: str = "cohort", inclusion_default: bool = True):
    schema = _schema(run)
    cohort = load_cohort(run.input(key), schema)
    spec = EndpointSpec(float(run.config.get("horizon_years", 5.0)))
    if run.config.get("apply_inclusion", inclusion_default):
        cohort = apply_inclusion(cohort, spec)
    return derive_labels(cohort, spec), spec


def _plan(run: Run) -> CvPlan:
    cv = dict(run.config.get("cv", {}))
    allowed = set(CvPlan.__dataclass_fields__) - {"seed"}
    unknown = set(cv) - allowed
    if unknown:
        raise ConfigError(f"unknown cv settings: {sorted(unknown)}")
    return CvPlan(seed=run.seed, **cv)


def _kinds(run: Run) -> list[str]:
    kinds = run.config.get("models", ["rf"])
    if isinstance(kinds, str):
        kinds = [kinds]
    bad = [k for k in kinds if k not in KINDS]
    if bad or not kinds:
        raise ConfigError(f"models must be a nonempty subset of {list(KINDS)}; got {kinds}")
    return list(kinds)


def _grid(run: Run, kind: str) -> dict:
    grid = run.config.get("grids", {}).get(kind, DEFAULT_GRIDS[kind])
    if not isinstance(grid, dict) or not all(isinstance(v, list) and v for v in grid.values()):
        raise ConfigError(f"grid for {kind} must map hyperparameter names to nonempty lists")
    return grid


def _esc_scores(cohort, pids):
    by_pid = dict(zip(*cohort.baseline_matrix()))
    X = np.array([by_pid[p] for p in pids]) if pids else np.empty((0, len(cohort.schema)))
    return esc_risk_matrix(X, cohort.schema.names)


# ------------------------------------------------------------------- figures

def _roc_figure(curves: dict, esc=None) -> str:
    fig = Figure(520, 460)
    ax = fig.panel(70, 30, 400, 360)
    ax.axes("False positive rate", "True positive rate", "Mean ROC over outer folds")
    ax.line([0, 1], [0, 1], "#999", 1, dash="4 3")
    entries = []
    for i, (kind, m) in enumerate(curves.items()):
        color = PALETTE[i % len(PALETTE)]
        ax.band(m.fpr, np.clip(m.tpr - m.tpr_std, 0, 1), np.clip(m.tpr + m.tpr_std, 0, 1), color)
        ax.line(m.fpr, m.tpr, color, 2)
        entries.append((f"{kind.upper()} ({m.label()})", color))
    if esc is not None:
        ax.line(esc.fpr, esc.tpr, "#555", 1.5, dash="6 3")
        entries.append((f"ESC ({esc.label()})", "#555"))
    fig.legend(300, 300, entries)
    return fig.render()


def _beeswarm(ranking, fold_shaps, top: int = 15) -> str:
    order = list(ranking.order[:top])
    names = [ranking.feature_names[j] for j in order]
    col = {n: i for i, n in enumerate(names)}
    phis = [[] for _ in names]
    vals = [[] for _ in names]
    for s in fold_shaps:
        for k, n in enumerate(s.feature_names):
            if n in col:
                phis[col[n]].extend(s.values[:, k].tolist())
                vals[col[n]].extend(s.data[:, k].tolist() if s.data is not None else [0.0] * s.values.shape[0])
    lim = max(1e-9, max((max(map(abs, p)) for p in phis if p), default=1.0))
    fig = Figure(640, 60 + 22 * len(names))
    ax = fig.panel(220, 30, 380, 22 * len(names), (-lim, lim), (0, len(names)))
    ax.axes(f"SHAP value ({fold_shaps[0].output})", "", "Pooled SHAP values, all folds")
    rng = np.random.default_rng(0)
    for i, n in enumerate(names):
        yrow = len(names) - i - 0.5
        ax.text(-lim, yrow - 0.15, n + " ", 10, "end")
        if not phis[i]:
            continue
        v = np.array(vals[i])
        lo, hi = np.percentile(v, [5, 95]) if v.size else (0, 1)
        t = np.clip((v - lo) / ((hi - lo) or 1.0), 0, 1)
        colors = [f"#{int(40 + 200 * a):02x}40{int(240 - 200 * a):02x}" for a in t]
        jitter = rng.uniform(-0.3, 0.3, len(phis[i]))
        ax.points(phis[i], yrow + jitter, colors, 1.6)
    return fig.render()


def _km_panel(fig, x0, title, groups, tmax):
    ax = fig.panel(x0, 30, 300, 250, (0, tmax), (0, 1))
    ax.axes("Years", "Event-free survival", title)
    for g, (curve, label) in enumerate(groups):
        color = PALETTE[g]
        t = np.r_[curve.time, tmax]
        s = np.r_[curve.survival, curve.survival[-1]]
        ax.line(t, s, color, 2, step=True)
        ax.text(x0 + 8, 300 + 16 * g, label, 10, data=False, color=color)
        # at-risk counts at yearly marks
        for yr in range(0, int(tmax) + 1):
            n = int(np.sum(curve.at_risk[np.searchsorted(curve.time, yr, side="left"):][:1])) if yr <= curve.time[-1] else 0
            ax.text(float(ax.px(yr)), 340 + 16 * g, str(n), 9, "middle", data=False, color=color)
    ax.text(x0, 330, "At risk:", 9, data=False)


# ------------------------------------------------------------------ commands

def cmd_synth(run: Run) -> None:
    cfg = run.config
    name = cfg.get("preset")
    overrides = dict(cfg.get("overrides", {}))
    for k in ("signal_features", "exams_per_patient", "event_time_range", "all_missing"):
        if k in overrides:
            overrides[k] = tuple(overrides[k])
    try:
        spec = preset(name, run.seed, **overrides) if name else GeneratorSpec.from_json({**cfg.get("spec", {}), "seed": run.seed})
    except TypeError as exc:
        raise ConfigError(f"bad generator override: {exc}") from None
    schema = _schema(run)
    cohort = generate_cohort(spec, schema)
    stem = cfg.get("stem", "cohort")
    write_cohort(cohort, run.out, stem)
    pids, _ = cohort.baseline_matrix()
    run.write(f"{stem}_summary.json", _dump({
        "patients": len(pids), "exams": len(cohort.exams), "positives": int(cohort.label_vector(pids).sum()),
        "bayes_auc": spec.bayes_auc}))


def _fold_files(run: Run, kind: str, res: NestedCvResult, names) -> None:
    d = f"{kind}/"
    for f in res.folds:
        run.write(f"{d}fold_{f.fold_index}.json", _dump(f.to_json(names)))
        run.write(f"{d}roc_fold_{f.fold_index}.csv", f.roc.to_csv())
        if f.shap is not None:
            run.write(f"{d}shap_fold_{f.fold_index}.csv", f.shap.to_csv())
    run.write(f"{d}ensemble.json", _dump(res.ensemble().to_json()))


def cmd_train(run: Run) -> None:
    cohort, _ = _cohort(run)
    plan = _plan(run)
    names = cohort.schema.names
    kinds = _kinds(run)
    analyses = run.config.get("analyses", {})
    explain = bool(analyses.get("shap", True))
    pids, X = cohort.baseline_matrix()
    y = cohort.label_vector(pids)
    report = {"n_patients": len(pids), "positives": int(y.sum()), "prevalence": float(y.mean()),
              "cv_plan": {k: getattr(plan, k) for k in CvPlan.__dataclass_fields__},
              "notes": ["grids are artifact defaults unless overridden in the config",
                        "SVM is linear with Platt calibration",
                        "SFFS runs with selection defaults before the grid search",
                        "SHAP value functions are labeled per model (tree path-dependent, interventional)"],
              "models": {}}
    curves = {}
    table = ["model,sensitivity,specificity,accuracy,balanced_accuracy,f1,auc"]
    oof = {}
    results = {}
    for kind in kinds:
        res = nested_cv(cohort, kind, _grid(run, kind), plan, explain, run.threads)
        results[kind] = res
        _fold_files(run, kind, res, names)
        m = mean_roc([f.roc for f in res.folds])
        curves[kind] = m
        run.write(f"{kind}/mean_roc.csv", m.to_csv())
        blocks = [f.metrics.to_json() for f in res.folds]
        keys = ["sensitivity", "specificity", "accuracy", "balanced_accuracy", "f1", "auc"]
        summary = {k: {"mean": float(np.mean([b[k] for b in blocks])), "std": float(np.std([b[k] for b in blocks]))}
                   for k in keys}
        table.append(",".join([kind] + [f"{summary[k]['mean']:.3f} ± {summary[k]['std']:.3f}" for k in keys]))
        entry = {"auc_label": m.label(), "auc_mean": m.auc_mean, "auc_std": m.auc_std,
                 "metrics": summary, "grid": _grid(run, kind),
                 "selected_features": [[names[i] for i in f.selected_features] for f in res.folds],
                 "best_hyperparams": [f.best_hyperparams for f in res.folds]}
        shaps = [f.shap for f in res.folds if f.shap is not None]
        if shaps:
            ranking = pool_importance(shaps)
            entry["importance"] = ranking.to_json()["ranking"]
            entry["shap_method"] = shaps[0].method
            run.write(f"{kind}/importance.json", _dump(ranking.to_json()))
            run.write(f"{kind}/shap_beeswarm.svg", _beeswarm(ranking, shaps))
        coefs = [f.coefficients for f in res.folds if f.coefficients is not None]
        if coefs:
            entry["lr_coefficients"] = coefs
        report["models"][kind] = entry
        oof[kind] = res.oof_probabilities()
    esc_mean = None
    if analyses.get("esc", True):
        esc_rocs = []
        for f in results[kinds[0]].folds:
            scores, _ = _esc_scores(cohort, list(f.test_ids))
            ok = ~np.isnan(scores)
            if 0 < f.test_labels[ok].sum() < ok.sum():
                esc_rocs.append(roc_auc(scores[ok], f.test_labels[ok]))
        if esc_rocs:
            esc_mean = mean_roc(esc_rocs)
            report["esc"] = {"auc_label": esc_mean.label(), "auc_mean": esc_mean.auc_mean, "auc_std": esc_mean.auc_std,
                             "note": "continuous ESC score on the same outer test folds"}
            run.write("esc_mean_roc.csv", esc_mean.to_csv())
    if len(kinds) >= 2:
        M = np.array([[oof[k][p] for k in kinds] for p in pids])
        report["friedman"] = {"models": kinds, **friedman_test(M).to_json(),
                              "subjects": "patients (out-of-fold probabilities)"}
    run.write("metrics_table.csv", "\n".join(table) + "\n")
    run.write("mean_roc.svg", _roc_figure(curves, esc_mean))
    run.write("experiment_report.json", _dump(report))


def _load_ensemble(run: Run) -> EnsembleModel:
    doc = json.loads(run.input("ensemble").read_text(encoding="utf-8"))
    return EnsembleModel.from_json(doc)


def _hist_kde(values, labels):
    from scipy.stats import gaussian_kde

    edges = np.linspace(0, 1, 21)
    grid = np.linspace(0, 1, 101)
    rows = ["bin_lo,bin_hi,count_event_free,count_event"]
    h = [np.histogram(values[labels == g], edges)[0] for g in (0, 1)]
    rows += [f"{a:.2f},{b:.2f},{c0},{c1}" for a, b, c0, c1 in zip(edges[:-1], edges[1:], h[0], h[1])]
    dens = []
    for g in (0, 1):
        v = values[labels == g]
        dens.append(gaussian_kde(v)(grid) if v.size > 1 and v.std() > 0 else np.zeros_like(grid))
    kde = ["p,density_event_free,density_event"] + [f"{x:.2f},{a!r},{b!r}" for x, a, b in zip(grid, dens[0], dens[1])]
    fig = Figure(520, 380)
    top = max(float(max(d.max() for d in dens)), 1e-9) * 1.1
    ax = fig.panel(70, 30, 400, 280, (0, 1), (0, top))
    ax.axes("Ensemble mean prediction", "Density", "Prediction distribution by outcome")
    for g, label in ((0, "event-free"), (1, "event")):
        n = max(int((labels == g).sum()), 1)
        ax.bars(edges, h[g] / (n * (edges[1] - edges[0])), PALETTE[g], 0.25)
        ax.line(grid, dens[g], PALETTE[g], 2)
    fig.legend(340, 50, [("event-free", PALETTE[0]), ("event", PALETTE[1])])
    return "\n".join(rows) + "\n", "\n".join(kde) + "\n", fig.render()


def cmd_validate(run: Run) -> None:
    ens = _load_ensemble(run)
    cohort, _ = _cohort(run, inclusion_default=False)
    rep = external_validate(ens, cohort, float(run.config.get("threshold", 0.5)))
    y = rep.labels
    doc = rep.to_json()
    if 0 < y.sum() < y.size:
        doc["mann_whitney_ml"] = mann_whitney_u(rep.probabilities[y == 1], rep.probabilities[y == 0]).to_json()
        esc, oor = _esc_scores(cohort, list(rep.patient_ids))
        ok = ~np.isnan(esc)
        doc["esc"] = {"auc": roc_auc(esc[ok], y[ok]).auc,
                      "mann_whitney": mann_whitney_u(esc[ok & (y == 1)], esc[ok & (y == 0)]).to_json(),
                      "out_of_range": int(oor.sum()), "missing_inputs": int((~ok).sum())}
    hist, kde, svg = _hist_kde(rep.probabilities, y)
    run.write("external_report.json", _dump(doc))
    run.write("prediction_histogram.csv", hist)
    run.write("prediction_kde.csv", kde)
    run.write("prediction_distribution.svg", svg)


def cmd_survival(run: Run) -> None:
    ens = _load_ensemble(run)
    cohort, spec = _cohort(run, inclusion_default=False)
    training, _ = _cohort(run, "training_cohort")
    pids, X = cohort.baseline_matrix()
    time, event = cohort.survival_arrays(pids, spec.horizon_years)
    prob = ens.predict(X)
    ml_groups = stratify_by_prediction(prob, float(run.config.get("threshold", 0.5)))
    tp, tX = training.baseline_matrix()
    t_esc, _ = esc_risk_matrix(tX, training.schema.names)
    ty = training.label_vector(tp)
    ok = ~np.isnan(t_esc)
    esc, _ = esc_risk_matrix(X, cohort.schema.names)
    esc_groups, esc_thr, esc_flags = esc_threshold_groups(esc, roc_auc(t_esc[ok], ty[ok]))
    doc = {"n": len(pids), "events": int(event.sum()), "horizon_years": spec.horizon_years,
           "time_origin": "baseline exam"}
    fig = Figure(720, 400)
    tmax = float(np.ceil(time.max()))
    for i, (name, groups, extra) in enumerate((("ml", ml_groups, {"threshold": float(run.config.get("threshold", 0.5))}),
                                                ("esc", esc_groups, {"threshold": esc_thr, "flags": list(esc_flags)}))):
        curves = []
        entry = dict(extra)
        for g in (0, 1):
            m = groups == g
            entry[f"group{g}_n"] = int(m.sum())
            if m.any():
                km = kaplan_meier(time[m], event[m])
                run.write(f"km_{name}_group{g}.csv", km.to_csv())
                curves.append((km, f"{'high' if g else 'low'} risk (n={int(m.sum())})"))
        if (groups == 0).any() and (groups == 1).any():
            entry["log_rank"] = log_rank(time[groups == 0], event[groups == 0], time[groups == 1], event[groups == 1]).to_json()
        else:
            entry["log_rank"] = {"statistic": 0.0, "p_value": 1.0, "flags": ["single_group"]}
        doc[name] = entry
        title = f"{'Ensemble' if name == 'ml' else 'ESC'} grouping, log-rank p = {entry['log_rank']['p_value']:.3g}"
        _km_panel(fig, 60 + 360 * i, title, curves, tmax)
    run.write("survival_report.json", _dump(doc))
    run.write("survival.svg", fig.render())


def cmd_longitudinal(run: Run) -> None:
    cohort, _ = _cohort(run)
    kind = run.config.get("model", "rf")
    if kind not in KINDS:
        raise ConfigError(f"model must be one of {list(KINDS)}")
    res = nested_cv(cohort, kind, _grid(run, kind), _plan(run), explain=False, threads=run.threads)
    trajs = fold_trajectories(cohort, res.folds, res.members)
    rows = ["patient_id,fold,t_years,probability"]
    for tr in trajs:
        rows += [f"{tr.patient_id},{tr.fold},{t!r},{p!r}" for t, p in zip(tr.times.tolist(), tr.probabilities.tolist())]
    run.write("trajectories.csv", "\n".join(rows) + "\n")
    slopes = ["patient_id,fold,label,n_exams,slope,abs_slope"]
    slopes += [f"{tr.patient_id},{tr.fold},{cohort.labels[tr.patient_id]},{tr.n_exams},"
               f"{'' if not tr.has_slope else repr(tr.slope)},{'' if not tr.has_slope else repr(tr.abs_slope)}"
               for tr in trajs]
    run.write("slopes.csv", "\n".join(slopes) + "\n")
    summary = slope_summary(trajs, cohort.labels)
    doc = summary.to_json()
    doc["model"] = kind
    doc["cv_auc_mean"] = float(np.mean([f.roc.auc for f in res.folds]))
    run.write("slope_summary.json", _dump(doc))
    min_exams = int(run.config.get("plot_min_exams", 5))
    shown = [tr for tr in trajs if tr.n_exams >= min_exams and tr.has_slope][: int(run.config.get("plot_max", 24))]
    if shown:
        cols = 6
        rows_n = (len(shown) + cols - 1) // cols
        fig = Figure(cols * 150 + 20, rows_n * 140 + 30)
        for i, tr in enumerate(shown):
            r, c = divmod(i, cols)
            tmax = max(float(tr.times.max()), 1e-6)
            ax = fig.panel(30 + c * 150, 30 + r * 140, 120, 90, (0, tmax), (0, 1))
            ax.axes(ticks=2, title=f"{tr.patient_id} ({'event' if cohort.labels[tr.patient_id] else 'no event'})")
            ax.points(tr.times, tr.probabilities, [slope_color(p - 0.5, 0.5) for p in tr.probabilities], 2.5)
            icpt = float(tr.probabilities.mean() - tr.slope * tr.times.mean())
            ax.line([0, tmax], [icpt, icpt + tr.slope * tmax], slope_color(tr.slope), 1.5)
        run.write("trajectories.svg", fig.render())


def cmd_esc_score(run: Run) -> None:
    cohort, _ = _cohort(run, inclusion_default=False)
    pids, X = cohort.baseline_matrix()
    scores, oor = esc_risk_matrix(X, cohort.schema.names)
    rows = ["patient_id,esc_risk_5y,out_of_range"]
    rows += [f"{p},{'' if np.isnan(s) else repr(float(s))},{int(o)}" for p, s, o in zip(pids, scores, oor)]
    run.write("esc_scores.csv", "\n".join(rows) + "\n")
    doc = {"n": len(pids), "missing_inputs": int(np.isnan(scores).sum()), "out_of_range": int(oor.sum())}
    y = cohort.label_vector(pids)
    ok = ~np.isnan(scores)
    if 0 < y[ok].sum() < ok.sum():
        doc["auc"] = roc_auc(scores[ok], y[ok]).auc
    run.write("esc_summary.json", _dump(doc))


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "validate": cmd_validate,
    "survival": cmd_survival,
    "longitudinal": cmd_longitudinal,
    "esc-score": cmd_esc_score,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hcmrisk", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker processes for outer folds (default $HCMRISK_THREADS or 1)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads
    if threads is None:
        env = os.environ.get("HCMRISK_THREADS", "1")
        try:
            threads = int(env)
        except ValueError:
            print(f"error: HCMRISK_THREADS must be an integer, got {env!r}", file=sys.stderr)
            return 2
    try:
        run = Run(args.command, args.config, args.seed, args.out, max(1, threads))
        COMMANDS[args.command](run)
        run.manifest()
    except (ConfigError, CohortError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
