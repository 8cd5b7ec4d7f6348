"""Command-line entry point: gen, graph, train, interpret, compare, sweep.

One JSON config file drives an experiment; sections are named after the
subcommands' concerns (atlas, cohort, paths, graph, model, train,
interpret, sweep) and individual flags override single fields. Every JSON
artifact embeds a digest of the effective configuration with path fields
removed, so results are comparable byte for byte across output locations.

Exit codes: 0 success, 2 configuration or input problem, 1 internal
failure. TGF_LOG selects stderr log verbosity (error, info, debug).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError
from .features import load_cohort_csv
from .geometry import (
    DEFAULT_POINTS,
    distance_matrix,
    load_atlas,
    load_distance_csv,
)
from .graphs import DEFAULT_K, build_cmg, build_gmg, build_wmg, load_graph, load_overlap_csv, save_graph
from .interpret import build_report, render_text_table
from .model import ModelConfig, snapshot_to_jsonable
from .synthetic import (
    SyntheticAtlasConfig,
    SyntheticCohortConfig,
    gen_atlas,
    gen_cohort,
    load_tract_map_csv,
    write_dataset,
)
from .training import SubjectEval, TrainSettings, paired_t, run_cv

LOG = logging.getLogger("tractgraph")
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

RESULTS_FORMAT = "tractgraph-results-v1"
MANIFEST_FORMAT = "tractgraph-manifest-v1"
SWEEP_FORMAT = "tractgraph-sweep-v1"
SWEEP_DEFAULT_KS = (10, 20, 30, 40, 50)
METRIC_KEYS = ("accuracy", "precision", "recall", "f1")


# --- small helpers -----------------------------------------------------------


def canonical_digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    LOG.info("wrote %s", path)
    return path


def load_config(path):
    if path is None:
        raise ConfigError("--config is required for this command")
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        parsed = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(parsed, dict):
        raise ConfigError(f"config {path}: top level must be an object")
    return parsed


def section(config, name, required=True):
    sec = config.get(name)
    if sec is None:
        if required:
            raise ConfigError(f"config is missing the '{name}' section")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(f"config section '{name}' must be an object")
    return dict(sec)


def build_from_section(cls, sec, name):
    try:
        return cls(**sec)
    except TypeError as exc:
        raise ConfigError(f"'{name}' section: {exc}") from exc


def data_path(paths_sec, key, default_name, must_exist=True):
    if key in paths_sec:
        p = Path(paths_sec[key])
    else:
        p = Path(paths_sec.get("data_dir", ".")) / default_name
    if must_exist and not p.exists():
        raise InputError(f"required input file does not exist: {p}")
    return p


def out_dir(args, config):
    paths_sec = section(config, "paths", required=False)
    target = args.out or paths_sec.get("out_dir")
    if target is None:
        raise ConfigError("no output directory: set --out or paths.out_dir")
    path = Path(target)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _configure_logging():
    raw = os.environ.get("TGF_LOG", "error")
    if raw not in LOG_LEVELS:
        raise ConfigError(
            f"TGF_LOG must be one of {sorted(LOG_LEVELS)}, got {raw!r}")
    logging.basicConfig(level=LOG_LEVELS[raw], stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


# --- gen ---------------------------------------------------------------------


def cmd_gen(args):
    config = load_config(args.config)
    atlas_sec = section(config, "atlas")
    cohort_sec = section(config, "cohort")
    for name, sec in (("atlas", atlas_sec), ("cohort", cohort_sec)):
        if "seed" not in sec:
            raise ConfigError(f"'{name}' section is missing required field 'seed'")
    if args.seed is not None:
        atlas_sec["seed"] = args.seed
        cohort_sec["seed"] = args.seed
    acfg = build_from_section(SyntheticAtlasConfig, atlas_sec, "atlas")
    ccfg = build_from_section(SyntheticCohortConfig, cohort_sec, "cohort")
    out = out_dir(args, config)

    atlas = gen_atlas(acfg)
    _, rows, truth = gen_cohort(atlas, ccfg)
    paths = write_dataset(out, atlas, rows, truth)
    manifest = {
        "format": MANIFEST_FORMAT,
        "config_digest": canonical_digest({"atlas": atlas_sec, "cohort": cohort_sec}),
        "seeds": {"atlas": acfg.seed, "cohort": ccfg.seed},
        "files": {role: p.name for role, p in sorted(paths.items())},
        "n_clusters": acfg.n_clusters,
        "n_subjects": ccfg.n_subjects,
    }
    write_json(out / "manifest.json", manifest)
    return 0


# --- graph -------------------------------------------------------------------


def _graph_settings(config, args):
    gsec = section(config, "graph", required=False)
    if getattr(args, "graph_kind", None):
        gsec["kind"] = args.graph_kind
    if getattr(args, "k", None) is not None:
        gsec["k"] = args.k
    kind = str(gsec.get("kind", "cmg")).lower()
    if kind not in ("wmg", "gmg", "cmg"):
        raise ConfigError(f"graph kind must be wmg, gmg, or cmg, got {kind!r}")
    return {
        "kind": kind,
        "k": int(gsec.get("k", DEFAULT_K)),
        "metric": str(gsec.get("metric", "mdf")),
        "num_points": int(gsec.get("num_points", DEFAULT_POINTS)),
    }


def _build_graph(settings, paths_sec):
    """Construct the requested graph; returns (graph, provenance dict)."""
    kind, k = settings["kind"], settings["k"]
    provenance = {}
    wmg = None
    if kind in ("wmg", "cmg"):
        dist_path = data_path(paths_sec, "distances", "distances.csv", must_exist=False)
        if dist_path.exists():
            d = load_distance_csv(dist_path)
            provenance["distances"] = "loaded"
        else:
            atlas_path = data_path(paths_sec, "atlas", "atlas.json")
            clusters = load_atlas(atlas_path)
            d = distance_matrix(clusters, num_points=settings["num_points"],
                                metric=settings["metric"])
            provenance["distances"] = "computed"
            provenance["atlas_digest"] = file_digest(atlas_path)
        wmg = build_wmg(d, k, metric_tag=settings["metric"])
    gmg = None
    if kind in ("gmg", "cmg"):
        overlap_path = data_path(paths_sec, "overlap", "overlap.csv")
        n_hint = None if wmg is None else wmg.n_nodes
        table = load_overlap_csv(overlap_path, n_clusters=n_hint)
        provenance["overlap_digest"] = file_digest(overlap_path)
        gmg = build_gmg(table)
    if kind == "wmg":
        return wmg, provenance
    if kind == "gmg":
        return gmg, provenance
    return build_cmg(wmg, gmg), provenance


def cmd_graph(args):
    config = load_config(args.config)
    paths_sec = section(config, "paths")
    settings = _graph_settings(config, args)
    out = out_dir(args, config)
    graph, provenance = _build_graph(settings, paths_sec)
    metadata = {
        "config_digest": canonical_digest({"graph": settings}),
        **provenance,
        "num_points": settings["num_points"],
    }
    path = out / f"graph_{settings['kind']}.json"
    save_graph(graph, path, metadata=metadata)
    LOG.info("wrote %s", path)
    return 0


# --- train -------------------------------------------------------------------


def _model_overrides(model_sec, args):
    if getattr(args, "streams", None):
        mapping = {"both": ["graph", "transformer"], "graph": ["graph"],
                   "transformer": ["transformer"]}
        model_sec["streams"] = mapping[args.streams]
    if getattr(args, "attention", None):
        model_sec["use_attention"] = args.attention == "on"
    if getattr(args, "baseline", None):
        model_sec["baseline"] = None if args.baseline == "none" else args.baseline
    return model_sec


def _train_settings(config, args):
    tsec = section(config, "train", required=False)
    if getattr(args, "seed", None) is not None:
        tsec["master_seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        tsec["workers"] = args.workers
    settings = TrainSettings(
        epochs=int(tsec.get("epochs", 100)),
        batch_size=int(tsec.get("batch_size", 32)),
        learning_rate=float(tsec.get("learning_rate", 1e-3)),
    )
    return settings, int(tsec.get("n_folds", 5)), int(tsec.get("master_seed", 0)), \
        int(tsec.get("workers", 1))


def _load_training_inputs(config, args, graph_settings, prebuilt_graph=None):
    """Resolve cohort + optional graph, enforcing dimensional consistency."""
    paths_sec = section(config, "paths")
    model_sec = _model_overrides(section(config, "model", required=False), args)
    streams = model_sec.get("streams", ["graph", "transformer"])
    baseline = model_sec.get("baseline")
    needs_graph = "graph" in tuple(streams) and not baseline
    graph = None
    if needs_graph:
        if prebuilt_graph is not None:
            graph = prebuilt_graph
        else:
            graph_path = data_path(paths_sec, "graph",
                                   f"graph_{graph_settings['kind']}.json")
            graph = load_graph(graph_path)
    n_model = model_sec.get("n_clusters")
    if graph is not None and n_model is not None and int(n_model) != graph.n_nodes:
        raise ConfigError(
            f"graph has {graph.n_nodes} clusters but model config says {n_model}")
    n_clusters = graph.n_nodes if graph is not None else n_model
    if n_clusters is None:
        # Ablations that skip the neighbor plan can still size themselves
        # from a graph file if one is configured.
        fallback = data_path(paths_sec, "graph",
                             f"graph_{graph_settings['kind']}.json", must_exist=False)
        if fallback.exists():
            n_clusters = load_graph(fallback).n_nodes
    if n_clusters is None:
        raise ConfigError("cannot infer cluster count: set model.n_clusters or provide a graph")
    cohort_path = data_path(paths_sec, "cohort", "cohort.csv")
    subjects = load_cohort_csv(cohort_path, int(n_clusters))
    model_sec["n_clusters"] = int(n_clusters)
    return subjects, graph, model_sec


def _build_model_config(model_sec, master_seed):
    sec = dict(model_sec)
    sec["seed"] = master_seed
    if "streams" in sec:
        sec["streams"] = tuple(sec["streams"])
    if "edgeconv_dims" in sec:
        sec["edgeconv_dims"] = tuple(sec["edgeconv_dims"])
    return build_from_section(ModelConfig, sec, "model")


def _results_payload(result, mcfg, settings, graph):
    effective = {
        "graph": None if graph is None else {"kind": graph.kind, "k": graph.k,
                                             "metric_tag": graph.metric_tag,
                                             "n_nodes": graph.n_nodes},
        "model": mcfg.to_jsonable(),
        "train": {"epochs": settings.epochs, "batch_size": settings.batch_size,
                  "learning_rate": settings.learning_rate,
                  "n_folds": result.n_folds, "master_seed": result.master_seed},
    }
    digest = canonical_digest(effective)
    subjects = []
    for fold in result.folds:
        for e in fold.subjects:
            subjects.append({
                "subject_id": e.subject_id,
                "fold": fold.fold,
                "label": e.label,
                "prediction": e.prediction,
                "correct": e.correct,
                "attention": None if e.attention is None else [float(v) for v in e.attention],
            })
    subjects.sort(key=lambda s: (s["fold"], s["subject_id"]))
    raws = [f.fusion_raw for f in result.folds]
    if any(r is None for r in raws):
        fusion = {"per_fold_raw": None, "per_fold_normalized": None,
                  "mean_raw": None, "mean_normalized": None}
    else:
        mean_raw = [float(np.mean([r[0] for r in raws])), float(np.mean([r[1] for r in raws]))]
        total = mean_raw[0] + mean_raw[1]
        mean_norm = mean_raw if total == 0 else [mean_raw[0] / total, mean_raw[1] / total]
        fusion = {
            "per_fold_raw": [[r[0], r[1]] for r in raws],
            "per_fold_normalized": [list(f.fusion_normalized) for f in result.folds],
            "mean_raw": mean_raw,
            "mean_normalized": mean_norm,
        }
    return {
        "format": RESULTS_FORMAT,
        "config_digest": digest,
        "master_seed": result.master_seed,
        "n_folds": result.n_folds,
        "effective_config": effective,
        "metrics": result.summary,
        "loss_history": [f.loss_history for f in result.folds],
        "subjects": subjects,
        "fusion_weights": fusion,
    }, digest


def cmd_train(args):
    config = load_config(args.config)
    graph_settings = _graph_settings(config, args)
    settings, n_folds, master_seed, workers = _train_settings(config, args)
    subjects, graph, model_sec = _load_training_inputs(config, args, graph_settings)
    mcfg = _build_model_config(model_sec, master_seed)
    out = out_dir(args, config)

    LOG.info("training: %d subjects, %d folds, streams=%s", len(subjects), n_folds,
             ",".join(mcfg.streams))
    result = run_cv(subjects, graph, mcfg, settings, n_folds=n_folds,
                    master_seed=master_seed, workers=workers)
    payload, digest = _results_payload(result, mcfg, settings, graph)
    write_json(out / "results.json", payload)
    for fold in result.folds:
        snap = snapshot_to_jsonable(
            _build_model_config(model_sec, master_seed + fold.fold),
            fold.params, fold.norm, graph_ref=digest)
        write_json(out / f"fold_{fold.fold}.model.json", snap)
    return 0


# --- interpret ---------------------------------------------------------------


def _load_results(path):
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read results {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"results {path} line {exc.lineno}: {exc.msg}") from exc
    if data.get("format") != RESULTS_FORMAT:
        raise InputError(f"results {path}: unexpected format {data.get('format')!r}")
    return data


def cmd_interpret(args):
    config = load_config(args.config)
    paths_sec = section(config, "paths")
    isec = section(config, "interpret", required=False)
    rule = str(isec.get("rule", "sigma"))
    multiplier = float(isec.get("multiplier", 1.5))
    q = float(isec.get("q", 5.0))
    if args.top_q is not None:
        rule, q = "top_q", float(args.top_q)

    results_path = data_path(paths_sec, "results", "results.json")
    results = _load_results(results_path)
    tract_path = data_path(paths_sec, "tract_map", "tract_map.csv")
    tract_ids, tract_names = load_tract_map_csv(tract_path)

    evals = []
    for s in results["subjects"]:
        att = s["attention"]
        if att is None:
            raise InputError(
                "results carry no attention scores (model trained with attention off)")
        evals.append(SubjectEval(s["subject_id"], s["label"], s["prediction"],
                                 s["correct"], np.asarray(att, dtype=np.float64)))
    fusion_raw = results["fusion_weights"]["mean_raw"]
    report = build_report(evals, tract_ids, tract_names, rule=rule,
                          multiplier=multiplier, q=q,
                          fusion_raw=None if fusion_raw is None else tuple(fusion_raw))
    out = out_dir(args, config)
    payload = report.to_jsonable()
    payload["source"] = {"config_digest": results["config_digest"],
                         "master_seed": results["master_seed"]}
    write_json(out / "report.json", payload)
    text_path = out / "report.txt"
    text_path.write_text(render_text_table(report))
    LOG.info("wrote %s", text_path)
    return 0


# --- compare -----------------------------------------------------------------


def cmd_compare(args):
    run_a = _load_results(args.results_a)
    run_b = _load_results(args.results_b)
    name_a, name_b = Path(args.results_a).stem, Path(args.results_b).stem
    comparisons = []
    for metric in METRIC_KEYS:
        a = run_a["metrics"][metric]["per_fold"]
        b = run_b["metrics"][metric]["per_fold"]
        if len(a) != len(b):
            raise InputError(
                f"fold-count mismatch for {metric}: {len(a)} vs {len(b)}")
        r = paired_t(a, b)
        comparisons.append({"metric": metric, "runs": [name_a, name_b], **r.as_dict()})
    target = Path(args.out or "comparison.json")
    if target.is_dir():
        target = target / "comparison.json"
    write_json(target, comparisons)
    return 0


# --- sweep -------------------------------------------------------------------


def cmd_sweep(args):
    config = load_config(args.config)
    paths_sec = section(config, "paths")
    graph_settings = _graph_settings(config, args)
    ssec = section(config, "sweep", required=False)
    ks = [int(k) for k in ssec.get("k_values", SWEEP_DEFAULT_KS)]
    if not ks:
        raise ConfigError("sweep.k_values must be non-empty")
    settings, n_folds, master_seed, workers = _train_settings(config, args)
    out = out_dir(args, config)

    rows = []
    for k in ks:
        per_k = dict(graph_settings, k=k)
        graph, _ = _build_graph(per_k, paths_sec)
        subjects, _, model_sec = _load_training_inputs(config, args, per_k,
                                                       prebuilt_graph=graph)
        model_sec["n_clusters"] = graph.n_nodes
        mcfg = _build_model_config(model_sec, master_seed)
        LOG.info("sweep k=%d", k)
        result = run_cv(subjects, graph, mcfg, settings, n_folds=n_folds,
                        master_seed=master_seed, workers=workers)
        acc = result.summary["accuracy"]
        rows.append({"k": k, "accuracy_mean": acc["mean"], "accuracy_sd": acc["sd"],
                     "per_fold": acc["per_fold"]})
    payload = {
        "format": SWEEP_FORMAT,
        "config_digest": canonical_digest({"graph": dict(graph_settings, k=None),
                                           "k_values": ks}),
        "master_seed": master_seed,
        "rows": rows,
    }
    write_json(out / "sweep.json", payload)
    csv_lines = ["k,accuracy_mean,accuracy_sd"]
    for row in rows:
        csv_lines.append(f"{row['k']},{row['accuracy_mean']!r},{row['accuracy_sd']!r}")
    (out / "sweep.csv").write_text("\n".join(csv_lines) + "\n")
    LOG.info("wrote %s", out / "sweep.csv")
    return 0


# --- parser ------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tractgraph",
        description="Fiber-cluster graph + transformer classification pipeline")
    sub = parser.add_subparsers(dest="command")

    def common(p, *, seed=False, out=True):
        p.add_argument("--config", help="experiment config JSON")
        if seed:
            p.add_argument("--seed", type=int, help="override the section seed")
        if out:
            p.add_argument("--out", help="output directory")

    p = sub.add_parser("gen", help="generate a synthetic atlas and cohort")
    common(p, seed=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("graph", help="build a cluster graph from atlas data")
    common(p)
    p.add_argument("--graph-kind", choices=["wmg", "gmg", "cmg"])
    p.add_argument("--k", type=int, help="neighbors per cluster")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("train", help="run stratified cross-validation")
    common(p, seed=True)
    p.add_argument("--graph-kind", choices=["wmg", "gmg", "cmg"])
    p.add_argument("--k", type=int)
    p.add_argument("--streams", choices=["graph", "transformer", "both"])
    p.add_argument("--attention", choices=["on", "off"])
    p.add_argument("--baseline", choices=["none", "1dcnn-pointwise"])
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("interpret", help="aggregate attention into a report")
    common(p)
    p.add_argument("--top-q", type=float, dest="top_q",
                   help="use the top-q%% selection rule instead of mean+1.5sd")
    p.set_defaults(func=cmd_interpret)

    p = sub.add_parser("compare", help="paired t-tests between two result files")
    p.add_argument("results_a")
    p.add_argument("results_b")
    p.add_argument("--out", help="comparison output path")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="accuracy over the k grid")
    common(p, seed=True)
    p.add_argument("--graph-kind", choices=["wmg", "gmg", "cmg"])
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help(sys.stderr)
        return 2
    try:
        _configure_logging()
        return args.func(args)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not raises
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
