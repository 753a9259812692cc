"""Command-line pipelines: train, explain, trajectory, evaluate, embed.

A single declarative JSON config (plus ``--set`` dotted-path overrides)
drives every command; one master seed controls data synthesis, the
train/test split, and forest training, so a config plus its input files
fully determines every output byte. Each run writes a manifest echoing
the config and the SHA-256 digest of every file it produced.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 no counterfactual satisfies the constraint, 1 unexpected failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import counterfactual as cf
from . import data as dt
from . import embedding as emb
from . import evaluation as ev
from . import forest as ft
from . import proximity as px
from . import synth
from . import tally as tl
from .errors import (ConfigError, ConsistencyError, DegenerateInputError, FormatError,
                     NoCounterfactualError, NoOutOfBagError, ParseError, RfExplainError,
                     SchemaError)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NO_COUNTERFACTUAL = 4

_DATA_ERRORS = (SchemaError, ParseError, FormatError, ConsistencyError,
                DegenerateInputError, NoOutOfBagError)

DEFAULT_CONFIG = {
    "seed": 0,
    "output_dir": "rfexplain_run",
    "dataset": {
        "kind": "synthetic_credit",
        "n": 1000,
        "path": None,
        "label_column": None,
        "categorical_columns": [],
        "delimiter": "auto",
        "images": None,
        "labels": None,
        "limit": None,
        "normalize": False,
    },
    "split": {"test_fraction": 0.5},
    "forest": {"n_trees": 1000, "max_depth": 5, "features_per_split": "sqrt"},
    "utility": {"kind": "class_flip", "target_class": None, "delta": 0.0},
    "metric": "rf_gap",
    "tally_mode": "region_restricted",
    "reference": "train",
    "explain": {"instance": 0, "stop": "class_flip"},
    "evaluate": {
        "strategies": [["euclidean", "baseline"], ["euclidean", "partitions"],
                       ["rf_gap", "baseline"], ["rf_gap", "partitions"]],
        "attributions": None,
        "max_instances": None,
    },
    "embed": {"max_points": 300, "inf_cap_factor": 1.5, "instance": None},
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _deep_update(base, incoming):
    for key, value in incoming.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


def load_config(path=None, overrides=()):
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
        _deep_update(cfg, user)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key.path=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set path {key!r} crosses a non-object value")
        node[parts[-1]] = value
    return cfg


def _load_dataset(cfg) -> dt.Dataset:
    spec = cfg["dataset"]
    kind = spec.get("kind")
    seed = int(cfg["seed"])
    if kind == "tabular":
        if not spec.get("path") or not spec.get("label_column"):
            raise ConfigError("tabular dataset needs dataset.path and dataset.label_column")
        return dt.load_tabular(spec["path"], label_column=spec["label_column"],
                               categorical_columns=spec.get("categorical_columns") or [],
                               delimiter=spec.get("delimiter", "auto"))
    if kind == "idx":
        if not spec.get("images") or not spec.get("labels"):
            raise ConfigError("idx dataset needs dataset.images and dataset.labels paths")
        return dt.load_idx_images(spec["images"], spec["labels"],
                                  limit=spec.get("limit"), normalize=bool(spec.get("normalize")))
    if kind == "synthetic_credit":
        header, rows = synth.make_credit_rows(n=int(spec.get("n") or 1000), seed=seed)
        tmp = Path(cfg["output_dir"]) / "synthetic_credit.csv"
        tmp.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(row) + "\n")
        cats = [name for name, _ in synth.CREDIT_CATEGORICALS]
        return dt.load_tabular(tmp, label_column=synth.CREDIT_LABEL, categorical_columns=cats)
    if kind == "synthetic_digits":
        images, labels = synth.make_digit_images(int(spec.get("n") or 2000), seed=seed)
        out = Path(cfg["output_dir"])
        out.mkdir(parents=True, exist_ok=True)
        ip, lp = out / "synthetic_images.idx", out / "synthetic_labels.idx"
        synth.write_idx(images, labels, ip, lp)
        return dt.load_idx_images(ip, lp, normalize=bool(spec.get("normalize")))
    raise ConfigError(f"unknown dataset kind {kind!r}")


def _split_views(cfg, ds):
    sp = dt.split(ds, float(cfg["split"]["test_fraction"]), seed=int(cfg["seed"]))
    return sp, ds.subset(sp.train), ds.subset(sp.test)


def _forest_path(cfg):
    return Path(cfg["output_dir"]) / "forest.bin"


def _require_forest(cfg, ds, train_view):
    path = _forest_path(cfg)
    if not path.exists():
        raise ConfigError(f"no trained forest at {path}; run `rfexplain train` first")
    forest = ft.load_forest(path)
    if forest.n_features != ds.d:
        raise ConsistencyError(
            f"forest expects {forest.n_features} features, dataset has {ds.d}")
    if forest.records.n_train != train_view.n:
        raise ConsistencyError(
            f"forest was trained on {forest.records.n_train} instances, split yields {train_view.n}")
    return forest


def _utility_spec(cfg, ds) -> cf.UtilitySpec:
    u = cfg["utility"]
    kind = u.get("kind")
    target = u.get("target_class")
    if kind == cf.CLASS_PROBABILITY:
        if target is None:
            raise ConfigError("class_probability utility needs utility.target_class")
        if str(target) not in ds.class_names:
            raise ConfigError(f"unknown target class {target!r}; classes are {list(ds.class_names)}")
        target = list(ds.class_names).index(str(target))
    elif kind == cf.CLASS_FLIP:
        target = None
    else:
        raise ConfigError(f"unknown utility kind {kind!r}")
    return cf.UtilitySpec(kind=kind, target_class=target, delta=float(u.get("delta", 0.0)))


def _reference_view(cfg, train_view, test_view):
    ref = cfg.get("reference", "train")
    if ref == "train":
        return train_view, True
    if ref == "test":
        return test_view, False
    raise ConfigError(f"reference must be 'train' or 'test', got {ref!r}")


def _backend(cfg, forest, reference_view, reference_is_train, train_view):
    metric = cfg.get("metric")
    if metric == "euclidean":
        return cf.EuclideanBackend(reference_view.X)
    if metric == "rf_gap":
        if not reference_is_train:
            raise ConfigError("metric rf_gap requires reference='train' "
                              "(model-aware distances are defined over the training pool)")
        return cf.GapBackend(forest, train_view)
    raise ConfigError(f"unknown metric {metric!r}")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(cfg, command, outputs):
    out = Path(cfg["output_dir"])
    manifest = {
        "command": command,
        "config": cfg,
        "outputs": {Path(p).name: _sha256(p) for p in sorted(str(o) for o in outputs)},
    }
    path = out / f"manifest_{command}.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _fmt(v):
    return f"{v:.12g}"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(cfg):
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    ds = _load_dataset(cfg)
    _, train_view, test_view = _split_views(cfg, ds)

    t0 = time.perf_counter()
    forest = ft.fit(train_view,
                    n_trees=int(cfg["forest"]["n_trees"]),
                    max_depth=int(cfg["forest"]["max_depth"]),
                    features_per_split=cfg["forest"]["features_per_split"],
                    seed=int(cfg["seed"]))
    elapsed = time.perf_counter() - t0

    fpath = _forest_path(cfg)
    ft.save_forest(forest, fpath)

    train_acc = float((ft.predict(forest, train_view.X) == train_view.y).mean())
    test_acc = float((ft.predict(forest, test_view.X) == test_view.y).mean())
    degenerate = len(np.unique(train_view.y)) < 2

    rpath = out / "train_report.txt"
    with open(rpath, "w", encoding="utf-8") as fh:
        fh.write(f"n_train {train_view.n}\n")
        fh.write(f"n_test {test_view.n}\n")
        fh.write(f"n_features {ds.d}\n")
        fh.write(f"classes {','.join(ds.class_names)}\n")
        fh.write(f"train_accuracy {_fmt(train_acc)}\n")
        fh.write(f"test_accuracy {_fmt(test_acc)}\n")
        if degenerate:
            fh.write("degenerate single-class training set: forest of single-leaf trees\n")
    _write_manifest(cfg, "train", [fpath, rpath])
    print(f"trained {forest.n_trees} trees in {elapsed:.1f}s; "
          f"train acc {train_acc:.4f}, test acc {test_acc:.4f} -> {fpath}")
    return EXIT_OK


def _explain_pipeline(cfg, want_tally):
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    ds = _load_dataset(cfg)
    _, train_view, test_view = _split_views(cfg, ds)
    forest = _require_forest(cfg, ds, train_view)
    utility = _utility_spec(cfg, ds)
    reference_view, ref_is_train = _reference_view(cfg, train_view, test_view)
    backend = _backend(cfg, forest, reference_view, ref_is_train, train_view)

    instance = int(cfg["explain"]["instance"])
    if not 0 <= instance < test_view.n:
        raise ConfigError(f"instance {instance} outside test set of size {test_view.n}")
    x = test_view.X[instance]
    stop = cfg["explain"].get("stop", cf.STOP_CLASS_FLIP)

    result = cf.find_counterfactual(forest, x, reference_view, backend, utility)
    start_u, traj = cf.trajectory_from_point(forest, x, reference_view, backend, utility, stop=stop)

    proba_x = ft.predict_proba(forest, x)
    lines = [
        f"instance_index {instance}",
        f"instance_predicted_class {ds.class_names[int(np.argmax(proba_x))]}",
        f"instance_utility {_fmt(start_u)}",
        f"metric {backend.name}",
        f"reference {cfg.get('reference', 'train')}",
        f"utility_kind {utility.kind}",
        f"delta {_fmt(utility.delta)}",
        f"counterfactual_index {result.counterfactual_index}",
        f"counterfactual_distance {px._fmt(result.distance)}",
        f"utility_gain {_fmt(result.utility_gain)}",
        f"trajectory_indices {','.join(str(i) for i in traj.indices)}",
        f"trajectory_utilities {','.join(_fmt(u) for u in traj.utilities)}",
    ]
    outputs = []
    tally_path = None
    if want_tally:
        geo = tl.build_geometry(forest)
        if len(traj) > 0:
            points = np.vstack([x[None, :], reference_view.X[traj.indices]])
            tally = tl.tally_trajectory(forest, points, mode=cfg["tally_mode"], geometry=geo)
        else:
            tally = tl.tally_segment(forest, reference_view.X[result.counterfactual_index], x,
                                     mode=cfg["tally_mode"], geometry=geo)
        nonzero = int((tally.counts != 0).sum())
        lines.append(f"tally_nonzero_features {nonzero}")
        lines.append(f"tally_mode {cfg['tally_mode']}")
        tally_path = out / f"tally_{instance}.csv"
        tl.write_tally_text(tally_path, tally, ds.schema.feature_names)
        outputs.append(tally_path)
        side = int(np.sqrt(ds.d))
        if side * side == ds.d:
            grid_path = out / f"tally_{instance}_grid.txt"
            tl.write_tally_grid(grid_path, tally, side, side)
            outputs.append(grid_path)

    name = "explain" if want_tally else "trajectory"
    rpath = out / f"{name}_{instance}.txt"
    with open(rpath, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    outputs.append(rpath)
    _write_manifest(cfg, name, outputs)
    print(f"{name}: instance {instance} -> counterfactual {result.counterfactual_index} "
          f"({backend.name}), trajectory length {len(traj)}")
    if tally_path is not None:
        print(f"tally written to {tally_path}")
    return EXIT_OK


def cmd_explain(cfg):
    return _explain_pipeline(cfg, want_tally=True)


def cmd_trajectory(cfg):
    return _explain_pipeline(cfg, want_tally=False)


def cmd_evaluate(cfg):
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    ds = _load_dataset(cfg)
    _, train_view, test_view = _split_views(cfg, ds)
    forest = _require_forest(cfg, ds, train_view)
    reference_view, ref_is_train = _reference_view(cfg, train_view, test_view)

    strategies = [tuple(s) for s in cfg["evaluate"]["strategies"]]
    if any(m == "rf_gap" for m, _ in strategies) and not ref_is_train:
        raise ConfigError("rf_gap strategies require reference='train'")
    attributions = None
    attr_path = cfg["evaluate"].get("attributions")
    wanted = {r for _, r in strategies}
    if ev.RANK_IMPORTED in wanted:
        if not attr_path:
            raise ConfigError("strategies using imported attributions need evaluate.attributions")
        attributions = ev.import_attributions(attr_path, ds.schema)

    max_instances = cfg["evaluate"].get("max_instances")
    geo = tl.build_geometry(forest)
    curves = ev.run_flip_experiment(
        forest, test_view, reference_view, strategies, attributions=attributions,
        tally_mode=cfg["tally_mode"], train_for_gap=train_view,
        max_instances=max_instances, geometry=geo)

    curves_path = out / "flip_curves.csv"
    ev.write_flip_curves(curves_path, curves)

    # sparsity study on the same instance/counterfactual pairs: partition
    # tallies vs the imported attributions (or the |difference| fallback)
    n_take = test_view.n if max_instances is None else min(int(max_instances), test_view.n)
    pred_test = np.argmax(np.atleast_2d(ft.predict_proba(forest, test_view.X[:n_take])), axis=1)
    pred_ref = np.argmax(np.atleast_2d(ft.predict_proba(forest, reference_view.X)), axis=1)
    backend = _backend(cfg, forest, reference_view, ref_is_train, train_view)
    tally_rows, base_rows, kept = [], [], []
    for i in range(n_take):
        candidates = np.nonzero(pred_ref != pred_test[i])[0]
        if candidates.size == 0:
            continue
        row = backend.row_for_point(test_view.X[i])
        j = cf._restricted_argmin(row, candidates)
        cf_x = reference_view.X[j]
        tally_rows.append(tl.tally_segment(forest, cf_x, test_view.X[i],
                                           mode=cfg["tally_mode"], geometry=geo).counts)
        base_rows.append(attributions.values[i] if attributions is not None
                         else np.abs(test_view.X[i] - cf_x))
        kept.append(i)
    tallies = ev.AttributionSet(np.asarray(tally_rows, dtype=np.float64), ev.SOURCE_TALLY,
                                instance_ids=np.asarray(kept))
    baseline = ev.AttributionSet(np.asarray(base_rows, dtype=np.float64),
                                 ev.SOURCE_IMPORTED if attributions is not None else ev.SOURCE_ABS_DIFF,
                                 instance_ids=np.asarray(kept))
    summary = ev.sparsity_study(tallies, baseline)

    by_name = {c.strategy: c for c in curves}
    dominance_line = ""
    if "rf_gapxpartitions" in by_name and "euclideanxbaseline" in by_name:
        a = by_name["rf_gapxpartitions"].flip_rate
        b = by_name["euclideanxbaseline"].flip_rate
        frac = float((a >= b).mean())
        dominance_line = f"rf_gap_partitions_ge_euclidean_baseline_fraction {_fmt(frac)}\n"

    spath = out / "sparsity_summary.txt"
    with open(spath, "w", encoding="utf-8") as fh:
        fh.write(f"n_instances {summary.n_instances}\n")
        fh.write(f"partition_tally_mean_sparsity {_fmt(summary.mean_a)}\n")
        fh.write(f"partition_tally_stderr {_fmt(summary.stderr_a)}\n")
        fh.write(f"baseline_source {baseline.source}\n")
        fh.write(f"baseline_mean_sparsity {_fmt(summary.mean_b)}\n")
        fh.write(f"baseline_stderr {_fmt(summary.stderr_b)}\n")
        fh.write(f"welch_statistic {_fmt(summary.statistic)}\n")
        fh.write(f"welch_pvalue {_fmt(summary.pvalue)}\n")
        fh.write(f"n_excluded {curves[0].n_excluded if curves else 0}\n")
        fh.write(dominance_line)
    _write_manifest(cfg, "evaluate", [curves_path, spath])
    print(f"evaluate: {len(curves)} strategies, {curves[0].n_evaluated} instances evaluated, "
          f"{curves[0].n_excluded} excluded -> {curves_path}")
    return EXIT_OK


def cmd_embed(cfg):
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    ds = _load_dataset(cfg)
    _, train_view, test_view = _split_views(cfg, ds)
    forest = _require_forest(cfg, ds, train_view)

    max_points = int(cfg["embed"]["max_points"])
    if max_points < 2:
        raise ConfigError("embed.max_points must be at least 2")
    if max_points > px.DEFAULT_DENSE_CAP:
        raise ConfigError(f"embed.max_points exceeds the dense cap "
                          f"({px.DEFAULT_DENSE_CAP}); subsample further")

    traj_train_indices = np.empty(0, dtype=np.int64)
    instance = cfg["embed"].get("instance")
    if instance is not None:
        utility = _utility_spec(cfg, ds)
        backend = cf.GapBackend(forest, train_view) if cfg.get("metric") == "rf_gap" \
            else cf.EuclideanBackend(train_view.X)
        _, traj = cf.trajectory_from_point(forest, test_view.X[int(instance)], train_view,
                                           backend, utility,
                                           stop=cfg["explain"].get("stop", cf.STOP_CLASS_FLIP))
        traj_train_indices = traj.indices

    rng = np.random.default_rng(int(cfg["seed"]))
    base = rng.permutation(train_view.n)[:max_points]
    chosen = np.unique(np.concatenate([base, traj_train_indices]))
    sub = train_view.subset(chosen)

    if cfg.get("metric") == "euclidean":
        dm = px.euclidean_distance(sub)
    elif train_view.n <= px.DEFAULT_DENSE_CAP:
        full = px.gap_distance(px.gap_proximity(forest, train_view))
        dm = px.DistanceMatrix(values=full.values[np.ix_(chosen, chosen)], metric=full.metric)
    else:
        # desk-scale cap exceeded: assemble only the subsample's pairwise
        # proximities row by row instead of materializing n^2
        engine = px.ProximityEngine(forest, train_view)
        R = np.zeros((chosen.size, chosen.size))
        for a, i in enumerate(chosen):
            try:
                R[a] = engine.prox_row(int(i))[chosen]
            except NoOutOfBagError:
                pass  # flagged row: no OOB trees, proximities stay zero
        sym = 0.5 * (R + R.T)
        with np.errstate(divide="ignore"):
            vals = 1.0 / sym
        np.fill_diagonal(vals, 0.0)
        dm = px.DistanceMatrix(values=vals, metric="rf_gap")

    coords = emb.mds_embed(dm, inf_cap_factor=float(cfg["embed"]["inf_cap_factor"]))
    labels = [ds.class_names[c] for c in sub.y]
    traj_positions = np.nonzero(np.isin(chosen, traj_train_indices))[0]
    epath = out / "embedding.csv"
    emb.write_embedding(epath, coords, labels=labels, trajectory_indices=traj_positions)
    _write_manifest(cfg, "embed", [epath])
    print(f"embed: {coords.n} points ({dm.metric}), stress {coords.stress:.4f} -> {epath}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="rfexplain",
        description="Random forest counterfactual explanations: model-aware "
                    "proximities, trajectories, and partition-crossing tallies.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("train", "train a forest and report accuracies"),
        ("explain", "counterfactual + trajectory + partition tally for one test instance"),
        ("trajectory", "counterfactual trajectory record for one test instance"),
        ("evaluate", "flip-curve and sparsity studies over the test set"),
        ("embed", "2-D MDS coordinates of model-aware distances"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON run configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry (dotted path, JSON value)")
        if name in ("explain", "trajectory"):
            p.add_argument("--instance", type=int, help="test-set instance index")
        if name == "embed":
            p.add_argument("--instance", type=int, help="flag this test instance's trajectory")
    return parser


_COMMANDS = {
    "train": cmd_train,
    "explain": cmd_explain,
    "trajectory": cmd_trajectory,
    "evaluate": cmd_evaluate,
    "embed": cmd_embed,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        if getattr(args, "instance", None) is not None:
            if args.command in ("explain", "trajectory"):
                cfg["explain"]["instance"] = args.instance
            else:
                cfg["embed"]["instance"] = args.instance
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoCounterfactualError as exc:
        print(f"no counterfactual: {exc}", file=sys.stderr)
        return EXIT_NO_COUNTERFACTUAL
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
