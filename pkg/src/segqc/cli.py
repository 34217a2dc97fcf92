"""Command-line interface: segqc index | rca | calibrate | predict | synth | eval.

Runs are reproducible: a JSON config file can hold any long-form option
(flags win on conflict), dataset splits are seeded and recorded, and output
payloads carry no timestamps, so identical config+seed gives byte-identical
files. SEGQC_THREADS caps per-reference parallelism. Exit codes: 0 success,
1 usage error, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from .conformal import CalibrationRecord, ConformalCalibration, calibrate, predict_interval
from .dataset import Dataset, assign_roles, load_dataset
from .errors import DataError
from .image import load_image, load_mask, resize_bilinear, resize_nearest
from .metrics import EvaluationMetric
from .rca import RcaRequest, rca_point_estimate, rca_scores
from .report import EvaluationReport, ReportPair, emit
from .retrieval import top_k
from .rng import Xorshift64Star
from .segmenters import AtlasConfig, AtlasSegmenter, ExternalSegmenter, load_external_manifest
from .synthetic import SyntheticConfig, run_synthetic_trial


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SEGQC_THREADS", "1")))
    except ValueError:
        return 1


def _stable_case_seed(seed: int, case_id: str) -> int:
    digest = hashlib.sha256(case_id.encode("utf-8")).digest()
    return seed ^ int.from_bytes(digest[:8], "big")


def _dataset_hash(root: Path) -> str:
    manifest = root / "dataset.json"
    return hashlib.sha256(manifest.read_bytes()).hexdigest()


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed config {path}: {exc.msg}")
    if not isinstance(cfg, dict):
        raise DataError(f"config {path} must be a JSON object")
    return cfg


def _opt(args, config: dict, key: str, default):
    """Flag beats config beats default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _make_segmenter(spec: str, class_count: int):
    if spec == "atlas":
        return AtlasSegmenter(AtlasConfig())
    if spec.startswith("external:"):
        return ExternalSegmenter(load_external_manifest(spec[len("external:"):], class_count))
    raise UsageError(f"--segmenter must be 'atlas' or 'external:<manifest>', got {spec!r}")


def _resolve_roles(ds: Dataset, fractions, seed: int, record_to: Path | None):
    roles = dict(ds.roles)
    if all(roles.get(i) for i in ds.ids):
        return roles
    roles = assign_roles(ds.ids, tuple(fractions), seed)
    if record_to is not None:
        payload = {role: [i for i in ds.ids if roles[i] == role] for role in ("reference", "calibration", "test")}
        payload["seed"] = seed
        payload["fractions"] = list(fractions)
        _write_atomic(record_to, _dump(payload) + "\n")
    return roles


def _select_references(ds: Dataset, ref_ids, case_id: str | None, k, mode: str, seed: int):
    refs = ds.reference_database(ref_ids)
    if k is None or k <= 0 or k >= len(refs):
        return refs
    if mode == "cosine":
        if ds.embeddings is None:
            raise DataError("cosine retrieval needs embeddings.jsonl in the dataset")
        if case_id is None:
            raise DataError("cosine retrieval needs a case id to look up the query embedding")
        index = refs.embedding_index()
        query = ds.embeddings.get(case_id)
        chosen = [rid for rid, _ in top_k(index, query, k)]
        return refs.subset(chosen)
    if mode == "random":
        rng = Xorshift64Star(_stable_case_seed(seed, case_id or ""))
        ids = list(refs.ids)
        rng.shuffle(ids)
        return refs.subset(ids[:k])
    raise UsageError(f"--retrieval must be 'cosine' or 'random', got {mode!r}")


def _case_score_set(ds, refs, image, pred, segmenter, metric):
    req = RcaRequest(image, pred, segmenter, refs, metric)
    return rca_scores(req, max_workers=_threads())


def _size_arg(value):
    return None if value == 0 else value


# --- subcommands -----------------------------------------------------------


def cmd_index(args) -> int:
    config = _load_config(args.config)
    root = Path(_opt(args, config, "dataset", None) or _usage("--dataset is required"))
    ds = load_dataset(root)
    emb_path = root / "embeddings.jsonl"
    if ds.embeddings is None:
        raise DataError(f"missing embeddings file {emb_path}")
    known = set(ds.ids)
    extra = [i for i in ds.embeddings.ids if i not in known]
    missing = [i for i in ds.ids if i not in set(ds.embeddings.ids)]
    print(_dump({
        "path": str(emb_path),
        "count": len(ds.embeddings),
        "dim": ds.embeddings.dim,
        "ids_not_in_manifest": extra,
        "manifest_ids_without_embedding": missing,
        "ok": not extra,
    }))
    return 0


def _usage(msg: str):
    raise UsageError(msg)


def _common_pipeline_opts(args, config):
    size = _size_arg(int(_opt(args, config, "size", 256)))
    metric = EvaluationMetric(_opt(args, config, "metric", "dsc"))
    seed = int(_opt(args, config, "seed", 0))
    k_ref = _opt(args, config, "k_ref", None)
    k_ref = int(k_ref) if k_ref is not None else None
    retrieval = _opt(args, config, "retrieval", "cosine")
    segmenter_spec = _opt(args, config, "segmenter", "atlas")
    return size, metric, seed, k_ref, retrieval, segmenter_spec


def cmd_rca(args) -> int:
    config = _load_config(args.config)
    dataset_dir = _opt(args, config, "dataset", None) or _usage("--dataset is required")
    target_path = _opt(args, config, "target", None) or _usage("--target is required")
    pred_path = _opt(args, config, "pred", None) or _usage("--pred is required")
    mode = _opt(args, config, "mode", "max")
    size, metric, seed, k_ref, retrieval, segmenter_spec = _common_pipeline_opts(args, config)

    ds = load_dataset(dataset_dir, size)
    image = load_image(target_path)
    pred = load_mask(pred_path, ds.class_count)
    if size is not None:
        image = resize_bilinear(image, size, size)
        pred = resize_nearest(pred, size, size)

    ref_ids = ds.ids_with_role("reference") or list(ds.ids)
    case_id = _opt(args, config, "target_id", None)
    refs = _select_references(ds, ref_ids, case_id, k_ref, retrieval, seed)
    segmenter = _make_segmenter(segmenter_spec, ds.class_count)
    scores = _case_score_set(ds, refs, image, pred, segmenter, metric)
    estimate = rca_point_estimate(scores, mode)
    print(_dump({
        "target": str(target_path),
        "metric": metric.value,
        "mode": mode,
        "reference_ids": scores.ids,
        "scores": [{"id": i, "score": s} for i, s in scores.entries],
        "estimate": estimate,
    }))
    return 0


def _calibration_records(ds, roles, metric, k_ref, retrieval, seed, segmenter, size):
    ref_ids = [i for i in ds.ids if roles.get(i) == "reference"]
    cal_ids = [i for i in ds.ids if roles.get(i) == "calibration"]
    if not cal_ids:
        raise DataError("dataset has no calibration ids")
    records = []
    for cid in cal_ids:
        image = ds.images[cid]
        gt = ds.masks[cid]
        pred = ds.load_prediction(cid, size)
        refs = _select_references(ds, ref_ids, cid, k_ref, retrieval, seed)
        scores = _case_score_set(ds, refs, image, pred, segmenter, metric)
        records.append(CalibrationRecord(cid, scores, metric.score(pred, gt)))
    return records


def cmd_calibrate(args) -> int:
    config = _load_config(args.config)
    dataset_dir = _opt(args, config, "dataset", None) or _usage("--dataset is required")
    out = Path(_opt(args, config, "out", "calib.json"))
    alpha = float(_opt(args, config, "alpha", 0.1))
    p_low = float(_opt(args, config, "p_low", 0.4))
    p_high = float(_opt(args, config, "p_high", 0.95))
    kind = _opt(args, config, "kind", "cqr_empirical")
    fractions = _opt(args, config, "split", [0.8, 0.1, 0.1])
    size, metric, seed, k_ref, retrieval, segmenter_spec = _common_pipeline_opts(args, config)

    ds = load_dataset(dataset_dir, size)
    roles = _resolve_roles(ds, fractions, seed, out.parent / "splits.json")
    segmenter = _make_segmenter(segmenter_spec, ds.class_count)
    records = _calibration_records(ds, roles, metric, k_ref, retrieval, seed, segmenter, size)
    calib = calibrate(records, alpha, p_low, p_high, kind, created_from=_dataset_hash(Path(dataset_dir)))
    _write_atomic(out, _dump(calib.to_json_dict()) + "\n")
    print(_dump({"out": str(out), "n": calib.n, "q_hat": calib.to_json_dict()["q_hat"]}))
    return 0


def cmd_predict(args) -> int:
    config = _load_config(args.config)
    dataset_dir = _opt(args, config, "dataset", None) or _usage("--dataset is required")
    calib_path = _opt(args, config, "calib", None) or _usage("--calib is required")
    target_path = _opt(args, config, "target", None) or _usage("--target is required")
    pred_path = _opt(args, config, "pred", None) or _usage("--pred is required")
    mode = _opt(args, config, "mode", "max")
    size, metric, seed, k_ref, retrieval, segmenter_spec = _common_pipeline_opts(args, config)

    calib = ConformalCalibration.load(calib_path)
    ds = load_dataset(dataset_dir, size)
    image = load_image(target_path)
    pred = load_mask(pred_path, ds.class_count)
    if size is not None:
        image = resize_bilinear(image, size, size)
        pred = resize_nearest(pred, size, size)

    ref_ids = ds.ids_with_role("reference") or list(ds.ids)
    case_id = _opt(args, config, "target_id", None)
    refs = _select_references(ds, ref_ids, case_id, k_ref, retrieval, seed)
    segmenter = _make_segmenter(segmenter_spec, ds.class_count)
    scores = _case_score_set(ds, refs, image, pred, segmenter, metric)
    interval = predict_interval(scores, calib)
    print(_dump({
        "target": str(target_path),
        "estimate": rca_point_estimate(scores, mode),
        "lower": interval.lower,
        "upper": interval.upper,
        "raw_lower": None if interval.raw_lower == -float("inf") else interval.raw_lower,
        "raw_upper": None if interval.raw_upper == float("inf") else interval.raw_upper,
        "degenerate": interval.degenerate,
        "alpha": calib.alpha,
    }))
    return 0


def cmd_synth(args) -> int:
    config = _load_config(args.config)
    trials = int(_opt(args, config, "trials", 50))
    seed = int(_opt(args, config, "seed", 0))
    cfg_fields = dict(
        n_cal=int(_opt(args, config, "n_cal", 200)),
        n_test=int(_opt(args, config, "n_test", 2000)),
        ref_size=int(_opt(args, config, "ref_size", 32)),
        noise_sigma=float(_opt(args, config, "noise_sigma", 0.1)),
        alpha=float(_opt(args, config, "alpha", 0.1)),
        p_low=float(_opt(args, config, "p_low", 0.4)),
        p_high=float(_opt(args, config, "p_high", 0.95)),
    )
    rows = []
    for t in range(trials):
        trial_seed = seed + t
        coverage, mean_width = run_synthetic_trial(SyntheticConfig(seed=trial_seed, **cfg_fields))
        rows.append({"seed": trial_seed, "coverage": coverage, "mean_width": mean_width})
    aggregate = {
        "trials": trials,
        "mean_coverage": sum(r["coverage"] for r in rows) / trials,
        "mean_width": sum(r["mean_width"] for r in rows) / trials,
        "alpha": cfg_fields["alpha"],
    }
    payload = {"config": cfg_fields, "per_trial": rows, "aggregate": aggregate}
    out_json = _opt(args, config, "out_json", None)
    out_csv = _opt(args, config, "out_csv", None)
    if out_json:
        _write_atomic(Path(out_json), _dump(payload) + "\n")
    if out_csv:
        lines = ["seed,coverage,mean_width"]
        lines += [f"{r['seed']},{r['coverage']!r},{r['mean_width']!r}" for r in rows]
        _write_atomic(Path(out_csv), "\n".join(lines) + "\n")
    print(_dump(payload if not (out_json or out_csv) else aggregate))
    return 0


def cmd_eval(args) -> int:
    config = _load_config(args.config)
    dataset_dir = _opt(args, config, "dataset", None) or _usage("--dataset is required")
    out_dir = Path(_opt(args, config, "out_dir", "segqc_out"))
    mode = _opt(args, config, "mode", "max")
    calib_path = _opt(args, config, "calib", None)
    fractions = _opt(args, config, "split", [0.8, 0.1, 0.1])
    size, metric, seed, k_ref, retrieval, segmenter_spec = _common_pipeline_opts(args, config)

    ds = load_dataset(dataset_dir, size)
    roles = _resolve_roles(ds, fractions, seed, out_dir / "splits.json")
    ref_ids = [i for i in ds.ids if roles.get(i) == "reference"]
    test_ids = [i for i in ds.ids if roles.get(i) == "test"]
    if not test_ids:
        raise DataError("dataset has no test ids")
    segmenter = _make_segmenter(segmenter_spec, ds.class_count)
    calib = ConformalCalibration.load(calib_path) if calib_path else None

    pairs = []
    for tid in test_ids:
        image = ds.images[tid]
        gt = ds.masks[tid]
        pred = ds.load_prediction(tid, size)
        refs = _select_references(ds, ref_ids, tid, k_ref, retrieval, seed)
        scores = _case_score_set(ds, refs, image, pred, segmenter, metric)
        estimate = rca_point_estimate(scores, mode)
        truth = metric.score(pred, gt)
        if calib is not None:
            iv = predict_interval(scores, calib)
            pairs.append(ReportPair(tid, estimate, truth, iv.lower, iv.upper))
        else:
            pairs.append(ReportPair(tid, estimate, truth))

    rep = EvaluationReport(tuple(pairs))
    out_dir.mkdir(parents=True, exist_ok=True)
    emit(rep, "json", out_dir / "report.json")
    emit(rep, "csv", out_dir / "report.csv")
    print(_dump({"out_dir": str(out_dir), "cases": len(pairs), "summary": rep.summary()}))
    return 0


# --- argument parsing ------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; explicit flags override it")
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("--size", type=int, help="working resolution (0 keeps native size; default 256)")
    p.add_argument("--metric", choices=["dsc", "hausdorff", "assd"], help="evaluation metric")
    p.add_argument("--segmenter", help="'atlas' or 'external:<manifest.json>'")
    p.add_argument("--k-ref", dest="k_ref", type=int, help="reference subset size per case")
    p.add_argument("--retrieval", choices=["cosine", "random"], help="reference selection mode")
    p.add_argument("--seed", type=int, help="seed for splits and random retrieval")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="segqc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="validate a dataset's embeddings file")
    p.add_argument("--config")
    p.add_argument("--dataset")
    p.set_defaults(fn=cmd_index)

    p = sub.add_parser("rca", help="reverse-accuracy scores and point estimate for one case")
    _add_common(p)
    p.add_argument("--target", help="image under assessment")
    p.add_argument("--pred", help="predicted mask under assessment")
    p.add_argument("--target-id", dest="target_id", help="dataset id for embedding lookup")
    p.add_argument("--mode", choices=["max", "mean"])
    p.set_defaults(fn=cmd_rca)

    p = sub.add_parser("calibrate", help="fit the conformal threshold on the calibration split")
    _add_common(p)
    p.add_argument("--alpha", type=float)
    p.add_argument("--p-low", dest="p_low", type=float)
    p.add_argument("--p-high", dest="p_high", type=float)
    p.add_argument("--kind", choices=["cqr_empirical", "residual", "locally_weighted"])
    p.add_argument("--split", type=float, nargs=3, metavar=("REF", "CAL", "TEST"))
    p.add_argument("--out")
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("predict", help="prediction interval for one case")
    _add_common(p)
    p.add_argument("--calib", help="calibration JSON from 'segqc calibrate'")
    p.add_argument("--target")
    p.add_argument("--pred")
    p.add_argument("--target-id", dest="target_id")
    p.add_argument("--mode", choices=["max", "mean"])
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("synth", help="synthetic exchangeable coverage trials")
    p.add_argument("--config")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-cal", dest="n_cal", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--ref-size", dest="ref_size", type=int)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--p-low", dest="p_low", type=float)
    p.add_argument("--p-high", dest="p_high", type=float)
    p.add_argument("--out-json", dest="out_json")
    p.add_argument("--out-csv", dest="out_csv")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("eval", help="evaluate the test split and emit a report")
    _add_common(p)
    p.add_argument("--calib")
    p.add_argument("--mode", choices=["max", "mean"])
    p.add_argument("--split", type=float, nargs=3, metavar=("REF", "CAL", "TEST"))
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(fn=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
