"""Operator surface: gen-data, train, encode, eval-dca, eval-probe, sweep.

Every command writes its artifacts plus a manifest.json into --out; the
manifest pins the resolved config and the content hash of each input and
output file, and carries no timestamps, so re-running a command with the
same inputs reproduces identical bytes. Configs are strict JSON objects:
an unknown key is rejected by its path rather than silently ignored.

Exit codes: 0 success, 2 config error, 3 data or format error, 4 numeric
failure (non-finite loss or a degenerate embedding).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from itertools import product
from pathlib import Path

import numpy as np

from . import __version__
from .dca import DcaReport, evaluate_alignment
from .downstream import ProbeConfig, evaluate_robustness, train_probe
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DomainError,
    NumericError,
    ShapeError,
)
from .model import GmcModel, TrainConfig, train
from .persist import (
    hash_entry,
    load_checkpoint,
    load_dataset,
    modality_filename,
    read_matrix_csv,
    save_checkpoint,
    save_dataset,
    write_csv,
    write_manifest,
)
from .synthdata import SynthConfig, generate

_SYNTH_KEYS = {f.name for f in dataclasses.fields(SynthConfig)}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} | {"model"}
_PROBE_KEYS = {f.name for f in dataclasses.fields(ProbeConfig)}
_MODEL_KEYS = {"d", "s", "hidden", "activation", "seed"}
_MODEL_DEFAULTS = {"d": 64, "s": 64, "hidden": 64, "activation": "swish"}

# sweep axes, in the order grid points are enumerated
_SWEEP_TOP_AXES = ("tau", "loss_variant")
_SWEEP_MODEL_AXES = ("d", "s")


# --- config plumbing --------------------------------------------------------------


def _load_json_config(path) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(str(path), f"cannot read config file: {err}") from err
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(str(path), f"not valid JSON: {err}") from err
    if not isinstance(obj, dict):
        raise ConfigError(str(path), "top-level JSON value must be an object")
    return obj


def _reject_unknown_keys(obj: dict, allowed: set, prefix: str = "") -> None:
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{prefix}{key}", "unknown config key")


def _tupled(obj: dict) -> dict:
    """JSON arrays become tuples so they can feed frozen dataclasses."""
    return {k: tuple(v) if isinstance(v, list) else v for k, v in obj.items()}


def _build(cls, kwargs: dict, where: str):
    try:
        return cls(**_tupled(kwargs))
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(where, str(err)) from err


def resolve_synth_config(raw: dict, seed: int | None) -> SynthConfig:
    _reject_unknown_keys(raw, _SYNTH_KEYS)
    raw = dict(raw)
    if seed is not None:
        raw["seed"] = seed
    return _build(SynthConfig, raw, "gen-data config")


def resolve_train_config(
    raw: dict, seed: int | None, loss: str | None
) -> tuple[TrainConfig, dict]:
    """Split a train config into the TrainConfig and the model kwargs.

    The optional "model" section covers architecture; its seed defaults to
    the training seed so one --seed reseeds the whole run.
    """
    _reject_unknown_keys(raw, _TRAIN_KEYS)
    raw = dict(raw)
    model_raw = raw.pop("model", {})
    if not isinstance(model_raw, dict):
        raise ConfigError("model", "must be a JSON object")
    _reject_unknown_keys(model_raw, _MODEL_KEYS, "model.")
    if seed is not None:
        raw["seed"] = seed
    if loss is not None:
        raw["loss_variant"] = loss
    config = _build(TrainConfig, raw, "train config")
    model_kwargs = dict(_MODEL_DEFAULTS, seed=config.seed)
    model_kwargs.update(model_raw)
    for key in ("d", "s", "hidden"):
        value = model_kwargs[key]
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            raise ConfigError(f"model.{key}", f"must be a positive integer, got {value!r}")
    if isinstance(model_kwargs["seed"], bool) or not isinstance(model_kwargs["seed"], int):
        raise ConfigError("model.seed", f"must be an integer, got {model_kwargs['seed']!r}")
    return config, model_kwargs


def resolve_probe_config(raw: dict, seed: int | None) -> ProbeConfig:
    _reject_unknown_keys(raw, _PROBE_KEYS)
    raw = dict(raw)
    if seed is not None:
        raw["seed"] = seed
    return _build(ProbeConfig, raw, "probe config")


def _jsonable(value):
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        value = dataclasses.asdict(value)
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def _dataset_input_hashes(dataset_dir, modality_count: int) -> dict:
    names = [modality_filename(m) for m in range(modality_count)] + ["labels.csv"]
    return {name: hash_entry(Path(dataset_dir) / name) for name in names}


def _check_model_matches_dataset(model: GmcModel, dataset) -> None:
    dims = tuple(x.shape[1] for x in dataset.modalities)
    if model.modality_dims != dims:
        raise ContractError(
            f"checkpoint expects modality widths {model.modality_dims}, dataset has {dims}"
        )


# --- commands ---------------------------------------------------------------------


def cmd_gen_data(args) -> None:
    config = resolve_synth_config(_load_json_config(args.config), args.seed)
    dataset = generate(config)
    out = Path(args.out)
    files = save_dataset(out, dataset)
    outputs = {name: hash_entry(out / name) for name in files}
    write_manifest(
        out / "manifest.json", "gen-data", _jsonable(config), inputs={}, outputs=outputs
    )
    print(f"wrote {len(files)} dataset files to {args.out}")


def cmd_train(args) -> None:
    config, model_kwargs = resolve_train_config(
        _load_json_config(args.config), args.seed, args.loss
    )
    dataset = load_dataset(args.dataset)
    dims = tuple(x.shape[1] for x in dataset.modalities)
    model = GmcModel.build(dims, **model_kwargs)
    result = train(model, dataset, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.gmc", model)
    write_csv(
        out / "loss_trace.csv",
        ["epoch", "loss", "term_mean"],
        (
            (e, loss, mean)
            for e, (loss, mean) in enumerate(zip(result.epoch_losses, result.epoch_term_means))
        ),
    )
    write_manifest(
        out / "manifest.json",
        "train",
        {"train": _jsonable(config), "model": _jsonable(model_kwargs)},
        inputs={"dataset": _dataset_input_hashes(args.dataset, len(dims))},
        outputs={
            "checkpoint.gmc": hash_entry(out / "checkpoint.gmc"),
            "loss_trace.csv": hash_entry(out / "loss_trace.csv"),
        },
    )
    print(
        f"trained {config.epochs} epochs ({result.steps} steps); "
        f"loss {result.epoch_losses[0]:.6g} -> {result.epoch_losses[-1]:.6g}"
    )


def _parse_pathway(text: str, modality_count: int):
    if text == "complete":
        return "complete"
    try:
        m = int(text)
    except ValueError:
        m = 0
    if not 1 <= m <= modality_count:
        raise ConfigError(
            "--pathway", f"must be 'complete' or a modality index 1..{modality_count}, got {text!r}"
        )
    return m - 1


def cmd_encode(args) -> None:
    model = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    _check_model_matches_dataset(model, dataset)
    pathway = _parse_pathway(args.pathway, model.modality_count)
    if pathway == "complete":
        x = dataset.complete_view(args.split)
    else:
        x = dataset.modality(pathway, args.split)
    z = model.encode_pathway(pathway, x).data
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "embeddings.csv", [f"z{j}" for j in range(z.shape[1])], z)
    write_manifest(
        out / "manifest.json",
        "encode",
        {"pathway": args.pathway, "split": args.split},
        inputs={
            "checkpoint": hash_entry(args.checkpoint),
            "dataset": _dataset_input_hashes(args.dataset, model.modality_count),
        },
        outputs={"embeddings.csv": hash_entry(out / "embeddings.csv")},
    )
    print(f"encoded {z.shape[0]} samples ({args.split} split, pathway {args.pathway})")


def pca_2d(points: np.ndarray) -> np.ndarray:
    """Project onto the top-2 principal components, with a fixed sign
    convention (largest-magnitude loading positive) so output is stable."""
    centered = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2]
    if comps.shape[0] < 2:
        comps = np.vstack([comps, np.zeros((2 - comps.shape[0], points.shape[1]))])
    for i in range(2):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return centered @ comps.T


def report_as_dict(report: DcaReport, k: int) -> dict:
    out = _jsonable(report)
    out["k"] = k
    for comp in out["components"]:
        comp["fundamental"] = bool(
            comp["consistency"] > 0.0 and comp["quality"] > 0.0
        )
    return out


def cmd_eval_dca(args) -> None:
    _, reference = read_matrix_csv(args.reference)
    _, evaluation = read_matrix_csv(args.evaluation)
    if reference.ndim != 2 or reference.shape[1] != evaluation.shape[1]:
        raise ContractError(
            f"reference {reference.shape} and evaluation {evaluation.shape} widths differ"
        )
    report = evaluate_alignment(reference, evaluation, k=args.k)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(
        json.dumps(report_as_dict(report, args.k), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    n_ref = reference.shape[0]

    def origin(v: int) -> str:
        return "R" if v < n_ref else "E"

    write_csv(out / "outliers.csv", ["vertex", "origin"], ((v, origin(v)) for v in report.outliers))
    pooled = np.concatenate([reference, evaluation], axis=0)
    proj = pca_2d(pooled)
    write_csv(
        out / "pca2d.csv",
        ["origin", "pc1", "pc2"],
        ((origin(v), proj[v, 0], proj[v, 1]) for v in range(pooled.shape[0])),
    )
    write_manifest(
        out / "manifest.json",
        "eval-dca",
        {"k": args.k},
        inputs={
            "reference": hash_entry(args.reference),
            "evaluation": hash_entry(args.evaluation),
        },
        outputs={
            name: hash_entry(out / name) for name in ("report.json", "outliers.csv", "pca2d.csv")
        },
    )
    print(
        f"harmonic {report.harmonic:.6g} "
        f"(precision {report.precision:.6g}, recall {report.recall:.6g}, "
        f"quality {report.network_quality:.6g}); {len(report.outliers)} outliers"
    )


def _robustness_rows(table, modality_count: int):
    yield ("complete", table.accuracies["complete"])
    for m in range(1, modality_count + 1):
        yield (f"modality_{m}", table.accuracies[f"modality_{m}"])


def cmd_eval_probe(args) -> None:
    config = resolve_probe_config(_load_json_config(args.config), args.seed)
    model = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    _check_model_matches_dataset(model, dataset)
    z_train = model.encode_complete(dataset.complete_view("train")).data
    probe = train_probe(z_train, dataset.labels_view("train"), config=config)
    table = evaluate_robustness(model, probe, dataset, split="test")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(
        out / "robustness.csv",
        ["pathway", "accuracy"],
        _robustness_rows(table, model.modality_count),
    )
    write_manifest(
        out / "manifest.json",
        "eval-probe",
        _jsonable(config),
        inputs={
            "checkpoint": hash_entry(args.checkpoint),
            "dataset": _dataset_input_hashes(args.dataset, model.modality_count),
        },
        outputs={"robustness.csv": hash_entry(out / "robustness.csv")},
    )
    worst = table.worst_modality()
    print(f"probe accuracy: complete {table.complete:.4f}, worst modality {worst:.4f}")


# --- sweep -----------------------------------------------------------------------


def _sweep_axes(raw: dict) -> tuple[dict, list[tuple[str, list]]]:
    """Pull the list-valued hyperparameters out of a train config.

    Returns the config with those keys removed plus the (name, values) axes
    in a fixed enumeration order: tau, loss_variant, then model.d, model.s.
    """
    base = dict(raw)
    model_raw = base.get("model")
    if model_raw is not None and not isinstance(model_raw, dict):
        raise ConfigError("model", "must be a JSON object")
    axes = []
    for key in _SWEEP_TOP_AXES:
        if isinstance(base.get(key), list):
            values = base.pop(key)
            if not values:
                raise ConfigError(key, "sweep list must be nonempty")
            axes.append((key, values))
    if model_raw:
        base["model"] = dict(model_raw)
        for key in _SWEEP_MODEL_AXES:
            if isinstance(model_raw.get(key), list):
                values = base["model"].pop(key)
                if not values:
                    raise ConfigError(f"model.{key}", "sweep list must be nonempty")
                axes.append((f"model.{key}", values))
    return base, axes


def _grid_points(base: dict, axes: list[tuple[str, list]]) -> list[tuple[str, dict]]:
    """Materialize (label, raw train config) per grid point."""
    points = []
    value_lists = [values for _, values in axes]
    for combo in product(*value_lists) if axes else [()]:
        raw = json.loads(json.dumps(base))  # deep copy via JSON round trip
        parts = []
        for (name, _), value in zip(axes, combo):
            if name.startswith("model."):
                raw.setdefault("model", {})[name.split(".", 1)[1]] = value
            else:
                raw[name] = value
            parts.append(f"{name.split('.')[-1]}{value}")
        points.append(("_".join(parts) if parts else "default", raw))
    return points


def run_sweep_point(dataset_dir: str, run_dir: str, raw_config: dict) -> dict:
    """Train one grid point and measure it: probe accuracies per pathway and
    the DCA harmonic of each (complete, modality) embedding pair."""
    config, model_kwargs = resolve_train_config(raw_config, None, None)
    dataset = load_dataset(dataset_dir)
    dims = tuple(x.shape[1] for x in dataset.modalities)
    model = GmcModel.build(dims, **model_kwargs)
    result = train(model, dataset, config)
    out = Path(run_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.gmc", model)
    write_csv(
        out / "loss_trace.csv",
        ["epoch", "loss", "term_mean"],
        (
            (e, loss, mean)
            for e, (loss, mean) in enumerate(zip(result.epoch_losses, result.epoch_term_means))
        ),
    )
    z_train = model.encode_complete(dataset.complete_view("train")).data
    probe = train_probe(
        z_train,
        dataset.labels_view("train"),
        config=ProbeConfig(seed=config.seed),
    )
    table = evaluate_robustness(model, probe, dataset, split="test")
    write_csv(
        out / "robustness.csv",
        ["pathway", "accuracy"],
        _robustness_rows(table, model.modality_count),
    )
    z_complete = model.encode_complete(dataset.complete_view("test")).data
    harmonics = {}
    for m in range(model.modality_count):
        z_m = model.encode_modality(m, dataset.modality(m, "test")).data
        harmonics[f"modality_{m + 1}"] = evaluate_alignment(z_complete, z_m, k=5).harmonic
    write_csv(out / "dca.csv", ["pathway", "harmonic"], sorted(harmonics.items()))
    write_manifest(
        out / "manifest.json",
        "sweep-point",
        {"train": _jsonable(config), "model": _jsonable(model_kwargs)},
        inputs={"dataset": _dataset_input_hashes(dataset_dir, len(dims))},
        outputs={
            name: hash_entry(out / name)
            for name in ("checkpoint.gmc", "loss_trace.csv", "robustness.csv", "dca.csv")
        },
    )
    return {
        "probe_accuracy": dict(table.accuracies),
        "dca_harmonic": harmonics,
    }


def _sweep_job(payload):
    return run_sweep_point(*payload)


def _worker_count(n_jobs: int) -> int:
    raw = os.environ.get("GMC_THREADS", "").strip()
    if not raw:
        return min(n_jobs, os.cpu_count() or 1)
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError("GMC_THREADS", f"must be an integer, got {raw!r}") from None
    if cap < 1:
        raise ConfigError("GMC_THREADS", "must be >= 1")
    return min(n_jobs, cap)


def cmd_sweep(args) -> None:
    raw = _load_json_config(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    base, axes = _sweep_axes(raw)
    resolve_train_config(json.loads(json.dumps(base)), None, None)  # fail fast on bad keys
    dataset = load_dataset(args.dataset)
    modality_count = len(dataset.modalities)
    del dataset
    points = _grid_points(base, axes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for i, (label, raw_config) in enumerate(points):
        run_dir = out / f"run_{i:03d}_{label}"
        jobs.append((args.dataset, str(run_dir), raw_config))
    workers = _worker_count(len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(job) for job in jobs]

    labels = [label for label, _ in points]
    rows = []
    for pathway in ["complete"] + [f"modality_{m}" for m in range(1, modality_count + 1)]:
        rows.append(
            ("probe_accuracy", pathway, *(r["probe_accuracy"][pathway] for r in results))
        )
    for m in range(1, modality_count + 1):
        pathway = f"modality_{m}"
        rows.append(("dca_harmonic", pathway, *(r["dca_harmonic"][pathway] for r in results)))
    write_csv(out / "aggregate.csv", ["metric", "pathway", *labels], rows)

    outputs = {"aggregate.csv": hash_entry(out / "aggregate.csv")}
    for i, (label, _) in enumerate(points):
        name = f"run_{i:03d}_{label}/manifest.json"
        outputs[name] = hash_entry(out / name)
    write_manifest(
        out / "manifest.json",
        "sweep",
        {"base": _jsonable(base), "axes": _jsonable(dict(axes))},
        inputs={"dataset": _dataset_input_hashes(args.dataset, modality_count)},
        outputs=outputs,
    )
    print(f"swept {len(points)} grid points into {args.out}")


# --- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmc",
        description="Multimodal contrastive training and geometric alignment evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"gmc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic multimodal dataset directory")
    p.add_argument("--config", help="JSON config (SynthConfig schema)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--config", help="JSON config (TrainConfig schema plus a 'model' section)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--loss", choices=("full", "ablated"), help="override the loss variant")
    p.add_argument("--dataset", required=True, help="dataset directory from gen-data")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="embed a dataset split through one pathway")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--pathway", required=True, help="'complete' or a modality index 1..M")
    p.add_argument("--split", choices=("train", "test", "all"), default="all")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("eval-dca", help="score geometric alignment of two embedding files")
    p.add_argument("--reference", required=True, help="reference embeddings CSV")
    p.add_argument("--evaluation", required=True, help="evaluation embeddings CSV")
    p.add_argument("--k", type=int, default=5, help="neighbors per vertex (default 5)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval_dca)

    p = sub.add_parser("eval-probe", help="train a probe on complete-pathway latents and test every pathway")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", help="JSON config (ProbeConfig schema)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval_probe)

    p = sub.add_parser("sweep", help="train and evaluate a hyperparameter grid")
    p.add_argument(
        "--config",
        required=True,
        help="train config where tau, loss_variant, model.d, model.s may be lists",
    )
    p.add_argument("--seed", type=int, help="override the base seed")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except NumericError as err:
        print(f"error: {err}", file=sys.stderr)
        return 4
    except DomainError as err:
        print(f"error: {err}", file=sys.stderr)
        return 4
    except (DataError, ShapeError, ContractError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    return 0


def console_entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    console_entry()
