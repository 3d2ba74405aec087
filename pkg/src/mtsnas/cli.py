"""Command-line entry point.

Every command writes into ``--out`` (created if needed) and leaves a
``manifest.json`` there describing the run. Failures print one line,
``mtsnas-error: <kind>: <message>``, to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import warnings
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from mtsnas import __version__
from mtsnas import tensor as T
from mtsnas import training
from mtsnas.cell import DiscreteArchitecture
from mtsnas.config import ABLATIONS, ConfigError, TrainConfig, load_config
from mtsnas.data import DataError, SyntheticSpec, gen_synthetic, load_csv, make_windows, save_json, write_csv

EXIT_CODES = {
    "usage": 2,
    "missing-file": 3,
    "config": 4,
    "data": 5,
    "schema": 6,
    "dimension": 7,
    "training": 8,
}


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


# ----------------------------------------------------------------------
# helpers


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _need_file(path, what: str) -> Path:
    if path is None:
        raise CliError("usage", f"{what} is required")
    p = Path(path)
    if not p.is_file():
        raise CliError("missing-file", f"{what} not found: {p}")
    return p


def _read_json(path: Path, what: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise CliError("schema", f"{what} {path} is not valid JSON: {exc}") from exc


def _out_dir(args) -> Path:
    if args.out is None:
        raise CliError("usage", "--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def resolve_config(args) -> TrainConfig:
    """Config file (or defaults), then ``--ablation`` switches, ``--scales`` and ``--seed``."""
    if args.config is not None:
        config = load_config(_need_file(args.config, "--config"))
    else:
        config = TrainConfig()
    for name in args.ablation or []:
        config = config.apply_ablation(name)
    if args.scales is not None:
        config = config.with_scales(args.scales)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return config


def _load_series(args, config: TrainConfig):
    path = _need_file(args.data, "--data")
    return path, load_csv(path, min_rows=config.t_in + config.horizon)


def _splits(series, config: TrainConfig, stats=None):
    split = (config.train_frac, config.valid_frac, 1.0 - config.train_frac - config.valid_frac)
    return make_windows(series, config.t_in, config.horizon, split, stats=stats)


def _fit_to_arch(config: TrainConfig, arch: DiscreteArchitecture) -> TrainConfig:
    """The architecture fixes scales, cells and nodes; the config supplies the rest."""
    cells = tuple(len(c) for c in arch.cells)
    return dataclasses.replace(
        config, n_scales=arch.n_scales, cells_per_scale=cells, nodes_per_cell=arch.nodes_per_cell
    )


def _progress(args):
    if args.quiet:
        return None
    return lambda msg: print(msg, file=sys.stderr, flush=True)


def write_manifest(out: Path, args, inputs: dict, outputs: list[str], started: str, config=None, seed=None) -> None:
    manifest = {
        "tool": "mtsnas",
        "version": __version__,
        "command": args.command,
        "argv": sys.argv[1:],
        "seed": seed,
        "config": None if config is None else config.to_dict(),
        "inputs": {k: {"path": str(v), "sha256": sha256(v)} for k, v in inputs.items()},
        "outputs": sorted(outputs),
        "started": started,
        "finished": _now(),
    }
    save_json(manifest, out / "manifest.json")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_metrics(obj: dict, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


# ----------------------------------------------------------------------
# commands


def cmd_gen_synth(args) -> None:
    started = _now()
    if args.spec is not None:
        spec_path = _need_file(args.spec, "--spec")
        obj = _read_json(spec_path, "spec")
        if not isinstance(obj, dict):
            raise CliError("schema", f"spec {spec_path} must be a JSON object")
        try:
            spec = SyntheticSpec.from_json(obj)
        except TypeError as exc:
            raise CliError("schema", f"spec {spec_path}: {exc}") from exc
        inputs = {"spec": spec_path}
    else:
        spec = SyntheticSpec()
        inputs = {}
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    spec.validate()
    out = _out_dir(args)
    series, adj = gen_synthetic(spec)
    write_csv(series, out / "series.csv")
    save_json({"n_vars": spec.n_vars, "adjacency": adj.tolist()}, out / "adjacency.json")
    save_json(spec.to_json(), out / "spec.json")
    write_manifest(out, args, inputs, ["series.csv", "adjacency.json", "spec.json"], started, seed=spec.seed)


def cmd_search(args) -> None:
    started = _now()
    config = resolve_config(args)
    data_path, series = _load_series(args, config)
    out = _out_dir(args)
    splits = _splits(series, config)
    result = training.search_stage(splits, config, progress=_progress(args))
    save_json(result.arch.to_json(), out / "arch.json")
    result.log.write_csv(out / "search_log.csv")
    inputs = {"data": data_path} | ({"config": Path(args.config)} if args.config else {})
    write_manifest(out, args, inputs, ["arch.json", "search_log.csv"], started, config, config.seed)


def _load_arch(path) -> DiscreteArchitecture:
    p = _need_file(path, "--arch")
    try:
        return DiscreteArchitecture.from_json(_read_json(p, "architecture"))
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError("schema", f"architecture {p}: {exc}") from exc


def cmd_train(args) -> None:
    started = _now()
    arch = _load_arch(args.arch)
    config = _fit_to_arch(resolve_config(args), arch)
    data_path, series = _load_series(args, config)
    out = _out_dir(args)
    splits = _splits(series, config)
    result = training.train_stage(arch, splits, config, progress=_progress(args))
    training.save_checkpoint(result.model, splits.stats, out / "checkpoint.json")
    result.log.write_csv(out / "train_log.csv")
    inputs = {"data": data_path, "arch": Path(args.arch)} | ({"config": Path(args.config)} if args.config else {})
    write_manifest(out, args, inputs, ["checkpoint.json", "train_log.csv"], started, config, config.seed)


def _load_checkpoint(path):
    p = _need_file(path, "--checkpoint")
    try:
        return p, training.checkpoint_from_dict(_read_json(p, "checkpoint"))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, (DataError, ConfigError, T.ShapeError)):
            raise
        raise CliError("schema", f"checkpoint {p}: {exc}") from exc


def cmd_eval(args) -> None:
    started = _now()
    ckpt_path, (model, stats) = _load_checkpoint(args.checkpoint)
    config = model.config
    data_path, series = _load_series(args, config)
    if series.n_vars != model.n_vars:
        raise CliError("dimension", f"checkpoint expects {model.n_vars} variables, dataset has {series.n_vars}")
    splits = _splits(series, config, stats=stats)
    if splits.in_channels != model.in_channels:
        raise CliError(
            "dimension", f"checkpoint expects {model.in_channels} input channels, dataset gives {splits.in_channels}"
        )
    out = _out_dir(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        metrics = training.evaluate(model, splits.test, stats)
        baseline = training.persistence_metrics(splits.test)
    report = {
        "split": "test",
        "n_windows": len(splits.test),
        "model": metrics.to_json(),
        "persistence": baseline.to_json(),
    }
    _write_metrics(report, out / "metrics.json")
    write_manifest(out, args, {"checkpoint": ckpt_path, "data": data_path}, ["metrics.json"], started, config, config.seed)


def cmd_export_arch(args) -> None:
    started = _now()
    if args.checkpoint is not None:
        src_key, src = "checkpoint", args.checkpoint
        src_path, (model, _) = _load_checkpoint(src)
        arch = model.arch
    else:
        src_key, src_path = "arch", _need_file(args.arch, "--checkpoint or --arch")
        arch = _load_arch(src_path)
    out = _out_dir(args)
    save_json(arch.to_json(), out / "arch.json")
    lines = []
    for k, cells in enumerate(arch.cells):
        for c, choice in enumerate(cells):
            for (i, j), op in sorted(choice.items(), key=lambda e: (e[0][1], e[0][0])):
                lines.append(f"scale {k + 1} cell {c} {i}->{j} {op}")
    (out / "arch.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_manifest(out, args, {src_key: src_path}, ["arch.json", "arch.txt"], started)


def _write_matrix(mat: np.ndarray, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in mat:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def cmd_export_graph(args) -> None:
    started = _now()
    ckpt_path, (model, _) = _load_checkpoint(args.checkpoint)
    out = _out_dir(args)
    with T.no_grad():
        adjs = model.graph()
    outputs = []
    for s, mat in enumerate(adjs.basic):
        name = "adjacency_basic.csv" if len(adjs.basic) == 1 else f"adjacency_basic_{s + 1}.csv"
        _write_matrix(mat.data, out / name)
        outputs.append(name)
    for k, mat in enumerate(adjs.scales):
        name = f"adjacency_scale{k + 1}.csv"
        _write_matrix(mat.data, out / name)
        outputs.append(name)
    write_manifest(out, args, {"checkpoint": ckpt_path}, outputs, started, model.config, model.config.seed)


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "search": cmd_search,
    "train": cmd_train,
    "eval": cmd_eval,
    "export-arch": cmd_export_arch,
    "export-graph": cmd_export_graph,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mtsnas", description="Multi-scale graph architecture search for multivariate forecasting.")
    parser.add_argument("--version", action="version", version=f"mtsnas {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, data=True, config=True):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override the seed")
        if data:
            p.add_argument("--data", help="series CSV")
        if config:
            p.add_argument("--config", help="INI-style config file")
            p.add_argument("--ablation", action="append", choices=ABLATIONS, help="repeatable")
            p.add_argument("--scales", type=int, help="number of scales K")
        p.add_argument("--quiet", action="store_true", help="no progress output")

    p = sub.add_parser("gen-synth", help="write a synthetic dataset with a planted graph")
    common(p, data=False, config=False)
    p.add_argument("--spec", help="synthetic spec JSON (defaults when omitted)")

    p = sub.add_parser("search", help="architecture search; writes arch.json")
    common(p)

    p = sub.add_parser("train", help="train a fixed architecture; writes checkpoint.json")
    common(p)
    p.add_argument("--arch", help="architecture JSON from search")

    p = sub.add_parser("eval", help="test-split metrics; writes metrics.json")
    common(p, config=False)
    p.add_argument("--checkpoint", help="checkpoint JSON from train")

    p = sub.add_parser("export-arch", help="write the architecture of a checkpoint")
    common(p, data=False, config=False)
    p.add_argument("--checkpoint")
    p.add_argument("--arch")

    p = sub.add_parser("export-graph", help="write the learned adjacency matrices as CSV")
    common(p, data=False, config=False)
    p.add_argument("--checkpoint")
    return parser


def _classify(exc: Exception) -> str:
    if isinstance(exc, CliError):
        return exc.kind
    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, DataError):
        return "data"
    if isinstance(exc, T.ShapeError):
        return "dimension"
    if isinstance(exc, training.TrainingError):
        return "training"
    if isinstance(exc, FileNotFoundError):
        return "missing-file"
    return "schema"


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args)
    except (CliError, ConfigError, DataError, T.ShapeError, training.TrainingError, FileNotFoundError, ValueError) as exc:
        kind = _classify(exc)
        message = " ".join(str(exc).split())
        print(f"mtsnas-error: {kind}: {message}", file=sys.stderr)
        return EXIT_CODES.get(kind, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
