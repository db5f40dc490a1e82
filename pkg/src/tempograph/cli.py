"""Command-line entry point: ``tempograph {train,eval,sweep,bench-expressiveness,ingest}``."""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .config import DEFAULTS, ConfigError, RunConfig
from .events import EventLog, IngestError, gen_symmetric_cycle, generate, ingest_csv, prepare_splits, write_csv
from .expressiveness import distinguishability_report
from .model import TETGN
from .tasks import (evaluate_node_classification, hyperparameter_sweep, metrics_line, run_link_prediction,
                    stream_evaluate, sweep_csv)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_MISSING = 0, 1, 2, 3


class RunDir:
    """Output directory that records a hash for everything written into it."""

    def __init__(self, path: Path, command: str, cfg: RunConfig | None):
        self.path = path
        self.command = command
        self.cfg = cfg
        self.hashes: dict[str, str] = {}
        path.mkdir(parents=True, exist_ok=True)
        if cfg is not None:
            self.write("config.txt", cfg.text())

    def write(self, name: str, data: str | bytes) -> Path:
        raw = data.encode("utf-8") if isinstance(data, str) else data
        target = self.path / name
        target.write_bytes(raw)
        self.hashes[name] = hashlib.sha256(raw).hexdigest()
        return target

    def write_json(self, name: str, obj) -> Path:
        return self.write(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def write_metrics(self, records: list[dict]) -> Path:
        return self.write("metrics.jsonl", "".join(metrics_line(r) + "\n" for r in records))

    def finish(self) -> None:
        manifest = {"command": self.command, "seed": None if self.cfg is None else self.cfg.seed,
                    "artifacts": dict(sorted(self.hashes.items()))}
        (self.path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _out_dir(args, command: str) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get("TEMPOGRAPH_OUT")
    return Path(root or "runs") / command


def _load_log(cfg: RunConfig) -> EventLog:
    path = cfg.values["data.path"]
    if path:
        if not Path(path).is_file():
            raise FileNotFoundError(path)
        return ingest_csv(path)
    return generate(cfg.synthetic_spec())


def _result_records(res: dict, run_id: str, epoch: int) -> list[dict]:
    return [{"run_id": run_id, "epoch": epoch, "split": k[0], "setting": k[1], "metric": k[2],
             "value": float(v)}
            for k, v in sorted((k, v) for k, v in res.items() if isinstance(k, tuple) and k[2] != "count")]


def _write_extensions(out: RunDir, records: list[dict]) -> None:
    """One JSON line per ID-table extension: node id, timestamp, new row count."""
    out.write("extensions.jsonl", "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def _report(res: dict) -> dict:
    out = {f"{k[0]}/{k[1]}/{k[2]}": v for k, v in sorted(
        (k, v) for k, v in res.items() if isinstance(k, tuple))}
    out["id_rows_unchanged"] = res.get("id_rows_unchanged")
    out["extensions"] = res.get("extensions")
    return out


# ------------------------------------------------------------------ commands

def cmd_train(cfg: RunConfig, out: RunDir) -> int:
    log = _load_log(cfg)
    data = prepare_splits(log, cfg.split_spec())
    spec = cfg.run_spec(log.feat_dim)
    records: list[dict] = []
    model, res, fitted = run_link_prediction(data, spec, f"seed{cfg.seed}", records.append)
    _write_extensions(out, model.table.extensions + res["extension_log"])
    model.save(out.path / "checkpoint.tgck", cfg.text())
    out.hashes["checkpoint.tgck"] = hashlib.sha256((out.path / "checkpoint.tgck").read_bytes()).hexdigest()
    report = {"best_epoch": fitted.best_epoch, "epochs_run": len(fitted.losses), **_report(res)}
    if log.has_labels() and len(set(data.test.labels.tolist()) - {-1}) == 2:
        nc = evaluate_node_classification(model, data, spec.train)
        report["test/transductive/node_AUC"] = nc.mean
        records.append({"run_id": f"seed{cfg.seed}", "epoch": fitted.best_epoch, "split": "test",
                        "setting": "transductive", "metric": "node_AUC", "value": nc.mean})
    out.write_metrics(records)
    out.write_json("report.json", report)
    return EXIT_OK


def cmd_eval(cfg: RunConfig, out: RunDir, checkpoint: str) -> int:
    if not Path(checkpoint).is_file():
        raise FileNotFoundError(checkpoint)
    model = TETGN.load(checkpoint)
    log = _load_log(cfg)
    data = prepare_splits(log, cfg.split_spec())
    spec = cfg.run_spec(log.feat_dim)
    res = stream_evaluate(model, data, spec.train)
    _write_extensions(out, res["extension_log"])
    out.write_metrics(_result_records(res, f"eval-seed{cfg.seed}", -1))
    out.write_json("report.json", _report(res))
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, out: RunDir) -> int:
    log = _load_log(cfg)
    data = prepare_splits(log, cfg.split_spec())
    grid = cfg.sweep_grid()
    records: list[dict] = []
    rows = hyperparameter_sweep(data, cfg.run_spec(log.feat_dim), grid["alphas"], grid["betas"],
                                grid["dims"], grid["repeats"], grid["settings"], sink=records.append)
    out.write("sweep.csv", sweep_csv(rows))
    out.write_metrics(records)
    return EXIT_OK


def cmd_bench(cfg: RunConfig, out: RunDir) -> int:
    log = _load_log(cfg) if cfg.values["data.path"] else gen_symmetric_cycle()
    pair = tuple(int(x) for x in cfg.values["bench.pair"].split(","))
    if len(pair) != 2:
        raise ConfigError("bench.pair", "bench.pair needs exactly two node ids")
    t = float(cfg.values["bench.t"])
    rows = []
    for seed in range(int(cfg.values["bench.seeds"])):
        for row in distinguishability_report(log, pair, t, seed=seed, layers=int(cfg.values["bench.layers"])):
            rows.append({"seed": seed, **row})
    out.write_json("report.json", rows)
    return EXIT_OK


def cmd_ingest(path: str, out: RunDir) -> int:
    if not Path(path).is_file():
        raise FileNotFoundError(path)
    log = ingest_csv(path)
    target = out.path / "events.csv"
    write_csv(log, target)
    out.hashes["events.csv"] = hashlib.sha256(target.read_bytes()).hexdigest()
    out.write_json("report.json", {"events": len(log), "num_nodes": int(log.num_nodes),
                                   "feat_dim": int(log.feat_dim), "num_sources": int(log.num_sources),
                                   "t_min": float(log.t.min()), "t_max": float(log.t.max())})
    return EXIT_OK


# ------------------------------------------------------------------- parsing

def _parse_set(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(item, f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tempograph", description=__doc__,
                                     epilog="config keys:\n" + "\n".join(
                                         f"  {k} (default {d!r}): {h}" for k, (d, h) in DEFAULTS.items()),
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--out", help="output directory (default $TEMPOGRAPH_OUT/<command>)")
        p.add_argument("--seed", type=int, help="run seed (overrides the config)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key; repeatable")
        return p

    common(sub.add_parser("train", help="train and evaluate a model"))
    p = common(sub.add_parser("eval", help="evaluate a saved checkpoint"))
    p.add_argument("checkpoint")
    common(sub.add_parser("sweep", help="alpha x beta x d grid"))
    common(sub.add_parser("bench-expressiveness", help="symmetric-pair distinguishability report"))
    p = sub.add_parser("ingest", help="parse an event CSV and summarize it")
    p.add_argument("path")
    p.add_argument("--out")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with threadpool_limits(1):
            if args.command == "ingest":
                out = RunDir(_out_dir(args, "ingest"), "ingest", None)
                code = cmd_ingest(args.path, out)
            else:
                overrides = _parse_set(args.set)
                if args.seed is not None:
                    overrides["seed"] = str(args.seed)
                if args.config and not Path(args.config).is_file():
                    raise FileNotFoundError(args.config)
                cfg = RunConfig.load(args.config, overrides)
                out = RunDir(_out_dir(args, args.command), args.command, cfg)
                if args.command == "train":
                    code = cmd_train(cfg, out)
                elif args.command == "eval":
                    code = cmd_eval(cfg, out, args.checkpoint)
                elif args.command == "sweep":
                    code = cmd_sweep(cfg, out)
                else:
                    code = cmd_bench(cfg, out)
            out.finish()
            return code
    except ConfigError as exc:
        print(f"tempograph: config error at key {exc.key!r}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"tempograph: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING
    except (IngestError, ValueError) as exc:
        print(f"tempograph: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
