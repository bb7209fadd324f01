"""Command line interface: ``sihg train | eval | export | fixture``.

Every failure is reported as one JSON object on stderr. Exit codes are
0 on success, 2 for usage or input errors, 3 for data or state errors
(corrupt checkpoint, graph mismatch) and 4 when training diverges.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import subprocess
import sys
from contextlib import nullcontext
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, fixtures
from .graph import (GraphFormatError, SamplingError, SplitConfigError, load_edge_list, split,
                    write_edge_list)
from .layers import AttentionMap
from .manifold import MODELS, NumericError
from .objective import NonFiniteLossError, UndefinedMetricError
from .trainer import (HISTORY_FIELDS, Checkpoint, CheckpointError, ConfigError, TrainConfig,
                      TrainingDiverged, evaluate_checkpoint, graph_fingerprint,
                      model_from_checkpoint, train)

log = logging.getLogger("sihg")

EXIT_OK, EXIT_USAGE, EXIT_STATE, EXIT_NUMERIC = 0, 2, 3, 4

# flag name -> TrainConfig field
FLAG_FIELDS = {
    "model": "model", "dim": "dim", "layers": "layers", "epochs": "epochs", "lr": "lr",
    "alpha": "alpha", "beta": "beta", "gamma": "gamma", "radius": "radius", "temp": "temp",
    "curvature": "curvature", "seed": "seed", "split": "split",
}


class CLIError(Exception):
    """An error with an exit code and extra JSON fields."""

    def __init__(self, code: int, message: str, **details):
        super().__init__(message)
        self.code = code
        self.details = details


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError(EXIT_USAGE, message, kind="usage")


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _build_version() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _csv_writer(fh):
    # RFC 4180: comma separated, CRLF line endings, minimal quoting
    return csv.writer(fh, lineterminator="\r\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _load_graph(path: str):
    p = Path(path)
    if not p.is_file():
        raise CLIError(EXIT_USAGE, f"dataset not found: {path}", kind="missing_input", path=str(p))
    return load_edge_list(p)


def _load_checkpoint(path: str) -> Checkpoint:
    p = Path(path)
    if not p.is_file():
        raise CLIError(EXIT_USAGE, f"checkpoint not found: {path}", kind="missing_input", path=str(p))
    return Checkpoint.load(p)


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------

def resolve_config(args, num_edges: int) -> TrainConfig:
    """Defaults, then the JSON config file, then explicit flags."""
    values: dict = {}
    if args.config:
        p = Path(args.config)
        if not p.is_file():
            raise CLIError(EXIT_USAGE, f"config file not found: {p}", kind="missing_input", path=str(p))
        try:
            values.update(json.loads(p.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise CLIError(EXIT_USAGE, f"config file {p} is not valid JSON: {exc}",
                           kind="config", path=str(p)) from None
        if not isinstance(values, dict):
            raise CLIError(EXIT_USAGE, f"config file {p} must hold a JSON object", kind="config")
    for flag, name in FLAG_FIELDS.items():
        v = getattr(args, flag)
        if v is not None:
            values[name] = v
    return TrainConfig.for_dataset(num_edges, **values)


# ---------------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------------

def write_history(history: list[dict], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = _csv_writer(fh)
        w.writerow(HISTORY_FIELDS)
        for row in history:
            w.writerow([_fmt(row.get(k)) for k in HISTORY_FIELDS])


ATTENTION_FIELDS = ("layer", "branch", "sign_of_neighbor", "src", "dst", "weight",
                    "cross_sign", "theory_label", "theory_label_alt")


def _is_cross(branch: str, sign: str) -> bool:
    return (branch == "P") != (sign == "+")


def write_attention(amap: AttentionMap, node_labels, path: Path) -> int:
    """Write one row per (layer, branch, neighbor sign, src, dst) weight.

    ``src`` is the aggregating node and ``dst`` the neighbor it attends to.

    Cross-sign second-layer rows carry two interpretation labels:
    ``theory_label`` reads a positive weight as balance and a negative one as
    status; ``theory_label_alt`` is the opposite reading.
    """
    rows = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = _csv_writer(fh)
        w.writerow(ATTENTION_FIELDS)
        for rec in amap:
            cross = _is_cross(rec.branch, rec.neighbor_sign)
            labelled = cross and rec.layer == 2
            for i, j, a in zip(rec.src.tolist(), rec.dst.tolist(), rec.weight.tolist()):
                if labelled:
                    primary = "balance" if a > 0 else "status"
                    alt = "status" if a > 0 else "balance"
                else:
                    primary = alt = ""
                w.writerow([rec.layer, rec.branch, rec.neighbor_sign, node_labels[i],
                            node_labels[j], repr(a), int(cross), primary, alt])
                rows += 1
    return rows


def write_embeddings(ckpt: Checkpoint, path: Path) -> int:
    graph = ckpt.graph
    model = model_from_checkpoint(ckpt, graph)
    z = model.embed(graph.view_of(ckpt.split.train_edges))
    tangent = np.asarray(model.manifold.logmap0(z).data)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = _csv_writer(fh)
        w.writerow(["node"] + [f"t{k}" for k in range(tangent.shape[1])])
        for label, row in zip(graph.node_labels, tangent.tolist()):
            w.writerow([label] + [repr(x) for x in row])
    return tangent.shape[0]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    graph = _load_graph(args.data)
    config = resolve_config(args, graph.num_edges)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    plan = split(graph, config.split, config.seed)
    manifest = {
        "command": "train",
        "argv": sys.argv[1:] if args.argv is None else args.argv,
        "config": config.to_dict(),
        "config_hash": config.hash(),
        "dataset": str(Path(args.data).resolve()),
        "graph_hash": graph_fingerprint(graph),
        "num_nodes": graph.num_nodes,
        "num_edges": graph.num_edges,
        "output_dir": str(out.resolve()),
        "build": _build_version(),
        "started": _utc_now(),
        "finished": None,
    }
    _write_json(out / "manifest.json", manifest)
    log.info("training on %s: %d nodes, %d edges, config %s",
             args.data, graph.num_nodes, graph.num_edges, config.hash())

    result = train(graph, plan, config, dump_path=out / "checkpoint.npz")
    result.best.save(out / "checkpoint.npz")
    write_history(result.history, out / "metrics.csv")
    report = result.report.to_dict(best_epoch=result.best.epoch, config=config.to_dict(),
                                   config_hash=config.hash(), graph_hash=graph_fingerprint(graph),
                                   split_seed=plan.seed, split_fraction=plan.fraction)
    _write_json(out / "report.json", report)
    write_attention(result.attention, graph.node_labels, out / "attention.csv")
    manifest["finished"] = _utc_now()
    _write_json(out / "manifest.json", manifest)
    print(json.dumps(result.report.to_dict(best_epoch=result.best.epoch), sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = _load_checkpoint(args.checkpoint)
    graph = _load_graph(args.data)
    ghash = graph_fingerprint(graph)
    if ghash != ckpt.graph_hash:
        raise CLIError(EXIT_STATE, "dataset does not match the checkpoint",
                       kind="hash_mismatch", checkpoint_graph_hash=ckpt.graph_hash,
                       dataset_graph_hash=ghash)
    plan = ckpt.split
    seed = plan.seed if args.split_seed is None else args.split_seed
    fraction = plan.fraction if args.split is None else args.split
    changed = (seed, fraction) != (plan.seed, plan.fraction)
    if changed:
        plan = split(graph, fraction, seed)
    report = evaluate_checkpoint(ckpt, graph, plan)
    payload = report.to_dict(checkpoint=str(Path(args.checkpoint).resolve()),
                             config_hash=ckpt.config_hash, graph_hash=ghash,
                             split_seed=plan.seed, split_fraction=plan.fraction,
                             split_changed=changed,
                             checkpoint_split_seed=ckpt.split.seed,
                             stored_metrics=ckpt.metrics)
    if changed:
        log.warning("evaluating under split seed %d / fraction %g; the checkpoint was trained "
                    "with seed %d / fraction %g, so test edges may have been seen in training",
                    seed, fraction, ckpt.split.seed, ckpt.split.fraction)
    out = Path(args.out) if args.out else Path(args.checkpoint).with_suffix(".eval.json")
    _write_json(out, payload)
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def cmd_export(args) -> int:
    ckpt = _load_checkpoint(args.checkpoint)
    if ckpt.graph is None:
        raise CLIError(EXIT_STATE, "checkpoint carries no graph to encode", kind="state")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.what == "embeddings":
        n = write_embeddings(ckpt, out)
    else:
        model = model_from_checkpoint(ckpt, ckpt.graph)
        amap = model.attention(ckpt.graph.view_of(ckpt.split.train_edges))
        n = write_attention(amap, ckpt.graph.node_labels, out)
    print(json.dumps({"what": args.what, "rows": n, "out": str(out)}))
    return EXIT_OK


def cmd_fixture(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.kind == "channel":
        feats, labels = fixtures.channel(args.n, args.eps, seed=args.seed)
        with open(out, "w", encoding="utf-8", newline="") as fh:
            w = _csv_writer(fh)
            w.writerow([f"x{k}" for k in range(feats.shape[1])] + ["label"])
            for row, y in zip(feats.tolist(), labels.tolist()):
                w.writerow([repr(x) for x in row] + [int(y)])
        info = {"kind": "channel", "rows": len(labels), "eps": args.eps,
                "true_mi": fixtures.channel_mi(args.eps)}
    else:
        graph = fixtures.two_cliques(seed=args.seed) if args.kind == "cliques" else fixtures.triangles(args.seed)
        write_edge_list(graph, out)
        info = {"kind": args.kind, "nodes": graph.num_nodes, "edges": graph.num_edges,
                "positive": int((graph.signs > 0).sum()), "negative": int((graph.signs < 0).sum())}
    print(json.dumps({**info, "out": str(out)}, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser and entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sihg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"sihg {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train on a signed edge list")
    t.add_argument("--data", required=True, help="edge list: source, target, sign/weight")
    t.add_argument("--out", default="runs/sihg", help="output directory")
    t.add_argument("--config", help="JSON file with TrainConfig fields")
    t.add_argument("--model", choices=MODELS)
    for name, typ in (("dim", int), ("layers", int), ("epochs", int), ("lr", float),
                      ("alpha", float), ("beta", float), ("gamma", float),
                      ("radius", float), ("temp", float), ("curvature", float),
                      ("seed", int), ("split", float)):
        t.add_argument(f"--{name}", type=typ)
    t.set_defaults(func=cmd_train, argv=None)

    e = sub.add_parser("eval", help="evaluate a checkpoint on its dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split-seed", type=int, help="re-split with this seed (flagged in output)")
    e.add_argument("--split", type=float, help="re-split with this test fraction")
    e.add_argument("--out", help="report path (default: next to the checkpoint)")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export", help="export embeddings or attention weights")
    x.add_argument("what", choices=("embeddings", "attention"))
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export)

    f = sub.add_parser("fixture", help="write a synthetic dataset")
    f.add_argument("kind", choices=("cliques", "triangles", "channel"))
    f.add_argument("--out", required=True)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--eps", type=float, default=0.0, help="channel flip probability")
    f.add_argument("--n", type=int, default=10_000, help="channel sample count")
    f.set_defaults(func=cmd_fixture)
    return p


def _error_payload(code: int, exc: BaseException, **details) -> dict:
    return {"error": type(exc).__name__, "message": str(exc), "exit_code": code, **details}


def _thread_limit():
    n = os.environ.get("SIHG_NUM_THREADS")
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(1, int(n)))


def main(argv: list[str] | None = None) -> int:
    code, payload = EXIT_OK, None
    try:
        args = build_parser().parse_args(argv)
        if hasattr(args, "argv"):
            args.argv = list(argv) if argv is not None else None
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        with _thread_limit():
            code = args.func(args)
    except CLIError as exc:
        code, payload = exc.code, _error_payload(exc.code, exc, **exc.details)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        code, payload = EXIT_USAGE, _error_payload(EXIT_USAGE, exc, path=exc.filename)
    except (GraphFormatError, SplitConfigError, ConfigError) as exc:
        extra = {"line": exc.lineno} if isinstance(exc, GraphFormatError) else {}
        code, payload = EXIT_USAGE, _error_payload(EXIT_USAGE, exc, **extra)
    except (CheckpointError, SamplingError, UndefinedMetricError) as exc:
        code, payload = EXIT_STATE, _error_payload(EXIT_STATE, exc)
    except (TrainingDiverged, NonFiniteLossError, NumericError) as exc:
        code, payload = EXIT_NUMERIC, _error_payload(EXIT_NUMERIC, exc)
    if payload is not None:
        print(json.dumps(payload, sort_keys=True, default=str), file=sys.stderr)
    return code


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
