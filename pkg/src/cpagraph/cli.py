"""Command-line entry point.

Every command writes canonical JSON (sorted keys) plus a short human table.
With ``--out DIR`` the JSON goes to files in DIR together with a manifest;
otherwise it is printed to stdout and the table to stderr.

Exit codes: 0 success, 1 input or configuration error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import rng as rngmod

log = logging.getLogger("cpagraph")

EXIT_OK, EXIT_USER, EXIT_NUMERIC = 0, 1, 2


class UserError(Exception):
    """Bad input or configuration; maps to exit code 1."""


# -- configuration -----------------------------------------------------------------

@dataclass
class RunConfig:
    seed: int = 0
    model: dict = field(default_factory=dict)
    pretrain: dict = field(default_factory=dict)
    aug: dict = field(default_factory=dict)
    finetune: dict = field(default_factory=dict)
    corpus: dict = field(default_factory=dict)

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        known = {f.name for f in fields(RunConfig)}
        unknown = set(d) - known
        if unknown:
            raise UserError(f"unknown config keys {sorted(unknown)}")
        cfg = RunConfig(**d)
        _check_keys("corpus", cfg.corpus, {"synthetic", "min_atoms", "max_atoms"})
        return cfg

    def canonical(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))


def _check_keys(section: str, d: dict, allowed: set[str]) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise UserError(f"unknown keys in [{section}]: {sorted(unknown)}")


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise UserError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UserError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise UserError("config must be a JSON object")
    return RunConfig.from_dict(data)


def _model_config(cfg: RunConfig, **overrides):
    from .cpaformer import ModelConfig

    d = dict(cfg.model)
    d.setdefault("seed", cfg.seed)
    d.update(overrides)
    try:
        return ModelConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UserError(f"invalid model config: {exc}") from exc


def _dataclass_from(cls, section: str, d: dict, **extra):
    allowed = {f.name for f in fields(cls)}
    _check_keys(section, d, allowed)
    try:
        return cls(**{**d, **extra})
    except (TypeError, ValueError) as exc:
        raise UserError(f"invalid [{section}] config: {exc}") from exc


# -- output ------------------------------------------------------------------------

def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if hasattr(o, "value"):
        return o.value
    raise TypeError(f"cannot serialise {type(o).__name__}")


def format_table(headers: list[str], rows: list[list]) -> str:
    cells = [[str(h) for h in headers]] + [[_fmt(c) for c in r] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _fmt(c) -> str:
    if isinstance(c, float):
        return f"{c:.4f}"
    return str(c)


class Emitter:
    def __init__(self, args, command: str, cfg: RunConfig):
        self.out = Path(args.out) if getattr(args, "out", None) else None
        self.command = command
        self.cfg = cfg
        self.files: dict[str, str] = {}
        if self.out:
            self.out.mkdir(parents=True, exist_ok=True)

    def write_text(self, name: str, text: str) -> None:
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()
        if self.out:
            (self.out / name).write_text(text)

    def result(self, payload: dict, table: str) -> None:
        text = canonical_json(payload)
        self.write_text("result.json", text)
        if self.out:
            print(table)
        else:
            sys.stdout.write(text)
            print(table, file=sys.stderr)

    def manifest(self, extra: dict | None = None) -> None:
        if not self.out:
            return
        doc = {
            "command": self.command,
            "config_hash": hashlib.sha256(self.cfg.canonical().encode()).hexdigest(),
            "config": json.loads(self.cfg.canonical()),
            "seed": self.cfg.seed,
            "versions": {"cpagraph": __version__, "numpy": np.__version__,
                         "python": platform.python_version()},
            "outputs": dict(sorted(self.files.items())),
        }
        doc.update(extra or {})
        (self.out / "manifest.json").write_text(canonical_json(doc))


# -- inputs ------------------------------------------------------------------------

def _corpus_mode(path: str, mode: str | None) -> str:
    if mode:
        return mode
    return "smiles" if Path(path).suffix in (".smi", ".smiles", ".txt") else "json"


def read_graphs(args, cfg: RunConfig, required: bool = True):
    from .graphio import load_corpus, parse_smiles

    if getattr(args, "smiles", None):
        return [parse_smiles(s, f"s{i}") for i, s in enumerate(args.smiles)]
    if getattr(args, "input", None):
        if not Path(args.input).exists():
            raise UserError(f"input not found: {args.input}")
        graphs, errors = load_corpus(args.input, _corpus_mode(args.input, getattr(args, "mode", None)))
        for e in errors:
            log.warning("line %d: %s", e.line, e.message)
        if not graphs:
            raise UserError("no valid graphs in input")
        return graphs
    if required and not cfg.corpus:
        raise UserError("no input given (use --input, --smiles or a [corpus] config section)")
    from .synthetic import random_corpus

    n = int(cfg.corpus.get("synthetic", 64))
    lo, hi = int(cfg.corpus.get("min_atoms", 4)), int(cfg.corpus.get("max_atoms", 20))
    return random_corpus(n, rngmod.stream(cfg.seed, "corpus"), (lo, hi))


def _parse_k(text: str) -> int | None:
    if text in ("global", "none", "None"):
        return None
    try:
        k = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError("k must be a positive integer or 'global'") from exc
    if k < 1:
        raise argparse.ArgumentTypeError("k must be >= 1")
    return k


# -- commands ----------------------------------------------------------------------

def cmd_parse(args, cfg):
    from .graphio import graph_to_record, load_corpus, parse_smiles

    em = Emitter(args, "parse", cfg)
    errors = []
    if args.smiles:
        graphs = [parse_smiles(s, f"s{i}") for i, s in enumerate(args.smiles)]
    elif args.input:
        if not Path(args.input).exists():
            raise UserError(f"input not found: {args.input}")
        graphs, errs = load_corpus(args.input, _corpus_mode(args.input, args.mode))
        errors = [{"line": e.line, "message": e.message} for e in errs]
    else:
        raise UserError("parse needs --input or --smiles")
    rows = [[g.id, g.n, len(g.bonds)] for g in graphs]
    em.result({"graphs": [graph_to_record(g) for g in graphs], "errors": errors},
              format_table(["id", "atoms", "bonds"], rows) + f"\n{len(errors)} error(s)")
    em.manifest()
    return EXIT_USER if errors and not graphs else EXIT_OK


def cmd_featurize(args, cfg):
    from .graphio import compute_corpus_stats, featurize

    graphs = read_graphs(args, cfg)
    stats = compute_corpus_stats(graphs)
    em = Emitter(args, "featurize", cfg)
    out = []
    for g in graphs:
        nf, bf = featurize(g, stats=stats)
        out.append({"id": g.id, "categorical": nf.categorical, "continuous": nf.continuous[:, 0],
                    "bonds": [[u, v, idx] for (u, v), idx in sorted(bf.items())]})
    em.result({"stats": stats.to_dict(), "graphs": out},
              format_table(["id", "atoms", "bonds"], [[g.id, g.n, len(g.bonds)] for g in graphs]))
    em.manifest()
    return EXIT_OK


def cmd_topo(args, cfg):
    from .topo import coverage, truncated_spd

    graphs = read_graphs(args, cfg)
    em = Emitter(args, "topo", cfg)
    rows, out = [], []
    for g in graphs:
        sup = truncated_spd(g, args.k)
        cov = coverage(g, args.k, sup)
        sizes = sup.sizes()
        out.append({"id": g.id, "n": g.n, "coverage": round(cov, 10), "support_sizes": sizes,
                    "neighbors": [s.tolist() for s in sup.neighbors], "spd": [d.tolist() for d in sup.spd]})
        rows.append([g.id, g.n, f"{cov:.1f}%", float(sizes.mean())])
    med = float(np.median([o["coverage"] for o in out]))
    em.result({"k": args.k, "graphs": out, "median_coverage": med},
              format_table(["id", "N", "coverage", "mean |S|"], rows) + f"\nmedian coverage {med:.1f}%")
    em.manifest()
    return EXIT_OK


def cmd_model(args, cfg):
    from .batcher import pad_batch, prepare
    from .checkpoint import load as load_ckpt
    from .cpaformer import CPAFormer
    from .graphio import compute_corpus_stats

    graphs = read_graphs(args, cfg)
    if args.checkpoint:
        model, _, _ = load_ckpt(args.checkpoint)
    else:
        model = CPAFormer(_model_config(cfg))
    k = model.config.k
    stats = compute_corpus_stats(graphs)
    batch = pad_batch([prepare(g, k, with_paths=model.config.path_edge_bias) for g in graphs], k,
                      model.schema, stats, spd_clip=model.config.spd_clip)
    emb = model.forward(batch).data
    em = Emitter(args, "model forward", cfg)
    em.result({"config": model.config.to_dict(), "parameters": model.count(),
               "embeddings": {g.id: emb[i] for i, g in enumerate(graphs)}},
              format_table(["id", "N", "|emb|"], [[g.id, g.n, float(np.linalg.norm(emb[i]))]
                                                for i, g in enumerate(graphs)]))
    em.manifest()
    return EXIT_OK


def cmd_pretrain(args, cfg):
    from . import checkpoint
    from .cpaformer import CPAFormer
    from .ssl import AugConfig, PretrainConfig, pretrain

    graphs = read_graphs(args, cfg, required=False)
    aug = _dataclass_from(AugConfig, "aug", {k: tuple(v) if isinstance(v, list) else v
                                             for k, v in cfg.aug.items()})
    pcfg = _dataclass_from(PretrainConfig, "pretrain", cfg.pretrain, aug=aug)
    if args.objective:
        pcfg.objective = args.objective
    model = CPAFormer(_model_config(cfg))
    res, heads = pretrain(graphs, model, pcfg, args.steps, seed=cfg.seed)
    em = Emitter(args, "pretrain", cfg)
    trace = [asdict(r) for r in res.trace]
    em.write_text("trace.json", canonical_json(trace))
    em.write_text("checkpoint.json", checkpoint.dumps(model, heads.params,
                                                      {"steps": len(res.trace), "seed": cfg.seed}) + "\n")
    payload = {"steps": len(res.trace), "halted_at": res.halted_at, "halt_reason": res.halt_reason,
               "final": trace[-1] if trace else None, "objective": pcfg.objective}
    rows = [[r.step, r.mask_loss, r.contrast_loss, r.total] for r in res.trace[:: max(1, len(res.trace) // 10)]]
    em.result(payload, format_table(["step", "mask", "contrast", "total"], rows))
    em.manifest({"halted_at": res.halted_at})
    return EXIT_NUMERIC if res.halted_at is not None else EXIT_OK


def _labelled(args, cfg):
    from .graphio import graph_from_record

    if args.input:
        items = []
        for lineno, line in enumerate(Path(args.input).read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                items.append((graph_from_record(rec), float(rec["label"])))
            except (ValueError, KeyError, TypeError) as exc:
                raise UserError(f"line {lineno}: {exc}") from exc
        return items
    from .synthetic import cardinality_task

    return cardinality_task(int(cfg.corpus.get("synthetic", 700)), rngmod.stream(cfg.seed, "card"))


def cmd_finetune(args, cfg):
    from .checkpoint import load as load_ckpt
    from .cpaformer import CPAFormer
    from .ssl import FinetuneConfig, finetune

    items = _labelled(args, cfg)
    n_test = max(1, int(round(len(items) * args.test_fraction)))
    train, test = items[:-n_test], items[-n_test:]
    fcfg = _dataclass_from(FinetuneConfig, "finetune", cfg.finetune)
    fcfg.seed = cfg.seed
    model = load_ckpt(args.checkpoint)[0] if args.checkpoint else CPAFormer(_model_config(cfg))
    res = finetune(train, model, cfg=fcfg, test=test)
    em = Emitter(args, "finetune", cfg)
    metric_name = "auc" if fcfg.task == "binary" else "rmse"
    payload = {"variant": model.config.variant.value, "gate": model.config.gate.value,
               "metric": metric_name, "value": res["metric"], "train": len(train), "test": len(test),
               "final_loss": res["trace"][-1], "predictions": res["predictions"]}
    em.result(payload, format_table(["variant", "gate", metric_name],
                                    [[payload["variant"], payload["gate"], res["metric"]]]))
    em.manifest({"metric": metric_name, "value": res["metric"],
                 "variant": payload["variant"], "gate": payload["gate"]})
    return EXIT_OK


def cmd_expressivity(args, cfg):
    from .expressivity import run_suite

    outcomes = run_suite(args.suite, args.trials, cfg.seed)
    passed = sum(o.passed for o in outcomes)
    em = Emitter(args, "expressivity", cfg)
    failures = [asdict(o) for o in outcomes if not o.passed]
    em.result({"suite": args.suite, "trials": len(outcomes), "passed": passed,
               "outcomes": [asdict(o) for o in outcomes], "failures": failures},
              f"{args.suite}: {passed}/{len(outcomes)} pass")
    em.manifest({"passed": passed, "trials": len(outcomes)})
    return EXIT_OK if passed == len(outcomes) else EXIT_NUMERIC


def cmd_audit(args, cfg):
    from .batcher import audit, audit_corpus, prepare
    from .topo import corpus_coverage

    em = Emitter(args, "audit", cfg)
    if args.lengths:
        lengths = [int(x) for x in args.lengths.split(",")]
        res = audit([lengths], args.width)
        em.result({"audit": asdict(res)}, f"padding {res.padding_percent:.1f}%")
        em.manifest()
        return EXIT_OK
    graphs = read_graphs(args, cfg)
    rows, grid = [], []
    for k in args.k:
        inputs = [prepare(g, k) for g in graphs]
        cov = corpus_coverage(graphs, k)
        for width in args.width_grid or [args.width]:
            res = audit_corpus(inputs, width, args.key, args.cap, k)
            grid.append({"k": k, "width": width, "coverage": cov, **asdict(res)})
            rows.append([k if k is not None else "global", width, f"{cov:.1f}%",
                         res.mean_padded_length, res.max_padded_length, f"{res.padding_percent:.1f}%"])
    em.result({"grid": grid}, format_table(["K", "width", "coverage", "mean Lpad", "max Lpad", "padding"], rows))
    em.manifest({"grid": [{k: v for k, v in g.items() if k != "per_batch"} for g in grid]})
    return EXIT_OK


def _read_vector(path: str) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise UserError(f"file not found: {path}")
    text = p.read_text().strip()
    try:
        if text.startswith("["):
            return np.asarray(json.loads(text), dtype=np.float64)
        return np.asarray([float(x) for x in text.split()], dtype=np.float64)
    except ValueError as exc:
        raise UserError(f"{path}: {exc}") from exc


def cmd_stats(args, cfg):
    from .evalstats import MetricError, holm_adjust, paired_bootstrap

    em = Emitter(args, f"stats {args.stats_command}", cfg)
    if args.stats_command == "holm":
        adj = holm_adjust(args.p)
        em.result({"raw": args.p, "adjusted": adj}, format_table(["raw", "adjusted"], list(zip(args.p, adj))))
    else:
        a, b, y = _read_vector(args.a), _read_vector(args.b), _read_vector(args.labels)
        try:
            res = paired_bootstrap(a, b, y, args.metric, args.resamples, cfg.seed)
        except MetricError as exc:
            raise UserError(str(exc)) from exc
        payload = {"metric": args.metric, "delta_mean": res.delta_mean, "ci": list(res.ci),
                   "p_value": res.p_value, "resamples": res.resamples, "redraws": res.redraws}
        em.result(payload, format_table(["metric", "delta", "ci_lo", "ci_hi", "p"],
                                        [[args.metric, res.delta_mean, res.ci[0], res.ci[1], res.p_value]]))
    em.manifest()
    return EXIT_OK


def cmd_report(args, cfg):
    manifests = []
    root = Path(args.runs)
    if root.exists():
        for path in sorted(root.rglob("manifest.json")):
            try:
                manifests.append((path.parent, json.loads(path.read_text())))
            except json.JSONDecodeError:
                log.warning("skipping unreadable manifest %s", path)
    lines = ["# Run report", ""]
    if not manifests:
        lines.append("No runs found.")
    ablation = [(p, m) for p, m in manifests if m.get("command") == "finetune"]
    if ablation:
        variants = sorted({m["variant"] for _, m in ablation})
        gates = sorted({m["gate"] for _, m in ablation})
        cell = {(m["variant"], m["gate"]): m["value"] for _, m in ablation}
        lines += ["## Ablation grid", "", "| variant | " + " | ".join(gates) + " |",
                  "|---|" + "---|" * len(gates)]
        for v in variants:
            vals = [f"{cell[(v, g)]:.4f}" if (v, g) in cell else "-" for g in gates]
            lines.append(f"| {v} | " + " | ".join(vals) + " |")
        lines.append("")
    audits = [(p, m) for p, m in manifests if m.get("command") == "audit" and m.get("grid")]
    if audits:
        lines += ["## Padding audit", "", "| K | width | coverage | mean Lpad | max Lpad | padding |",
                  "|---|---|---|---|---|---|"]
        for _, m in audits:
            for g in m["grid"]:
                k = "global" if g["k"] is None else g["k"]
                lines.append(f"| {k} | {g['bucket_width']} | {g['coverage']:.1f}% | "
                             f"{g['mean_padded_length']:.1f} | {g['max_padded_length']} | "
                             f"{g['padding_percent']:.1f}% |")
        lines.append("")
    others = [(p, m) for p, m in manifests if m.get("command") not in ("finetune", "audit")]
    if others:
        lines += ["## Other runs", "", "| run | command | seed |", "|---|---|---|"]
        for p, m in others:
            lines.append(f"| {p.name} | {m.get('command')} | {m.get('seed')} |")
        lines.append("")
    text = "\n".join(lines).rstrip() + "\n"
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "report.md").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--input", help="corpus file (JSON lines or SMILES)")

    ap = argparse.ArgumentParser(prog="cpagraph", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"cpagraph {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", parents=[common], help="parse SMILES or JSON records")
    p.add_argument("--mode", choices=["json", "smiles"])
    p.add_argument("--smiles", nargs="+")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("featurize", parents=[common], help="categorical and continuous features")
    p.add_argument("--mode", choices=["json", "smiles"])
    p.add_argument("--smiles", nargs="+")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("topo", help="shortest-path supports and coverage")
    tsub = p.add_subparsers(dest="topo_command", required=True)
    t = tsub.add_parser("spd", parents=[common])
    t.add_argument("--k", type=_parse_k, default=3)
    t.add_argument("--mode", choices=["json", "smiles"])
    t.add_argument("--smiles", nargs="+")
    t.set_defaults(func=cmd_topo)

    p = sub.add_parser("model", help="encoder utilities")
    msub = p.add_subparsers(dest="model_command", required=True)
    m = msub.add_parser("forward", parents=[common])
    m.add_argument("--mode", choices=["json", "smiles"])
    m.add_argument("--smiles", nargs="+")
    m.add_argument("--checkpoint")
    m.set_defaults(func=cmd_model)

    p = sub.add_parser("pretrain", parents=[common], help="self-supervised pretraining")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--objective", choices=["both", "mask", "contrast"])
    p.add_argument("--mode", choices=["json", "smiles"])
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", parents=[common], help="supervised fine-tuning")
    p.add_argument("--checkpoint")
    p.add_argument("--test-fraction", type=float, default=200 / 700)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("expressivity", parents=[common], help="theory check suites")
    p.add_argument("--suite", choices=["prop1", "prop2", "cor1", "thm1", "wl"], required=True)
    p.add_argument("--trials", type=int, default=100)
    p.set_defaults(func=cmd_expressivity)

    p = sub.add_parser("audit", parents=[common], help="padding and coverage audit")
    p.add_argument("--k", type=_parse_k, nargs="+", default=[3])
    p.add_argument("--width", type=int, default=4)
    p.add_argument("--width-grid", type=int, nargs="+")
    p.add_argument("--key", choices=["n", "support"], default="support")
    p.add_argument("--cap", type=int, default=32)
    p.add_argument("--lengths", help="comma-separated list lengths of a single batch")
    p.add_argument("--mode", choices=["json", "smiles"])
    p.add_argument("--smiles", nargs="+")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("stats", help="significance tools")
    ssub = p.add_subparsers(dest="stats_command", required=True)
    s = ssub.add_parser("bootstrap", parents=[common])
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--metric", choices=["rmse", "mae", "auc", "ap", "spearman"], default="auc")
    s.add_argument("--resamples", type=int, default=10000)
    s.set_defaults(func=cmd_stats)
    s = ssub.add_parser("holm", parents=[common])
    s.add_argument("--p", type=float, nargs="+", required=True)
    s.set_defaults(func=cmd_stats)

    p = sub.add_parser("report", parents=[common], help="collate run manifests into markdown")
    p.add_argument("--runs", default="runs")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("CPAGRAPH_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    from .graphio import GraphError, SmilesError
    from .ssl import DivergenceError
    from .tensorcore import NumericError

    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        return args.func(args, cfg)
    except (UserError, SmilesError, GraphError, FileNotFoundError) as exc:
        print(f"error [input/config]: {exc}", file=sys.stderr)
        return EXIT_USER
    except (NumericError, DivergenceError) as exc:
        print(f"error [numeric]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
