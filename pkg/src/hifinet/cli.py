"""Command-line driver.

Layout under ``<workdir>/<output_dir>``::

    synthetic/node_<id>.csv
    topology.txt
    datasets/rate_<r>/{clean,panel,mask}.csv, manifest.json
    models/rate_<r>/{edge.ckpt,edge_meta.json,edge_log.jsonl,ign.ckpt,ign_log.jsonl}, manifest.json
    reports/rate_<r>/..., reports/table.csv, reports/f1_drop.json, manifest.json
    tradeoff/tradeoff.csv, manifest.json

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 training divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from hifinet import __version__
from hifinet.classes import CLASS_NAMES, FaultClass
from hifinet.config import ExperimentConfig, dump_config, load_config
from hifinet.edge import EdgeModel
from hifinet.energy import write_tradeoff_csv
from hifinet.errors import ConfigError, DataError, HifinetError
from hifinet.evaluation import (
    emit_report, f1_drop, per_class_pr_curves, pr_curve_auprc, write_confusion_csv,
    write_embeddings_csv, write_pr_csv, write_table_csv,
)
from hifinet.ign import IgnModel, penultimate
from hifinet.ingest import AlignedPanel, align, generate_synthetic, parse_intel, parse_node_csv, write_node_csv
from hifinet.inject import InjectionPlan, build_dataset, default_assignment, load_dataset, save_dataset
from hifinet.nn.tensor import softmax_np
from hifinet.pipeline import (
    Normalizer, Split, predict_span, reports, tradeoff_study, train_edge_stage, train_ign_stage,
)
from hifinet.topology import Topology, default_topology, read_topology, write_topology
from hifinet.training import TrainLog

log = logging.getLogger("hifinet")


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def rate_dir(rate: float) -> str:
    return f"rate_{rate:g}"


class Context:
    """Resolved paths plus the validated config for one invocation."""

    def __init__(self, cfg: ExperimentConfig, workdir: Path):
        self.cfg = cfg
        self.workdir = workdir
        self.out = workdir / cfg.output_dir

    def path(self, *parts) -> Path:
        return self.out.joinpath(*parts)

    def resolve(self, p: str) -> Path:
        return self.workdir / p

    def manifest(self, directory: Path, command: str, extra: dict | None = None) -> None:
        directory.mkdir(parents=True, exist_ok=True)
        files = {}
        for f in sorted(directory.rglob("*")):
            if f.is_file() and f.name != "manifest.json":
                files[str(f.relative_to(directory))] = hashlib.sha256(f.read_bytes()).hexdigest()
        body = {
            "command": command,
            "config_hash": self.cfg.hash(),
            "seed": self.cfg.seed,
            "version": __version__,
            "files": files,
        }
        body.update(extra or {})
        (directory / "manifest.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @property
    def edge_cfg(self):
        return dataclasses.replace(self.cfg.edge, seed=derive_seed(self.cfg.seed, self.cfg.edge.seed, 1))

    @property
    def ign_cfg(self):
        return dataclasses.replace(self.cfg.ign, seed=derive_seed(self.cfg.seed, self.cfg.ign.seed, 2))


# data sources -------------------------------------------------------------

def _synthetic_series(ctx: Context):
    s = ctx.cfg.data.synthetic
    return generate_synthetic(s.n_nodes, s.n_days, s.sample_interval_s, s.base_temp, s.daily_amplitude,
                              s.noise_sigma, seed=derive_seed(ctx.cfg.seed, s.seed, 0), offset_sigma=s.offset_sigma)


def load_clean_panel(ctx: Context) -> AlignedPanel:
    d = ctx.cfg.data
    if d.source == "synthetic":
        series = _synthetic_series(ctx)
    elif d.source == "intel":
        rng = tuple(d.intel_valid_range) if d.intel_valid_range else None
        series = parse_intel(ctx.resolve(d.intel_path), rng).series
    else:
        series = [parse_node_csv(ctx.resolve(p), int(n)) for n, p in sorted(d.csv_paths.items(), key=lambda kv: int(kv[0]))]
    if d.nodes is not None:
        wanted = [int(n) for n in d.nodes]
        have = {s.node_id for s in series}
        missing = [n for n in wanted if n not in have]
        if missing:
            raise DataError(f"selected nodes {missing} have no readings")
        series = [s for s in series if s.node_id in wanted]
    return align(series, d.grid_interval_s, d.start, d.end)


def load_topology(ctx: Context, node_ids) -> Topology:
    t = ctx.cfg.topology
    if t.file:
        topo = read_topology(ctx.resolve(t.file))
        if sorted(topo.node_ids) != sorted(node_ids):
            raise ConfigError(f"topology nodes {sorted(topo.node_ids)} differ from data nodes {sorted(node_ids)}")
        return topo.permuted([topo.index(n) for n in node_ids])
    return default_topology(list(node_ids), t.spacing, t.radio_range)


def _plan(ctx: Context, node_ids, rate: float) -> InjectionPlan:
    inj = ctx.cfg.injection
    if inj.assignment:
        assignment = {int(k): FaultClass.from_label(v) for k, v in inj.assignment.items()}
        for n in node_ids:
            assignment.setdefault(int(n), FaultClass.NORMAL)
    else:
        assignment = default_assignment(node_ids)
    return InjectionPlan(assignment, rate, inj.params, derive_seed(ctx.cfg.seed, inj.seed, 3))


def _dataset(ctx: Context, rate: float):
    d = ctx.path("datasets", rate_dir(rate))
    if not d.exists():
        raise DataError(f"no dataset at {d}; run 'inject' first")
    _, panel, mask, _ = load_dataset(d)
    return panel, mask


def _rates(ctx: Context, args) -> list[float]:
    if getattr(args, "rate", None) is None:
        return list(ctx.cfg.injection.rates)
    if args.rate not in ctx.cfg.injection.rates:
        raise ConfigError(f"rate {args.rate} is not among injection.rates {ctx.cfg.injection.rates}")
    return [args.rate]


# commands -------------------------------------------------------------------

def cmd_gen_synthetic(ctx: Context, args) -> None:
    d = ctx.path("synthetic")
    d.mkdir(parents=True, exist_ok=True)
    for s in _synthetic_series(ctx):
        write_node_csv(s, d / f"node_{s.node_id}.csv")
    ctx.manifest(d, "gen-synthetic")


def cmd_inject(ctx: Context, args) -> None:
    clean = load_clean_panel(ctx)
    topo = load_topology(ctx, clean.node_ids)
    ctx.out.mkdir(parents=True, exist_ok=True)
    write_topology(topo, ctx.path("topology.txt"))
    dump_config(ctx.cfg, ctx.path("config.yaml"))
    for rate in ctx.cfg.injection.rates:
        plan = _plan(ctx, clean.node_ids, rate)
        panel, mask = build_dataset(clean, plan)
        d = save_dataset(ctx.path("datasets", rate_dir(rate)), clean, panel, mask, plan)
        ctx.manifest(d, "inject", {"plan": plan.to_dict(), "faulty_fraction": mask.faulty_fraction()})
        log.info("rate %g: faulty fraction %.4f", rate, mask.faulty_fraction())


def cmd_train_edge(ctx: Context, args) -> None:
    cfg = ctx.cfg
    for rate in _rates(ctx, args):
        panel, mask = _dataset(ctx, rate)
        tlog = TrainLog()
        model, norm, split = train_edge_stage(panel, mask, cfg.windows, ctx.edge_cfg, tlog)
        d = ctx.path("models", rate_dir(rate))
        d.mkdir(parents=True, exist_ok=True)
        meta = {
            "w": cfg.windows.w,
            "channels": list(cfg.windows.channels),
            "hidden_dims": list(model.cfg.hidden_dims),
            "normalization": norm.to_dict(),
            "split": dataclasses.asdict(split),
        }
        model.save(d / "edge.ckpt", meta)
        (d / "edge_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        tlog.write_jsonl(d / "edge_log.jsonl")
        ctx.manifest(d, "train-edge")


def _load_edge(ctx: Context, rate: float):
    path = ctx.path("models", rate_dir(rate), "edge.ckpt")
    if not path.exists():
        raise DataError(f"no edge checkpoint at {path}; run 'train-edge' first")
    model, meta = EdgeModel.load(path)
    return model, Normalizer.from_dict(meta["normalization"]), Split(**meta["split"])


def _load_ign(ctx: Context, rate: float) -> IgnModel:
    path = ctx.path("models", rate_dir(rate), "ign.ckpt")
    if not path.exists():
        raise DataError(f"no IGN checkpoint at {path}; run 'train-ign' first")
    return IgnModel.load(path)[0]


def cmd_train_ign(ctx: Context, args) -> None:
    for rate in _rates(ctx, args):
        panel, mask = _dataset(ctx, rate)
        topo = load_topology(ctx, panel.node_ids)
        edge, norm, split = _load_edge(ctx, rate)
        tlog = TrainLog()
        model = train_ign_stage(panel, mask, topo, edge, norm, split, ctx.cfg.windows, ctx.ign_cfg, tlog)
        d = ctx.path("models", rate_dir(rate))
        model.save(d / "ign.ckpt")
        tlog.write_jsonl(d / "ign_log.jsonl")
        ctx.manifest(d, "train-ign")


def cmd_evaluate(ctx: Context, args) -> None:
    cfg = ctx.cfg
    dataset = cfg.data.source
    rows, by_rate = [], {}
    for rate in _rates(ctx, args):
        panel, mask = _dataset(ctx, rate)
        topo = load_topology(ctx, panel.node_ids)
        edge, norm, split = _load_edge(ctx, rate)
        ign = _load_ign(ctx, rate)
        pred = predict_span(panel, mask, topo, edge, ign, norm, split.train_end, panel.n_steps, cfg.windows)
        meta = {"dataset": dataset, "fault_rate": rate, "seed": cfg.seed}
        d = ctx.path("reports", rate_dir(rate))
        d.mkdir(parents=True, exist_ok=True)
        y = pred.y.reshape(-1)
        for rep, logits in zip(reports(pred, meta), (pred.edge_logits, pred.net_logits)):
            name = rep.metadata["model"]
            by_rate.setdefault(rate, {})[name] = rep
            emit_report(rep, d / f"{name}.json", "json")
            emit_report(rep, d / f"{name}.csv", "csv")
            write_confusion_csv(rep.confusion, d / f"confusion_{name}.csv")
            probs = softmax_np(logits.reshape(y.size, -1))
            if np.any(y != FaultClass.NORMAL):
                r, p, _ = pr_curve_auprc(y, probs)
                write_pr_csv(r, p, d / f"pr_{name}.csv")
                for c, (r, p, _) in per_class_pr_curves(y, probs).items():
                    write_pr_csv(r, p, d / f"pr_{name}_{CLASS_NAMES[c]}.csv")
            for metric in ("accuracy", "weighted_precision", "weighted_f1", "auprc"):
                rows.append({"metric": metric, "model": name, "dataset": dataset, "rate": rate,
                             "value": getattr(rep, metric)})
        # penultimate activations of the graph head, for external projection tools
        acts = penultimate(ign, pred.H0, topo)
        s_, n_ = pred.y.shape
        ids = [f"w{i}_n{panel.node_ids[j]}" for i in range(s_) for j in range(n_)]
        write_embeddings_csv(ids, y, acts.reshape(s_ * n_, -1), d / "embeddings.csv")
    rd = ctx.path("reports")
    write_table_csv(rows, rd / "table.csv")
    lo, hi = min(by_rate), max(by_rate)
    drops = {}
    if lo != hi:
        drops = {m: f1_drop(by_rate[lo][m], by_rate[hi][m]) for m in ("edge", "hifinet")}
    (rd / "f1_drop.json").write_text(json.dumps({"low_rate": lo, "high_rate": hi, "points": drops},
                                                indent=2, sort_keys=True) + "\n", encoding="utf-8")
    ctx.manifest(rd, "evaluate")


def cmd_tradeoff(ctx: Context, args) -> None:
    cfg = ctx.cfg
    rate = cfg.tradeoff.rate
    panel, mask = _dataset(ctx, rate)
    topo = load_topology(ctx, panel.node_ids)
    edge, norm, split = _load_edge(ctx, rate)
    ign = _load_ign(ctx, rate)
    rows = tradeoff_study(panel, mask, topo, edge, ign, norm, split, cfg.windows, cfg.tradeoff.t_values,
                          cfg.energy, cfg.tradeoff.stride)
    d = ctx.path("tradeoff")
    d.mkdir(parents=True, exist_ok=True)
    write_tradeoff_csv(rows, d / "tradeoff.csv")
    ctx.manifest(d, "tradeoff", {"rate": rate})


def cmd_all(ctx: Context, args) -> None:
    args.rate = None
    cmd_inject(ctx, args)
    cmd_train_edge(ctx, args)
    cmd_train_ign(ctx, args)
    cmd_evaluate(ctx, args)
    cmd_tradeoff(ctx, args)
    ctx.manifest(ctx.out, "all")


COMMANDS = {
    "gen-synthetic": (cmd_gen_synthetic, "write clean synthetic per-node CSVs"),
    "inject": (cmd_inject, "inject faults at every configured rate"),
    "train-edge": (cmd_train_edge, "pretrain and fine-tune the edge classifier"),
    "train-ign": (cmd_train_ign, "train the graph stage on frozen edge outputs"),
    "evaluate": (cmd_evaluate, "score both stages on the test span"),
    "tradeoff": (cmd_tradeoff, "accuracy delta and energy efficiency per time delay"),
    "all": (cmd_all, "inject, train, evaluate and run the tradeoff study"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hifinet", description="Two-stage sensor fault diagnosis toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--workdir", default=".", help="base directory for all relative paths")
    p.add_argument("-c", "--config", help="YAML experiment config (relative to --workdir)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field, e.g. --set edge.finetune_epochs=20")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text)
        if name in ("train-edge", "train-ign", "evaluate"):
            sp.add_argument("--rate", type=float, help="only this fault rate (default: all configured)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    workdir = Path(args.workdir)
    try:
        cfg_path = workdir / args.config if args.config else None
        cfg = load_config(cfg_path, args.overrides).validate(workdir)
        COMMANDS[args.command][0](Context(cfg, workdir), args)
    except HifinetError as exc:
        print(f"hifinet: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
