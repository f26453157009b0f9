"""Command-line front end: ``cstest {fit,label,audit,version}``.

Exit codes: 0 success, 1 usage error, 2 data/model/config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from . import __version__
from .audit import AuditConfig, apply_decision_rule, evaluate, write_neighborhoods, write_report, write_summary
from .config import RunConfig
from .data import DatasetTable, SchemaConfig, load_table, summarize, write_csv
from .errors import CstestError
from .scm import CausalGraph, fit_scm, load_model, save_model
from .similarity import DistanceSpec

log = logging.getLogger("cstest")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


class _Outputs:
    """Tracks written files so a failed command leaves nothing half-written behind."""

    def __init__(self, directory: Path):
        self.dir = directory
        self.written: list[Path] = []

    def path(self, name: str) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        p = self.dir / name
        self.written.append(p)
        return p

    def rollback(self):
        for p in self.written:
            p.unlink(missing_ok=True)


def _load(cfg: RunConfig) -> DatasetTable:
    schema = SchemaConfig.load(cfg.schema)
    cols = []
    for c in schema.columns:
        if c.name == cfg.protected and c.role != "protected":
            raise CstestError(f"{cfg.protected!r} is not declared as a protected column")
        if c.name == cfg.protected and cfg.protected_value is not None:
            c = replace(c, protected_value=cfg.protected_value)
        cols.append(c)
    if cfg.protected not in [c.name for c in cols]:
        raise CstestError(f"protected column {cfg.protected!r} is not in the schema")
    schema = replace(schema, columns=tuple(cols))
    table = load_table(cfg.dataset, schema, outcome_optional=cfg.decision_rule is not None)
    if cfg.decision_rule is not None:
        table = apply_decision_rule(cfg.decision_rule, table, cfg.outcome_column)
    return table


def _provenance(cfg_hash: str, model_hash: str | None) -> str:
    return f"cstest {__version__} config_sha256={cfg_hash} model_sha256={model_hash or 'none'}"


def cmd_fit(cfg: RunConfig, args, out: _Outputs) -> int:
    cfg.validate_paths(need_dag=True)
    table = _load(cfg)
    model = fit_scm(table, CausalGraph.load(cfg.dag))
    path = out.path("model.json")
    save_model(model, path, {"config_sha256": cfg.digest(), "cstest": __version__})
    print(model.describe())
    print(f"wrote {path}")
    return 0


def cmd_label(cfg: RunConfig, args, out: _Outputs) -> int:
    cfg.validate_paths()
    if cfg.decision_rule is None:
        raise CstestError("label needs a decision_rule block in the config")
    table = _load(cfg)
    y = table.column(table.outcome)
    for col, levels in summarize(table).items():
        shares = ", ".join(f"{lv}={v['share']:.3f}" for lv, v in levels.items())
        print(f"{col}: {shares}")
    path = out.path("labeled.csv")
    write_csv(table, path, header_comment=_provenance(cfg.digest(), None))
    print(f"acceptance rate: {y.mean():.6f} ({int(y.sum())}/{table.n})")
    print(f"wrote {path}")
    return 0


def cmd_audit(cfg: RunConfig, args, out: _Outputs) -> int:
    need_model = "CST" in cfg.methods
    cfg.validate_paths(need_dag=need_model)
    table = _load(cfg)
    cfg_hash = cfg.digest()
    model = model_hash = None
    if need_model:
        if cfg.model is not None:
            model = load_model(cfg.model)
            model.graph.validate_against(table)
        else:
            model = fit_scm(table, CausalGraph.load(cfg.dag))
            save_model(model, out.path("model.json"), {"config_sha256": cfg_hash, "cstest": __version__})
        model_hash = model.digest()
    spec = DistanceSpec.from_table(table)
    stamp = _provenance(cfg_hash, model_hash)
    prov = {"config_sha256": cfg_hash, "model_sha256": model_hash, "cstest": __version__}
    by_k: dict[int, list] = {k: [] for k in cfg.k}
    for method in cfg.methods:
        base = AuditConfig(method, cfg.protected, cfg.k[0], cfg.tau,
                           cfg.include_centers and method == "CST", cfg.negative_outcome, cfg.ci_level)
        reports = evaluate(table, base, cfg.k, spec, model if method == "CST" else None, args.workers)
        write_summary([reports[k] for k in cfg.k], out.path(f"summary_{method}_{cfg.protected}.csv"), stamp)
        for k in cfg.k:
            write_report(reports[k], out.path(f"cases_{method}_{cfg.protected}_k{k}.json"), prov)
            by_k[k].append(reports[k])
            r = reports[k]
            print(f"{method:>3} {cfg.protected} k={k}: {r.flagged_count} of {r.total} "
                  f"({100 * r.flagged_fraction:.2f}%)")
    if args.dump_neighborhoods:
        for k in cfg.k:
            write_neighborhoods(table, by_k[k], out.path(f"neighborhoods_{cfg.protected}_k{k}.csv"), stamp)
    print(f"wrote {len(out.written)} file(s) to {out.dir}")
    return 0


COMMANDS = {"fit": cmd_fit, "label": cmd_label, "audit": cmd_audit}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cstest", description="Situation testing and counterfactual situation testing")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (
        ("fit", "fit the structural causal model and write model.json"),
        ("label", "apply the decision rule and write labeled.csv"),
        ("audit", "run ST/CST for every k and write summaries and per-case reports"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", help="run config (YAML)")
        sp.add_argument("-o", "--output-dir", help="override output_dir from the config")
        if name == "audit":
            sp.add_argument("--workers", type=int, default=1, help="threads for per-complainant evaluation")
            sp.add_argument("--dump-neighborhoods", action="store_true",
                            help="write per-complainant group members for box plots")
    sub.add_parser("version", help="print the package version")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "version":
        print(f"cstest {__version__}")
        return 0
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")
    out = None
    try:
        cfg = RunConfig.load(args.config)
        if args.output_dir:
            cfg = replace(cfg, output_dir=Path(args.output_dir).resolve())
        out = _Outputs(cfg.output_dir)
        return COMMANDS[args.command](cfg, args, out)
    except (CstestError, OSError, yaml.YAMLError, json.JSONDecodeError) as e:
        if out is not None:
            out.rollback()
        print(f"cstest {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
