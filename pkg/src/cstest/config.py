"""Run configuration for the command-line front end.

Everything that affects results lives in a YAML file; relative paths are
resolved against the file's directory::

    dataset: data/law_data.csv
    schema: schema.yaml
    dag: dag.yaml                  # needed by `fit` and CST audits
    model: null                    # optional model.json from `fit`; CST then skips refitting
    methods: [ST, CST]
    protected: race
    protected_value: nonwhite      # optional, defaults to the schema's value
    k: [25, 50, 100, 200, 500]
    tau: 0.0
    include_centers: false
    negative_outcome: 0
    ci_level: null
    decision_rule:                 # or the string "existing"
      weights: {UGPA: 0.6, LSAT: 0.4}
      cutoff: 20.8
      strict: true
    outcome_column: Y
    seed: 0
    output_dir: out/race
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Mapping

import yaml

from .audit import METHODS, DecisionRule
from .errors import ConfigError

KNOWN_KEYS = {
    "dataset", "schema", "dag", "methods", "method", "protected", "protected_value", "k", "tau",
    "include_centers", "negative_outcome", "ci_level", "decision_rule", "outcome_column", "seed",
    "output_dir", "model",
}


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass(frozen=True)
class RunConfig:
    dataset: Path
    schema: Path
    dag: Path | None
    model: Path | None
    methods: tuple[str, ...]
    protected: str
    protected_value: str | None
    k: tuple[int, ...]
    tau: float
    include_centers: bool
    negative_outcome: int
    ci_level: float | None
    decision_rule: DecisionRule | None
    outcome_column: str
    seed: int
    output_dir: Path

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], base: Path = Path(".")) -> "RunConfig":
        if not isinstance(raw, Mapping):
            raise ConfigError("run config must be a mapping")
        unknown = set(raw) - KNOWN_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("dataset", "schema", "protected"):
            if key not in raw:
                raise ConfigError(f"config is missing {key!r}")

        def path(v):
            return None if v is None else (base / str(v)).resolve()

        methods = raw.get("methods", raw.get("method", ["ST", "CST"]))
        if isinstance(methods, str):
            methods = [methods]
        methods = tuple(str(m).upper() for m in methods)
        if not methods or any(m not in METHODS for m in methods):
            raise ConfigError(f"methods must be a non-empty subset of {METHODS}")

        ks = raw.get("k", [25])
        ks = (ks,) if isinstance(ks, int) else tuple(ks)
        if not ks or any(not isinstance(k, int) or isinstance(k, bool) or k < 1 for k in ks):
            raise ConfigError("k must be a non-empty list of positive integers")

        rule = raw.get("decision_rule", "existing")
        if rule == "existing" or rule is None:
            rule = None
        elif isinstance(rule, Mapping):
            try:
                rule = DecisionRule(
                    {str(a): float(w) for a, w in rule["weights"].items()},
                    float(rule["cutoff"]),
                    bool(rule.get("strict", True)),
                )
            except (KeyError, TypeError, ValueError) as e:
                raise ConfigError(f"bad decision_rule block: {e}") from None
        else:
            raise ConfigError("decision_rule must be a mapping or 'existing'")

        tau = float(raw.get("tau", 0.0))
        if not -1 <= tau <= 1:
            raise ConfigError("tau must lie in [-1, 1]")
        ci = raw.get("ci_level")
        if ci is not None and not 0 < float(ci) < 1:
            raise ConfigError("ci_level must lie in (0, 1)")
        pv = raw.get("protected_value")
        return cls(
            dataset=path(raw["dataset"]),
            schema=path(raw["schema"]),
            dag=path(raw.get("dag")),
            model=path(raw.get("model")),
            methods=methods,
            protected=str(raw["protected"]),
            protected_value=None if pv is None else str(pv),
            k=tuple(sorted(set(ks))),
            tau=tau,
            include_centers=bool(raw.get("include_centers", False)),
            negative_outcome=int(raw.get("negative_outcome", 0)),
            ci_level=None if ci is None else float(ci),
            decision_rule=rule,
            outcome_column=str(raw.get("outcome_column", "Y")),
            seed=int(raw.get("seed", 0)),
            output_dir=path(raw.get("output_dir", "out")),
        )

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
        return cls.from_dict(raw, path.parent)

    def validate_paths(self, need_dag: bool = False) -> None:
        for label, p in (("dataset", self.dataset), ("schema", self.schema)):
            if not p.exists():
                raise ConfigError(f"{label} file not found: {p}")
        if self.model is not None and not self.model.exists():
            raise ConfigError(f"model file not found: {self.model}")
        if need_dag and self.model is None:
            if self.dag is None:
                raise ConfigError("this command needs a 'dag' entry in the config")
            if not self.dag.exists():
                raise ConfigError(f"DAG file not found: {self.dag}")

    def digest(self) -> str:
        """SHA-256 over the result-affecting settings and the input files' contents.

        Paths themselves are left out so moving a checkout does not change the hash.
        """
        d = asdict(self)
        for key in ("dataset", "schema", "dag", "model", "output_dir"):
            d.pop(key)
        d["decision_rule"] = None if self.decision_rule is None else {
            "weights": dict(self.decision_rule.weights),
            "cutoff": self.decision_rule.cutoff,
            "strict": self.decision_rule.strict,
        }
        d["inputs"] = {
            label: (file_sha256(p) if p is not None and p.exists() else None)
            for label, p in (("dataset", self.dataset), ("schema", self.schema), ("dag", self.dag),
                             ("model", self.model))
        }
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"), default=list)
        return hashlib.sha256(blob.encode()).hexdigest()
