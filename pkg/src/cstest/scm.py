"""Linear additive-noise structural causal models.

Each endogenous node follows ``x_j = intercept_j + sum_p coef_jp * x_p + u_j``.
Root nodes (the protected attributes) are observed inputs. Counterfactuals are
point counterfactuals: the noise is abducted exactly from the observed row, the
intervened root is overwritten, and descendants are recomputed.

DAG config (YAML)::

    nodes:
      race: {root: true}
      sex:  {root: true}
      UGPA: {parents: [race, sex]}
      LSAT: {parents: [race, sex]}
      Y:    {parents: [UGPA, LSAT], outcome: true}

An outcome node is allowed in the graph for documentation but gets no equation.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterator, Mapping

import numpy as np
import scipy.linalg
import yaml

from .data import AttributeSchema, DatasetTable, with_ranges
from .errors import ModelError

log = logging.getLogger(__name__)

RANK_TOL = 1e-10


@dataclass(frozen=True)
class CausalGraph:
    nodes: tuple[str, ...]
    parents: Mapping[str, tuple[str, ...]]
    roots: frozenset[str] = frozenset()
    outcome: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "roots", frozenset(self.roots))
        pa = {n: tuple(self.parents.get(n, ())) for n in self.nodes}
        object.__setattr__(self, "parents", MappingProxyType(pa))
        if len(set(self.nodes)) != len(self.nodes):
            raise ModelError("duplicate node names in DAG")
        for n, ps in pa.items():
            for p in ps:
                if p not in pa:
                    raise ModelError(f"parent {p!r} of {n!r} is not a declared node")
            if len(set(ps)) != len(ps):
                raise ModelError(f"duplicate parents for {n!r}")
        for r in self.roots:
            if r not in pa:
                raise ModelError(f"root {r!r} is not a declared node")
            if pa[r]:
                raise ModelError(f"root node {r!r} cannot have parents")
        if self.outcome is not None:
            if self.outcome not in pa:
                raise ModelError(f"outcome {self.outcome!r} is not a declared node")
            if self.children(self.outcome):
                raise ModelError(f"outcome node {self.outcome!r} cannot have children")
        self.topological_order()

    def children(self, node: str) -> list[str]:
        return sorted(n for n, ps in self.parents.items() if node in ps)

    def topological_order(self) -> list[str]:
        """Kahn's algorithm with name-sorted ready sets, so the order never depends
        on declaration order."""
        indeg = {n: len(ps) for n, ps in self.parents.items()}
        ready = sorted(n for n, d in indeg.items() if d == 0)
        order = []
        while ready:
            n = ready.pop(0)
            order.append(n)
            for c in self.children(n):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
            ready.sort()
        if len(order) != len(self.nodes):
            cyc = sorted(n for n, d in indeg.items() if d > 0)
            raise ModelError(f"graph has a cycle through {cyc}")
        return order

    def endogenous(self) -> list[str]:
        return [n for n in self.topological_order() if n not in self.roots and n != self.outcome]

    def descendants(self, node: str) -> set[str]:
        out, stack = set(), [node]
        while stack:
            for c in self.children(stack.pop()):
                if c not in out:
                    out.add(c)
                    stack.append(c)
        return out

    def validate_against(self, table: DatasetTable) -> None:
        for n in self.nodes:
            if n == self.outcome and table.outcome is None:
                continue
            try:
                attr = table.attribute(n)
            except Exception:
                raise ModelError(f"DAG node {n!r} is not a table column") from None
            if n in self.roots:
                if not (attr.numeric or attr.encoded):
                    raise ModelError(f"root {n!r} must be numeric or a binary-encoded protected column")
            elif n != self.outcome:
                if not attr.numeric or attr.role != "nonProtected":
                    raise ModelError(
                        f"endogenous node {n!r} must be a numeric nonProtected column "
                        f"(categorical endogenous nodes are not supported)"
                    )
        if table.outcome is not None and table.outcome in self.parents:
            if self.children(table.outcome):
                raise ModelError(f"outcome node {table.outcome!r} cannot have children")

    def to_dict(self) -> dict:
        return {
            "nodes": {
                n: {
                    **({"root": True} if n in self.roots else {}),
                    **({"outcome": True} if n == self.outcome else {}),
                    **({"parents": list(self.parents[n])} if self.parents[n] else {}),
                }
                for n in self.nodes
            }
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "CausalGraph":
        if not isinstance(raw, Mapping) or "nodes" not in raw:
            raise ModelError("DAG config must be a mapping with a 'nodes' key")
        nodes, parents, roots, outcome = [], {}, set(), None
        for name, spec in raw["nodes"].items():
            spec = dict(spec or {})
            unknown = set(spec) - {"root", "parents", "outcome"}
            if unknown:
                raise ModelError(f"node {name!r}: unknown keys {sorted(unknown)}")
            nodes.append(str(name))
            parents[str(name)] = tuple(str(p) for p in spec.get("parents", []) or [])
            if spec.get("root"):
                roots.add(str(name))
            if spec.get("outcome"):
                if outcome is not None:
                    raise ModelError("more than one outcome node declared")
                outcome = str(name)
        return cls(tuple(nodes), parents, frozenset(roots), outcome)

    @classmethod
    def load(cls, path: str | Path) -> "CausalGraph":
        path = Path(path)
        if not path.exists():
            raise ModelError(f"DAG config not found: {path}")
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh))


@dataclass(frozen=True)
class StructuralEquation:
    target: str
    intercept: float
    coefficients: Mapping[str, float]
    noise_std: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "coefficients", MappingProxyType(dict(self.coefficients)))
        if not np.isfinite(self.noise_std) or self.noise_std < 0:
            raise ModelError(f"{self.target}: noise std must be finite and >= 0")

    def mean(self, values: Mapping[str, Any]):
        """intercept + sum of coefficient * parent, parents in name order."""
        out = self.intercept
        for p in sorted(self.coefficients):
            out = out + self.coefficients[p] * values[p]
        return out


@dataclass(frozen=True)
class ScmModel:
    graph: CausalGraph
    equations: Mapping[str, StructuralEquation]

    def __post_init__(self):
        object.__setattr__(self, "equations", MappingProxyType(dict(self.equations)))
        endo = set(self.graph.endogenous())
        if set(self.equations) != endo:
            raise ModelError(
                f"equations cover {sorted(self.equations)} but endogenous nodes are {sorted(endo)}"
            )
        for n, eq in self.equations.items():
            if set(eq.coefficients) != set(self.graph.parents[n]):
                raise ModelError(f"equation for {n!r} does not match its parents in the graph")

    @property
    def root_nodes(self) -> list[str]:
        return sorted(self.graph.roots)

    @property
    def nodes(self) -> list[str]:
        return [n for n in self.graph.topological_order() if n != self.graph.outcome]

    @classmethod
    def from_parameters(
        cls, graph: CausalGraph, params: Mapping[str, tuple[float, Mapping[str, float], float]]
    ) -> "ScmModel":
        """Build from ``{node: (intercept, {parent: coef}, noise_std)}``."""
        eqs = {n: StructuralEquation(n, float(b), dict(c), float(s)) for n, (b, c, s) in params.items()}
        return cls(graph, eqs)

    def to_dict(self) -> dict:
        return {
            "graph": self.graph.to_dict(),
            "equations": {
                n: {
                    "intercept": eq.intercept,
                    "coefficients": {p: eq.coefficients[p] for p in sorted(eq.coefficients)},
                    "noise_std": eq.noise_std,
                }
                for n, eq in sorted(self.equations.items())
            },
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ScmModel":
        graph = CausalGraph.from_dict(raw["graph"])
        eqs = {
            n: StructuralEquation(n, float(e["intercept"]), {p: float(c) for p, c in e["coefficients"].items()}, float(e["noise_std"]))
            for n, e in raw["equations"].items()
        }
        return cls(graph, eqs)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def describe(self) -> str:
        lines = []
        for n in self.graph.endogenous():
            eq = self.equations[n]
            terms = " ".join(f"{c:+.6g}*{p}" for p, c in sorted(eq.coefficients.items()))
            lines.append(f"{n} := {eq.intercept:.6g} {terms} + U_{n}   (sd(U)={eq.noise_std:.6g})")
        return "\n".join(lines)


def ols(design: np.ndarray, target: np.ndarray, name: str = "") -> np.ndarray:
    """Solve the normal equations ``(X'X) b = X'y`` with a column-pivoted QR of X'X.

    Raises :class:`ModelError` when any pivot falls below ``RANK_TOL`` times the largest.
    """
    xtx = design.T @ design
    xty = design.T @ target
    q, r, piv = scipy.linalg.qr(xtx, pivoting=True)
    diag = np.abs(np.diag(r))
    if diag[0] == 0 or np.any(diag < RANK_TOL * diag[0]):
        raise ModelError(f"rank-deficient design matrix for {name or 'equation'}")
    z = scipy.linalg.solve_triangular(r, q.T @ xty)
    beta = np.empty_like(z)
    beta[piv] = z
    return beta


def fit_scm(table: DatasetTable, graph: CausalGraph) -> ScmModel:
    """Fit every endogenous equation independently by ordinary least squares."""
    graph.validate_against(table)
    eqs = {}
    for node in graph.endogenous():
        parents = sorted(graph.parents[node])
        y = table.column(node).astype(np.float64)
        design = np.column_stack([np.ones(table.n)] + [table.column(p).astype(np.float64) for p in parents])
        if table.n < design.shape[1]:
            raise ModelError(f"too few rows ({table.n}) to fit {node!r}")
        beta = ols(design, y, node)
        resid = y - design @ beta
        sd = float(np.std(resid, ddof=1)) if table.n > 1 else 0.0
        eqs[node] = StructuralEquation(node, float(beta[0]), dict(zip(parents, map(float, beta[1:]))), sd)
        log.debug("fitted %s: %s", node, eqs[node])
    return ScmModel(graph, eqs)


@dataclass(frozen=True)
class AbductedNoise:
    row_id: int | None
    u: Mapping[str, float]


def _require(model: ScmModel, values: Mapping[str, Any]) -> None:
    missing = [n for n in model.nodes if n not in values]
    if missing:
        raise ModelError(f"profile lacks values for model nodes {missing}")


def abduct(model: ScmModel, values: Mapping[str, Any], row_id: int | None = None) -> AbductedNoise:
    """Residual of every endogenous node: observed value minus its structural mean."""
    _require(model, values)
    u = {n: float(values[n]) - float(model.equations[n].mean(values)) for n in model.graph.endogenous()}
    return AbductedNoise(row_id, u)


def predict(model: ScmModel, roots: Mapping[str, Any], noise: AbductedNoise | Mapping[str, float]) -> dict[str, float]:
    """Forward pass: root values plus noise terms to every endogenous value."""
    u = noise.u if isinstance(noise, AbductedNoise) else noise
    out = {r: float(roots[r]) for r in model.root_nodes}
    for n in model.graph.endogenous():
        out[n] = float(model.equations[n].mean(out)) + u[n]
    return out


def _check_intervention(model: ScmModel, intervention: tuple[str, Any]) -> tuple[str, float]:
    node, value = intervention
    if node not in model.graph.roots:
        raise ModelError(f"intervention on {node!r}: only root (protected) nodes can be intervened on")
    return node, float(value)


def _propagate(model: ScmModel, factual: Mapping[str, Any], node: str, value) -> dict[str, Any]:
    # Abduction + action + prediction for additive noise, written as
    #   x_cf = x + sum_p coef_p * (pa_cf - pa)
    # which equals mean(pa_cf) + u exactly in real arithmetic and leaves
    # unaffected nodes bit-identical in floating point.
    cf = dict(factual)
    cf[node] = value
    changed = {node}
    for n in model.graph.endogenous():
        eq = model.equations[n]
        hit = [p for p in sorted(eq.coefficients) if p in changed]
        if not hit:
            continue
        shift = 0.0
        for p in hit:
            shift = shift + eq.coefficients[p] * (cf[p] - factual[p])
        cf[n] = factual[n] + shift
        changed.add(n)
    return cf


def counterfactual(model: ScmModel, values: Mapping[str, Any], intervention: tuple[str, Any]) -> dict[str, float]:
    """Point counterfactual of one profile under ``root <- value``.

    ``values`` maps every model node to its observed value; extra keys are
    passed through unchanged (non-descendants of the intervention).
    """
    _require(model, values)
    node, value = _check_intervention(model, intervention)
    factual = {k: (float(v) if k in model.nodes else v) for k, v in values.items()}
    return _propagate(model, factual, node, value)


class CounterfactualSet(Mapping):
    """Counterfactual values for many rows, stored column-wise; maps row id -> {node: value}."""

    def __init__(self, row_ids: np.ndarray, values: Mapping[str, np.ndarray]):
        self.row_ids = np.asarray(row_ids, dtype=np.int64)
        self.values = {k: np.asarray(v) for k, v in values.items()}
        self._pos = {int(r): i for i, r in enumerate(self.row_ids)}

    def __getitem__(self, row_id) -> dict[str, float]:
        i = self._pos[int(row_id)]
        return {k: float(v[i]) for k, v in self.values.items()}

    def __iter__(self) -> Iterator[int]:
        return iter(self._pos)

    def __len__(self) -> int:
        return len(self.row_ids)

    def column(self, name: str) -> np.ndarray:
        return self.values[name]


def counterfactual_dataset(
    model: ScmModel,
    table: DatasetTable,
    intervention: tuple[str, Any],
    rows: np.ndarray | None = None,
) -> CounterfactualSet:
    """Vectorised :func:`counterfactual` over table rows.

    ``rows`` is a boolean mask or index array; by default the rows whose
    intervened column is coded 1 (the protected group).
    """
    node, value = _check_intervention(model, intervention)
    missing = [n for n in model.nodes if n not in table.columns]
    if missing:
        raise ModelError(f"model nodes {missing} are not table columns")
    if rows is None:
        rows = table.column(node) == 1
    idx = np.arange(table.n)[np.asarray(rows)] if np.asarray(rows).dtype == bool else np.asarray(rows, dtype=np.int64)
    ids = table.row_ids[idx]
    factual = {n: table.column(n)[idx].astype(np.float64) for n in model.nodes}
    bad = np.zeros(len(idx), dtype=bool)
    for v in factual.values():
        bad |= ~np.isfinite(v)
    if bad.any():
        raise ModelError(f"non-finite model inputs in rows {ids[bad][:10].tolist()}")
    cf = _propagate(model, factual, node, np.full(len(idx), value))
    return CounterfactualSet(ids, {n: cf[n] for n in model.nodes})


def sample_from_scm(
    model: ScmModel,
    n: int,
    seed: int,
    root_probs: Mapping[str, float],
) -> DatasetTable:
    """Draw ``n`` rows: Bernoulli roots, Gaussian noise with each equation's ``noise_std``.

    Roots become encoded protected columns (1 = protected), endogenous nodes
    continuous nonProtected columns. No outcome column is produced.
    """
    if n <= 0:
        raise ModelError("n must be positive")
    rng = np.random.default_rng(seed)
    values: dict[str, np.ndarray] = {}
    for r in model.root_nodes:
        if r not in root_probs:
            raise ModelError(f"no Bernoulli parameter for root {r!r}")
        values[r] = (rng.random(n) < root_probs[r]).astype(np.float64)
    for node in model.graph.endogenous():
        eq = model.equations[node]
        noise = rng.normal(0.0, eq.noise_std, n) if eq.noise_std > 0 else np.zeros(n)
        values[node] = eq.mean(values) + noise
    schema, cols = [], {}
    for node in model.nodes:
        if node in model.graph.roots:
            attr = AttributeSchema(node, "categorical", "protected", protected_value="1", encoding={"0": 0, "1": 1})
        else:
            attr = with_ranges(AttributeSchema(node, "continuous", "nonProtected"), values[node])
        schema.append(attr)
        cols[node] = values[node]
    return DatasetTable(schema=tuple(schema), columns=cols, row_ids=np.arange(n))


def save_model(model: ScmModel, path: str | Path, provenance: Mapping[str, Any] | None = None) -> None:
    doc = model.to_dict()
    doc["model_sha256"] = model.digest()
    if provenance:
        doc["provenance"] = dict(provenance)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> ScmModel:
    path = Path(path)
    if not path.exists():
        raise ModelError(f"model file not found: {path}")
    return ScmModel.from_dict(json.loads(path.read_text(encoding="utf-8")))
