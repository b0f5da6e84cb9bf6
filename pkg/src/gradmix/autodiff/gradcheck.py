"""Central finite-difference verification of reverse rules."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .graph import Graph, Node, backward


@dataclass
class GradCheckEntry:
    name: str
    max_rel_error: float
    checked: int
    passed: bool


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tolerance: float
    offending_ops: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    def __str__(self) -> str:
        lines = [f"gradient check (tolerance {self.tolerance:g}): {'PASS' if self.passed else 'FAIL'}"]
        for e in self.entries:
            flag = "ok " if e.passed else "BAD"
            lines.append(f"  {flag} {e.name:<32} max rel err {e.max_rel_error:.3e} ({e.checked} elems)")
        if self.offending_ops:
            lines.append(f"  offending ops: {', '.join(self.offending_ops)}")
        return "\n".join(lines)


def _leaf_name(node: Node) -> str:
    if node.parameter is not None and node.parameter.name:
        return node.parameter.name
    return f"{node.kind}#{node.id}"


def _node_error(graph, loss_id, node, analytic, epsilon, samples, rng, scale_floor):
    base = node.value.astype(np.float64)
    n = base.size
    idx = np.arange(n) if n <= samples else rng.choice(n, size=samples, replace=False)
    numeric = np.empty(len(idx))
    for j, i in enumerate(idx):
        plus = base.copy()
        plus.flat[i] += epsilon
        minus = base.copy()
        minus.flat[i] -= epsilon
        fp = graph.replay({node.id: plus}, dtype=np.float64, upto=loss_id)
        fm = graph.replay({node.id: minus}, dtype=np.float64, upto=loss_id)
        numeric[j] = (fp.item() - fm.item()) / (2 * epsilon)
    a = (analytic if analytic is not None else np.zeros_like(base)).astype(np.float64)
    checked = a.flat[idx]
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(numeric))), scale_floor)
    return float(np.max(np.abs(checked - numeric)) / scale), len(idx)


def finite_diff_check(
    build: Callable[[Graph], Node],
    epsilon: float = 1e-5,
    tolerance: float = 1e-6,
    dtype=np.float64,
    samples: int = 8,
    seed: int = 0,
    wrt: str = "all",
    scale_floor: float = 1e-3,
    localize: bool = True,
) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``build`` receives a fresh graph of ``dtype`` and returns a scalar loss
    node. Analytic gradients come from one backward pass in ``dtype``; the
    numeric side replays the recorded graph in 64-bit with each checked
    element moved by +/- ``epsilon``. The error of a tensor is the largest
    absolute discrepancy over ``samples`` checked elements divided by the
    tensor's gradient scale (never below ``scale_floor``).

    On failure, intermediate nodes are checked too and the ops whose reverse
    rule turns a correct output gradient into a wrong input gradient are
    named in ``offending_ops``.
    """
    rng = np.random.default_rng(seed)
    graph = Graph(dtype=dtype)
    loss = build(graph)
    grads = backward(graph, loss)
    leaves = [n for n in graph.nodes[: loss.id + 1]
              if not n.inputs and n.requires_grad and (wrt == "all" or n.parameter is not None)]
    entries = []
    for node in leaves:
        err, count = _node_error(graph, loss.id, node, grads.get(node.id), epsilon, samples, rng, scale_floor)
        entries.append(GradCheckEntry(_leaf_name(node), err, count, err <= tolerance))
    report = GradCheckReport(entries, tolerance)
    if localize and not report.passed:
        report.offending_ops = _localize(graph, loss, grads, epsilon, samples, rng, tolerance, scale_floor)
    return report


def _localize(graph, loss, grads, epsilon, samples, rng, tolerance, scale_floor):
    bad = set()
    for node in graph.nodes[: loss.id]:
        if not node.requires_grad:
            continue
        err, _ = _node_error(graph, loss.id, node, grads.get(node.id), epsilon, samples, rng, scale_floor)
        if err > tolerance:
            bad.add(node.id)
    consumers: dict[int, list[Node]] = {}
    for node in graph.nodes[: loss.id + 1]:
        for i in node.inputs:
            consumers.setdefault(i, []).append(node)
    offending = []
    for nid in sorted(bad):
        for c in consumers.get(nid, []):
            if c.id not in bad and c.kind not in offending:
                offending.append(c.kind)
    return offending
