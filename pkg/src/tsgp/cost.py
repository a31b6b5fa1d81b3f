"""Hardware-independent inference cost of an evolved program.

Counting convention (one FLOP per arithmetic operation, comparison or square
root; data movement is free):

* ``SegDect``, ``AdaPatch`` and concatenations cost 0.
* ``DomDiff`` on length l costs ``l - 1``.
* ``DomFreq`` on length l costs ``8 l^2 + 4 l``: a complex multiply-accumulate
  (8 FLOPs) per sample and bin, then two squares, one add and one square root
  per bin for the magnitude.
* A shape kernel of length c costs ``2c - 1`` per output sample of its
  activation map of length m. Pooling costs m for PPV, m for MEAN and
  ``m - 1`` for MAX. This repeats for every kernel length and every patch.
* ``StatisDist`` sorts each patch of length l for ``l * ceil(log2 l)``
  comparisons; picking the order statistics is free.

Peak memory simulates a post-order evaluation with 8-byte elements. The input
series is live throughout, children run left to right, and a node's output
is allocated while its children's buffers are still live. Extractors also
hold one scratch buffer for the patch being processed: the activation map of
the shortest kernel for shape extractors and a sorted copy for StatisDist.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import ops
from .program import EXTRACTORS, Node, ProgramTree, infer

BYTES_PER_ELEMENT = 8

# (SRAM bytes, FLOP budget = 100 ms at the maximum core clock)
DEVICES = {
    "stm32f446re": (128 * 1024, 180_000_000 // 10),
    "stm32l552ze": (256 * 1024, 110_000_000 // 10),
}


@dataclass(frozen=True)
class NodeCost:
    path: tuple
    op: str
    flops: int
    live_bytes: int  # total live bytes while this node runs


@dataclass
class CostReport:
    flops: int
    peak_bytes: int
    per_node_breakdown: list = field(default_factory=list)
    classifier_flops: int = 0

    @property
    def total_flops(self) -> int:
        return self.flops + self.classifier_flops

    def fits(self, device: str) -> bool:
        sram, budget = DEVICES[device]
        return self.peak_bytes <= sram and self.total_flops <= budget

    def summary(self) -> str:
        flags = " ".join(f"fits_{name}={str(self.fits(name)).lower()}" for name in DEVICES)
        return f"flops={self.total_flops} peak_bytes={self.peak_bytes} {flags}"

    def to_dict(self) -> dict:
        return {
            "flops": self.flops,
            "classifier_flops": self.classifier_flops,
            "total_flops": self.total_flops,
            "peak_bytes": self.peak_bytes,
            "fits": {name: self.fits(name) for name in DEVICES},
            "per_node_breakdown": [
                {"path": list(c.path), "op": c.op, "flops": c.flops, "live_bytes": c.live_bytes}
                for c in self.per_node_breakdown
            ],
        }


def _input_length(node: Node, L: int) -> tuple[int, int]:
    """(patch length, number of patches) seen by an extractor."""
    src = infer(node.children[0], L)
    if src.patch_len is None:
        return src.length, 1
    return src.patch_len, src.n_patches


def _shape_per_patch(kind: str, patch_len: int, ratio: float) -> int:
    total = 0
    for c in ops.shape_kernel_lengths(kind, patch_len, ratio):
        m = patch_len - c + 1
        total += (2 * c - 1) * m + m + m + (m - 1)
    return total


def _sort_cost(n: int) -> int:
    return n * math.ceil(math.log2(n)) if n > 1 else 0


def node_flops(node: Node, L: int) -> int:
    """FLOPs of ``node`` itself, excluding its children."""
    op = node.op
    if op == "DomDiff":
        return infer(node.children[0], L).length - 1
    if op == "DomFreq":
        n = infer(node.children[0], L).length
        return 8 * n * n + 4 * n
    if op in EXTRACTORS:
        patch_len, n_patches = _input_length(node, L)
        if op == "StatisDist":
            return n_patches * _sort_cost(patch_len)
        return n_patches * _shape_per_patch(op[len("Shape"):], patch_len, node.children[1].value)
    return 0


def _output_elements(node: Node, L: int) -> int:
    if node.op == "InputSeries":
        return 0  # the input buffer is accounted for separately
    shape = infer(node, L)
    if shape.dim is not None:
        return shape.dim
    if shape.patch_len is not None:
        return shape.patch_len * shape.n_patches
    return shape.length


def _scratch_elements(node: Node, L: int) -> int:
    if node.op not in EXTRACTORS:
        return 0
    patch_len, _ = _input_length(node, L)
    if node.op == "StatisDist":
        return patch_len
    c = ops.shape_kernel_lengths(node.op[len("Shape"):], patch_len, node.children[1].value)[0]
    return patch_len - c + 1


def _walk(node: Node, L: int, path: tuple, live: int, out: list) -> tuple[int, int]:
    """Return (bytes of this node's output, peak bytes inside the subtree)."""
    peak = live
    cur = live
    for i, child in enumerate(node.children):
        if child.is_terminal:
            continue
        child_bytes, child_peak = _walk(child, L, path + (i,), cur, out)
        peak = max(peak, child_peak)
        cur += child_bytes
    own = BYTES_PER_ELEMENT * _output_elements(node, L)
    during = cur + own + BYTES_PER_ELEMENT * _scratch_elements(node, L)
    out.append(NodeCost(path, node.op, node_flops(node, L), during))
    return own, max(peak, during)


def analyze(t: ProgramTree, L: int | None = None, classifier=None) -> CostReport:
    """Full cost report; pass a fitted classifier to add its traversal cost."""
    L = t.series_length if L is None else L
    breakdown: list[NodeCost] = []
    _, peak = _walk(t.root, L, (), BYTES_PER_ELEMENT * L, breakdown)
    breakdown.sort(key=lambda c: c.path)
    report = CostReport(sum(c.flops for c in breakdown), peak, breakdown)
    if classifier is not None:
        report.classifier_flops = classifier_flops(classifier)
    return report


def count_flops(t: ProgramTree, L: int | None = None) -> int:
    return analyze(t, L).flops


def peak_memory_bytes(t: ProgramTree, L: int | None = None) -> int:
    return analyze(t, L).peak_bytes


def classifier_flops(model) -> int:
    """Worst-case comparisons to route one sample through every tree."""
    return sum(tree.max_depth for tree in model.trees)


__all__ = ["CostReport", "NodeCost", "DEVICES", "analyze", "count_flops", "peak_memory_bytes",
           "classifier_flops", "node_flops"]
