"""Strongly typed multi-layer program trees.

A tree maps a raw series to a feature vector. Layers, bottom up: optional
segment detection, optional domain transform, optional patching, one feature
extractor per branch, and concatenation at the top. Terminal values are
stored as child nodes (``TermLenSeg``, ``TermDivisor`` ...) so crossover and
mutation can address them like any other node.

Depth is the edge count of the longest root-to-leaf path (terminals
included), so ``FeaCon2(StatisDist(x, tau), ...)`` has depth 2.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator

import numpy as np

from . import ops
from .dataset import TimeSeries
from .errors import InfeasibleDepth, LengthMismatch, MalformedModel

FORMAT_VERSION = 1

# type tags
SERIES_RAW = "SeriesRaw"
SEGMENT_LOCATED = "SegmentLocated"
SEGMENT_TRANSFORMED = "SegmentTransformed"
PATCHES = "Patches"
VECTOR = "Vector"
VECTORS = "Vectors"

SHAPE_OPS = ("ShapeInc", "ShapeDec", "ShapePeak")
EXTRACTORS = SHAPE_OPS + ("StatisDist",)
BASE_CONCATS = ("FeaCon2", "FeaCon3", "FeaCon4")
CONCATS = BASE_CONCATS + ("FeaConH",)
DOMAIN_OPS = ("DomFreq", "DomDiff")
TERMINAL_OPS = ("TermLenSeg", "TermStartSeg", "TermDivisor", "TermTau", "TermLambda")
FUNCTION_OPS = ("SegDect",) + DOMAIN_OPS + ("AdaPatch",) + EXTRACTORS + CONCATS
ALL_OPS = FUNCTION_OPS + ("InputSeries",) + TERMINAL_OPS

OUTPUT_TYPE = {
    "InputSeries": SERIES_RAW,
    "SegDect": SEGMENT_LOCATED,
    "DomFreq": SEGMENT_TRANSFORMED,
    "DomDiff": SEGMENT_TRANSFORMED,
    "AdaPatch": PATCHES,
    **{op: VECTOR for op in EXTRACTORS},
    **{op: VECTORS for op in CONCATS},
}

# producers allowed in each kind of input slot
RAW_SLOT = ("InputSeries",)
DOMAIN_SLOT = ("InputSeries", "SegDect")
PATCH_SLOT = ("InputSeries", "SegDect", "DomFreq", "DomDiff")
EXTRACTOR_SLOT = PATCH_SLOT + ("AdaPatch",)
VECTOR_SLOT = EXTRACTORS
BASE_SLOT = BASE_CONCATS
ROOT_SLOT = CONCATS

# (slot producers | terminal op) per child position
SIGNATURE = {
    "SegDect": (RAW_SLOT, "TermLenSeg", "TermStartSeg"),
    "DomFreq": (DOMAIN_SLOT,),
    "DomDiff": (DOMAIN_SLOT,),
    "AdaPatch": (PATCH_SLOT, "TermDivisor"),
    "ShapeInc": (EXTRACTOR_SLOT, "TermLambda"),
    "ShapeDec": (EXTRACTOR_SLOT, "TermLambda"),
    "ShapePeak": (EXTRACTOR_SLOT, "TermLambda"),
    "StatisDist": (EXTRACTOR_SLOT, "TermTau"),
    "FeaCon2": (VECTOR_SLOT,) * 2,
    "FeaCon3": (VECTOR_SLOT,) * 3,
    "FeaCon4": (VECTOR_SLOT,) * 4,
    "FeaConH": (VECTOR_SLOT, BASE_SLOT),
    "InputSeries": (),
}

DEPTH_MIN = 2
DEPTH_MAX = 6


def min_patch_len(extractor: str) -> int:
    if extractor == "StatisDist":
        return 2
    return ops.min_shape_patch(extractor[len("Shape"):])


@dataclass(frozen=True, slots=True)
class Node:
    op: str
    children: tuple = ()
    value: int | float | None = None

    @property
    def is_terminal(self) -> bool:
        return self.op in TERMINAL_OPS

    @property
    def type_tag(self) -> str | None:
        return OUTPUT_TYPE.get(self.op)


def term(op: str, value) -> Node:
    return Node(op, (), value)


X = Node("InputSeries")


# convenience constructors, mostly for tests and hand-built models
def seg_dect(child: Node, seg_len: int, seg_start: int) -> Node:
    return Node("SegDect", (child, term("TermLenSeg", int(seg_len)), term("TermStartSeg", int(seg_start))))


def dom_freq(child: Node) -> Node:
    return Node("DomFreq", (child,))


def dom_diff(child: Node) -> Node:
    return Node("DomDiff", (child,))


def ada_patch(child: Node, divisor: int) -> Node:
    return Node("AdaPatch", (child, term("TermDivisor", int(divisor))))


def extractor(name: str, child: Node, param: float) -> Node:
    kind = "TermTau" if name == "StatisDist" else "TermLambda"
    return Node(name, (child, term(kind, float(param))))


def concat(*children: Node) -> Node:
    return Node(f"FeaCon{len(children)}", tuple(children))


def concat_h(vector: Node, vectors: Node) -> Node:
    return Node("FeaConH", (vector, vectors))


@dataclass(frozen=True)
class ProgramTree:
    root: Node
    series_length: int

    @property
    def depth(self) -> int:
        return height(self.root)

    @property
    def size(self) -> int:
        return sum(1 for _ in iter_nodes(self.root))

    def __str__(self) -> str:
        return render_tree(self)


def height(node: Node) -> int:
    if not node.children:
        return 0
    return 1 + max(height(c) for c in node.children)


def iter_nodes(node: Node, path: tuple = ()) -> Iterator[tuple[tuple, Node]]:
    """Pre-order traversal yielding ``(path, node)``."""
    yield path, node
    for i, child in enumerate(node.children):
        yield from iter_nodes(child, path + (i,))


def node_at(node: Node, path: tuple) -> Node:
    for i in path:
        node = node.children[i]
    return node


def replace_at(node: Node, path: tuple, new: Node) -> Node:
    if not path:
        return new
    i = path[0]
    children = list(node.children)
    children[i] = replace_at(children[i], path[1:], new)
    return Node(node.op, tuple(children), node.value)


# ---------------------------------------------------------------------------
# static analysis

@dataclass(frozen=True)
class Shape:
    """Statically inferred output of a node."""

    length: int | None = None  # series-valued outputs
    patch_len: int | None = None  # patches
    n_patches: int | None = None
    dim: int | None = None  # vector-valued outputs


def infer(node: Node, L: int) -> Shape:
    """Infer output shape, assuming the subtree is valid."""
    op = node.op
    if op == "InputSeries":
        return Shape(length=L)
    if op == "SegDect":
        return Shape(length=node.children[1].value)
    if op == "DomFreq":
        return infer(node.children[0], L)
    if op == "DomDiff":
        return Shape(length=infer(node.children[0], L).length - 1)
    if op == "AdaPatch":
        n = infer(node.children[0], L).length
        patch_len, _, n_patches = ops.patch_geometry(n, node.children[1].value)
        return Shape(patch_len=patch_len, n_patches=n_patches)
    if op in EXTRACTORS:
        src = infer(node.children[0], L)
        if src.patch_len is None:
            patch_len, n_patches = src.length, 1
        else:
            patch_len, n_patches = src.patch_len, src.n_patches
        per_patch = ops.extractor_dim(op, patch_len, node.children[1].value)
        return Shape(dim=per_patch * n_patches)
    if op in CONCATS:
        return Shape(dim=sum(infer(c, L).dim for c in node.children))
    raise ValueError(f"cannot infer shape of {op}")


def output_dim(t: ProgramTree) -> int:
    return infer(t.root, t.series_length).dim


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, path, message):
        where = "root" if not path else "/".join(map(str, path))
        self.violations.append(f"{where}: {message}")

    def __str__(self):
        return "\n".join(self.violations) if self.violations else "ok"


def _check_terminal(node: Node, expected: str, path, report) -> bool:
    if node.op != expected:
        report.add(path, f"expected terminal {expected}, found {node.op}")
        return False
    if node.children:
        report.add(path, f"terminal {expected} must not have children")
        return False
    v = node.value
    if expected in ("TermLenSeg", "TermStartSeg", "TermDivisor"):
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
            report.add(path, f"{expected} value must be an integer, got {v!r}")
            return False
    elif expected in ("TermTau", "TermLambda"):
        if isinstance(v, bool) or not isinstance(v, (int, float, np.floating)) or float(v) not in ops.RATIOS:
            report.add(path, f"{expected} value {v!r} not in {ops.RATIOS}")
            return False
    return True


def _validate(node: Node, L: int, path, report, patch_min: int = 2, series_min: int = 1) -> Shape | None:
    """Check ``node`` and return its inferred shape, or None if broken.

    ``patch_min``/``series_min`` are the requirements the consumer places on
    this node's output.
    """
    op = node.op
    if op not in SIGNATURE:
        report.add(path, f"unknown or misplaced op {op!r}")
        return None
    sig = SIGNATURE[op]
    if len(node.children) != len(sig):
        report.add(path, f"arity violation: {op} takes {len(sig)} children, got {len(node.children)}")
        return None
    if node.value is not None:
        report.add(path, f"{op} must not carry a value")
    shapes = []
    ok = True
    for i, (child, slot) in enumerate(zip(node.children, sig)):
        cpath = path + (i,)
        if isinstance(slot, str):
            ok &= _check_terminal(child, slot, cpath, report)
            shapes.append(None)
            continue
        if child.op not in slot:
            tag = OUTPUT_TYPE.get(child.op, child.op)
            report.add(cpath, f"type error: {op} cannot take {child.op} ({tag}) as input {i}")
            ok = False
            shapes.append(None)
            continue
        if op in EXTRACTORS:
            need = min_patch_len(op)
            s = _validate(child, L, cpath, report, patch_min=need, series_min=need)
        elif op == "AdaPatch":
            s = _validate(child, L, cpath, report, series_min=1)
        elif op == "DomDiff":
            s = _validate(child, L, cpath, report, series_min=max(series_min, 1) + 1)
        elif op == "DomFreq":
            s = _validate(child, L, cpath, report, series_min=series_min)
        else:
            s = _validate(child, L, cpath, report)
        ok &= s is not None
        shapes.append(s)
    if not ok:
        return None

    if op == "InputSeries":
        shape = Shape(length=L)
    elif op == "SegDect":
        seg_len, seg_start = node.children[1].value, node.children[2].value
        if not 1 <= seg_len <= L - 1:
            report.add(path + (1,), f"l_seg {seg_len} out of range [1, {L - 1}]")
            return None
        if not 1 <= seg_start <= L - seg_len + 1:
            report.add(path + (2,), f"s_seg {seg_start} out of range [1, {L - seg_len + 1}]")
            return None
        shape = Shape(length=int(seg_len))
    elif op == "DomFreq":
        shape = shapes[0]
    elif op == "DomDiff":
        if shapes[0].length < 2:
            report.add(path, f"DomDiff input length {shapes[0].length} < 2")
            return None
        shape = Shape(length=shapes[0].length - 1)
    elif op == "AdaPatch":
        n = shapes[0].length
        divisor = node.children[1].value
        if divisor not in ops.DIVISORS:
            report.add(path + (1,), f"divisor {divisor} not in {ops.DIVISORS}")
            return None
        patch_len = n // divisor
        if patch_len < patch_min:
            report.add(path + (1,), f"patch length floor({n}/{divisor}) = {patch_len} < {patch_min}")
            return None
        _, _, n_patches = ops.patch_geometry(n, divisor)
        shape = Shape(patch_len=patch_len, n_patches=n_patches)
    elif op in EXTRACTORS:
        src = shapes[0]
        plen = src.patch_len if src.patch_len is not None else src.length
        n_patches = src.n_patches if src.patch_len is not None else 1
        if plen < min_patch_len(op):
            report.add(path, f"{op} input length {plen} < {min_patch_len(op)}")
            return None
        shape = Shape(dim=ops.extractor_dim(op, plen, node.children[1].value) * n_patches)
    else:
        shape = Shape(dim=sum(s.dim for s in shapes))

    if shape.length is not None and shape.length < series_min:
        report.add(path, f"{op} output length {shape.length} < required {series_min}")
        return None
    return shape


def validate_tree(t: ProgramTree, depth_min: int = DEPTH_MIN, depth_max: int = DEPTH_MAX) -> ValidationReport:
    """Type, arity, terminal-range, length-feasibility and depth checks."""
    report = ValidationReport()
    L = t.series_length
    if not isinstance(L, (int, np.integer)) or L < 2:
        report.add((), f"invalid series length {L!r}")
        return report
    if not isinstance(t.root, Node):
        report.add((), "root is not a node")
        return report
    if t.root.op not in ROOT_SLOT:
        report.add((), f"root must be a concatenation (Vectors), found {t.root.op}")
    _validate(t.root, L, (), report)
    d = t.depth
    if not depth_min <= d <= depth_max:
        report.add((), f"depth {d} outside [{depth_min}, {depth_max}]")
    return report


# ---------------------------------------------------------------------------
# generation

class Grammar:
    """Length- and depth-aware sampler of valid subtrees for a fixed ``L``.

    ``req`` is the minimum output length a slot demands (for ``AdaPatch`` it
    is the minimum patch length instead).
    """

    def __init__(self, L: int):
        if L < 4:
            raise InfeasibleDepth(f"series length {L} < 4 admits no program")
        self.L = L
        self.heights = lru_cache(maxsize=None)(self._heights)

    def _heights(self, op: str, req: int) -> frozenset:
        L = self.L
        if op == "InputSeries":
            return frozenset({0}) if L >= req else frozenset()
        if op == "SegDect":
            return frozenset({1}) if L - 1 >= max(req, 1) else frozenset()
        if op == "DomFreq":
            return self._lift(DOMAIN_SLOT, req)
        if op == "DomDiff":
            return self._lift(DOMAIN_SLOT, max(req, 1) + 1)
        if op == "AdaPatch":
            return self._lift(PATCH_SLOT, 2 * req)
        if op in EXTRACTORS:
            return self._lift(EXTRACTOR_SLOT, min_patch_len(op))
        if op in BASE_CONCATS:
            return self._lift(VECTOR_SLOT, 0)
        if op == "FeaConH":
            vec = self._union(VECTOR_SLOT, 0)
            base = self._union(BASE_SLOT, 0)
            return frozenset(1 + max(a, b) for a in vec for b in base)
        raise ValueError(op)

    def _union(self, slot, req) -> frozenset:
        out = set()
        for op in slot:
            out |= self.heights(op, req)
        return frozenset(out)

    def _lift(self, slot, req) -> frozenset:
        return frozenset(1 + h for h in self._union(slot, req))

    def choose(self, rng, slot, req: int, remaining: int, method: str) -> str:
        feasible = [op for op in slot if any(h <= remaining for h in self.heights(op, req))]
        if not feasible:
            raise InfeasibleDepth(f"no producer in {slot} fits depth {remaining} with length >= {req}")
        if method == "full":
            target = max(h for op in feasible for h in self.heights(op, req) if h <= remaining)
            feasible = [op for op in feasible if target in self.heights(op, req)]
        return feasible[int(rng.integers(len(feasible)))]

    def generate(self, rng, slot, req: int, remaining: int, method: str) -> Node:
        op = self.choose(rng, slot, req, remaining, method)
        return self.build(rng, op, req, remaining, method)

    def build(self, rng, op: str, req: int, remaining: int, method: str) -> Node:
        L = self.L
        sub = remaining - 1
        if op == "InputSeries":
            return X
        if op == "SegDect":
            seg_len, seg_start = self.sample_segment(rng, req)
            return seg_dect(X, seg_len, seg_start)
        if op == "DomFreq":
            return dom_freq(self.generate(rng, DOMAIN_SLOT, req, sub, method))
        if op == "DomDiff":
            return dom_diff(self.generate(rng, DOMAIN_SLOT, max(req, 1) + 1, sub, method))
        if op == "AdaPatch":
            child = self.generate(rng, PATCH_SLOT, 2 * req, sub, method)
            n = infer(child, L).length
            return ada_patch(child, self.sample_divisor(rng, n, req))
        if op in EXTRACTORS:
            child = self.generate(rng, EXTRACTOR_SLOT, min_patch_len(op), sub, method)
            return extractor(op, child, self.sample_ratio(rng))
        if op in BASE_CONCATS:
            k = int(op[-1])
            return Node(op, tuple(self.generate(rng, VECTOR_SLOT, 0, sub, method) for _ in range(k)))
        if op == "FeaConH":
            return concat_h(
                self.generate(rng, VECTOR_SLOT, 0, sub, method),
                self.generate(rng, BASE_SLOT, 0, sub, method),
            )
        raise ValueError(op)

    def sample_segment(self, rng, req: int) -> tuple[int, int]:
        lo = max(req, 1)
        seg_len = int(rng.integers(lo, self.L))  # [lo, L-1]
        seg_start = int(rng.integers(1, self.L - seg_len + 2))  # [1, L-l+1]
        return seg_len, seg_start

    def sample_start(self, rng, seg_len: int) -> int:
        return int(rng.integers(1, self.L - seg_len + 2))

    @staticmethod
    def feasible_divisors(n: int, patch_min: int) -> list[int]:
        return [d for d in ops.DIVISORS if n // d >= patch_min]

    def sample_divisor(self, rng, n: int, patch_min: int) -> int:
        options = self.feasible_divisors(n, patch_min)
        return options[int(rng.integers(len(options)))]

    @staticmethod
    def sample_ratio(rng) -> float:
        return ops.RATIOS[int(rng.integers(len(ops.RATIOS)))]


@lru_cache(maxsize=64)
def grammar_for(L: int) -> Grammar:
    return Grammar(L)


def generate_tree(rng, method: str, depth_limit: int, L: int) -> ProgramTree:
    """Random valid tree by the ``grow`` or ``full`` method."""
    if method not in ("grow", "full"):
        raise ValueError(f"unknown method {method!r}")
    if not DEPTH_MIN <= depth_limit <= DEPTH_MAX:
        raise InfeasibleDepth(f"depth limit {depth_limit} outside [{DEPTH_MIN}, {DEPTH_MAX}]")
    g = grammar_for(L)
    root = g.generate(rng, ROOT_SLOT, 0, depth_limit, method)
    tree = ProgramTree(root, L)
    assert tree.depth <= depth_limit
    return tree


@dataclass(frozen=True)
class SlotContext:
    slot: tuple | str  # producers, or the terminal op expected here
    req: int
    depth: int


def slot_context(t: ProgramTree, path: tuple) -> SlotContext:
    """What the position at ``path`` accepts and requires of its occupant."""
    node = t.root
    ctx = SlotContext(ROOT_SLOT, 0, 0)
    for i in path:
        slot = SIGNATURE[node.op][i]
        op = node.op
        if isinstance(slot, str):
            req = 0
        elif op in EXTRACTORS:
            req = min_patch_len(op)
        elif op == "AdaPatch":
            req = ctx.req * node.children[1].value
        elif op == "DomDiff":
            req = max(ctx.req, 1) + 1
        elif op == "DomFreq":
            req = ctx.req
        else:
            req = 0
        ctx = SlotContext(slot, req, ctx.depth + 1)
        node = node.children[i]
    return ctx


# ---------------------------------------------------------------------------
# evaluation

def _eval(node: Node, X: np.ndarray):
    op = node.op
    if op == "InputSeries":
        return X
    if op == "SegDect":
        return ops.seg_detect(_eval(node.children[0], X), node.children[1].value, node.children[2].value)
    if op == "DomFreq":
        return ops.dom_freq(_eval(node.children[0], X))
    if op == "DomDiff":
        return ops.dom_diff(_eval(node.children[0], X))
    if op == "AdaPatch":
        return ops.ada_patch(_eval(node.children[0], X), node.children[1].value)
    if op in EXTRACTORS:
        src = _eval(node.children[0], X)
        param = node.children[1].value
        return ops.extract_over_patches(src, lambda p: ops.apply_extractor(p, op, param))
    if op in CONCATS:
        return np.concatenate([_eval(c, X) for c in node.children], axis=-1)
    raise ValueError(f"cannot evaluate {op}")


def evaluate_tree(t: ProgramTree, x) -> np.ndarray:
    """Feature vector of one series (or one row per series for a 2-D input)."""
    values = np.asarray(x.values if isinstance(x, TimeSeries) else x, dtype=np.float64)
    if values.shape[-1] != t.series_length:
        raise LengthMismatch(f"series length {values.shape[-1]} != model length {t.series_length}")
    return _eval(t.root, values)


def transform_dataset(t: ProgramTree, d) -> np.ndarray:
    """``N x d`` feature matrix; row ``i`` belongs to series ``i``."""
    X = d.X if hasattr(d, "X") else np.asarray(d, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != t.series_length:
        raise LengthMismatch(f"data length {X.shape[-1]} != model length {t.series_length}")
    return _eval(t.root, X)


# ---------------------------------------------------------------------------
# serialization

def tree_to_dict(node: Node) -> dict:
    out = {"op": node.op}
    if node.value is not None:
        out["value"] = node.value
    out["children"] = [tree_to_dict(c) for c in node.children]
    return out


def _coerce_value(op: str, value):
    if op in ("TermLenSeg", "TermStartSeg", "TermDivisor"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise MalformedModel(f"{op} value must be an integer")
        return value
    if op in ("TermTau", "TermLambda"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise MalformedModel(f"{op} value must be a number")
        return float(value)
    if value is not None:
        raise MalformedModel(f"{op} does not take a value")
    return None


def tree_from_dict(doc) -> Node:
    if not isinstance(doc, dict) or "op" not in doc:
        raise MalformedModel("tree node must be an object with an 'op' field")
    op = doc["op"]
    if op not in ALL_OPS:
        raise MalformedModel(f"unknown op {op!r}")
    children = doc.get("children", [])
    if not isinstance(children, list):
        raise MalformedModel("children must be a list")
    value = _coerce_value(op, doc.get("value"))
    return Node(op, tuple(tree_from_dict(c) for c in children), value)


def canonical_key(t: ProgramTree) -> str:
    """Compact canonical text identifying the tree structure."""
    return json.dumps(
        {"series_length": t.series_length, "tree": tree_to_dict(t.root)},
        separators=(",", ":"),
    )


def tree_document(t: ProgramTree, meta: dict | None = None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "series_length": t.series_length,
        "tree": tree_to_dict(t.root),
        "meta": dict(meta or {}),
    }


def serialize_tree(t: ProgramTree, meta: dict | None = None) -> str:
    return json.dumps(tree_document(t, meta), indent=2) + "\n"


def tree_from_document(doc) -> ProgramTree:
    if not isinstance(doc, dict):
        raise MalformedModel("model document must be a JSON object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise MalformedModel(f"unsupported format_version {doc.get('format_version')!r}")
    L = doc.get("series_length")
    if isinstance(L, bool) or not isinstance(L, int):
        raise MalformedModel("series_length must be an integer")
    if "tree" not in doc:
        raise MalformedModel("missing 'tree'")
    t = ProgramTree(tree_from_dict(doc["tree"]), L)
    report = validate_tree(t)
    if not report.ok:
        raise MalformedModel("model failed validation:\n" + str(report))
    return t


def deserialize_tree(text: str) -> ProgramTree:
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, TypeError) as exc:
        raise MalformedModel(f"not valid JSON: {exc}") from None
    return tree_from_document(doc)


# ---------------------------------------------------------------------------
# rendering

def _fmt_ratio(v: float) -> str:
    return f"{v:g}"


def _render(node: Node) -> str:
    op = node.op
    if op == "InputSeries":
        return "x"
    c = node.children
    if op == "SegDect":
        return f"SegDect({_render(c[0])}, {c[1].value}, {c[2].value})"
    if op in DOMAIN_OPS:
        return f"{op}({_render(c[0])})"
    if op == "AdaPatch":
        return f"AdaPatch({_render(c[0])}, /{c[1].value})"
    if op == "StatisDist":
        return f"StatisDist({_render(c[0])}, τ={_fmt_ratio(c[1].value)})"
    if op in SHAPE_OPS:
        return f"{op}({_render(c[0])}, λ={_fmt_ratio(c[1].value)})"
    return f"{op}(" + ", ".join(_render(ch) for ch in c) + ")"


def render_tree(t: ProgramTree) -> str:
    return _render(t.root)


_TOKEN = re.compile(r"\s*(?:(?P<name>[A-Za-z][A-Za-z0-9]*)|(?P<num>-?\d+(?:\.\d*)?(?:[eE][-+]?\d+)?)|(?P<punct>[(),/=]|τ|λ))")


def _tokenize(text: str) -> list[str]:
    pos, out = 0, []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise MalformedModel(f"unexpected text at {pos}: {text[pos:pos + 10]!r}")
        out.append(m.group(m.lastgroup))
        pos = m.end()
    return out


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def next(self):
        if self.i >= len(self.tokens):
            raise MalformedModel("unexpected end of expression")
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, tok):
        got = self.next()
        if got != tok:
            raise MalformedModel(f"expected {tok!r}, got {got!r}")

    def number(self):
        tok = self.next()
        try:
            return int(tok) if re.fullmatch(r"-?\d+", tok) else float(tok)
        except ValueError:
            raise MalformedModel(f"expected a number, got {tok!r}") from None

    def node(self) -> Node:
        name = self.next()
        if name == "x":
            return X
        self.expect("(")
        if name == "SegDect":
            child = self.node()
            self.expect(",")
            seg_len = self.number()
            self.expect(",")
            seg_start = self.number()
            self.expect(")")
            return seg_dect(child, seg_len, seg_start)
        if name in DOMAIN_OPS:
            child = self.node()
            self.expect(")")
            return Node(name, (child,))
        if name == "AdaPatch":
            child = self.node()
            self.expect(",")
            self.expect("/")
            divisor = self.number()
            self.expect(")")
            return ada_patch(child, divisor)
        if name in EXTRACTORS:
            child = self.node()
            self.expect(",")
            self.expect("τ" if name == "StatisDist" else "λ")
            self.expect("=")
            param = self.number()
            self.expect(")")
            return extractor(name, child, param)
        if name in CONCATS:
            children = [self.node()]
            while True:
                tok = self.next()
                if tok == ")":
                    break
                if tok != ",":
                    raise MalformedModel(f"expected ',' or ')', got {tok!r}")
                children.append(self.node())
            return Node(name, tuple(children))
        raise MalformedModel(f"unknown op {name!r}")


def parse_rendered(text: str, L: int) -> ProgramTree:
    """Inverse of :func:`render_tree` (debugging aid)."""
    p = _Parser(_tokenize(text))
    root = p.node()
    if p.i != len(p.tokens):
        raise MalformedModel("trailing tokens after expression")
    return ProgramTree(root, L)


# ---------------------------------------------------------------------------
# inspection

@dataclass(frozen=True)
class Branch:
    """Layer summary of one Vector-typed subtree feeding a concatenation."""

    path: tuple
    segment: tuple | None  # (first, last) 1-based inclusive positions
    domain: str  # Raw, Freq or Diff
    divisor: int | None
    extractor: str
    param: float
    dim: int

    def describe(self) -> str:
        seg = f"SegDect[{self.segment[0]}..{self.segment[1]}]" if self.segment else "Full"
        patch = f"Patch/{self.divisor}" if self.divisor else "NoPatch"
        symbol = "τ" if self.extractor == "StatisDist" else "λ"
        return (
            f"{seg} → {self.domain} → {patch} → {self.extractor} "
            f"({symbol}={_fmt_ratio(self.param)}, dim={self.dim})"
        )


def branches(t: ProgramTree) -> list[Branch]:
    out = []
    L = t.series_length
    for path, node in iter_nodes(t.root):
        if node.op not in EXTRACTORS:
            continue
        segment, domain, divisor = None, "Raw", None
        cur = node.children[0]
        while cur.op != "InputSeries":
            if cur.op == "AdaPatch":
                divisor = cur.children[1].value
            elif cur.op == "DomFreq":
                domain = "Freq"
            elif cur.op == "DomDiff":
                domain = "Diff"
            elif cur.op == "SegDect":
                seg_len, seg_start = cur.children[1].value, cur.children[2].value
                segment = (seg_start, seg_start + seg_len - 1)
            cur = cur.children[0]
        out.append(Branch(path, segment, domain, divisor, node.op, node.children[1].value, infer(node, L).dim))
    return out


STAT_CATEGORIES = {
    "concatenation": ("FeaCon2", "FeaCon3", "FeaCon4", "FeaConH"),
    "segment": ("SegDect", "NoSeg"),
    "domain": ("Raw", "Freq", "Diff"),
    "patching": tuple(f"D={d}" for d in ops.DIVISORS) + ("NoPatch",),
    "extractor": EXTRACTORS,
    "extractor_group": ("Shape", "StatisDist"),
}


@dataclass
class StatsTable:
    """Operation usage counts and proportions.

    Concatenation proportions are relative to the number of concatenation
    nodes; every other category is relative to the number of branches.
    """

    rows: list = field(default_factory=list)  # (category, item, count, denominator, proportion)
    n_trees: int = 0
    n_branches: int = 0
    n_concats: int = 0
    zero_denominators: tuple = ()

    def proportion(self, category: str, item: str) -> float:
        for cat, it, _, _, p in self.rows:
            if cat == category and it == item:
                return p
        raise KeyError((category, item))

    def to_csv(self) -> str:
        lines = ["category,item,count,denominator,proportion"]
        for cat, item, count, denom, p in self.rows:
            lines.append(f"{cat},{item},{count},{denom},{p:.12g}")
        return "\n".join(lines) + "\n"


def structural_stats(trees) -> StatsTable:
    counts = {cat: dict.fromkeys(items, 0) for cat, items in STAT_CATEGORIES.items()}
    n_branches = n_concats = 0
    trees = list(trees)
    for t in trees:
        for _, node in iter_nodes(t.root):
            if node.op in CONCATS:
                counts["concatenation"][node.op] += 1
                n_concats += 1
        for b in branches(t):
            n_branches += 1
            counts["segment"]["SegDect" if b.segment else "NoSeg"] += 1
            counts["domain"][b.domain] += 1
            counts["patching"][f"D={b.divisor}" if b.divisor else "NoPatch"] += 1
            counts["extractor"][b.extractor] += 1
            counts["extractor_group"]["StatisDist" if b.extractor == "StatisDist" else "Shape"] += 1
    table = StatsTable(n_trees=len(trees), n_branches=n_branches, n_concats=n_concats)
    zero = []
    for cat, items in STAT_CATEGORIES.items():
        denom = n_concats if cat == "concatenation" else n_branches
        if denom == 0:
            zero.append(cat)
            continue
        for item in items:
            table.rows.append((cat, item, counts[cat][item], denom, counts[cat][item] / denom))
    table.zero_denominators = tuple(zero)
    return table
