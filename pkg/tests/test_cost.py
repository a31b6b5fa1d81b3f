import math

import numpy as np
import pytest

from tsgp.classifier import fit_extra_trees
from tsgp.cost import DEVICES, CostReport, analyze, classifier_flops, count_flops, node_flops, peak_memory_bytes
from tsgp.program import (
    X,
    ProgramTree,
    ada_patch,
    concat,
    dom_diff,
    dom_freq,
    extractor,
    generate_tree,
    seg_dect,
)


def sd(child, tau=0.5):
    return extractor("StatisDist", child, tau)


def test_two_statis_branches():
    t = ProgramTree(concat(sd(X), sd(X)), 8)
    assert count_flops(t) == 2 * (8 * 3)


def test_dom_diff_node():
    t = ProgramTree(concat(sd(dom_diff(X)), sd(X)), 100)
    report = analyze(t)
    diff = next(c for c in report.per_node_breakdown if c.op == "DomDiff")
    assert diff.flops == 99
    assert diff.live_bytes == 8 * 100 + 8 * 99


def test_dom_freq_node():
    node = dom_freq(seg_dect(X, 4, 1))
    assert node_flops(node, 10) == 8 * 16 + 4 * 4


def test_segment_prefix_memory():
    t = ProgramTree(concat(sd(seg_dect(X, 30, 5)), sd(X)), 64)
    seg = next(c for c in analyze(t).per_node_breakdown if c.op == "SegDect")
    assert seg.flops == 0 and seg.live_bytes == 8 * 64 + 8 * 30


def hand_shape_flops(patch_len, n_patches, c_list):
    total = 0
    for c in c_list:
        m = patch_len - c + 1
        total += (2 * c - 1) * m + 3 * m - 1
    return total * n_patches


def test_shape_extractor_hand_count():
    # 100 / 4 -> 7 patches of 25; lambda 0.5 -> kernels 2, 4, 8
    t = ProgramTree(concat(extractor("ShapeInc", ada_patch(X, 4), 0.5), sd(X)), 100)
    shape = next(c for c in analyze(t).per_node_breakdown if c.op == "ShapeInc")
    assert shape.flops == hand_shape_flops(25, 7, [2, 4, 8])


def test_peak_kernel_substitution_counted():
    t = ProgramTree(concat(extractor("ShapePeak", X, 0.25), sd(X)), 6)
    peak = next(c for c in analyze(t).per_node_breakdown if c.op == "ShapePeak")
    assert peak.flops == hand_shape_flops(6, 1, [3])


def test_sum_and_input_floor(rng):
    for _ in range(100):
        L = int(rng.integers(4, 300))
        t = generate_tree(rng, "grow", 6, L)
        r = analyze(t)
        assert r.flops == sum(c.flops for c in r.per_node_breakdown)
        assert r.peak_bytes >= 8 * L
        assert r.peak_bytes == max(c.live_bytes for c in r.per_node_breakdown)


def test_adding_branch_never_decreases(rng):
    for _ in range(50):
        t = generate_tree(rng, "grow", 2, 50)
        if t.root.op == "FeaCon4":
            continue
        bigger = ProgramTree(concat(*t.root.children, sd(X)), 50)
        assert count_flops(bigger) >= count_flops(t)


def test_peak_memory_simulation_by_hand():
    # FeaCon2(StatisDist(x), StatisDist(DomDiff(x))) at L = 10:
    # branch 1: 80 input + 5*8 out + 10*8 scratch = 200
    # branch 2: DomDiff 80 + 40 + 72 = 192; StatisDist 80 + 40 + 72 + 32 + 72 = 296
    # root: 80 + 40 + 32 + 9*8 = 224
    t = ProgramTree(concat(sd(X), sd(dom_diff(X))), 10)
    assert peak_memory_bytes(t) == 296


def test_device_flags():
    small = CostReport(flops=10_000, peak_bytes=4_000)
    assert small.fits("stm32f446re") and small.fits("stm32l552ze")
    mid = CostReport(flops=12_000_000, peak_bytes=4_000)
    assert mid.fits("stm32f446re") and not mid.fits("stm32l552ze")
    big = CostReport(flops=1, peak_bytes=200 * 1024)
    assert not big.fits("stm32f446re") and big.fits("stm32l552ze")
    assert set(DEVICES) == {"stm32f446re", "stm32l552ze"}


def test_summary_line():
    line = CostReport(48, 192).summary()
    assert line == "flops=48 peak_bytes=192 fits_stm32f446re=true fits_stm32l552ze=true"


def test_classifier_cost_is_opt_in(rng):
    Xf = rng.normal(size=(30, 4))
    model = fit_extra_trees(Xf, np.arange(30) % 2, 5, 0)
    t = ProgramTree(concat(sd(X), sd(X)), 8)
    base, full = analyze(t), analyze(t, classifier=model)
    assert base.classifier_flops == 0
    assert full.classifier_flops == classifier_flops(model) == sum(tr.max_depth for tr in model.trees)
    assert full.total_flops == base.flops + full.classifier_flops


def test_report_json_fields():
    doc = analyze(ProgramTree(concat(sd(X), sd(X)), 8)).to_dict()
    assert doc["flops"] == 48 and doc["fits"]["stm32f446re"]
    assert {"path", "op", "flops", "live_bytes"} <= set(doc["per_node_breakdown"][0])


@pytest.mark.parametrize("L", [4, 5, 8, 9, 64])
def test_sort_convention(L):
    t = ProgramTree(concat(sd(X), sd(X)), L)
    assert count_flops(t) == 2 * L * math.ceil(math.log2(L))
