"""Acceptance suite: one test per exit criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines. Tolerances are pinned here and match the module-level contracts.
"""

import numpy as np
import pytest

from citnet import tensor as T
from citnet.analysis import omega_msa, omega_wacam, omega_wmsa, summarize
from citnet.block import (TransformerBlockPair, block_pair_forward, dense_mlp_param_count,
                          lpm_param_count, LpmLayer, lpm_forward, zero_block_pair)
from citnet.config import micro_config, variant_config
from citnet.ddconv import DDConvLayer, ddconv_forward
from citnet.gradcheck import grad_check
from citnet.losses import dice_loss
from citnet.model import build_model, citnet_forward
from citnet.synth import gen_synthetic
from citnet.train import train_toy
from citnet.wacam import (WacamLayer, branch_channel, branch_cross, branch_spatial,
                          compact_projection, fuse_branches, window_partition)


def report(line):
    print(f"\n[PASS] {line}")


def test_criterion_1_complexity_formulas():
    assert omega_msa(56, 56, 96) == 2_003_828_736
    assert omega_wmsa(56, 56, 96, 7) == 145_108_992
    assert omega_wacam(56, 56, 96, 7) == 21_977_088
    for grid in (14, 28, 56):  # hw in {196, 784, 3136}
        for c in (96, 192, 384, 768):
            assert omega_wacam(grid, grid, c, 7) < omega_wmsa(grid, grid, c, 7) \
                < omega_msa(grid, grid, c)
    report("criterion 1: attention-cost formulas exact at (56,56,96,7); "
           "ordering holds over the full sweep")


def test_criterion_2_parameter_flop_accounting():
    lines = []
    for variant in ("T", "B"):
        rep = summarize(variant_config(variant))
        assert 0.5 <= rep.params_ratio() <= 2.0, \
            f"{variant}: {rep.params_m:.2f} M vs {rep.paper_params_m} M"
        assert 0.5 <= rep.gflops_ratio() <= 2.0, \
            f"{variant}: {rep.gflops_paper_convention:.2f} vs {rep.paper_gflops}"
        assert len(rep.deviation_sources) >= 4
        lines.append(f"{variant}: {rep.params_m:.2f} M ({rep.params_ratio():.2f}x), "
                     f"{rep.gflops_paper_convention:.2f} GFLOPs ({rep.gflops_ratio():.2f}x)")
    report("criterion 2: " + "; ".join(lines) + "; deviation ledger itemized")


def test_criterion_3_ddconv_reduction():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(20):
        in_ch = int(rng.integers(1, 4))
        out_ch = int(rng.integers(1, 5))
        layer = DDConvLayer(in_ch, out_ch, rng, n=1, dtype=np.float64)
        x = T.as_tensor(rng.standard_normal((2, in_ch, 6, 6)), np.float64)
        out = ddconv_forward(layer, x)
        ref = T.conv2d(x, layer.banks[0], stride=1, padding=1)
        worst = max(worst, float(np.abs(out.data - ref.data).max()))
    assert worst < 1e-6
    report(f"criterion 3: ddconv(offsets=0, n=1) == conv2d on 20 random cases "
           f"(max abs diff {worst:.2e} < 1e-6)")


class TestCriterion4GradientSuite:
    """Central finite differences at 64-bit, three seeds per operator."""

    SEEDS = (0, 1, 2)

    def _proj_loss(self, fn):
        def wrapped(*tensors):
            out = fn(tensors[0])
            return T.sum_(T.mul(out, self._proj))
        return wrapped

    def test_ddconv_forward(self):
        worst = 0.0
        for seed in self.SEEDS:
            rng = np.random.default_rng(seed)
            layer = DDConvLayer(2, 2, rng, n=2, dtype=np.float64)
            layer.offset_head.bias.data += rng.uniform(0.1, 0.35, size=18)
            x = T.param(rng.standard_normal((1, 2, 6, 6)), dtype=np.float64)
            self._proj = T.as_tensor(rng.standard_normal((1, 2, 6, 6)), np.float64)
            rep = grad_check(self._proj_loss(lambda t: ddconv_forward(layer, t)),
                             [x] + layer.parameters(), h=1e-6,
                             max_elements_per_input=8, rng=np.random.default_rng(seed))
            worst = max(worst, rep.max_rel_err)
        assert worst < 1e-4
        report(f"criterion 4a: ddconv_forward gradients, 3 seeds (max rel err {worst:.2e})")

    @pytest.mark.parametrize("branch", ["spatial", "channel", "cross_h", "cross_w"])
    def test_attention_branches(self, branch):
        worst = 0.0
        for seed in self.SEEDS:
            rng = np.random.default_rng(seed + 30)
            layer = WacamLayer(16, 2, 2, rng, dtype=np.float64)
            z = T.param(rng.standard_normal((3, 4, 2)), dtype=np.float64)
            self._proj = T.as_tensor(rng.standard_normal((3, 4, 2)), np.float64)
            fn = {
                "spatial": lambda t: branch_spatial(layer, t)[0],
                "channel": lambda t: branch_channel(layer, t)[0],
                "cross_h": lambda t: branch_cross(layer, t, "h")[0],
                "cross_w": lambda t: branch_cross(layer, t, "w")[0],
            }[branch]
            rep = grad_check(self._proj_loss(fn), [z] + layer.parameters(), h=1e-6,
                             max_elements_per_input=10, rng=np.random.default_rng(seed))
            worst = max(worst, rep.max_rel_err)
        assert worst < 1e-4
        report(f"criterion 4b ({branch}): gradients, 3 seeds (max rel err {worst:.2e})")

    def test_fuse_branches(self):
        worst = 0.0
        for seed in self.SEEDS:
            rng = np.random.default_rng(seed + 60)
            layer = WacamLayer(16, 2, 1, rng, dtype=np.float64)
            outs = [T.as_tensor(rng.standard_normal((2, 4, 2)), np.float64) for _ in range(4)]
            rep = grad_check(
                lambda lam: T.sum_(T.pow_const(fuse_branches(layer, outs), 2.0)),
                [layer.lambdas])
            worst = max(worst, rep.max_rel_err)
        assert worst < 1e-4
        report(f"criterion 4c: fuse_branches lambda gradients, 3 seeds "
               f"(max rel err {worst:.2e})")

    def test_lpm_forward(self):
        worst = 0.0
        for seed in self.SEEDS:
            rng = np.random.default_rng(seed + 90)
            layer = LpmLayer(8, rng, dtype=np.float64)
            x = T.param(rng.standard_normal((1, 7, 7, 8)), dtype=np.float64)
            self._proj = T.as_tensor(rng.standard_normal((1, 7, 7, 8)), np.float64)
            rep = grad_check(self._proj_loss(lambda t: lpm_forward(layer, t)),
                             [x] + layer.parameters(), h=1e-6,
                             max_elements_per_input=10, rng=np.random.default_rng(seed))
            worst = max(worst, rep.max_rel_err)
        assert worst < 1e-4
        report(f"criterion 4d: lpm_forward gradients, 3 seeds (max rel err {worst:.2e})")

    def test_block_pair_forward(self):
        worst = 0.0
        for seed in self.SEEDS:
            rng = np.random.default_rng(seed + 120)
            pair = TransformerBlockPair(8, 7, 1, rng, lpm_ratio=2, dtype=np.float64)
            x = T.param(rng.standard_normal((1, 7, 7, 8)), dtype=np.float64)
            self._proj = T.as_tensor(rng.standard_normal((1, 7, 7, 8)), np.float64)
            rep = grad_check(self._proj_loss(lambda t: block_pair_forward(pair, t)),
                             [x] + pair.parameters(), h=1e-6,
                             max_elements_per_input=3, rng=np.random.default_rng(seed))
            worst = max(worst, rep.max_rel_err)
        assert worst < 1e-4
        report(f"criterion 4e: block_pair_forward gradients, 3 seeds "
               f"(max rel err {worst:.2e})")

    def test_dice_loss(self):
        worst = 0.0
        for seed in self.SEEDS:
            rng = np.random.default_rng(seed + 150)
            p = T.param(rng.uniform(0.05, 0.95, size=(6, 6)), dtype=np.float64)
            g = T.as_tensor((rng.uniform(size=(6, 6)) > 0.5).astype(np.float64))
            rep = grad_check(lambda p: dice_loss(p, g), [p])
            worst = max(worst, rep.max_rel_err)
        assert worst < 1e-4
        report(f"criterion 4f: dice_loss gradients, 3 seeds (max rel err {worst:.2e})")

    def test_end_to_end_micro_model(self):
        rng = np.random.default_rng(200)
        model = build_model(micro_config(image_size=28, base_dim=8), seed=3,
                            dtype=np.float64)
        for name, p in model.named_parameters():
            if name.endswith("offset_head.bias"):
                p.data = p.data + rng.uniform(0.1, 0.35, size=p.shape)
        x = T.param(rng.standard_normal((1, 1, 28, 28)), dtype=np.float64)
        self._proj = T.as_tensor(rng.standard_normal((1, 1, 28, 28)), np.float64)
        rep = grad_check(self._proj_loss(lambda t: citnet_forward(model, t)),
                         [x] + model.parameters(), h=1e-5,
                         max_elements_per_input=2, rng=np.random.default_rng(9))
        assert rep.max_rel_err < 1e-3
        report(f"criterion 4g: end-to-end micro model gradients "
               f"(max rel err {rep.max_rel_err:.2e} < 1e-3)")


def test_criterion_5_attention_invariants():
    rng = np.random.default_rng(7)
    layer = WacamLayer(16, 7, 2, rng, shifted=True, dtype=np.float64)
    x = T.as_tensor(rng.standard_normal((2, 14, 14, 16)), np.float64)
    windows, grid = window_partition(x, 7, 3)
    z = compact_projection(layer, windows)
    row_err = 0.0
    for _, attn in (branch_spatial(layer, z, mask=grid.mask), branch_channel(layer, z),
                    branch_cross(layer, z, "h"), branch_cross(layer, z, "w")):
        row_err = max(row_err, float(np.abs(attn.data.sum(-1) - 1.0).max()))
    assert row_err < 1e-6

    _, sp = branch_spatial(layer, z, mask=grid.mask)
    blocked = np.broadcast_to(grid.mask[:, None] != 0,
                              (2, 4, 2, 49, 49)).reshape(8, 2, 49, 49)
    leak = float(sp.data[blocked].max())
    assert leak < 1e-8

    layer.lambdas.data = np.array([1.0, 0.0, 0.0, 0.0])
    outs = [T.as_tensor(rng.standard_normal((2, 4, 2)), np.float64) for _ in range(4)]
    assert np.array_equal(fuse_branches(layer, outs).data, outs[0].data)

    layer.lambdas.data = rng.standard_normal(4)
    layer.lambdas.zero_grad()
    proj = rng.standard_normal((2, 4, 2))
    T.sum_(T.mul(fuse_branches(layer, outs), T.as_tensor(proj, np.float64))).backward()
    for i in range(4):
        assert abs(layer.lambdas.grad[i] - (proj * outs[i].data).sum()) < 1e-9
    report(f"criterion 5: rows sum to 1 ({row_err:.2e}); masked leak {leak:.2e} < 1e-8; "
           "lambda=(1,0,0,0) exact; lambda-gradients equal inner products")


def test_criterion_6_block_wiring():
    rng = np.random.default_rng(11)
    pair = TransformerBlockPair(16, 7, 2, rng, dtype=np.float64)
    zero_block_pair(pair)
    x = T.as_tensor(rng.standard_normal((1, 14, 14, 16)), np.float64)
    out = block_pair_forward(pair, x)
    assert np.array_equal(out.data, x.data)
    assert pair.last_trace == ["LN", "W-ACAM", "LN", "LPM", "LN", "SW-ACAM", "LN", "LPM"]
    report("criterion 6: zeroed sub-paths give exact identity; "
           "instrumented order [W-ACAM, LPM, SW-ACAM, LPM] with LN before each")


def test_criterion_7_lpm_economy():
    stage_dims = (96, 192, 384, 768)
    for dim in stage_dims:
        assert lpm_param_count(dim, 4) < dense_mlp_param_count(dim, 4)
        assert lpm_param_count(dim, 2) < dense_mlp_param_count(dim, 4)
    # the reference arithmetic at C=96, r=4 (primary + cheap + output stages)
    assert lpm_param_count(96, 4) == (96 * 192 + 192) + (192 * 9 + 192) + (384 * 96 + 96)
    assert lpm_param_count(96, 4) == 57504 < 74208 == dense_mlp_param_count(96, 4)
    report("criterion 7: LPM strictly below the ratio-4 dense MLP at every stage "
           "width of both variants (57,504 < 74,208 at C=96)")


def test_criterion_8_learnability():
    cfg = micro_config(image_size=56, base_dim=32)
    samples = gen_synthetic(seed=7, n=4, size=56)

    # determinism spot check before the long run
    h1 = train_toy(build_model(cfg, seed=0), samples, steps=3, lr=1e-3)
    h2 = train_toy(build_model(cfg, seed=0), samples, steps=3, lr=1e-3)
    assert h1.loss == h2.loss

    model = build_model(cfg, seed=0)
    best = 0.0
    steps_used = 0
    for chunk in range(15):  # up to 300 steps in 20-step chunks
        hist = train_toy(model, samples, steps=20, lr=1e-3)
        steps_used += 20
        best = max(best, max(hist.dice))
        if best > 0.95:
            break
    assert best > 0.95, f"train dice only reached {best:.3f} within {steps_used} steps"
    report(f"criterion 8: micro model overfits 4 samples to dice {best:.3f} "
           f"within {steps_used} <= 300 steps, deterministic per seed")


def test_criterion_9_accuracy_tables_out_of_scope():
    # the published segmentation-accuracy tables need dataset-scale training;
    # criteria 1-8 stand in as property-based acceptance instead
    report("criterion 9: dataset-scale accuracy tables intentionally not "
           "reproduced; property-based criteria 1-8 are the acceptance surface")
