"""Model assembly: patch ops, stage ladders, cross-feeding, ablations, gradients."""

import numpy as np
import pytest

from citnet import tensor as T
from citnet.config import micro_config, variant_config
from citnet.errors import ConfigError, DimensionError
from citnet.gradcheck import grad_check
from citnet.model import (
    CitNet,
    FinalExpand,
    PatchEmbed,
    PatchExpand,
    PatchMerge,
    build_model,
    citnet_forward,
)


class TestPatchOps:
    def test_embed_token_count(self, rng):
        embed = PatchEmbed(4, 1, 16, rng, dtype=np.float64)
        x = T.as_tensor(rng.standard_normal((1, 1, 224, 224)), np.float64)
        tokens = embed(x)
        assert tokens.shape == (1, 56, 56, 16)
        assert 56 * 56 == 3136

    def test_embed_constant_image_gives_identical_tokens(self, rng):
        embed = PatchEmbed(4, 1, 8, rng, dtype=np.float64)
        x = T.as_tensor(np.full((1, 1, 28, 28), 0.37), np.float64)
        tokens = embed(x).data
        assert np.abs(tokens - tokens[:, :1, :1]).max() < 1e-9

    def test_merge_expand_shape_roundtrip(self, rng):
        merge = PatchMerge(8, rng, dtype=np.float64)
        expand = PatchExpand(16, rng, dtype=np.float64)
        x = T.as_tensor(rng.standard_normal((2, 14, 14, 8)), np.float64)
        merged = merge(x)
        assert merged.shape == (2, 7, 7, 16)
        back = expand(merged)
        assert back.shape == (2, 14, 14, 8)

    def test_merge_rejects_odd_dims(self, rng):
        merge = PatchMerge(8, rng, dtype=np.float64)
        with pytest.raises(DimensionError):
            merge(T.as_tensor(rng.standard_normal((1, 7, 7, 8)), np.float64))

    def test_resolution_ladder(self, rng):
        sizes = [56]
        while sizes[-1] > 7:
            sizes.append(sizes[-1] // 2)
        assert sizes == [56, 28, 14, 7]

    def test_final_expand_scale(self, rng):
        fe = FinalExpand(8, 4, rng, dtype=np.float64)
        x = T.as_tensor(rng.standard_normal((1, 7, 7, 8)), np.float64)
        assert fe(x).shape == (1, 28, 28, 8)

    def test_patch_op_gradients(self, rng):
        embed = PatchEmbed(2, 1, 8, rng, dtype=np.float64)
        x = T.param(rng.standard_normal((1, 1, 8, 8)), dtype=np.float64)
        report = grad_check(
            lambda *ts: T.sum_(T.pow_const(embed(ts[0]), 2.0)),
            [x] + embed.parameters()[:1],
            max_elements_per_input=20,
        )
        assert report.max_rel_err < 1e-6
        merge = PatchMerge(4, rng, dtype=np.float64)
        t = T.param(rng.standard_normal((1, 4, 4, 4)), dtype=np.float64)
        report = grad_check(
            lambda t: T.sum_(T.pow_const(merge(t), 2.0)), [t], max_elements_per_input=20
        )
        assert report.max_rel_err < 1e-6
        expand = PatchExpand(4, rng, dtype=np.float64)
        report = grad_check(
            lambda t: T.sum_(T.pow_const(expand(t), 2.0)), [t], max_elements_per_input=20
        )
        assert report.max_rel_err < 1e-6


class TestForwardShapes:
    @pytest.mark.parametrize("image,base", [(28, 8), (56, 16)])
    def test_logits_match_input_resolution(self, rng, image, base):
        cfg = micro_config(image_size=image, base_dim=base, n_classes=3)
        model = build_model(cfg, seed=0)
        x = T.as_tensor(rng.standard_normal((2, 1, image, image)).astype(np.float32))
        out = citnet_forward(model, x)
        assert out.shape == (2, 3, image, image)

    def test_wrong_resolution_rejected(self, rng):
        model = build_model(micro_config(image_size=28, base_dim=8), seed=0)
        with pytest.raises(DimensionError):
            citnet_forward(model, T.as_tensor(np.zeros((1, 1, 56, 56), np.float32)))

    def test_deterministic_forward(self, rng):
        model = build_model(micro_config(image_size=28, base_dim=8), seed=0)
        x = T.as_tensor(rng.standard_normal((1, 1, 28, 28)).astype(np.float32))
        a = citnet_forward(model, x).data
        b = citnet_forward(model, x).data
        assert np.array_equal(a, b)

    def test_deterministic_build(self):
        m1 = build_model(micro_config(image_size=28, base_dim=8), seed=4)
        m2 = build_model(micro_config(image_size=28, base_dim=8), seed=4)
        for (n1, p1), (n2, p2) in zip(m1.named_parameters(), m2.named_parameters()):
            assert n1 == n2
            assert np.array_equal(p1.data, p2.data)

    def test_no_parameter_sharing_between_branches(self):
        model = build_model(micro_config(image_size=56, base_dim=16), seed=0)
        model.audit_no_shared_parameters()


class TestAblations:
    def test_plain_conv_toggle_runs(self, rng):
        cfg = micro_config(image_size=28, base_dim=8, plain_conv=True)
        model = build_model(cfg, seed=0)
        x = T.as_tensor(rng.standard_normal((1, 1, 28, 28)).astype(np.float32))
        out = citnet_forward(model, x)
        assert out.shape == (1, 1, 28, 28)
        for unit in model.cnn_bottleneck:
            assert unit.conv.n == 1 and not unit.use_offsets

    def test_spatial_only_toggle_freezes_lambdas(self, rng):
        cfg = micro_config(image_size=28, base_dim=8, spatial_attention_only=True)
        model = build_model(cfg, seed=0)
        lambdas = [p for n, p in vars(model.trans_bottleneck[0].attn).items()
                   if n == "lambdas"]
        assert np.array_equal(lambdas[0].data, [1.0, 0.0, 0.0, 0.0])
        assert not lambdas[0].requires_grad
        names = {n for n, _ in model.named_parameters()}
        assert not any(n.endswith("lambdas") for n in names)
        x = T.as_tensor(rng.standard_normal((1, 1, 28, 28)).astype(np.float32))
        assert citnet_forward(model, x).shape == (1, 1, 28, 28)

    def test_severed_cross_feed_runs(self, rng):
        cfg = micro_config(image_size=56, base_dim=16, cross_feed=False)
        model = build_model(cfg, seed=0)
        x = T.as_tensor(rng.standard_normal((1, 1, 56, 56)).astype(np.float32))
        assert citnet_forward(model, x).shape == (1, 1, 56, 56)
        # decoder fusion takes only own-branch inputs when severed: 2C -> C
        assert model.trans_fuse[0].weight.shape == (2 * 16, 16)

    def test_cross_feed_width_matches_plan(self):
        # decoder stage at level 0: trans dim 16, cnn width 16
        model = build_model(micro_config(image_size=56, base_dim=16), seed=0)
        assert model.trans_fuse[0].weight.shape == (2 * 16 + 16, 16)
        assert model.cnn_fuse[0].proj.weight.shape[:2] == (16, 2 * 16 + 16)


class TestFullScale:
    def test_variant_t_forward_backward_under_budget(self):
        import time

        from citnet.config import variant_config

        model = build_model(variant_config("T"), seed=0)
        x = T.as_tensor(
            np.random.default_rng(0).standard_normal((1, 1, 224, 224)).astype(np.float32))
        start = time.time()
        out = citnet_forward(model, x)
        T.mean(T.pow_const(out, 2.0)).backward()
        elapsed = time.time() - start
        assert out.shape == (1, 1, 224, 224)
        assert np.isfinite(out.data).all()
        assert elapsed < 60.0, f"took {elapsed:.1f}s"
        assert all(p.grad is not None for p in model.parameters())


class TestGradientFlow:
    def test_loss_reaches_both_branches_through_cross_feed(self, rng):
        cfg = micro_config(image_size=56, base_dim=16)
        model = build_model(cfg, seed=0, dtype=np.float64)
        x = T.as_tensor(rng.standard_normal((1, 1, 56, 56)), np.float64)
        out = citnet_forward(model, x)
        T.sum_(T.pow_const(out, 2.0)).backward()
        cnn_growth = [p for n, p in model.named_parameters() if n.startswith("cnn_enc")]
        trans_growth = [p for n, p in model.named_parameters() if n.startswith("trans_enc")]
        assert all(p.grad is not None for p in cnn_growth + trans_growth)
        assert max(float(np.abs(p.grad).max()) for p in cnn_growth) > 0
        assert max(float(np.abs(p.grad).max()) for p in trans_growth) > 0

    def test_micro_end_to_end_finite_differences(self, rng):
        cfg = micro_config(image_size=28, base_dim=8)
        model = build_model(cfg, seed=3, dtype=np.float64)
        for name, p in model.named_parameters():
            if name.endswith("offset_head.bias"):
                p.data = p.data + rng.uniform(0.1, 0.35, size=p.shape)
        x = T.param(rng.standard_normal((1, 1, 28, 28)), dtype=np.float64)
        proj = T.as_tensor(rng.standard_normal((1, 1, 28, 28)), np.float64)
        params = [x] + model.parameters()
        report = grad_check(
            lambda *ts: T.sum_(T.mul(citnet_forward(model, ts[0]), proj)),
            params, h=1e-5, max_elements_per_input=2, rng=np.random.default_rng(17))
        assert report.max_rel_err < 1e-3
