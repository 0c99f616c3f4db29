import numpy as np
import torch

import oracles
from rgvsr.config import AblationSpec, ModelConfig
from rgvsr.net import build_model
from rgvsr.supplement import AttentionSupplement, ResidualChain, build_supplement


def np_modulation(x, mb, slope=0.1, attention=True):
    y = oracles.leaky_relu(
        oracles.conv1x1_oracle(
            x, mb.compress.weight.detach().numpy(), mb.compress.bias.detach().numpy()
        ),
        slope,
    )
    y = oracles.leaky_relu(
        oracles.conv3x3_oracle(
            y, mb.conv.weight.detach().numpy(), mb.conv.bias.detach().numpy()
        ),
        slope,
    )
    if attention and mb.attention is not None:
        y = oracles.channel_attention_oracle(
            y,
            mb.attention.reduce.weight.detach().numpy(),
            mb.attention.reduce.bias.detach().numpy(),
            mb.attention.expand.weight.detach().numpy(),
            mb.attention.expand.bias.detach().numpy(),
        )
    return y


class TestAttentionSupplement:
    def test_zero_parameters_zero_output(self):
        sup = AttentionSupplement(6).double()
        with torch.no_grad():
            for p in sup.parameters():
                p.zero_()
        out = sup(torch.rand(1, 6, 5, 5, dtype=torch.float64))
        assert torch.all(out == 0)

    def test_shape_preserved(self):
        sup = AttentionSupplement(6).double()
        out = sup(torch.rand(2, 6, 16, 16, dtype=torch.float64))
        assert out.shape == (2, 6, 16, 16)

    def test_matches_composed_oracles(self):
        sup = AttentionSupplement(6, reduction=3).double()
        rng = np.random.default_rng(12)
        x = rng.standard_normal((6, 5, 5))
        f1 = np_modulation(x, sup.mb1)
        f2 = np_modulation(np.concatenate([x, f1]), sup.mb2)
        y = oracles.cell_oracle(
            np.concatenate([x, f1, f2]),
            sup.fuse.conv.weight.detach().numpy(),
            sup.fuse.conv.bias.detach().numpy(),
            0.1,
        )
        for block in sup.refine:
            y = oracles.residual_block_oracle(
                y,
                block.conv1.weight.detach().numpy(), block.conv1.bias.detach().numpy(),
                block.conv2.weight.detach().numpy(), block.conv2.bias.detach().numpy(),
                0.1,
            )
        ours = sup(torch.from_numpy(x).unsqueeze(0))[0].detach().numpy()
        assert np.abs(ours - y).max() <= 1e-6 * np.abs(y).max()

    def test_dense_connection_dataflow(self):
        sup = AttentionSupplement(6, reduction=3).double()
        x = torch.rand(1, 6, 5, 5, dtype=torch.float64)
        baseline_f2 = sup.mb2(torch.cat((x, sup.mb1(x)), dim=1))
        baseline_out = sup(x)
        with torch.no_grad():
            for p in sup.mb1.parameters():
                p.zero_()
        zeroed_f2 = sup.mb2(torch.cat((x, sup.mb1(x)), dim=1))
        zeroed_out = sup(x)
        assert not torch.allclose(baseline_f2, zeroed_f2)
        assert not torch.allclose(baseline_out, zeroed_out)


class TestResidualChain:
    def test_zero_parameters_identity(self):
        chain = ResidualChain(6, depth=4).double()
        with torch.no_grad():
            for p in chain.parameters():
                p.zero_()
        x = torch.rand(1, 6, 5, 5, dtype=torch.float64)
        assert torch.equal(chain(x), x)

    def test_matches_chained_residual_oracle(self):
        chain = ResidualChain(4, depth=3).double()
        rng = np.random.default_rng(4)
        x = rng.standard_normal((4, 5, 5))
        y = x
        for block in chain.chain:
            y = oracles.residual_block_oracle(
                y,
                block.conv1.weight.detach().numpy(), block.conv1.bias.detach().numpy(),
                block.conv2.weight.detach().numpy(), block.conv2.bias.detach().numpy(),
                0.1,
            )
        ours = chain(torch.from_numpy(x).unsqueeze(0))[0].detach().numpy()
        assert np.abs(ours - y).max() <= 1e-6 * np.abs(y).max()


class TestVariantAccounting:
    def test_substitute_heavier_than_full(self):
        _, full = build_model(ModelConfig(), AblationSpec(), seed=0)
        _, sub = build_model(ModelConfig(), AblationSpec(asm_mode="substitute"), seed=0)
        assert sub.total > full.total

    def test_attention_ablation_removes_exactly_the_attention_params(self):
        cfg = ModelConfig()
        full_model, full = build_model(cfg, AblationSpec(), seed=0)
        _, stripped = build_model(cfg, AblationSpec(asm_mode="no_attention"), seed=0)
        attention_params = sum(
            p.numel()
            for name, p in full_model.named_parameters()
            if ".attention." in name and "supplement" in name
        )
        assert full.total - stripped.total == attention_params

    def test_factory_dispatch(self):
        cfg = ModelConfig(width=6, attention_reduction=3)
        assert isinstance(build_supplement(cfg, AblationSpec()), AttentionSupplement)
        sub = build_supplement(cfg, AblationSpec(asm_mode="substitute"))
        assert isinstance(sub, ResidualChain)
        assert len(sub.chain) == cfg.substitute_depth
        stripped = build_supplement(cfg, AblationSpec(asm_mode="no_attention"))
        assert stripped.mb1.attention is None and stripped.mb2.attention is None
