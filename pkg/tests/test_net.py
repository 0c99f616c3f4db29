import numpy as np
import pytest
import torch

import oracles
from rgvsr.blocks import bicubic_resize
from rgvsr.config import AblationSpec, ModelConfig, ablation_grid
from rgvsr.errors import ConfigError, ContractError
from rgvsr.net import (
    FeatureExtractor,
    Reconstructor,
    build_model,
    super_resolve,
)


def np_cell(x, cell, slope=0.1):
    return oracles.cell_oracle(
        x, cell.conv.weight.detach().numpy(), cell.conv.bias.detach().numpy(), slope
    )


def np_chain(x, cells):
    for cell in cells:
        x = np_cell(x, cell)
    return x


def np_supplement(x, sup):
    from test_supplement import np_modulation

    f1 = np_modulation(x, sup.mb1)
    f2 = np_modulation(np.concatenate([x, f1]), sup.mb2)
    y = np_cell(np.concatenate([x, f1, f2]), sup.fuse)
    for block in sup.refine:
        y = oracles.residual_block_oracle(
            y,
            block.conv1.weight.detach().numpy(), block.conv1.bias.detach().numpy(),
            block.conv2.weight.detach().numpy(), block.conv2.bias.detach().numpy(),
            0.1,
        )
    return y


def np_step(fx, triple, hidden, output):
    """Numpy mirror of one extractor step, composed purely from oracles."""
    ref = np_chain(triple[1], list(fx.group.reference)) if fx.uses_reference else None
    fus_pre = np_chain(triple.reshape(9, *triple.shape[-2:]), list(fx.group.fusion))
    if fx.group.attention is not None:
        att_raw = np_cell(fus_pre, fx.group.attention.cell)
        att, _ = oracles.slot_attention_oracle(att_raw)
        fus = np_cell(np.concatenate([fus_pre, att]), fx.group.fuse)
    else:
        fus = np_cell(fus_pre, fx.group.fuse)
    parts = ([ref] if ref is not None else []) + [fus, hidden, output]
    agg = np_cell(np.concatenate(parts), fx.aggregate)
    opt = np_supplement(agg, fx.supplement)
    return np_cell(opt, fx.to_hidden), np_cell(opt, fx.to_output), ref


class TestExtractorStep:
    def zero_extractor(self, cfg):
        fx = FeatureExtractor(cfg, AblationSpec()).double()
        with torch.no_grad():
            for p in fx.parameters():
                p.zero_()
        return fx

    def test_zero_parameters_zero_state(self, tiny_cfg):
        fx = self.zero_extractor(tiny_cfg)
        state = fx.initial_state(1, 8, 8, torch.float64, "cpu")
        new_state, _ = fx.step(torch.rand(1, 3, 3, 8, 8, dtype=torch.float64), state)
        assert torch.all(new_state.hidden == 0)
        assert torch.all(new_state.output == 0)

    def test_state_shapes(self, tiny_cfg):
        fx = FeatureExtractor(tiny_cfg, AblationSpec()).double()
        state = fx.initial_state(1, 16, 16, torch.float64, "cpu")
        new_state, ref = fx.step(torch.rand(1, 3, 3, 16, 16, dtype=torch.float64), state)
        assert new_state.hidden.shape == (1, 6, 16, 16)
        assert new_state.output.shape == (1, 6, 16, 16)
        assert ref.shape == (1, 6, 16, 16)

    def test_step_matches_oracle_composition(self, tiny_cfg):
        fx = FeatureExtractor(tiny_cfg, AblationSpec()).double()
        gen = torch.Generator().manual_seed(3)
        triple = torch.rand(1, 3, 3, 6, 6, generator=gen, dtype=torch.float64)
        hidden = torch.rand(1, 6, 6, 6, generator=gen, dtype=torch.float64)
        output = torch.rand(1, 6, 6, 6, generator=gen, dtype=torch.float64)
        from rgvsr.net import RecurrentState

        new_state, ref = fx.step(triple, RecurrentState(hidden, output))
        ht_ref, out_ref, ref_ref = np_step(
            fx, triple[0].detach().numpy(), hidden[0].detach().numpy(), output[0].detach().numpy()
        )
        for ours, expected in (
            (new_state.hidden[0], ht_ref),
            (new_state.output[0], out_ref),
            (ref[0], ref_ref),
        ):
            assert np.abs(ours.detach().numpy() - expected).max() <= 1e-6 * np.abs(expected).max()


class TestReconstructor:
    def test_zero_head_kills_residual(self, tiny_cfg):
        recon = Reconstructor(tiny_cfg, AblationSpec()).double()
        with torch.no_grad():
            recon.head.weight.zero_()
            recon.head.bias.zero_()
        args = [torch.rand(1, 6, 8, 8, dtype=torch.float64) for _ in range(3)]
        assert torch.all(recon(*args) == 0)

    def test_output_shape_at_bench_resolution(self, tiny_cfg):
        recon = Reconstructor(tiny_cfg, AblationSpec()).double()
        args = [torch.rand(1, 6, 45, 80, dtype=torch.float64) for _ in range(3)]
        assert recon(*args).shape == (1, 3, 180, 320)

    def test_matches_oracle_composition(self, tiny_cfg):
        recon = Reconstructor(tiny_cfg, AblationSpec()).double()
        gen = torch.Generator().manual_seed(5)
        args = [torch.rand(1, 6, 5, 5, generator=gen, dtype=torch.float64) for _ in range(3)]
        x = np_cell(np.concatenate([a[0].detach().numpy() for a in args]), recon.fuse)
        for block in recon.refine:
            x = oracles.residual_block_oracle(
                x,
                block.conv1.weight.detach().numpy(), block.conv1.bias.detach().numpy(),
                block.conv2.weight.detach().numpy(), block.conv2.bias.detach().numpy(),
                0.1,
            )
        x = oracles.conv3x3_oracle(
            x, recon.head.weight.detach().numpy(), recon.head.bias.detach().numpy()
        )
        r = 4
        c = x.shape[0] // (r * r)
        h, w = x.shape[1:]
        expected = (
            x.reshape(c, r, r, h, w).transpose(0, 3, 1, 4, 2).reshape(c, h * r, w * r)
        )
        ours = recon(*args)[0].detach().numpy()
        assert np.abs(ours - expected).max() <= 1e-6 * np.abs(expected).max()

    def test_missing_reference_rejected(self, tiny_cfg):
        recon = Reconstructor(tiny_cfg, AblationSpec()).double()
        a = torch.rand(1, 6, 8, 8, dtype=torch.float64)
        with pytest.raises(ContractError):
            recon(a, a, None)


class TestFullModel:
    def test_zero_head_equals_bicubic(self, tiny_cfg):
        model, _ = build_model(tiny_cfg, AblationSpec(), seed=0, zero_head=True)
        x = torch.rand(7, 3, 32, 32)
        with torch.no_grad():
            out = model(x)
            bic = torch.stack([bicubic_resize(x[t], 4) for t in range(7)])
        assert (out - bic).abs().max() <= 1e-6

    def test_training_shape(self):
        model, _ = build_model(ModelConfig(), AblationSpec(), seed=0)
        with torch.no_grad():
            out = model(torch.rand(7, 3, 64, 64))
        assert out.shape == (7, 3, 256, 256)

    def test_shape_law_all_variants(self, tiny_cfg):
        for spec in ablation_grid().values():
            model, _ = build_model(tiny_cfg, spec, seed=0)
            with torch.no_grad():
                for t in (1, 3):
                    for h, w in ((16, 16), (16, 24)):
                        out = model(torch.rand(t, 3, h, w))
                        assert out.shape == (t, 3, 4 * h, 4 * w)

    def test_single_frame_equals_manual_composition(self, tiny_cfg):
        model, _ = build_model(tiny_cfg, AblationSpec(), seed=1, zero_head=False)
        x = torch.rand(1, 3, 8, 8)
        with torch.no_grad():
            out = model(x)
            triple = x[[0, 0, 0]].unsqueeze(0)
            state = model.forward_branch.initial_state(1, 8, 8, x.dtype, "cpu")
            st_f, ref = model.forward_branch.step(triple, state)
            st_b, _ = model.backward_branch.step(triple, state)
            manual = model.reconstruct(st_f.output, st_b.output, ref) + bicubic_resize(x[0], 4)
        assert torch.equal(out[0], manual[0])

    def test_causal_structure(self, tiny_cfg):
        model, _ = build_model(tiny_cfg, AblationSpec(), seed=2, zero_head=False)
        gen = torch.Generator().manual_seed(4)
        seq = torch.rand(1, 7, 3, 8, 8, generator=gen)
        with torch.no_grad():
            outs_f, outs_b, _ = model.propagate(seq)
            late = seq.clone()
            late[:, 5] = torch.rand(3, 8, 8, generator=gen)
            outs_f2, _, _ = model.propagate(late)
            early = seq.clone()
            early[:, 1] = torch.rand(3, 8, 8, generator=gen)
            _, outs_b2, _ = model.propagate(early)
        # forward outputs up to t are a function of frames <= t+1 only
        for t in range(4):
            assert torch.equal(outs_f[t], outs_f2[t])
        assert not torch.equal(outs_f[5], outs_f2[5])
        # backward outputs at t are a function of frames >= t-1 only
        for t in range(3, 7):
            assert torch.equal(outs_b[t], outs_b2[t])
        assert not torch.equal(outs_b[1], outs_b2[1])

    def test_forward_is_deterministic(self, tiny_cfg):
        model, _ = build_model(tiny_cfg, AblationSpec(), seed=3, zero_head=False)
        x = torch.rand(3, 3, 16, 16)
        with torch.no_grad():
            assert torch.equal(model(x), model(x))

    def test_input_contracts(self, tiny_cfg):
        model, _ = build_model(tiny_cfg, AblationSpec(), seed=0)
        with pytest.raises(ContractError):
            model(torch.rand(1, 0, 3, 8, 8))
        bad = torch.rand(1, 3, 3, 8, 8)
        bad[0, 1, 0, 0, 0] = float("nan")
        with pytest.raises(ContractError):
            model(bad)

    def test_shared_directions(self):
        cfg = ModelConfig(width=6, attention_reduction=3, share_directions=True)
        shared, shared_report = build_model(cfg, AblationSpec(), seed=0)
        _, separate_report = build_model(
            ModelConfig(width=6, attention_reduction=3), AblationSpec(), seed=0
        )
        assert shared.forward_branch is shared.backward_branch
        assert shared_report.total < separate_report.total
        with torch.no_grad():
            out = shared(torch.rand(3, 3, 8, 8))
        assert out.shape == (3, 3, 32, 32)


def expected_total(w, reduction=3, rg=True, tam=True, asm="full",
                   subst_depth=6, sup_res=3, recon_res=3, recon_ch=48):
    """Shape-walk oracle: recompute the parameter count from the wiring."""
    def conv(ci, co, k):
        return k * k * ci * co + co

    def resblock():
        return 2 * conv(w, w, 3)

    def attention():
        return conv(w, w // reduction, 1) + conv(w // reduction, w, 1)

    def direction():
        total = conv(3, w, 3) + 3 * conv(w, w, 3) if rg else 0      # reference
        total += conv(9, w, 3) + 3 * conv(w, w, 3)                  # fusion
        if tam:
            total += conv(w, w, 3) + conv(2 * w - 3, w, 3)
        else:
            total += conv(w, w, 3)
        total += conv((4 if rg else 3) * w, w, 3)                   # aggregate
        if asm == "substitute":
            total += subst_depth * resblock()
        else:
            att = attention() if asm == "full" else 0
            total += conv(w, w, 1) + conv(w, w, 3) + att            # mb1
            total += conv(2 * w, w, 1) + conv(w, w, 3) + att        # mb2
            total += conv(3 * w, w, 3) + sup_res * resblock()
        total += 2 * conv(w, w, 3)                                  # heads
        return total

    recon = conv((3 if rg else 2) * w, w, 3) + recon_res * resblock() + conv(w, recon_ch, 3)
    return 2 * direction() + recon


class TestParameterAudit:
    @pytest.mark.parametrize("width", [6, 39])
    def test_count_matches_shape_walk(self, width):
        cfg = ModelConfig(width=width, attention_reduction=3)
        for spec in ablation_grid().values():
            _, report = build_model(cfg, spec, seed=0)
            expected = expected_total(
                width,
                rg=spec.reference_group,
                tam=spec.tam,
                asm=spec.asm_mode,
                subst_depth=cfg.substitute_depth,
            )
            assert report.total == expected, spec.label

    def test_total_is_sum_of_groups(self):
        _, report = build_model(ModelConfig(), AblationSpec(), seed=0)
        assert report.total == sum(report.groups.values())

    def test_single_cell_arithmetic(self):
        from rgvsr.blocks import Cell

        cell = Cell(6, 6)
        assert sum(p.numel() for p in cell.parameters()) == 6 * 6 * 9 + 6

    def test_budget_and_calibration(self):
        _, report = build_model(ModelConfig(), AblationSpec(), seed=0)
        assert report.total <= 1_000_000
        assert abs(report.total - 878_000) <= 0.15 * 878_000

    def test_variant_ordering(self):
        totals = {}
        for label, spec in ablation_grid().items():
            _, report = build_model(ModelConfig(), spec, seed=0)
            totals[label] = report.total
        assert (
            totals["no_rg_no_tam"] < totals["no_rg"] < totals["no_tam"] < totals["full"]
        )
        assert totals["asm_substitute"] > totals["full"] >= totals["asm_no_attention"]


class TestConfigValidation:
    def test_width_must_be_multiple_of_three(self):
        with pytest.raises(ConfigError):
            ModelConfig(width=40)

    def test_reduction_must_divide_width(self):
        with pytest.raises(ConfigError):
            ModelConfig(width=39, attention_reduction=4)

    def test_recon_channels_tied_to_scale(self):
        with pytest.raises(ConfigError):
            ModelConfig(recon_channels=32)


class TestTiling:
    def test_tiled_close_on_constant_input(self, tiny_cfg):
        # tiling is an approximation: the recurrence spreads border effects
        # past the 8-pixel overlap, so seams deviate slightly from the
        # whole-frame pass even on a constant image
        model, _ = build_model(tiny_cfg, AblationSpec(), seed=0, zero_head=False)
        seq = torch.full((3, 3, 40, 40), 0.5)
        whole = super_resolve(model, seq)
        tiled = super_resolve(model, seq, tile=32, overlap=8)
        assert tiled.shape == whole.shape
        assert (tiled - whole).abs().mean() <= 1e-3
        assert (tiled - whole).abs().max() <= 0.05

    def test_tiled_shape_and_interior_agreement(self, tiny_cfg):
        model, _ = build_model(tiny_cfg, AblationSpec(), seed=0, zero_head=False)
        seq = torch.rand(2, 3, 48, 48)
        whole = super_resolve(model, seq)
        tiled = super_resolve(model, seq, tile=32, overlap=8)
        assert tiled.shape == (2, 3, 192, 192)
        assert (tiled - whole).abs().mean() < 0.02

    def test_tile_must_exceed_overlap(self, tiny_cfg):
        model, _ = build_model(tiny_cfg, AblationSpec(), seed=0)
        with pytest.raises(ConfigError):
            super_resolve(model, torch.rand(1, 3, 32, 32), tile=16, overlap=8)
