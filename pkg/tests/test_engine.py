import math
import statistics

import pytest
import torch

from reflectsep.config import EngineConfig
from reflectsep.embedding import random_backbone
from reflectsep.engine import (
    Separator,
    alpha_to_raw,
    blend,
    build_generators,
    constrain_alpha,
    init_state,
    resolve_backbone,
    separate,
    step,
)
from reflectsep.errors import ConfigError, DegenerateInputError, SeparationDiverged
from reflectsep.metrics import synthesize_mixture

SMALL = dict(image_size=64, backbone_source="random", base_channels=8)


@pytest.fixture(scope="module")
def backbone():
    return random_backbone(0)


@pytest.fixture(scope="module")
def mixture(photos):
    return synthesize_mixture(photos["astronaut"], photos["chelsea"], 2.0, 0.3)


class TestAlpha:
    def test_midpoint(self):
        assert float(constrain_alpha(0.0)) == pytest.approx(0.25)

    @pytest.mark.parametrize("raw", [-1e6, -50.0, 0.0, 3.0, 50.0, 1e6])
    def test_bounded(self, raw):
        a = float(constrain_alpha(raw))
        assert 0.0 <= a <= 0.5

    @pytest.mark.parametrize("alpha", [0.01, 0.1, 0.25, 0.4, 0.49])
    def test_round_trip(self, alpha):
        assert float(constrain_alpha(alpha_to_raw(alpha))) == pytest.approx(alpha, abs=1e-12)

    def test_init_value(self):
        assert float(constrain_alpha(alpha_to_raw(0.1))) == pytest.approx(0.1)

    def test_non_finite(self):
        with pytest.raises(FloatingPointError):
            constrain_alpha(float("nan"))

    def test_blend_example(self):
        one = torch.ones(3, 4, 4)
        B, R = blend(one, one, 0.1)
        assert torch.allclose(B, torch.full_like(one, 0.9)) and torch.allclose(R, torch.full_like(one, 0.1))

    def test_blend_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            blend(torch.ones(1), torch.ones(1), 0.6)

    def test_alpha_gradient_flows(self):
        raw = torch.tensor(alpha_to_raw(0.1), requires_grad=True)
        B, R = blend(torch.ones(3), torch.full((3,), 0.5), constrain_alpha(raw))
        (B.sum() + R.sum()).backward()
        assert raw.grad is not None and float(raw.grad) != 0.0


def _setup(mixture, backbone, **kw):
    cfg = EngineConfig(iterations=50, **{**SMALL, **kw})
    G1, G2 = build_generators(cfg)
    I = mixture.unsqueeze(0)
    pyr = backbone.extract_features(I)
    state = init_state(I, G1, G2, cfg.iterations, learning_rate=cfg.learning_rate)
    return cfg, G1, G2, I, pyr, state


class TestStep:
    def test_initial_state(self, mixture, backbone):
        _, _, _, I, _, st = _setup(mixture, backbone)
        assert torch.equal(st.B_est, I) and torch.equal(st.R_est, I)
        # zero cross-feedback at the first iteration
        assert float(st.B_cross.abs().max()) == 0.0 and float(st.R_cross.abs().max()) == 0.0
        assert st.alpha == pytest.approx(0.1)

    def test_cross_identity_and_counter(self, mixture, backbone):
        cfg, G1, G2, I, pyr, st = _setup(mixture, backbone)
        for t in range(1, 4):
            step(st, I, G1, G2, pyr, cfg.loss_weights())
            assert st.t == t
            assert torch.equal(st.B_cross, I - st.R_est)
            assert torch.equal(st.R_cross, I - st.B_est)
            assert 0.0 < st.alpha < 0.5

    def test_zero_learning_rate_keeps_parameters(self, mixture, backbone):
        cfg, G1, G2, I, pyr, _ = _setup(mixture, backbone)
        st = init_state(I, G1, G2, 5, learning_rate=0.0, weight_decay=0.0)
        before = (G1.checksum(), G2.checksum(), float(st.alpha_raw.detach()))
        step(st, I, G1, G2, pyr, cfg.loss_weights())
        assert (G1.checksum(), G2.checksum(), float(st.alpha_raw.detach())) == before

    def test_loss_decreases(self, mixture, backbone):
        sep = Separator(mixture, EngineConfig(iterations=50, **SMALL), backbone)
        totals = [r.total for r in sep.run().loss_history]
        assert statistics.median(totals[-10:]) < statistics.median(totals[:10])

    def test_nan_guard(self, mixture, backbone):
        sep = Separator(mixture, EngineConfig(iterations=5, **SMALL), backbone)
        sep.step()
        last = sep.state.last_report
        with torch.no_grad():
            sep.G1.head.bias.fill_(float("nan"))
        with pytest.raises(SeparationDiverged) as info:
            sep.step()
        assert info.value.iteration == 2
        assert info.value.last_report is last

    def test_disabled_alpha_fixed(self, mixture, backbone):
        res = separate(mixture, EngineConfig(iterations=3, disable_alpha=True, **SMALL), backbone)
        assert res.alpha_history == [0.5, 0.5, 0.5]

    def test_self_feedback_when_cross_disabled(self, mixture, backbone):
        sep = Separator(mixture, EngineConfig(iterations=3, disable_cross=True, **SMALL), backbone)
        sep.run()
        assert not sep.state.cross_feedback
        assert all(r.cross == 0.0 for r in sep.history)


class TestSeparate:
    def test_reproducible(self, mixture, backbone):
        cfg = EngineConfig(iterations=10, seed=3, **SMALL)
        a, b = separate(mixture, cfg, backbone), separate(mixture, cfg, backbone)
        assert [r.as_dict() for r in a.loss_history] == [r.as_dict() for r in b.loss_history]
        assert torch.equal(a.background, b.background)

    def test_seed_changes_run(self, mixture, backbone):
        a = separate(mixture, EngineConfig(iterations=2, seed=0, **SMALL), backbone)
        b = separate(mixture, EngineConfig(iterations=2, seed=1, **SMALL), backbone)
        assert a.loss_history[-1].total != b.loss_history[-1].total

    def test_result_fields(self, mixture, backbone):
        res = separate(mixture, EngineConfig(iterations=4, **SMALL), backbone)
        assert res.background.shape == res.reflection.shape == (3, 64, 64)
        assert res.iterations_run == 4 == len(res.loss_history) == len(res.alpha_history)
        assert res.final_alpha == res.alpha_history[-1]
        assert float(res.background.min()) >= 0 and float(res.reflection.max()) <= 1

    def test_grayscale_input(self, backbone):
        res = separate(torch.rand(1, 64, 64), EngineConfig(iterations=1, **SMALL), backbone)
        assert res.background.shape == (3, 64, 64)

    def test_zero_iterations(self, mixture, backbone):
        res = separate(mixture, EngineConfig(iterations=0, **SMALL), backbone)
        assert res.iterations_run == 0 and torch.equal(res.background, mixture)

    def test_bad_size(self, backbone):
        with pytest.raises(DegenerateInputError):
            separate(torch.rand(3, 40, 40), EngineConfig(iterations=1, **SMALL), backbone)

    def test_without_embedding(self, mixture):
        res = separate(mixture, EngineConfig(iterations=2, disable_embedding=True, **SMALL))
        assert all(math.isfinite(r.total) for r in res.loss_history)

    @pytest.mark.slow
    def test_reconstruction_error_shrinks(self, mixture, backbone):
        # measured at lr 1e-4: about 0.18 after 25 iterations, 0.095 after 300
        sep = Separator(mixture, EngineConfig(iterations=300, **{**SMALL, "base_channels": 32}), backbone)
        errs = []
        for t in range(300):
            sep.step()
            if (t + 1) % 50 == 0:
                st = sep.state
                errs.append(float((st.B_est + st.R_est - st.I).abs().mean()))
        assert errs == sorted(errs, reverse=True)
        assert errs[-1] <= 0.1


class TestBackboneResolution:
    def test_places_without_weights(self):
        with pytest.raises(ConfigError):
            resolve_backbone(EngineConfig(backbone_source="places365"))

    def test_random(self):
        assert resolve_backbone(EngineConfig(backbone_source="random")).checksum() == random_backbone(0).checksum()

    def test_disabled(self):
        assert resolve_backbone(EngineConfig(disable_embedding=True)) is None
