import pytest
import torch

from reflectsep.embedding import random_backbone
from reflectsep.errors import ConfigError, ShapeError
from reflectsep.generator import GeneratorConfig, forward, init_generator


@pytest.fixture(scope="module")
def backbone():
    return random_backbone(0)


def small(**kw):
    return GeneratorConfig(**{"base_channels": 8, **kw})


def test_same_seed_same_weights():
    assert init_generator(small(seed=1)).checksum() == init_generator(small(seed=1)).checksum()
    assert init_generator(small(seed=1)).checksum() != init_generator(small(seed=2)).checksum()


def test_global_rng_untouched():
    torch.manual_seed(0)
    expected = torch.rand(3)
    torch.manual_seed(0)
    init_generator(small())
    assert torch.equal(torch.rand(3), expected)


@pytest.mark.parametrize("size", [64, 224])
def test_output_shape_and_range(backbone, size):
    I = torch.rand(3, size, size)
    pyr = backbone.extract_features(I)
    net = init_generator(small())
    out = forward(net, I, I, pyr).detach()
    assert out.shape == (1, 3, size, size)
    assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0


def test_perturbed_parameters_change_output(backbone):
    I = torch.rand(3, 64, 64)
    pyr = backbone.extract_features(I)
    net = init_generator(small())
    a = forward(net, I, I, pyr)
    with torch.no_grad():
        net.head.weight.add_(0.1)
    assert not torch.equal(a, forward(net, I, I, pyr))


def test_every_parameter_receives_gradient(backbone):
    I = torch.rand(3, 64, 64)
    pyr = backbone.extract_features(I)
    net = init_generator(small())
    forward(net, I * 0.5, I, pyr).square().mean().backward()
    for name, p in net.named_parameters():
        assert p.grad is not None and float(p.grad.abs().sum()) > 0.0, name


def test_twin_generators_equal_size():
    a, b = init_generator(GeneratorConfig(seed=0)), init_generator(GeneratorConfig(seed=1))
    assert a.num_parameters() == b.num_parameters()
    assert a.checksum() != b.checksum()


def test_embedding_widens_encoder():
    with_pyr = init_generator(small())
    without = init_generator(small(embed_levels=()))
    assert with_pyr.num_parameters() > without.num_parameters()


def test_no_embedding_runs_without_pyramid():
    net = init_generator(small(embed_levels=()))
    I = torch.rand(3, 64, 64)
    assert forward(net, I, I, None).shape == (1, 3, 64, 64)


def test_missing_pyramid_rejected():
    I = torch.rand(3, 64, 64)
    with pytest.raises(ShapeError):
        forward(init_generator(small()), I, I, None)


def test_bad_sizes_rejected(backbone):
    net = init_generator(small())
    with pytest.raises(ShapeError):
        forward(net, torch.rand(3, 48, 48), torch.rand(3, 48, 48), None)
    with pytest.raises(ShapeError):
        forward(net, torch.rand(3, 64, 64), torch.rand(3, 32, 32), None)


@pytest.mark.parametrize("kw", [dict(depth=2), dict(base_channels=0), dict(norm_kind="group"),
                                dict(embed_levels=(1,))])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        init_generator(GeneratorConfig(**kw))


@pytest.mark.parametrize("norm", ["instance", "none"])
def test_norm_variants(backbone, norm):
    I = torch.rand(3, 64, 64)
    out = forward(init_generator(small(norm_kind=norm)), I, I, backbone.extract_features(I))
    assert out.shape == (1, 3, 64, 64)
