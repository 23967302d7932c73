import pytest
import torch

from criticvio.encoders import LatentFeatures
from criticvio.errors import NonFiniteActivation, ShapeMismatch
from criticvio.pose_transformer import (
    FilmLayer,
    PoseTransformer,
    TransformerConfig,
)

torch.manual_seed(2)

CFG = TransformerConfig(
    layers=2,
    hidden=32,
    heads=4,
    dropout=0.0,
    iterations=4,
    feature_dim=24,
    noise_dim=8,
    context_dim=16,
    max_transitions=3,
)


def make_inputs(b=2, s=3, n=8, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    gated = LatentFeatures(
        flow=torch.randn(b, s, n, generator=g, dtype=dtype),
        imu_rot=torch.randn(b, s, n, generator=g, dtype=dtype),
        imu_trans=torch.randn(b, s, n, generator=g, dtype=dtype),
    )
    noise = torch.randn(b, s, 8, generator=g, dtype=dtype)
    context = torch.randn(b, s, 16, generator=g, dtype=dtype)
    return gated, noise, context


@pytest.fixture
def model():
    torch.manual_seed(4)
    m = PoseTransformer(CFG)
    m.eval()
    return m


def test_config_validates_heads():
    with pytest.raises(ValueError):
        TransformerConfig(hidden=30, heads=4)


def test_film_identity_at_init():
    film = FilmLayer(16, 32)
    h = torch.randn(2, 3, 32)
    ctx = torch.randn(2, 3, 16)
    assert torch.equal(film(h, ctx), h)


def test_film_beta_shifts_additively():
    film = FilmLayer(4, 8)
    with torch.no_grad():
        film.proj.bias[8:] = torch.arange(8.0)  # beta half only
    h = torch.randn(1, 2, 8)
    out = film(h, torch.zeros(1, 2, 4))
    assert torch.allclose(out, h + torch.arange(8.0), atol=1e-7)


def test_film_gradient_wrt_context_nonzero():
    film = FilmLayer(6, 12).double()
    with torch.no_grad():
        film.proj.weight.normal_(0, 0.1)
    h = torch.randn(1, 2, 12, dtype=torch.float64)
    ctx = torch.randn(1, 2, 6, dtype=torch.float64, requires_grad=True)
    film(h, ctx).sum().backward()
    assert ctx.grad.abs().sum() > 0
    # central finite difference against the analytic gradient
    eps = 1e-6
    direction = torch.randn(1, 2, 6, dtype=torch.float64)
    with torch.no_grad():
        plus = film(h, ctx + eps * direction).sum()
        minus = film(h, ctx - eps * direction).sum()
    numeric = float((plus - minus) / (2 * eps))
    analytic = float((ctx.grad * direction).sum())
    assert numeric == pytest.approx(analytic, rel=1e-6)


def test_identity_at_init_returns_head_bias(model):
    gated, noise, context = make_inputs()
    accum = torch.randn(2, 3, 6)
    delta = model.forward_delta(noise, gated, accum, context)
    expected = model.head.bias.detach().expand(2, 3, 6)
    assert torch.equal(delta, expected)


def test_forward_delta_shape_and_determinism(model):
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.05 * torch.randn_like(p))
    gated, noise, context = make_inputs()
    accum = torch.zeros(2, 3, 6)
    a = model.forward_delta(noise, gated, accum, context)
    b = model.forward_delta(noise, gated, accum, context)
    assert a.shape == (2, 3, 6)
    assert torch.equal(a, b)


def test_forward_delta_shape_checks(model):
    gated, noise, context = make_inputs()
    with pytest.raises(ShapeMismatch):
        model.forward_delta(noise[:, :, :4], gated, torch.zeros(2, 3, 6), context)
    with pytest.raises(ShapeMismatch):
        model.forward_delta(noise, gated, torch.zeros(2, 3, 5), context)
    with pytest.raises(ShapeMismatch):
        model.forward_delta(noise, gated, torch.zeros(2, 3, 6), context[:, :, :8])


def test_forward_delta_nonfinite_guard(model):
    gated, noise, context = make_inputs()
    with torch.no_grad():
        model.head.bias.fill_(float("nan"))
    with pytest.raises(NonFiniteActivation):
        model.forward_delta(noise, gated, torch.zeros(2, 3, 6), context)


def test_accumulator_feedback_is_live():
    torch.manual_seed(9)
    cfg = TransformerConfig(
        layers=1, hidden=16, heads=2, dropout=0.0, iterations=2,
        feature_dim=24, noise_dim=8, context_dim=16, max_transitions=3,
        zero_init_residual=False,
    )
    model = PoseTransformer(cfg).double().eval()
    gated, noise, context = make_inputs(dtype=torch.float64)
    accum = torch.randn(2, 3, 6, dtype=torch.float64, requires_grad=True)
    model.forward_delta(noise, gated, accum, context).mean().backward()
    assert accum.grad.abs().sum() > 0
    eps = 1e-6
    direction = torch.randn(2, 3, 6, dtype=torch.float64)
    with torch.no_grad():
        plus = model.forward_delta(noise, gated, accum + eps * direction, context).mean()
        minus = model.forward_delta(noise, gated, accum - eps * direction, context).mean()
    numeric = float((plus - minus) / (2 * eps))
    analytic = float((accum.grad * direction).sum())
    assert numeric == pytest.approx(analytic, rel=1e-5, abs=1e-10)


def test_iterate_single_iteration_equals_forward_delta(model):
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.05 * torch.randn_like(p))
    gated, noise, context = make_inputs()
    p_all = model.iterate(noise, gated, context, iterations=1)
    direct = model.forward_delta(noise, gated, torch.zeros(2, 3, 6), context)
    assert torch.equal(p_all[:, 0], direct)


def test_iterate_accumulator_invariant(model):
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.05 * torch.randn_like(p))
    gated, noise, context = make_inputs()
    p_all = model.iterate(noise, gated, context, iterations=4)
    assert p_all.shape == (2, 4, 3, 6)
    for i in range(1, 4):
        delta = model.forward_delta(noise, gated, p_all[:, i - 1], context)
        assert torch.allclose(p_all[:, i] - p_all[:, i - 1], delta, atol=1e-6)


def test_iterate_with_constant_delta_stub(model):
    constant = torch.full((2, 3, 6), 0.25)
    model.forward_delta = lambda noise, gated, accum, ctx: constant
    gated, noise, context = make_inputs()
    p_all = model.iterate(noise, gated, context, iterations=5)
    for i in range(5):
        assert torch.allclose(p_all[:, i], (i + 1) * constant, atol=1e-7)


def test_iterate_prefix_property(model):
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.05 * torch.randn_like(p))
    gated, noise, context = make_inputs(seed=11)
    long = model.iterate(noise, gated, context, iterations=16)
    short = model.iterate(noise, gated, context, iterations=4)
    assert torch.equal(long[:, :4], short)


def test_postln_flag_builds_and_runs():
    cfg = TransformerConfig(
        layers=1, hidden=16, heads=2, dropout=0.0, iterations=1,
        feature_dim=24, noise_dim=8, context_dim=16, max_transitions=3,
        post_ln=True,
    )
    model = PoseTransformer(cfg).eval()
    gated, noise, context = make_inputs()
    out = model.forward_delta(noise, gated, torch.zeros(2, 3, 6), context)
    assert out.shape == (2, 3, 6)
    assert torch.isfinite(out).all()
