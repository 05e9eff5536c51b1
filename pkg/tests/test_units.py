import pytest
import torch

from coogan.core import DimensionError
from coogan.units import LSTU, STU, conv_param_count, make_unit, unit_param_count

from fd import max_relative_error


def inputs(c=4, hc=8, n=3, size=8, batch=2, dtype=torch.float32, seed=0):
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(batch, c, size, size, generator=g, dtype=dtype)
    h = torch.randn(batch, hc, size // 2, size // 2, generator=g, dtype=dtype)
    d = torch.randint(-1, 2, (batch, n), generator=g).to(dtype)
    return x, h, d


@pytest.mark.parametrize("kind", ["lstu", "stu"])
def test_shapes(kind):
    unit = make_unit(kind, 4, 8, 3)
    x, h, d = inputs()
    skip, hidden = unit(x, h, d)
    assert skip.shape == x.shape and hidden.shape == x.shape


def test_lstu_returns_single_path():
    skip, hidden = LSTU(4, 8, 3)(*inputs())
    assert skip is hidden


@pytest.mark.parametrize("kind", ["lstu", "stu"])
def test_shape_errors(kind):
    unit = make_unit(kind, 4, 8, 3)
    x, h, d = inputs()
    with pytest.raises(DimensionError):
        unit(x, h[:, :, :3], d)
    with pytest.raises(DimensionError):
        unit(x[:, :3], h, d)
    with pytest.raises(DimensionError):
        unit(x, h, d[:, :2])


def test_unknown_kind():
    with pytest.raises(ValueError):
        make_unit("gru", 4, 8, 3)


def test_lstu_reset_saturation_passes_input_through():
    unit = LSTU(4, 8, 3)
    with torch.no_grad():
        unit.w_reset.weight.zero_()
        unit.w_reset.bias.fill_(-1e4)
    x, h, d = inputs()
    out, _ = unit(x, h, d)
    assert torch.equal(out, x)


def test_lstu_gates_open_interval():
    unit = LSTU(4, 8, 3)
    _, h, d = inputs()
    f, r = unit.gates(h, d)
    for gate in (f, r):
        assert gate.min() > 0 and gate.max() < 1


def test_lstu_full_reset_bounded_by_tanh():
    unit = LSTU(4, 8, 3)
    with torch.no_grad():
        unit.w_reset.weight.zero_()
        unit.w_reset.bias.fill_(1e4)
    x, h, d = inputs()
    out, _ = unit(10 * x, h, d)
    assert out.abs().max() <= 1


def test_stu_update_saturation_returns_candidate_state():
    unit = STU(4, 8, 3)
    with torch.no_grad():
        unit.w_z.weight.zero_()
        unit.w_z.bias.fill_(-1e4)
    x, h, d = inputs()
    skip, _ = unit(x, h, d)
    s_hat = unit.w_transpose(torch.cat([h, d[:, :, None, None].expand(-1, -1, 4, 4)], dim=1))
    assert torch.equal(skip, s_hat)


@pytest.mark.parametrize("kind", ["lstu", "stu"])
def test_deterministic(kind):
    torch.manual_seed(3)
    unit = make_unit(kind, 4, 8, 3)
    x, h, d = inputs()
    a, _ = unit(x, h, d)
    b, _ = unit(x, h, d)
    assert torch.equal(a, b)


@pytest.mark.parametrize("kind", ["lstu", "stu"])
@pytest.mark.parametrize("c,hc,n", [(4, 8, 3), (16, 32, 13), (64, 128, 13)])
def test_param_count_closed_form(kind, c, hc, n):
    unit = make_unit(kind, c, hc, n)
    assert unit_param_count(kind, c, hc, n) == sum(p.numel() for p in unit.parameters())


def test_one_by_one_conv_count():
    for c in (1, 7, 64):
        assert conv_param_count(c, c, 1) == c * c + c
        assert conv_param_count(c, c, 1, bias=False) == c * c
        assert sum(p.numel() for p in torch.nn.Conv2d(c, c, 1).parameters()) == c * c + c


def test_lstu_uses_half_resolution_hidden_only_for_gates():
    # the gates depend on (h, d) alone, never on x
    unit = LSTU(4, 8, 3)
    x, h, d = inputs()
    f1, r1 = unit.gates(h, d)
    out1, _ = unit(x, h, d)
    out2, _ = unit(x + 1, h, d)
    f2, r2 = unit.gates(h, d)
    assert torch.equal(f1, f2) and torch.equal(r1, r2)
    assert not torch.equal(out1, out2)


@pytest.mark.parametrize("kind", ["lstu", "stu"])
def test_gradients_cover_inputs(kind):
    unit = make_unit(kind, 3, 4, 2).double()
    x, h, d = inputs(3, 4, 2, batch=1, dtype=torch.float64)
    x.requires_grad_(True)
    h.requires_grad_(True)
    w = torch.randn(x.shape, generator=torch.Generator().manual_seed(1), dtype=torch.float64)

    def loss():
        skip, hidden = unit(x, h, d)
        return (skip * w).sum() + (hidden ** 2).sum()

    assert max_relative_error(loss, [x, h]) < 1e-4
