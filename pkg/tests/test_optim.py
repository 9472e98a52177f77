import numpy as np
import pytest

from qmamba import autodiff as ad
from qmamba.errors import ConfigError, NumericError
from qmamba.mamba import Param
from qmamba.optim import DEFAULT_GROUPS, AdamW, ParamGroup, default_groups


def _param(name, group, values):
    return Param(name, group, ad.Tensor(np.array(values, dtype=float), requires_grad=True))


def test_default_group_table_matches_contract():
    assert DEFAULT_GROUPS["in_proj"].lr == 3e-4
    assert DEFAULT_GROUPS["x_proj"].lr == 1e-4
    assert DEFAULT_GROUPS["out_proj"].lr == 3e-4
    assert DEFAULT_GROUPS["classical"].lr == 1e-3
    for name in ("in_proj", "x_proj", "out_proj"):
        assert DEFAULT_GROUPS[name].weight_decay == 0.0
    assert DEFAULT_GROUPS["classical"].weight_decay == 0.01


def test_group_validation():
    with pytest.raises(ConfigError):
        ParamGroup("conv", 1e-3, 0.0)
    with pytest.raises(ConfigError):
        ParamGroup("classical", -1.0, 0.0)


def test_zero_grad_zero_decay_leaves_params_unchanged():
    p = _param("w", "in_proj", [1.0, -2.0, 3.0])
    before = p.tensor.data.copy()
    opt = AdamW([p])
    p.tensor.grad = np.zeros(3)
    opt.step()
    np.testing.assert_array_equal(p.tensor.data, before)


def test_zero_grad_with_decay_scales_params():
    p = _param("w", "classical", [1.0, -2.0])
    groups = {"classical": ParamGroup("classical", 1e-3, 0.01)}
    opt = AdamW([p], groups=groups)
    p.tensor.grad = np.zeros(2)
    opt.step()
    np.testing.assert_allclose(p.tensor.data, np.array([1.0, -2.0]) * (1 - 1e-5))


def test_projection_groups_never_decay():
    params = [
        _param("a", "in_proj", [1.0]),
        _param("b", "x_proj", [1.0]),
        _param("c", "out_proj", [1.0]),
        _param("d", "classical", [1.0]),
    ]
    opt = AdamW(params)
    for p in params:
        p.tensor.grad = np.zeros(1)
    for _ in range(10):
        opt.step()
    for p in params[:3]:
        assert p.tensor.data[0] == 1.0  # exactly no decay applied
    assert params[3].tensor.data[0] == pytest.approx((1 - 1e-5) ** 10)


def test_constant_gradient_update_magnitude_approaches_lr():
    p = _param("w", "classical", [0.0])
    groups = {"classical": ParamGroup("classical", 1e-3, 0.0)}
    opt = AdamW([p], groups=groups)
    g = np.array([0.37])
    prev = p.tensor.data.copy()
    for _ in range(1000):
        prev = p.tensor.data.copy()
        p.tensor.grad = g.copy()
        opt.step()
    delta = abs(float(p.tensor.data[0] - prev[0]))
    assert delta == pytest.approx(1e-3, rel=1e-3)


def test_adamw_matches_reference_formula():
    rng = np.random.default_rng(0)
    w0 = rng.normal(size=4)
    p = _param("w", "classical", w0)
    groups = {"classical": ParamGroup("classical", 2e-3, 0.05)}
    opt = AdamW([p], groups=groups)
    m = np.zeros(4)
    v = np.zeros(4)
    ref = w0.copy()
    for t in range(1, 6):
        g = rng.normal(size=4)
        p.tensor.grad = g.copy()
        opt.step()
        ref *= 1 - 2e-3 * 0.05
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mhat = m / (1 - 0.9**t)
        vhat = v / (1 - 0.999**t)
        ref -= 2e-3 * mhat / (np.sqrt(vhat) + 1e-8)
        np.testing.assert_allclose(p.tensor.data, ref, atol=1e-15)


def test_nonfinite_gradient_aborts_naming_parameter():
    p = _param("layers.0.dt_w", "classical", [1.0])
    opt = AdamW([p])
    p.tensor.grad = np.array([np.nan])
    with pytest.raises(NumericError, match="layers.0.dt_w"):
        opt.step()


def test_missing_grad_treated_as_zero():
    p = _param("w", "in_proj", [2.0])
    opt = AdamW([p])
    opt.step()
    np.testing.assert_array_equal(p.tensor.data, [2.0])


def test_grad_clip_bounds_update():
    p = _param("w", "classical", [0.0])
    groups = {"classical": ParamGroup("classical", 1.0, 0.0)}
    opt_clipped = AdamW([p], groups=groups, grad_clip=1e-6)
    p.tensor.grad = np.array([1e3])
    opt_clipped.step()
    # with a tiny clipped gradient the very first Adam step is still lr-scale,
    # but moments must have seen the clipped value
    assert abs(opt_clipped._m[0][0]) <= 1e-6 * 0.1 + 1e-12


def test_default_groups_classical_override():
    groups = default_groups(classical_lr=5e-4)
    assert groups["classical"].lr == 5e-4
    assert groups["classical"].weight_decay == 0.01
    assert groups["in_proj"].lr == 3e-4


def test_unknown_group_rejected_at_construction():
    p = Param("w", "classical", ad.Tensor(np.ones(1), requires_grad=True))
    with pytest.raises(ConfigError):
        AdamW([p], groups={"in_proj": DEFAULT_GROUPS["in_proj"]})
