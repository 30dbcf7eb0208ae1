"""Composite block semantics: residual, attention gates, non-local,
attention-assisted downsampling, and top-down feature fusion."""

import numpy as np
import pytest

from cstrlab import blocks, ops
from cstrlab.errors import ShapeError
from cstrlab.gradcheck import _revive_zeros, grad_check
from cstrlab.tensor import ParameterStore, Tensor


def _zero_params(store, fragment):
    """Zero every stored buffer whose name contains ``fragment``."""
    hit = 0
    for name in store.names():
        if fragment in name:
            store[name].data[...] = 0.0
            hit += 1
    assert hit > 0, f"no parameters matched {fragment!r}"


def _fd_block(build_and_apply, seed, sample=120):
    """Finite-difference audit of a freshly built block in float64."""
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    x_shape, forward = build_and_apply(store, rng)
    store.to_dtype(np.float64)
    _revive_zeros(store, rng)
    x = Tensor(rng.uniform(-1.0, 1.0, x_shape))
    proj = Tensor(rng.normal(size=forward(x).data.shape))

    def loss():
        return ops.reduce_sum(ops.mul(forward(x), proj))

    wrt = {"x": x}
    wrt.update({n: t for n, t in store.trainable_items()})
    report = grad_check(loss, wrt, sample=sample, seed=seed)
    assert report.passed, str(report)


# -------------------------------------------------------- residual block


def test_residual_zero_branch_is_relu_of_input():
    store = ParameterStore()
    rng = np.random.default_rng(0)
    block = blocks.ResidualBlock(store, "rb", rng, cin=4, cout=4)
    store["rb.conv2.w"].data[...] = 0.0
    x = Tensor(np.random.default_rng(1).normal(size=(2, 4, 5, 6)).astype(np.float32))
    y = block(x, training=True)
    assert np.array_equal(y.data, np.maximum(x.data, 0.0))


def test_residual_projection_changes_channels():
    store = ParameterStore()
    rng = np.random.default_rng(2)
    block = blocks.ResidualBlock(store, "rb", rng, cin=3, cout=8)
    assert "rb.proj.w" in store.names()
    x = Tensor(np.zeros((1, 3, 4, 4), np.float32))
    assert block(x, training=False).data.shape == (1, 8, 4, 4)


def test_residual_identity_shortcut_has_no_projection():
    store = ParameterStore()
    block = blocks.ResidualBlock(store, "rb", np.random.default_rng(3), 4, 4)
    assert block.proj is None
    assert not any(".proj" in n for n in store.names())


def test_residual_gradcheck():
    def build(store, rng):
        block = blocks.ResidualBlock(store, "rb", rng, cin=3, cout=5)
        return (1, 3, 4, 4), lambda x: block(x, training=True)

    _fd_block(build, seed=4)


# ------------------------------------------------------------------ cbam


def test_cbam_zero_gates_quarter_input():
    store = ParameterStore()
    rng = np.random.default_rng(5)
    gate = blocks.CBAM(store, "at", rng, channels=8, reduction=4)
    _zero_params(store, "at.")
    x = Tensor(rng.normal(size=(2, 8, 3, 5)).astype(np.float32))
    y = gate(x, training=False)
    assert np.array_equal(y.data, 0.25 * x.data)


def test_cbam_never_amplifies():
    store = ParameterStore()
    rng = np.random.default_rng(6)
    gate = blocks.CBAM(store, "at", rng, channels=8, reduction=4)
    for trial in range(5):
        x = Tensor(rng.normal(size=(1, 8, 4, 6)).astype(np.float32))
        y = gate(x, training=False)
        assert np.all(np.abs(y.data) <= np.abs(x.data) + 1e-7)


def test_cbam_preserves_shape():
    store = ParameterStore()
    gate = blocks.CBAM(store, "at", np.random.default_rng(7), 16, 4)
    x = Tensor(np.ones((3, 16, 2, 9), np.float32))
    assert gate(x, training=False).data.shape == x.data.shape


def test_cbam_gradcheck_through_both_gates():
    def build(store, rng):
        gate = blocks.CBAM(store, "at", rng, channels=8, reduction=4)
        return (1, 8, 4, 4), lambda x: gate(x, training=True)

    _fd_block(build, seed=8)


# -------------------------------------------------------------- non-local


def test_nonlocal_fresh_block_is_exact_identity():
    store = ParameterStore()
    rng = np.random.default_rng(9)
    nl = blocks.NonLocalBlock(store, "nl", rng, channels=4)
    store.to_dtype(np.float64)
    x = Tensor(rng.normal(size=(2, 4, 3, 3)))
    y = nl(x, training=False)
    assert np.array_equal(y.data, x.data)  # bit-level identity, zero fuser


def test_nonlocal_single_position_reduces_to_value_path():
    store = ParameterStore()
    rng = np.random.default_rng(10)
    nl = blocks.NonLocalBlock(store, "nl", rng, channels=6)
    _revive_zeros(store, rng)  # random fusing projection
    x = Tensor(rng.normal(size=(2, 6, 1, 1)).astype(np.float32))
    y = nl(x, training=False)
    # softmax over one position is 1, so the mixed value equals g(x)
    manual = ops.add(x, nl.wz(nl.g(x, False), False))
    assert np.allclose(y.data, manual.data, atol=1e-7)


def test_nonlocal_gradcheck():
    def build(store, rng):
        nl = blocks.NonLocalBlock(store, "nl", rng, channels=4)
        return (1, 4, 3, 3), lambda x: nl(x, training=True)

    _fd_block(build, seed=11)


# ------------------------------------------------------------------ sadm


def test_sadm_halves_even_spatial_dims():
    store = ParameterStore()
    sadm = blocks.SADM(store, "sd", np.random.default_rng(12), cin=6, cout=10)
    x = Tensor(np.random.default_rng(13).normal(size=(1, 6, 8, 8)).astype(np.float32))
    assert sadm(x, training=False).data.shape == (1, 10, 4, 4)


def test_sadm_rejects_odd_dims():
    store = ParameterStore()
    sadm = blocks.SADM(store, "sd", np.random.default_rng(14), cin=4, cout=4)
    with pytest.raises(ShapeError):
        sadm(Tensor(np.zeros((1, 4, 5, 8), np.float32)), training=False)
    with pytest.raises(ShapeError):
        sadm(Tensor(np.zeros((1, 4, 8, 7), np.float32)), training=False)


def test_sadm_with_identity_context_equals_strided_conv():
    store = ParameterStore()
    rng = np.random.default_rng(15)
    sadm = blocks.SADM(store, "sd", rng, cin=4, cout=6)
    x = Tensor(rng.normal(size=(2, 4, 6, 8)).astype(np.float32))
    got = sadm(x, training=False)
    direct = sadm.down(x, training=False)  # fresh fuser leaves context as identity
    assert np.array_equal(got.data, direct.data)


def test_sadm_variants_share_computation():
    outs = []
    for variant in ("a", "b"):
        store = ParameterStore()
        rng = np.random.default_rng(16)
        sadm = blocks.SADM(store, "sd", rng, cin=4, cout=4, variant=variant)
        x = Tensor(np.linspace(-1, 1, 4 * 16, dtype=np.float32).reshape(1, 4, 4, 4))
        outs.append(sadm(x, training=False).data)
    assert np.array_equal(outs[0], outs[1])


def test_sadm_gradcheck():
    def build(store, rng):
        sadm = blocks.SADM(store, "sd", rng, cin=4, cout=6)
        return (1, 4, 4, 4), lambda x: sadm(x, training=True)

    _fd_block(build, seed=17)


# ------------------------------------------------------------------- fpn


def test_fpn_zero_coarse_laterals_reduce_to_fine_path():
    store = ParameterStore()
    rng = np.random.default_rng(18)
    fpn = blocks.FPN(store, "fp", rng, c3=4, c4=6, c5=8, out_channels=5)
    _zero_params(store, ".lat4.")
    _zero_params(store, ".lat5.")
    x3 = Tensor(rng.normal(size=(1, 4, 8, 8)).astype(np.float32))
    x4 = Tensor(rng.normal(size=(1, 6, 4, 4)).astype(np.float32))
    x5 = Tensor(rng.normal(size=(1, 8, 2, 2)).astype(np.float32))
    got = fpn(x3, x4, x5, training=False)
    manual = fpn.smooth(fpn.lat3(x3, False), False)
    assert np.array_equal(got.data, manual.data)


def test_fpn_output_matches_fine_resolution():
    store = ParameterStore()
    fpn = blocks.FPN(store, "fp", np.random.default_rng(19), 4, 6, 8, 12)
    x3 = Tensor(np.zeros((2, 4, 8, 12), np.float32))
    x4 = Tensor(np.zeros((2, 6, 4, 6), np.float32))
    x5 = Tensor(np.zeros((2, 8, 2, 3), np.float32))
    assert fpn(x3, x4, x5, training=False).data.shape == (2, 12, 8, 12)


def test_fpn_gradcheck():
    rng = np.random.default_rng(20)
    store = ParameterStore()
    fpn = blocks.FPN(store, "fp", rng, c3=3, c4=4, c5=5, out_channels=4)
    store.to_dtype(np.float64)
    _revive_zeros(store, rng)
    x3 = Tensor(rng.uniform(-1, 1, (1, 3, 4, 4)))
    x4 = Tensor(rng.uniform(-1, 1, (1, 4, 2, 2)))
    x5 = Tensor(rng.uniform(-1, 1, (1, 5, 1, 1)))
    proj = Tensor(rng.normal(size=(1, 4, 4, 4)))

    def loss():
        return ops.reduce_sum(ops.mul(fpn(x3, x4, x5, training=True), proj))

    wrt = {"x3": x3, "x4": x4, "x5": x5}
    wrt.update({n: t for n, t in store.trainable_items()})
    report = grad_check(loss, wrt, sample=120, seed=20)
    assert report.passed, str(report)


# ----------------------------------------------- shape inference vs runs


def test_shape_inference_agrees_with_execution_on_random_configs():
    rng = np.random.default_rng(21)
    for trial in range(50):
        n = int(rng.integers(1, 3))
        cin = int(rng.integers(1, 6))
        cout = int(rng.integers(1, 6))
        h = 2 * int(rng.integers(1, 5))
        w = 2 * int(rng.integers(1, 5))
        store = ParameterStore()
        x = Tensor(rng.normal(size=(n, cin, h, w)).astype(np.float32))
        kind = trial % 4
        if kind == 0:
            block = blocks.ResidualBlock(store, "b", rng, cin, cout)
            predicted = blocks.residual_out_shape(n, cin, h, w, cout)
            got = block(x, training=False).data.shape
        elif kind == 1:
            c = max(4, cin)
            x = Tensor(rng.normal(size=(n, c, h, w)).astype(np.float32))
            block = blocks.CBAM(store, "b", rng, c, reduction=4)
            predicted = blocks.gate_out_shape(n, c, h, w)
            got = block(x, training=False).data.shape
        elif kind == 2:
            block = blocks.SADM(store, "b", rng, cin, cout)
            predicted = blocks.sadm_out_shape(n, cin, h, w, cout)
            got = block(x, training=False).data.shape
        else:
            block = blocks.NonLocalBlock(store, "b", rng, cin)
            predicted = blocks.gate_out_shape(n, cin, h, w)
            got = block(x, training=False).data.shape
        assert got == tuple(predicted), f"trial {trial}: {got} vs {predicted}"
