"""Prediction head semantics: shared, per-position, and pooled variants."""

import numpy as np
import pytest

from cstrlab import ops
from cstrlab.errors import ConfigError, ShapeError
from cstrlab.gradcheck import grad_check
from cstrlab.heads import build_head
from cstrlab.tensor import ParameterStore, Tensor

VOCAB = 37


def _head(kind, cin=8, width=16, k=8, seed=0):
    store = ParameterStore()
    rng = np.random.default_rng(seed)
    head = build_head(kind, store, "head", rng, cin, width, k, VOCAB)
    return store, head


def _zero_weights_set_bias(store, bias_value):
    for name in store.names():
        if name.endswith(".w"):
            store[name].data[...] = 0.0
        elif name.endswith(".b"):
            store[name].data[...] = bias_value


# ------------------------------------------------------------ shared head


def test_shpn_zero_weights_emit_bias_everywhere():
    store, head = _head("shpn")
    bias = np.linspace(-1.0, 1.0, VOCAB).astype(np.float32)
    _zero_weights_set_bias(store, 0.0)
    store["head.proj.b"].data[...] = bias
    x = Tensor(np.random.default_rng(1).normal(size=(2, 8, 4, 16))
               .astype(np.float32))
    logits = head(x, training=False)
    assert logits.data.shape == (2, 16, VOCAB)
    for n in range(2):
        for pos in range(16):
            assert np.allclose(logits.data[n, pos], bias)


def test_shpn_emits_one_position_per_feature_column():
    _store, head = _head("shpn", width=16)
    x = Tensor(np.ones((1, 8, 4, 16), np.float32))
    assert head(x, training=False).data.shape[1] == 16


def test_shpn_position_depends_only_on_its_column():
    _store, head = _head("shpn", seed=2)
    rng = np.random.default_rng(3)
    base = rng.normal(size=(1, 8, 4, 16)).astype(np.float32)
    ref = head(Tensor(base.copy()), training=False).data
    poked = base.copy()
    poked[0, :, :, 5] += 1.0
    got = head(Tensor(poked), training=False).data
    changed = [w for w in range(16)
               if not np.allclose(got[0, w], ref[0, w], atol=1e-7)]
    assert changed == [5]


def test_shpn_rejects_other_widths():
    _store, head = _head("shpn", width=16)
    with pytest.raises(ShapeError):
        head(Tensor(np.zeros((1, 8, 4, 12), np.float32)), training=False)


# ------------------------------------------------------ per-position head


def test_sepn_zero_weights_emit_per_position_bias():
    store, head = _head("sepn", width=4)
    _zero_weights_set_bias(store, 0.0)
    for i in range(4):
        store[f"head.proj{i:02d}.b"].data[...] = float(i)
    x = Tensor(np.random.default_rng(4).normal(size=(1, 8, 2, 4))
               .astype(np.float32))
    logits = head(x, training=False).data
    for i in range(4):
        assert np.allclose(logits[0, i], float(i))


def test_sepn_distinguishes_identical_columns():
    _store, head = _head("sepn", width=4, seed=5)
    col = np.random.default_rng(6).normal(size=(1, 8, 2, 1)).astype(np.float32)
    x = Tensor(np.repeat(col, 4, axis=3))  # all columns identical
    logits = head(x, training=False).data
    assert not np.allclose(logits[0, 0], logits[0, 1])


def test_shpn_maps_identical_columns_identically():
    _store, head = _head("shpn", width=4, seed=7)
    col = np.random.default_rng(8).normal(size=(1, 8, 2, 1)).astype(np.float32)
    x = Tensor(np.repeat(col, 4, axis=3))
    logits = head(x, training=False).data
    for i in range(1, 4):
        assert np.allclose(logits[0, 0], logits[0, i])


def test_sepn_parameter_count_is_width_times_shared():
    shared_store, _ = _head("shpn", cin=8, width=16)
    sep_store, _ = _head("sepn", cin=8, width=16)
    assert sep_store.num_parameters() == 16 * shared_store.num_parameters()


def test_sepn_with_tied_weights_matches_shpn():
    shared_store, shpn = _head("shpn", cin=8, width=4, seed=9)
    sep_store, sepn = _head("sepn", cin=8, width=4, seed=10)
    for i in range(4):
        sep_store[f"head.proj{i:02d}.w"].data[...] = \
            shared_store["head.proj.w"].data
        sep_store[f"head.proj{i:02d}.b"].data[...] = \
            shared_store["head.proj.b"].data
    x = Tensor(np.random.default_rng(11).normal(size=(2, 8, 3, 4))
               .astype(np.float32))
    assert np.allclose(sepn(x, training=False).data,
                       shpn(x, training=False).data, atol=1e-7)


# ------------------------------------------------------------ pooled head


def test_sppn_shape_contract():
    _store, head = _head("sppn", cin=8, k=8)
    x = Tensor(np.ones((1, 8, 4, 16), np.float32))
    assert head(x, training=False).data.shape == (1, 8, VOCAB)


def test_sppn_width_invariance_through_pooling():
    _store, head = _head("sppn", cin=6, k=5, seed=12)
    chan = np.linspace(-1.0, 1.0, 6).astype(np.float32).reshape(1, 6, 1, 1)
    narrow = Tensor(np.broadcast_to(chan, (1, 6, 4, 32)).copy())
    wide = Tensor(np.broadcast_to(chan, (1, 6, 4, 48)).copy())
    assert np.allclose(head(narrow, training=False).data,
                       head(wide, training=False).data)


def test_sppn_invariant_to_spatial_permutation():
    _store, head = _head("sppn", cin=6, k=5, seed=13)
    rng = np.random.default_rng(14)
    x = rng.normal(size=(1, 6, 4, 8)).astype(np.float32)
    flat = x.reshape(1, 6, 32)
    perm = rng.permutation(32)
    shuffled = flat[:, :, perm].reshape(1, 6, 4, 8)
    a = head(Tensor(x), training=False).data
    b = head(Tensor(shuffled), training=False).data
    assert np.allclose(a, b, atol=1e-6)


def test_sppn_zero_weights_emit_bias():
    store, head = _head("sppn", cin=6, k=3)
    _zero_weights_set_bias(store, 0.5)
    x = Tensor(np.random.default_rng(15).normal(size=(2, 6, 4, 8))
               .astype(np.float32))
    assert np.allclose(head(x, training=False).data, 0.5)


# --------------------------------------------------------------- plumbing


def test_build_head_rejects_unknown_kind():
    with pytest.raises(ConfigError):
        build_head("dense", ParameterStore(), "h", np.random.default_rng(0),
                   8, 16, 8, VOCAB)


@pytest.mark.parametrize("kind", ["shpn", "sepn", "sppn"])
def test_head_gradcheck(kind):
    store = ParameterStore()
    rng = np.random.default_rng(16)
    head = build_head(kind, store, "head", rng, 4, 6, 5, 9)
    store.to_dtype(np.float64)
    x = Tensor(rng.uniform(-1, 1, (1, 4, 3, 6)))
    proj = Tensor(rng.normal(size=(1, head.positions, 9)))

    def loss():
        return ops.reduce_sum(ops.mul(head(x, training=True), proj))

    wrt = {"x": x}
    wrt.update({n: t for n, t in store.trainable_items()})
    report = grad_check(loss, wrt, sample=100, seed=16)
    assert report.passed, str(report)
