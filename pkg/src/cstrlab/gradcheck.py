"""Finite-difference verification of tape gradients.

Central differences with a symmetric relative-error criterion. Loss
functions passed in must be repeatable: same tensor contents in, same
scalar out. Batch normalization qualifies in both modes because its
forward output never depends on the running buffers it updates.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Union

import numpy as np

from .errors import GraphError
from .tensor import ParameterStore, Tape, Tensor


@dataclass
class CoordinateError:
    """Worst-offending coordinate of one checked tensor."""

    name: str
    index: int
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    tol: float
    eps: float
    per_input: dict[str, float] = field(default_factory=dict)
    worst: Optional[CoordinateError] = None

    @property
    def max_rel_err(self) -> float:
        return self.worst.rel_err if self.worst else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def __str__(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        return (
            f"grad_check {state}: max rel err {self.max_rel_err:.3e} "
            f"(tol {self.tol:.1e}) over {len(self.per_input)} tensors"
        )


def rel_error(a: float, n: float) -> float:
    return abs(a - n) / max(1e-8, abs(a) + abs(n))


def grad_check(
    loss_fn: Callable[[], Tensor],
    wrt: Union[Mapping[str, Tensor], list[Tensor]],
    eps: float = 1e-5,
    tol: float = 1e-4,
    sample: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients of ``loss_fn`` against central differences.

    ``wrt`` maps names to the tensors being checked (a plain list gets
    positional names). With ``sample`` set, only that many coordinates per
    tensor are perturbed, drawn without replacement from a generator
    seeded by ``seed`` and the tensor's position; otherwise every
    coordinate is checked. A coordinate whose first estimate misses the
    tolerance is retried once at eps/10, which discards spurious failures
    from stepping across a piecewise-linear kink.
    """
    if not isinstance(wrt, Mapping):
        wrt = {f"arg{i}": t for i, t in enumerate(wrt)}
    for t in wrt.values():
        t.requires_grad = True

    with Tape() as tape:
        loss = loss_fn()
        if loss.data.shape != ():
            raise GraphError(
                f"grad_check requires a scalar loss, got shape {loss.data.shape}"
            )
        table = tape.backward(loss)
    analytic = {
        name: table.get(t.id, np.zeros_like(t.data)) for name, t in wrt.items()
    }

    report = GradCheckReport(tol=tol, eps=eps)
    for pos, (name, t) in enumerate(wrt.items()):
        flat = t.data.reshape(-1)
        size = flat.shape[0]
        if sample is not None and sample < size:
            rng = np.random.default_rng(
                np.random.SeedSequence([0xFDC, seed, pos])
            )
            coords = np.sort(rng.choice(size, size=sample, replace=False))
        else:
            coords = range(size)
        aflat = np.asarray(analytic[name]).reshape(-1)
        worst_here = 0.0
        for i in coords:
            def central(step: float) -> float:
                orig = flat[i]
                flat[i] = orig + step
                up = float(loss_fn().data)
                flat[i] = orig - step
                down = float(loss_fn().data)
                flat[i] = orig
                return (up - down) / (2.0 * step)

            numeric = central(eps)
            err = rel_error(float(aflat[i]), numeric)
            if err >= tol:
                # Re-estimate at a finer step: a relu/maxpool kink inside
                # the original interval vanishes under refinement, a wrong
                # gradient does not.
                refined = central(eps / 10.0)
                refined_err = rel_error(float(aflat[i]), refined)
                if refined_err < err:
                    numeric, err = refined, refined_err
            if err >= worst_here:
                worst_here = err
            if report.worst is None or err > report.worst.rel_err:
                report.worst = CoordinateError(
                    name=name, index=int(i),
                    analytic=float(aflat[i]), numeric=numeric, rel_err=err,
                )
        report.per_input[name] = worst_here
    return report


# ---------------------------------------------------------------------------
# The standard per-family suite shared by the CLI and the test harness.


def _revive_zeros(store: ParameterStore, rng: np.random.Generator,
                  scale: float = 0.25) -> None:
    """Replace zero-initialized trainables with small random values.

    Gate and output projections start at zero by design; a check run
    against them would compare 0 with 0. Randomizing makes the gradient
    paths through those branches observable.
    """
    for name, t in store.items():
        if store.is_trainable(name) and not np.any(t.data):
            t.data = rng.normal(0.0, scale, size=t.data.shape).astype(
                t.data.dtype)


def _f64(rng: np.random.Generator, *shape: int, scale: float = 1.0) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape))


def _const(rng: np.random.Generator, shape) -> Tensor:
    return Tensor(rng.normal(0.0, 1.0, size=shape))


def standard_suite(seed: int = 0) -> "OrderedDict[str, Callable[[], GradCheckReport]]":
    """Name -> runnable finite-difference check, one per op family.

    Covers every primitive and every composite block plus both losses.
    All checks run in float64; composites project their outputs onto a
    fixed random direction to obtain a scalar and sample coordinates to
    stay fast.
    """
    from . import ops
    from .alphabet import encode
    from .blocks import (CBAM, FPN, NonLocalBlock, ResidualBlock, SADM)
    from .heads import build_head
    from .losses import ce_loss, ce_targets, ctc_loss
    from .model import ModelConfig, Recognizer

    def rng_for(idx: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([0xABC, seed, idx]))

    def proj_sum(out: Tensor, c: Tensor) -> Tensor:
        return ops.reduce_sum(ops.mul(out, c))

    def elementwise() -> GradCheckReport:
        rng = rng_for(1)
        x, y = _f64(rng, 3, 4), _f64(rng, 1, 4)
        c = _const(rng, (3, 4))

        def loss():
            z = ops.add(x, y)
            z = ops.mul(z, ops.sub(x, ops.scale(y, 0.7)))
            z = ops.add_scalar(z, 0.3)
            return proj_sum(z, c)

        return grad_check(loss, {"x": x, "y": y})

    def activations() -> GradCheckReport:
        rng = rng_for(2)
        # keep |x| away from relu's kink so central differences are valid
        mag = rng.uniform(0.2, 1.5, size=(4, 5))
        x = Tensor(mag * np.where(rng.random((4, 5)) < 0.5, -1.0, 1.0))
        c = _const(rng, (4, 5))

        def loss():
            return proj_sum(ops.mul(ops.relu(x), ops.sigmoid(x)), c)

        return grad_check(loss, {"x": x})

    def matmul_family() -> GradCheckReport:
        rng = rng_for(3)
        a, b = _f64(rng, 3, 4), _f64(rng, 4, 5)
        x, w, bias = _f64(rng, 3, 6), _f64(rng, 5, 6), _f64(rng, 5)
        p, q = _f64(rng, 2, 3, 4), _f64(rng, 2, 4, 5)
        c1, c2, c3 = _const(rng, (3, 5)), _const(rng, (3, 5)), _const(rng, (2, 3, 5))

        def loss():
            t = proj_sum(ops.matmul(a, b), c1)
            t = ops.add(t, proj_sum(ops.linear(x, w, bias), c2))
            return ops.add(t, proj_sum(ops.bmm(p, q), c3))

        return grad_check(loss, {"a": a, "b": b, "x": x, "w": w,
                                 "bias": bias, "p": p, "q": q})

    def reductions() -> GradCheckReport:
        rng = rng_for(4)
        x, y, z = _f64(rng, 3, 4, 5), _f64(rng, 4, 6), _f64(rng, 3, 5)
        c1, c2, c3 = _const(rng, (4,)), _const(rng, (4, 1)), _const(rng, (3,))

        def loss():
            t = proj_sum(ops.reduce_sum(x, axis=(0, 2)), c1)
            t = ops.add(t, proj_sum(ops.reduce_mean(y, axis=1, keepdims=True), c2))
            return ops.add(t, proj_sum(ops.reduce_max(z, axis=1), c3))

        return grad_check(loss, {"x": x, "y": y, "z": z})

    def softmax_family() -> GradCheckReport:
        rng = rng_for(5)
        x, y = _f64(rng, 3, 7), _f64(rng, 3, 7)
        c, d = _const(rng, (3, 7)), _const(rng, (3, 7))

        def loss():
            t = proj_sum(ops.softmax(x, axis=-1), c)
            return ops.add(t, proj_sum(ops.log_softmax(y, axis=-1), d))

        return grad_check(loss, {"x": x, "y": y})

    def structural() -> GradCheckReport:
        rng = rng_for(6)
        a, b = _f64(rng, 2, 3, 4), _f64(rng, 4, 2)
        c = _const(rng, (4, 5))

        def loss():
            t = ops.transpose(ops.reshape(a, (6, 4)), (1, 0))
            joined = ops.concat([t, b], axis=1)
            return proj_sum(ops.narrow(joined, 1, 1, 5), c)

        return grad_check(loss, {"a": a, "b": b})

    def conv_family() -> GradCheckReport:
        rng = rng_for(7)
        x, w, b = _f64(rng, 2, 3, 5, 6), _f64(rng, 4, 3, 3, 3), _f64(rng, 4)
        c = _const(rng, (2, 4, 4, 4))

        def loss():
            return proj_sum(
                ops.conv2d(x, w, b, stride=(1, 2), padding=(1, 0, 2, 1)), c)

        return grad_check(loss, {"x": x, "w": w, "b": b})

    def maxpool_family() -> GradCheckReport:
        rng = rng_for(8)
        x = _f64(rng, 2, 3, 5, 7)
        c = _const(rng, (2, 3, 3, 4))

        def loss():
            return proj_sum(ops.maxpool2d(x), c)

        return grad_check(loss, {"x": x})

    def avgpool_family() -> GradCheckReport:
        rng = rng_for(9)
        x = _f64(rng, 2, 3, 4, 5)
        c = _const(rng, (2, 3, 1, 1))

        def loss():
            return proj_sum(ops.global_avg_pool(x), c)

        return grad_check(loss, {"x": x})

    def upsample_family() -> GradCheckReport:
        rng = rng_for(10)
        x = _f64(rng, 2, 3, 3, 4)
        c = _const(rng, (2, 3, 6, 8))

        def loss():
            return proj_sum(ops.upsample_nearest2d(x, 2), c)

        return grad_check(loss, {"x": x})

    def batchnorm_family() -> GradCheckReport:
        rng = rng_for(11)
        x = _f64(rng, 3, 4, 5, 6)
        gamma = Tensor(rng.uniform(0.5, 1.5, size=4))
        beta = _f64(rng, 4, scale=0.3)
        rmean = Tensor(np.zeros(4))
        rvar = Tensor(np.ones(4))
        c = _const(rng, (3, 4, 5, 6))

        def loss():
            return proj_sum(
                ops.batchnorm2d(x, gamma, beta, rmean, rvar, training=True), c)

        return grad_check(loss, {"x": x, "gamma": gamma, "beta": beta})

    def _block_check(idx: int, build, x_shape, out_shape,
                     sample: int = 150) -> GradCheckReport:
        rng = rng_for(idx)
        store = ParameterStore()
        mod = build(store, rng)
        store.to_dtype(np.float64)
        _revive_zeros(store, rng)
        x = _f64(rng, *x_shape)
        c = _const(rng, out_shape)

        def loss():
            return proj_sum(mod(x, True), c)

        wrt = {"x": x}
        wrt.update({name: t for name, t in store.trainable_items()})
        return grad_check(loss, wrt, sample=sample, seed=seed)

    def residual_family() -> GradCheckReport:
        return _block_check(
            12, lambda s, r: ResidualBlock(s, "res", r, 3, 5),
            (2, 3, 6, 8), (2, 5, 6, 8))

    def cbam_family() -> GradCheckReport:
        return _block_check(
            13, lambda s, r: CBAM(s, "cbam", r, 6, reduction=2),
            (2, 6, 5, 6), (2, 6, 5, 6))

    def nonlocal_family() -> GradCheckReport:
        return _block_check(
            14, lambda s, r: NonLocalBlock(s, "nl", r, 4),
            (2, 4, 3, 4), (2, 4, 3, 4))

    def sadm_family() -> GradCheckReport:
        return _block_check(
            15, lambda s, r: SADM(s, "sadm", r, 4, 6),
            (2, 4, 4, 6), (2, 6, 2, 3))

    def fpn_family() -> GradCheckReport:
        rng = rng_for(16)
        store = ParameterStore()
        fpn = FPN(store, "fpn", rng, 4, 6, 8, 5)
        store.to_dtype(np.float64)
        x3, x4, x5 = (_f64(rng, 2, 4, 8, 12), _f64(rng, 2, 6, 4, 6),
                      _f64(rng, 2, 8, 2, 3))
        c = _const(rng, (2, 5, 8, 12))

        def loss():
            return proj_sum(fpn(x3, x4, x5, True), c)

        wrt = {"x3": x3, "x4": x4, "x5": x5}
        wrt.update({name: t for name, t in store.trainable_items()})
        return grad_check(loss, wrt, sample=200, seed=seed)

    def _head_check(idx: int, kind: str) -> GradCheckReport:
        return _block_check(
            idx, lambda s, r: build_head(kind, s, "head", r, 6, 5, 3, 7),
            (2, 6, 4, 5), (2, 3 if kind == "sppn" else 5, 7), sample=200)

    def ce_family() -> GradCheckReport:
        rng = rng_for(20)
        logits = _f64(rng, 2, 4, 37)
        targets = ce_targets([encode("ab"), encode("c")], 4)

        def loss():
            return ce_loss(logits, targets)

        return grad_check(loss, {"logits": logits})

    def ctc_family() -> GradCheckReport:
        rng = rng_for(21)
        logits = _f64(rng, 2, 5, 37)
        labels = [encode("ab"), encode("a")]

        def loss():
            return ctc_loss(logits, labels)

        return grad_check(loss, {"logits": logits})

    def full_model() -> GradCheckReport:
        rng = rng_for(22)
        model = Recognizer(ModelConfig(scale="toy", enhanced=True,
                                       head="sppn", objective="ce", seed=seed))
        model.params.to_dtype(np.float64)
        _revive_zeros(model.params, rng, scale=0.05)
        x = Tensor(rng.uniform(0.0, 1.0, size=(1, 1, 16, 64)))
        labels = [encode("cat")]

        def loss():
            return model.loss(model.forward(x, True), labels)

        names = model.params.names()
        picks = [names[i] for i in
                 np.linspace(0, len(names) - 1, 5).astype(int)]
        wrt = {"x": x}
        wrt.update({n: model.params[n] for n in picks
                    if model.params.is_trainable(n)})
        return grad_check(loss, wrt, sample=6, seed=seed)

    return OrderedDict([
        ("elementwise", elementwise),
        ("activations", activations),
        ("matmul", matmul_family),
        ("reductions", reductions),
        ("softmax", softmax_family),
        ("structural", structural),
        ("conv2d", conv_family),
        ("maxpool2d", maxpool_family),
        ("global_avg_pool", avgpool_family),
        ("upsample", upsample_family),
        ("batchnorm", batchnorm_family),
        ("residual_block", residual_family),
        ("cbam", cbam_family),
        ("nonlocal", nonlocal_family),
        ("sadm", sadm_family),
        ("fpn", fpn_family),
        ("head_shpn", lambda: _head_check(17, "shpn")),
        ("head_sepn", lambda: _head_check(18, "sepn")),
        ("head_sppn", lambda: _head_check(19, "sppn")),
        ("ce_loss", ce_family),
        ("ctc_loss", ctc_family),
        ("full_model", full_model),
    ])
