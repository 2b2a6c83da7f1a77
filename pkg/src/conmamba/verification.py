"""Finite-difference verification battery over every differentiable op.

Each entry compares tape gradients against float64 central differences and
reports the worst relative error |a - n| / (|a| + |n| + 1e-12). The battery
backs both the ``gradcheck`` CLI command and the test suite.

Deep compositions get their scan step sizes conditioned upward (softplus
output in [0.3, 1.0]): at the training init the steps are small enough that
some transition-diagonal gradients drop below the finite-difference noise
floor, and the relative metric would compare noise against noise.
"""

from __future__ import annotations

import numpy as np

from . import ctc, tensor as tz
from .encoder import EncoderConfig, conmamba_block, init_encoder, named_params
from .ssm import init_mamba_block, mamba_block, selective_scan
from .tensor import Tensor, grad_check, tsum


def _t(rng, shape, lo=None, hi=None):
    if lo is None:
        data = rng.normal(size=shape)
    else:
        data = rng.uniform(lo, hi, size=shape)
    return Tensor(data, requires_grad=True, dtype=np.float64)


def _weight(rng, shape):
    return Tensor(rng.normal(size=shape), dtype=np.float64)


def condition_scan_steps(params, seed=1234):
    rng = np.random.default_rng(seed)
    for blk in params.blocks:
        for m in (blk.mamba_fwd, blk.mamba_bwd):
            dt = rng.uniform(0.3, 1.0, size=m.core.delta_bias.shape)
            m.core.delta_bias.data[:] = dt + np.log(-np.expm1(-dt))


def op_checks():
    """(name, tolerance, callable) for every primitive differentiable op."""
    rng = np.random.default_rng(0)
    checks = []

    def weighted(f, w):
        return lambda *ts: tsum(tz.mul(f(*ts), w))

    x34, w34 = _t(rng, (3, 4)), _weight(rng, (3, 4))
    checks.append(("matmul", 1e-6, lambda: grad_check(
        weighted(lambda a, b: tz.matmul(a, b), _weight(rng, (3, 5))),
        [_t(rng, (3, 4)), _t(rng, (4, 5))])))
    checks.append(("add_broadcast", 1e-6, lambda: grad_check(
        weighted(tz.add, w34), [_t(rng, (3, 4)), _t(rng, (4,))])))
    checks.append(("mul_broadcast", 1e-6, lambda: grad_check(
        weighted(tz.mul, w34), [_t(rng, (3, 4)), _t(rng, (4,))])))
    for name, op in (("softplus", tz.softplus), ("silu", tz.silu), ("gelu", tz.gelu),
                     ("sigmoid", tz.sigmoid), ("exp", tz.exp)):
        checks.append((name, 1e-7, lambda op=op: grad_check(
            weighted(op, w34), [_t(rng, (3, 4))])))
    checks.append(("log", 1e-7, lambda: grad_check(
        weighted(tz.log, w34), [_t(rng, (3, 4), 0.5, 2.0)])))
    checks.append(("layer_norm", 1e-4, lambda: grad_check(
        weighted(lambda x, g, b: tz.layer_norm(x, g, b), w34),
        [_t(rng, (3, 4)), _t(rng, (4,), 0.8, 1.2), _t(rng, (4,))])))
    checks.append(("conv1d_causal", 1e-7, lambda: grad_check(
        weighted(lambda x, k, b: tz.conv1d_depthwise(x, k, b, causal=True), _weight(rng, (6, 2))),
        [_t(rng, (6, 2)), _t(rng, (3, 2)), _t(rng, (2,))])))
    checks.append(("conv1d_centered", 1e-7, lambda: grad_check(
        weighted(lambda x, k, b: tz.conv1d_depthwise(x, k, b, causal=False), _weight(rng, (6, 2))),
        [_t(rng, (6, 2)), _t(rng, (3, 2)), _t(rng, (2,))])))
    checks.append(("conv2d", 1e-7, lambda: grad_check(
        weighted(lambda x, w, b: tz.conv2d(x, w, b, stride=2), _weight(rng, (3, 3, 2))),
        [_t(rng, (2, 5, 4)), _t(rng, (3, 2, 3, 3)), _t(rng, (3,))])))
    checks.append(("logsumexp", 1e-7, lambda: grad_check(
        weighted(lambda x: tz.logsumexp(x, axis=1), _weight(rng, (4,))),
        [_t(rng, (4, 5))])))
    checks.append(("log_softmax", 1e-7, lambda: grad_check(
        weighted(tz.log_softmax, _weight(rng, (3, 5))), [_t(rng, (3, 5))])))
    checks.append(("sum_mean", 1e-9, lambda: grad_check(
        lambda x: tz.add(tsum(x), tz.tmean(x)), [_t(rng, (3, 4))])))
    checks.append(("reshape_transpose_slice_reverse", 1e-9, lambda: grad_check(
        weighted(lambda x: tz.reverse_time(tz.slice_last(tz.transpose(tz.reshape(x, (4, 3)), (1, 0)), 0, 3)),
                 _weight(rng, (3, 3))),
        [_t(rng, (3, 4))])))
    checks.append(("expand_cols", 1e-9, lambda: grad_check(
        weighted(lambda x: tz.expand_cols(x, 5), _weight(rng, (4, 5))), [_t(rng, (4, 1))])))
    checks.append(("dropout", 1e-9, lambda: grad_check(
        weighted(lambda x: tz.dropout(x, 0.4, np.random.default_rng(7), True), w34),
        [_t(rng, (3, 4))])))
    checks.append(("selective_scan", 1e-6, lambda: grad_check(
        weighted(selective_scan, _weight(rng, (5, 3))),
        [_t(rng, (5, 3)), _t(rng, (3, 2), -3.0, -0.2), _t(rng, (5, 2)),
         _t(rng, (5, 2)), _t(rng, (5, 3), 0.05, 0.8)])))
    checks.append(("ctc_loss", 1e-4, lambda: grad_check(
        lambda v: ctc.ctc_loss_t(tz.log_softmax(v), [1, 3]), [_t(rng, (5, 4))])))

    def mamba_check():
        p = init_mamba_block(4, n_state=2, dconv=3, rng=np.random.default_rng(25), dtype=np.float64)
        dt = np.random.default_rng(26).uniform(0.3, 1.0, size=p.core.delta_bias.shape)
        p.core.delta_bias.data[:] = dt + np.log(-np.expm1(-dt))
        x = _t(np.random.default_rng(27), (5, 4))
        leaves = [x, p.w_in, p.conv_kernel, p.conv_bias, p.w_out, p.core.log_a,
                  p.core.w_b, p.core.w_c, p.core.w_delta, p.core.delta_bias]
        w = _weight(np.random.default_rng(28), (5, 4))
        return grad_check(lambda *_: tsum(tz.mul(mamba_block(x, p), w)), leaves)

    checks.append(("mamba_block", 1e-3, mamba_check))
    return checks


def stack_check(num_layers=2, d_model=8, n_state=4, T=6, vocab_size=5):
    """End-to-end gradient check: ConMamba stack plus CTC head, float64."""
    cfg = EncoderConfig(num_layers=num_layers, d_model=d_model, ffn_dim=2 * d_model,
                        dropout=0.0, n_state=n_state, expand=2, dconv=4,
                        n_mels=16, vocab_size=vocab_size, subsample_channels=4,
                        conv_module_kernel=31)
    params = init_encoder(cfg, seed=5, dtype=np.float64)
    condition_scan_steps(params)
    x = Tensor(np.random.default_rng(6).normal(size=(T, d_model)),
               requires_grad=True, dtype=np.float64)
    target = [1, 3]
    leaves = [x] + [t for name, t in named_params(params).items()
                    if not name.startswith("subsample")]

    def run(*_):
        h = x
        for blk in params.blocks:
            h = conmamba_block(h, blk, cfg)
        logits = tz.add(tz.matmul(h, params.w_head), params.b_head)
        return ctc.ctc_loss_t(tz.log_softmax(logits), target)

    return grad_check(run, leaves)


def run_battery(include_stack=True, report=print):
    """Run all checks; returns True iff everything is inside tolerance."""
    ok = True
    for name, tol, fn in op_checks():
        err = fn()
        passed = err < tol
        ok &= passed
        report(f"{'PASS' if passed else 'FAIL'}  {name:<34} rel err {err:.3e}  (tol {tol:.0e})")
    if include_stack:
        err = stack_check()
        passed = err < 1e-3
        ok &= passed
        report(f"{'PASS' if passed else 'FAIL'}  {'conmamba_stack_2x_with_ctc_head':<34} rel err {err:.3e}  (tol 1e-03)")
    return ok
