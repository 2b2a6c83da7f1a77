"""ConMamba encoder: CNN subsampler, macaron mixing blocks, log-softmax head.

Block layout (post-norm macaron):

    x1 = x  + 0.5 * FFN_1(x)
    x2 = x1 + BiMamba(x1)
    x3 = x2 + ConvModule(x2)
    y  = LayerNorm(x3 + 0.5 * FFN_2(x3))

The two FFNs do not share parameters. BiMamba supplies global (bidirectional)
context in place of self-attention; the convolution module supplies local
patterns. Dropout sits after each FFN's inner activation and after the
BiMamba / ConvModule branch outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tz
from .ssm import MambaBlockParams, bimamba, init_mamba_block
from .tensor import Tensor


class EmptyInputError(ValueError):
    """Raised when a zero-length feature sequence reaches the encoder."""


@dataclass
class EncoderConfig:
    num_layers: int = 18
    d_model: int = 256
    ffn_dim: int = 1024
    dropout: float = 0.1
    n_state: int = 16
    expand: int = 2
    dconv: int = 4
    n_mels: int = 80
    vocab_size: int = 32
    subsample_channels: int = 64
    conv_module_kernel: int = 31
    layer_norm_eps: float = 1e-5

    def __post_init__(self):
        for name in ("num_layers", "d_model", "ffn_dim", "n_state", "expand",
                     "dconv", "n_mels", "subsample_channels", "conv_module_kernel"):
            if getattr(self, name) <= 0:
                raise ValueError(f"EncoderConfig.{name} must be positive")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("EncoderConfig.dropout must be in [0, 1)")
        if self.vocab_size < 4:
            raise ValueError("EncoderConfig.vocab_size must be >= 4 (blank, BOS, EOS, and at least one symbol)")

    @property
    def d_inner(self):
        return self.expand * self.d_model


@dataclass
class FeedForwardParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class ConvModuleParams:
    w_pw1: Tensor   # [d, 2d] pointwise expansion feeding the GLU
    b_pw1: Tensor
    dw_kernel: Tensor  # [k, d] centered depthwise conv
    dw_bias: Tensor
    ln_gamma: Tensor
    ln_beta: Tensor
    w_pw2: Tensor   # [d, d]
    b_pw2: Tensor


@dataclass
class ConMambaBlockParams:
    ffn1: FeedForwardParams
    mamba_fwd: MambaBlockParams
    mamba_bwd: MambaBlockParams
    conv: ConvModuleParams
    ffn2: FeedForwardParams
    ln_gamma: Tensor
    ln_beta: Tensor


@dataclass
class SubsamplerParams:
    w_conv1: Tensor  # [C, 1, 3, 3]
    b_conv1: Tensor
    w_conv2: Tensor  # [C, C, 3, 3]
    b_conv2: Tensor
    w_proj: Tensor   # [C * ceil(ceil(n_mels/2)/2), d_model]
    b_proj: Tensor


@dataclass
class EncoderParams:
    subsampler: SubsamplerParams
    blocks: list[ConMambaBlockParams] = field(default_factory=list)
    w_head: Tensor = None  # [d_model, vocab_size]
    b_head: Tensor = None


@dataclass
class EncoderOutput:
    embeddings: Tensor  # [T', d_model]
    log_probs: Tensor   # [T', vocab_size]
    out_length: int


def _linear_init(rng, fan_in, fan_out, dtype):
    w = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out))
    return Tensor(w, requires_grad=True, dtype=dtype), Tensor(np.zeros(fan_out), requires_grad=True, dtype=dtype)


def _init_ffn(rng, d_model, ffn_dim, dtype):
    w1, b1 = _linear_init(rng, d_model, ffn_dim, dtype)
    w2, b2 = _linear_init(rng, ffn_dim, d_model, dtype)
    return FeedForwardParams(w1, b1, w2, b2)


def _init_conv_module(rng, d_model, kernel, dtype):
    w_pw1, b_pw1 = _linear_init(rng, d_model, 2 * d_model, dtype)
    dw = rng.normal(0.0, 1.0 / math.sqrt(kernel), size=(kernel, d_model))
    w_pw2, b_pw2 = _linear_init(rng, d_model, d_model, dtype)
    kw = dict(requires_grad=True, dtype=dtype)
    return ConvModuleParams(
        w_pw1=w_pw1, b_pw1=b_pw1,
        dw_kernel=Tensor(dw, **kw), dw_bias=Tensor(np.zeros(d_model), **kw),
        ln_gamma=Tensor(np.ones(d_model), **kw), ln_beta=Tensor(np.zeros(d_model), **kw),
        w_pw2=w_pw2, b_pw2=b_pw2,
    )


def _init_block(rng, cfg, dtype):
    kw = dict(requires_grad=True, dtype=dtype)
    return ConMambaBlockParams(
        ffn1=_init_ffn(rng, cfg.d_model, cfg.ffn_dim, dtype),
        mamba_fwd=init_mamba_block(cfg.d_model, cfg.n_state, cfg.expand, cfg.dconv, rng, dtype),
        mamba_bwd=init_mamba_block(cfg.d_model, cfg.n_state, cfg.expand, cfg.dconv, rng, dtype),
        conv=_init_conv_module(rng, cfg.d_model, cfg.conv_module_kernel, dtype),
        ffn2=_init_ffn(rng, cfg.d_model, cfg.ffn_dim, dtype),
        ln_gamma=Tensor(np.ones(cfg.d_model), **kw),
        ln_beta=Tensor(np.zeros(cfg.d_model), **kw),
    )


def subsampled_width(n):
    """Length after one stride-2 "same" conv: ceil(n / 2)."""
    return (n - 1) // 2 + 1


def subsampled_length(T):
    """Output frame count of the two-stage subsampler (roughly T / 4)."""
    return subsampled_width(subsampled_width(T))


def init_encoder(cfg, seed=0, dtype=np.float32):
    rng = np.random.default_rng([int(seed), 0])
    C = cfg.subsample_channels
    kw = dict(requires_grad=True, dtype=dtype)
    mel_out = subsampled_width(subsampled_width(cfg.n_mels))
    w_proj, b_proj = _linear_init(rng, C * mel_out, cfg.d_model, dtype)
    sub = SubsamplerParams(
        w_conv1=Tensor(rng.normal(0.0, 1.0 / 3.0, size=(C, 1, 3, 3)), **kw),
        b_conv1=Tensor(np.zeros(C), **kw),
        w_conv2=Tensor(rng.normal(0.0, 1.0 / math.sqrt(9 * C), size=(C, C, 3, 3)), **kw),
        b_conv2=Tensor(np.zeros(C), **kw),
        w_proj=w_proj, b_proj=b_proj,
    )
    blocks = [_init_block(rng, cfg, dtype) for _ in range(cfg.num_layers)]
    w_head, b_head = _linear_init(rng, cfg.d_model, cfg.vocab_size, dtype)
    return EncoderParams(subsampler=sub, blocks=blocks, w_head=w_head, b_head=b_head)


def named_params(params):
    """Stable name -> Tensor map; the order defines checkpoint layout."""
    out = {}

    def put(prefix, **tensors):
        for key, t in tensors.items():
            out[f"{prefix}.{key}"] = t

    s = params.subsampler
    put("subsample", conv1_w=s.w_conv1, conv1_b=s.b_conv1,
        conv2_w=s.w_conv2, conv2_b=s.b_conv2, proj_w=s.w_proj, proj_b=s.b_proj)
    for i, blk in enumerate(params.blocks):
        put(f"block{i}.ffn1", w1=blk.ffn1.w1, b1=blk.ffn1.b1, w2=blk.ffn1.w2, b2=blk.ffn1.b2)
        for tag, m in (("fwd", blk.mamba_fwd), ("bwd", blk.mamba_bwd)):
            put(f"block{i}.mamba_{tag}", w_in=m.w_in, conv_kernel=m.conv_kernel,
                conv_bias=m.conv_bias, w_out=m.w_out)
            put(f"block{i}.mamba_{tag}.core", log_a=m.core.log_a, w_b=m.core.w_b,
                w_c=m.core.w_c, w_delta=m.core.w_delta, delta_bias=m.core.delta_bias)
        c = blk.conv
        put(f"block{i}.conv", pw1_w=c.w_pw1, pw1_b=c.b_pw1, dw_kernel=c.dw_kernel,
            dw_bias=c.dw_bias, ln_gamma=c.ln_gamma, ln_beta=c.ln_beta,
            pw2_w=c.w_pw2, pw2_b=c.b_pw2)
        put(f"block{i}.ffn2", w1=blk.ffn2.w1, b1=blk.ffn2.b1, w2=blk.ffn2.w2, b2=blk.ffn2.b2)
        put(f"block{i}", ln_gamma=blk.ln_gamma, ln_beta=blk.ln_beta)
    put("head", w=params.w_head, b=params.b_head)
    return out


def count_params(cfg):
    """Exact trainable scalar count for a configuration."""
    params = init_encoder(cfg, seed=0)
    return sum(int(t.size) for t in named_params(params).values())


def subsample_cnn(features, sub, cfg):
    """Two stride-2 conv blocks over (time x mel), then a linear projection.

    Returns the ``[T', d_model]`` sequence and T', where each stage maps
    length n to ceil(n / 2) under the "same" padding convention of conv2d.
    """
    T = features.shape[0]
    img = tz.reshape(features, (1, T, cfg.n_mels))
    h = tz.gelu(tz.conv2d(img, sub.w_conv1, sub.b_conv1, stride=2))
    h = tz.gelu(tz.conv2d(h, sub.w_conv2, sub.b_conv2, stride=2))
    C, T2, M2 = h.shape
    flat = tz.reshape(tz.transpose(h, (1, 0, 2)), (T2, C * M2))
    out = tz.add(tz.matmul(flat, sub.w_proj), sub.b_proj)
    return out, T2


def _ffn(x, p, cfg, train, rng):
    h = tz.gelu(tz.add(tz.matmul(x, p.w1), p.b1))
    h = tz.dropout(h, cfg.dropout, rng, train)
    return tz.add(tz.matmul(h, p.w2), p.b2)


def _conv_module(x, p, cfg):
    d = cfg.d_model
    h = tz.add(tz.matmul(x, p.w_pw1), p.b_pw1)
    gated = tz.mul(tz.slice_last(h, 0, d), tz.sigmoid(tz.slice_last(h, d, 2 * d)))
    h = tz.conv1d_depthwise(gated, p.dw_kernel, p.dw_bias, causal=False)
    h = tz.silu(tz.layer_norm(h, p.ln_gamma, p.ln_beta, cfg.layer_norm_eps))
    return tz.add(tz.matmul(h, p.w_pw2), p.b_pw2)


def conmamba_block(x, blk, cfg, train=False, rng=None):
    """One macaron block over a ``[T', d_model]`` sequence."""
    rng = rng if rng is not None else np.random.default_rng(0)
    x1 = tz.add(x, tz.mul(_ffn(x, blk.ffn1, cfg, train, rng), _half(x)))
    m = bimamba(x1, blk.mamba_fwd, blk.mamba_bwd)
    x2 = tz.add(x1, tz.dropout(m, cfg.dropout, rng, train))
    c = _conv_module(x2, blk.conv, cfg)
    x3 = tz.add(x2, tz.dropout(c, cfg.dropout, rng, train))
    pre = tz.add(x3, tz.mul(_ffn(x3, blk.ffn2, cfg, train, rng), _half(x)))
    return tz.layer_norm(pre, blk.ln_gamma, blk.ln_beta, cfg.layer_norm_eps)


def _half(like):
    return Tensor(np.asarray(0.5, dtype=like.dtype))


def encode(features, params, cfg, train=False, rng=None):
    """Full encoder pass: ``[T, n_mels]`` features to per-frame log-probs."""
    if features.shape[0] == 0:
        raise EmptyInputError("encode: empty feature sequence")
    if features.shape[1] != cfg.n_mels:
        raise tz.ShapeError(f"encode: expected [T, {cfg.n_mels}] features, got {features.shape}")
    rng = rng if rng is not None else np.random.default_rng(0)
    h, t_out = subsample_cnn(features, params.subsampler, cfg)
    for blk in params.blocks:
        h = conmamba_block(h, blk, cfg, train=train, rng=rng)
    logits = tz.add(tz.matmul(h, params.w_head), params.b_head)
    return EncoderOutput(embeddings=h, log_probs=tz.log_softmax(logits), out_length=t_out)
