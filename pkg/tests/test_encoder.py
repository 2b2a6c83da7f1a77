import numpy as np
import pytest

from conmamba import tensor as tz
from conmamba.encoder import (
    EmptyInputError,
    EncoderConfig,
    conmamba_block,
    count_params,
    encode,
    init_encoder,
    named_params,
    subsample_cnn,
    subsampled_length,
)
from conmamba.tensor import Tensor, grad_check, tsum


def tiny_cfg(**kw):
    base = dict(num_layers=2, d_model=8, ffn_dim=16, dropout=0.0, n_state=4,
                expand=2, dconv=4, n_mels=16, vocab_size=5,
                subsample_channels=4, conv_module_kernel=7)
    base.update(kw)
    return EncoderConfig(**base)


class TestSubsampler:
    def test_length_16_to_4(self):
        cfg = tiny_cfg()
        params = init_encoder(cfg, seed=0)
        x = Tensor(np.random.default_rng(0).normal(size=(16, cfg.n_mels)).astype(np.float32))
        out, t2 = subsample_cnn(x, params.subsampler, cfg)
        assert t2 == 4
        assert out.shape == (4, cfg.d_model)

    def test_length_1_supported(self):
        cfg = tiny_cfg()
        params = init_encoder(cfg, seed=0)
        x = Tensor(np.zeros((1, cfg.n_mels), dtype=np.float32))
        out, t2 = subsample_cnn(x, params.subsampler, cfg)
        assert t2 == 1
        assert out.shape == (1, cfg.d_model)

    def test_length_formula_matches_actual_output(self):
        cfg = tiny_cfg()
        params = init_encoder(cfg, seed=0)
        for T in list(range(1, 24)) + [50, 97, 128]:
            x = Tensor(np.zeros((T, cfg.n_mels), dtype=np.float32))
            _, t2 = subsample_cnn(x, params.subsampler, cfg)
            assert t2 == subsampled_length(T), T


def condition_steps_for_grad_check(params):
    """Raise the scan step sizes so no parameter direction is numerically flat.

    At the default init the steps sit in [1e-3, 1e-1]; gradients through the
    transition diagonal then fall below the float64 finite-difference noise
    floor and the relative-error metric compares noise against noise.
    """
    rng = np.random.default_rng(1234)
    for blk in params.blocks:
        for m in (blk.mamba_fwd, blk.mamba_bwd):
            dt = rng.uniform(0.3, 1.0, size=m.core.delta_bias.shape)
            m.core.delta_bias.data[:] = dt + np.log(-np.expm1(-dt))


def zero_branches(blk):
    tensors = [blk.ffn1.w1, blk.ffn1.b1, blk.ffn1.w2, blk.ffn1.b2,
               blk.ffn2.w1, blk.ffn2.b1, blk.ffn2.w2, blk.ffn2.b2]
    for m in (blk.mamba_fwd, blk.mamba_bwd):
        tensors += [m.w_in, m.conv_kernel, m.conv_bias, m.w_out,
                    m.core.w_b, m.core.w_c, m.core.w_delta, m.core.delta_bias]
    c = blk.conv
    tensors += [c.w_pw1, c.b_pw1, c.dw_kernel, c.dw_bias, c.ln_beta, c.w_pw2, c.b_pw2]
    for t in tensors:
        t.data[:] = 0.0


class TestConMambaBlock:
    def test_zeroed_branches_reduce_to_layer_norm(self):
        cfg = tiny_cfg(num_layers=1)
        params = init_encoder(cfg, seed=1)
        blk = params.blocks[0]
        zero_branches(blk)
        x = Tensor(np.random.default_rng(2).normal(size=(6, cfg.d_model)).astype(np.float32))
        out = conmamba_block(x, blk, cfg).data
        expect = tz.layer_norm(x, blk.ln_gamma, blk.ln_beta, cfg.layer_norm_eps).data
        assert np.allclose(out, expect, atol=1e-6)

    @pytest.mark.parametrize("T,d", [(3, 8), (40, 16)])
    def test_shape_invariance(self, T, d):
        cfg = tiny_cfg(num_layers=1, d_model=d, ffn_dim=2 * d)
        params = init_encoder(cfg, seed=3)
        x = Tensor(np.random.default_rng(4).normal(size=(T, d)).astype(np.float32))
        assert conmamba_block(x, params.blocks[0], cfg).shape == (T, d)

    def test_two_block_stack_grad_check(self):
        cfg = tiny_cfg(num_layers=2, d_model=4, ffn_dim=8, n_state=2,
                       conv_module_kernel=3, vocab_size=4)
        params = init_encoder(cfg, seed=5, dtype=np.float64)
        condition_steps_for_grad_check(params)
        x = Tensor(np.random.default_rng(6).normal(size=(5, cfg.d_model)),
                   requires_grad=True, dtype=np.float64)
        w = Tensor(np.random.default_rng(99).normal(size=(5, cfg.vocab_size)), dtype=np.float64)

        leaves = [x] + [t for name, t in named_params(params).items()
                        if not name.startswith("subsample")]

        def run(*_):
            h = x
            for blk in params.blocks:
                h = conmamba_block(h, blk, cfg)
            out = tz.log_softmax(tz.add(tz.matmul(h, params.w_head), params.b_head))
            return tsum(tz.mul(out, w))

        assert grad_check(run, leaves) < 1e-3

    def test_zeroed_mamba_is_local_beyond_conv_receptive_field(self):
        cfg = tiny_cfg(num_layers=1, conv_module_kernel=7)
        params = init_encoder(cfg, seed=7)
        blk = params.blocks[0]
        for m in (blk.mamba_fwd, blk.mamba_bwd):
            m.w_out.data[:] = 0.0
        rng = np.random.default_rng(8)
        x = rng.normal(size=(40, cfg.d_model)).astype(np.float32)
        base = conmamba_block(Tensor(x), blk, cfg).data
        i, j = 5, 30  # farther apart than the conv half-width (3)
        xp = x.copy()
        xp[[i, j]] = xp[[j, i]]
        out = conmamba_block(Tensor(xp), blk, cfg).data
        radius = (cfg.conv_module_kernel - 1) // 2
        for u in range(40):
            if min(abs(u - i), abs(u - j)) > radius:
                assert np.allclose(out[u], base[u], atol=1e-6), u


class TestEncode:
    def test_log_prob_rows_normalize(self):
        cfg = tiny_cfg()
        params = init_encoder(cfg, seed=9)
        x = Tensor(np.random.default_rng(10).normal(size=(20, cfg.n_mels)).astype(np.float32))
        out = encode(x, params, cfg)
        sums = np.exp(out.log_probs.data).sum(axis=-1)
        assert np.allclose(sums, 1.0, atol=1e-5)
        assert out.log_probs.shape == (out.out_length, cfg.vocab_size)
        assert out.embeddings.shape == (out.out_length, cfg.d_model)

    def test_eval_mode_deterministic(self):
        cfg = tiny_cfg(dropout=0.1)
        params = init_encoder(cfg, seed=11)
        x = Tensor(np.random.default_rng(12).normal(size=(9, cfg.n_mels)).astype(np.float32))
        a = encode(x, params, cfg, train=False).log_probs.data
        b = encode(x, params, cfg, train=False).log_probs.data
        assert np.array_equal(a, b)

    def test_zero_dropout_train_equals_eval(self):
        cfg = tiny_cfg(dropout=0.0)
        params = init_encoder(cfg, seed=13)
        x = Tensor(np.random.default_rng(14).normal(size=(9, cfg.n_mels)).astype(np.float32))
        a = encode(x, params, cfg, train=True, rng=np.random.default_rng(0)).log_probs.data
        b = encode(x, params, cfg, train=False).log_probs.data
        assert np.array_equal(a, b)

    def test_empty_input_rejected(self):
        cfg = tiny_cfg()
        params = init_encoder(cfg, seed=15)
        with pytest.raises(EmptyInputError):
            encode(Tensor(np.zeros((0, cfg.n_mels), dtype=np.float32)), params, cfg)

    def test_output_length_follows_formula(self):
        cfg = tiny_cfg()
        params = init_encoder(cfg, seed=16)
        for T in [1, 2, 3, 4, 5, 13, 33]:
            x = Tensor(np.zeros((T, cfg.n_mels), dtype=np.float32))
            out = encode(x, params, cfg)
            assert out.out_length == subsampled_length(T)


class TestCountParams:
    def test_head_is_a_linear_layer(self):
        # growing the vocabulary adds exactly (d_model + 1) scalars per symbol
        c1 = count_params(tiny_cfg(vocab_size=5))
        c2 = count_params(tiny_cfg(vocab_size=9))
        assert c2 - c1 == 4 * (tiny_cfg().d_model + 1)

    def test_doubling_layers_strictly_increases(self):
        assert count_params(tiny_cfg(num_layers=4)) > count_params(tiny_cfg(num_layers=2))

    def test_toy_config_matches_shape_walk(self):
        cfg = tiny_cfg(num_layers=2, d_model=64, ffn_dim=128, n_state=8,
                       vocab_size=11, n_mels=16, subsample_channels=4,
                       conv_module_kernel=9, dconv=4, expand=2)
        d, f, n, k = cfg.d_model, cfg.ffn_dim, cfg.n_state, cfg.dconv
        d_in = cfg.expand * d
        mel_out = ((cfg.n_mels - 1) // 2 + 1 - 1) // 2 + 1
        sub = (cfg.subsample_channels * 1 * 9 + cfg.subsample_channels
               + cfg.subsample_channels * cfg.subsample_channels * 9 + cfg.subsample_channels
               + cfg.subsample_channels * mel_out * d + d)
        ffn = d * f + f + f * d + d
        mamba = (d * 2 * d_in + k * d_in + d_in          # in_proj, conv kernel + bias
                 + d_in * n * 3 + d_in + d_in            # log_a/w_b/w_c, w_delta, delta_bias
                 + d_in * d)                             # out_proj
        convmod = d * 2 * d + 2 * d + cfg.conv_module_kernel * d + d + 2 * d + d * d + d
        block = 2 * ffn + 2 * mamba + convmod + 2 * d
        head = d * cfg.vocab_size + cfg.vocab_size
        assert count_params(cfg) == sub + cfg.num_layers * block + head
