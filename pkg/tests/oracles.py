"""Independent straight-line reference computations used by several test modules."""

import numpy as np


def conv_oracle(x, w, b, dilation):
    """Direct sliding-window causal convolution, O(B*Cout*L*Cin*K) loops."""
    B, Cin, L = x.shape
    Cout, _, K = w.shape
    out = np.zeros((B, Cout, L))
    for bi in range(B):
        for c in range(Cout):
            for t in range(L):
                acc = b[c]
                for j in range(Cin):
                    for k in range(K):
                        src = t - (K - 1 - k) * dilation
                        if src >= 0:
                            acc += w[c, j, k] * x[bi, j, src]
                out[bi, c, t] = acc
    return out


def straight_line_embed(params, cfg, frames):
    """Plain-numpy eval-mode forward pass, written independently of the
    package's tensor ops (loops and formulas only)."""
    h = frames[None].astype(np.float64)
    for lvl, blk in enumerate(params.blocks):
        d = 2 ** lvl
        inner = np.maximum(conv_oracle(h, blk.w1.data, blk.b1.data, d), 0.0)
        inner = conv_oracle(inner, blk.w2.data, blk.b2.data, d)
        if blk.res_w is None:
            res = h
        else:
            res = conv_oracle(h, blk.res_w.data, blk.res_b.data, 1)
        h = np.maximum(res + inner, 0.0)
    tcn = h[:, :, -1] @ params.out_w.data + params.out_b.data

    c, el = frames.shape
    approx = np.empty(c * el // 2)
    detail = np.empty(c * el // 2)
    i = 0
    for ch in range(c):
        for k in range(el // 2):
            approx[i] = (frames[ch, 2 * k] + frames[ch, 2 * k + 1]) / np.sqrt(2.0)
            detail[i] = (frames[ch, 2 * k] - frames[ch, 2 * k + 1]) / np.sqrt(2.0)
            i += 1
    wav_a = approx @ params.approx_w.data + params.approx_b.data
    wav_d = detail @ params.detail_w.data + params.detail_b.data
    return np.concatenate([tcn[0], wav_a, wav_d])
