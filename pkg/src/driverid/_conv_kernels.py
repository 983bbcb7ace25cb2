"""Compute kernels for causal dilated 1-D convolution.

The autodiff layer in :mod:`driverid.numerics` owns the gradient rules; this
module only evaluates the three convolution contractions (forward, gradient
w.r.t. input, gradient w.r.t. weight) on plain float64 numpy arrays.

Two backends are provided.  The torch backend wraps torch's CPU conv1d
routines (zero-copy in and out via ``torch.from_numpy``) and is roughly an
order of magnitude faster on a single core than anything expressible in
numpy; the numpy backend is a direct per-tap tensordot used as a fallback and
for cross-checking.  Both are deterministic for fixed thread counts.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import torch
    import torch.nn.functional as _F
    import torch.nn.grad as _G

    _HAVE_TORCH = True
except ImportError:  # pragma: no cover
    _HAVE_TORCH = False

_BACKEND = os.environ.get("DRIVERID_CONV_BACKEND", "torch" if _HAVE_TORCH else "numpy")


def set_backend(name: str) -> None:
    """Select the convolution backend, ``"torch"`` or ``"numpy"``."""
    global _BACKEND
    if name not in ("torch", "numpy"):
        raise ValueError(f"unknown conv backend {name!r}")
    if name == "torch" and not _HAVE_TORCH:
        raise ValueError("torch backend requested but torch is not importable")
    _BACKEND = name


def get_backend() -> str:
    return _BACKEND


def _pad_left(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    b, c, length = x.shape
    out = np.zeros((b, c, length + pad), dtype=np.float64)
    out[:, :, pad:] = x
    return out


# -- numpy backend ----------------------------------------------------------

def _np_forward(x, w, bias, dilation):
    _, _, length = x.shape
    c_out, _, k = w.shape
    pad = (k - 1) * dilation
    xp = _pad_left(x, pad)
    acc = np.zeros((c_out, x.shape[0], length), dtype=np.float64)
    for tap in range(k):
        lo = tap * dilation
        acc += np.tensordot(w[:, :, tap], xp[:, :, lo:lo + length], axes=([1], [1]))
    out = np.ascontiguousarray(acc.transpose(1, 0, 2))
    out += bias[None, :, None]
    return out


def _np_grad_input(go, w, dilation):
    b, _, length = go.shape
    _, c_in, k = w.shape
    pad = (k - 1) * dilation
    gxp = np.zeros((b, c_in, length + pad), dtype=np.float64)
    for tap in range(k):
        lo = tap * dilation
        contrib = np.tensordot(w[:, :, tap], go, axes=([0], [1]))
        gxp[:, :, lo:lo + length] += contrib.transpose(1, 0, 2)
    return np.ascontiguousarray(gxp[:, :, pad:])


def _np_grad_weight(go, x, k, dilation):
    _, _, length = x.shape
    pad = (k - 1) * dilation
    xp = _pad_left(x, pad)
    c_out = go.shape[1]
    c_in = x.shape[1]
    gw = np.empty((c_out, c_in, k), dtype=np.float64)
    for tap in range(k):
        lo = tap * dilation
        gw[:, :, tap] = np.tensordot(go, xp[:, :, lo:lo + length], axes=([0, 2], [0, 2]))
    return gw


# -- torch backend ----------------------------------------------------------

def _t(a):
    return torch.from_numpy(np.ascontiguousarray(a))


def _torch_forward(x, w, bias, dilation):
    pad = (w.shape[2] - 1) * dilation
    xp = _t(_pad_left(x, pad))
    out = _F.conv1d(xp, _t(w), _t(bias), dilation=dilation)
    return out.numpy()


def _torch_grad_input(go, w, dilation):
    b, _, length = go.shape
    k = w.shape[2]
    pad = (k - 1) * dilation
    shape = (b, w.shape[1], length + pad)
    gxp = _G.conv1d_input(shape, _t(w), _t(go), dilation=dilation)
    return np.ascontiguousarray(gxp.numpy()[:, :, pad:])


def _torch_grad_weight(go, x, k, dilation):
    pad = (k - 1) * dilation
    xp = _t(_pad_left(x, pad))
    c_out = go.shape[1]
    gw = _G.conv1d_weight(xp, (c_out, x.shape[1], k), _t(go), dilation=dilation)
    return gw.numpy()


# -- dispatch ---------------------------------------------------------------

def forward(x, w, bias, dilation):
    """out[b,c,t] = bias[c] + sum_{j,k} w[c,j,k] * x_padded[b,j,t+k*dilation]."""
    if _BACKEND == "torch":
        return _torch_forward(x, w, bias, dilation)
    return _np_forward(x, w, bias, dilation)


def grad_input(go, w, dilation):
    if _BACKEND == "torch":
        return _torch_grad_input(go, w, dilation)
    return _np_grad_input(go, w, dilation)


def grad_weight(go, x, k, dilation):
    if _BACKEND == "torch":
        return _torch_grad_weight(go, x, k, dilation)
    return _np_grad_weight(go, x, k, dilation)
