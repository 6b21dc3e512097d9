"""Array primitives shared by the convolutional models."""

import numpy as np

from ..errors import InvalidArgument


def sigmoid(x):
    # clipped so exp cannot overflow; the result saturates well before 700
    out = -np.array(x, dtype=float, ndmin=1)
    np.clip(out, -700.0, 700.0, out=out)
    np.exp(out, out=out)
    out += 1.0
    np.reciprocal(out, out=out)
    return out if np.ndim(x) else out[0]


def conv2d_valid(inp, kernel, bias=0.0, bias_mode="shared"):
    """Single-channel valid cross-correlation.

    With ``bias_mode="untied"`` `bias` is a grid with one entry per output
    position; with ``"shared"`` it is a scalar added everywhere.
    """
    inp = np.asarray(inp, dtype=float)
    kernel = np.asarray(kernel, dtype=float)
    if inp.ndim != 2 or kernel.ndim != 2:
        raise InvalidArgument("conv2d_valid expects 2-D input and kernel")
    kh, kw = kernel.shape
    H, W = inp.shape
    if H < kh or W < kw:
        raise InvalidArgument(f"input {inp.shape} smaller than kernel {kernel.shape}")
    out = np.zeros((H - kh + 1, W - kw + 1))
    for a in range(kh):
        for b in range(kw):
            out += kernel[a, b] * inp[a:a + out.shape[0], b:b + out.shape[1]]
    if bias_mode == "untied":
        bias = np.asarray(bias, dtype=float)
        if bias.shape != out.shape:
            raise InvalidArgument(f"untied bias needs shape {out.shape}, got {bias.shape}")
    elif bias_mode != "shared":
        raise InvalidArgument(f"unknown bias mode {bias_mode!r}")
    return out + bias


def _im2col(x, kh, kw):
    """Channels-last patches: (n, H, W, c) -> (n, Ho, Wo, kh*kw*c), ordered (a, b, c)."""
    n, H, W, c = x.shape
    Ho, Wo = H - kh + 1, W - kw + 1
    cols = np.empty((n, Ho, Wo, kh, kw, c))
    for a in range(kh):
        for b in range(kw):
            cols[:, :, :, a, b, :] = x[:, a:a + Ho, b:b + Wo, :]
    return cols.reshape(n, Ho, Wo, kh * kw * c)


def _kernel_matrix(w):
    """(c_out, c_in, kh, kw) kernel as a (kh*kw*c_in, c_out) matrix matching :func:`_im2col`."""
    return w.transpose(2, 3, 1, 0).reshape(-1, w.shape[0])


def conv_forward_nhwc(x, w, b):
    """Batched multi-channel valid convolution on channels-last data.

    x: (n, H, W, c_in); w: (c_out, c_in, kh, kw); b: (c_out,).
    Returns the (n, Ho, Wo, c_out) output and the patch matrix for the
    backward pass.
    """
    cols = _im2col(x, w.shape[2], w.shape[3])
    return cols @ _kernel_matrix(w) + b, cols


def conv_backward_nhwc(dout, cols, w, x_shape, need_dx=True):
    """Gradients of :func:`conv_forward_nhwc` w.r.t. input, kernel and bias."""
    c_out, c_in, kh, kw = w.shape
    n, Ho, Wo, _ = dout.shape
    d = dout.reshape(-1, c_out)
    dw = (cols.reshape(-1, cols.shape[-1]).T @ d).reshape(kh, kw, c_in, c_out).transpose(3, 2, 0, 1)
    db = d.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d @ _kernel_matrix(w).T).reshape(n, Ho, Wo, kh, kw, c_in)
    dx = np.zeros(x_shape)
    for a in range(kh):
        for c in range(kw):
            dx[:, a:a + Ho, c:c + Wo, :] += dcols[:, :, :, a, c, :]
    return dx, dw, db


def conv_forward(x, w, b):
    """Channels-first wrapper: x (n, c_in, H, W) -> (n, c_out, Ho, Wo)."""
    out, _ = conv_forward_nhwc(x.transpose(0, 2, 3, 1), w, b)
    return out.transpose(0, 3, 1, 2)


def conv_backward(dout, x, w):
    """Channels-first gradients of :func:`conv_forward`."""
    xl = x.transpose(0, 2, 3, 1)
    cols = _im2col(xl, w.shape[2], w.shape[3])
    dx, dw, db = conv_backward_nhwc(dout.transpose(0, 2, 3, 1), cols, w, xl.shape)
    return dx.transpose(0, 3, 1, 2), dw, db


def _edge_index(n):
    """Row (or column) gather index padding an odd length by repeating its last entry."""
    idx = np.arange(n)
    return np.append(idx, n - 1) if n % 2 else idx


def pool(inp, mode="max"):
    """2x2, stride-2 pooling over the last two axes.

    Odd extents are padded by replicating the last row/column, so a
    ``(3, 5)`` input pools to ``(2, 3)``.
    """
    out, _ = pool_forward(np.asarray(inp, dtype=float), mode)
    return out


def pool_forward(x, mode):
    if mode not in ("max", "mean"):
        raise InvalidArgument(f"unknown pooling mode {mode!r}")
    H, W = x.shape[-2:]
    ri, ci = _edge_index(H), _edge_index(W)
    padded = x[..., ri[:, None], ci[None, :]]
    Hp, Wp = padded.shape[-2:]
    blocks = padded.reshape(*x.shape[:-2], Hp // 2, 2, Wp // 2, 2)
    blocks = np.moveaxis(blocks, -3, -2).reshape(*x.shape[:-2], Hp // 2, Wp // 2, 4)
    if mode == "max":
        arg = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    else:
        arg = None
        out = blocks.mean(axis=-1)
    return out, (x.shape, ri, ci, arg)


def pool_backward(dout, cache, mode):
    shape, ri, ci, arg = cache
    Hp, Wp = len(ri), len(ci)
    lead = dout.shape[:-2]
    if mode == "max":
        dblocks = np.zeros((*lead, Hp // 2, Wp // 2, 4))
        np.put_along_axis(dblocks, arg[..., None], dout[..., None], axis=-1)
    else:
        dblocks = np.repeat(dout[..., None], 4, axis=-1) / 4.0
    dblocks = dblocks.reshape(*lead, Hp // 2, Wp // 2, 2, 2)
    dpadded = np.moveaxis(dblocks, -2, -3).reshape(*lead, Hp, Wp)
    dx = np.zeros(shape)
    # fold replicated rows/columns back onto their source
    rows = np.zeros((*lead, shape[-2], Wp))
    np.add.at(rows, (..., ri, slice(None)), dpadded)
    np.add.at(dx, (..., slice(None), ci), rows)
    return dx


def pooled_shape(h, w):
    return (h + 1) // 2, (w + 1) // 2
