"""Independent oracles and fixture writers used across the test suite.

Everything here deliberately avoids the library's own code paths: scalar
loops, math.fsum accumulation, struct-assembled bytes. Oracles must stay
independent of what they check.
"""

from __future__ import annotations

import math
import struct

import numpy as np

_DTYPE_CODES = {2: ("B", 8), 4: ("h", 16), 16: ("f", 32)}  # code -> (fmt, bitpix)


def write_nifti_fixture(dims, values, datatype_code=16, byteorder="<") -> bytes:
    """Assemble a single-file NIfTI-1 byte stream field by field.

    This is the oracle for the NIfTI reader: it writes the 348-byte header
    (plus the 4-byte extender), data at vox_offset 352, x-fastest.
    """
    nx, ny, nz = dims
    fmt, bitpix = _DTYPE_CODES[datatype_code]
    bo = byteorder

    header = bytearray(348)
    struct.pack_into(bo + "i", header, 0, 348)                   # sizeof_hdr
    struct.pack_into(bo + "8h", header, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into(bo + "h", header, 70, datatype_code)
    struct.pack_into(bo + "h", header, 72, bitpix)
    struct.pack_into(bo + "8f", header, 76, 0, 1, 1, 1, 1, 1, 1, 1)  # pixdim
    struct.pack_into(bo + "f", header, 108, 352.0)               # vox_offset
    struct.pack_into(bo + "f", header, 112, 1.0)                 # scl_slope
    header[344:348] = b"n+1\x00"

    body = struct.pack(f"{bo}{len(values)}{fmt}", *values)
    return bytes(header) + b"\x00\x00\x00\x00" + body


def entropy_fsum(counts, total) -> float:
    """Naive per-bin summation with compensated (fsum) accumulation."""
    terms = []
    for c in counts:
        if c > 0:
            p = c / total
            terms.append(-p * math.log2(p))
    return math.fsum(terms)


def entropy_fsum_ln(counts, total) -> float:
    """Same summation in natural log, for log-base invariance checks."""
    terms = []
    for c in counts:
        if c > 0:
            p = c / total
            terms.append(-p * math.log(p))
    return math.fsum(terms)


def entropy_mpmath(counts, total, dps=40) -> float:
    """Extended-precision entropy via mpmath, rounded to float at the end."""
    import mpmath

    with mpmath.workdps(dps):
        acc = mpmath.mpf(0)
        for c in counts:
            if c > 0:
                p = mpmath.mpf(int(c)) / int(total)
                acc -= p * mpmath.log(p, 2)
        return float(acc)


def histogram_scalar(pixels, bins, lo, hi):
    """Per-pixel counting loop with the same bin mapping, scalar floats."""
    counts = [0] * bins
    width = hi - lo
    for p in pixels:
        idx = math.floor((p - lo) / width * bins)
        idx = min(max(idx, 0), bins - 1)
        counts[idx] += 1
    return counts


def rank_bruteforce(volume, k, bins, axis_extent_slices, per_volume_range,
                    log_fn=math.log2):
    """Brute-force slice ranking oracle.

    axis_extent_slices: list of (slice_index, flat pixel list).
    per_volume_range: (lo, hi) or None to use each slice's own min/max.
    Returns the top-k (slice_index, entropy) sorted by entropy descending,
    ties by ascending index.
    """
    scored = []
    for idx, pixels in axis_extent_slices:
        if per_volume_range is not None:
            lo, hi = per_volume_range
        else:
            lo, hi = min(pixels), max(pixels)
        if lo == hi:
            h = 0.0
        else:
            counts = histogram_scalar(pixels, bins, lo, hi)
            total = len(pixels)
            h = math.fsum(-(c / total) * log_fn(c / total)
                          for c in counts if c > 0)
        scored.append((idx, h))
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored[:k]


def resize_bilinear_scalar(img, out_w, out_h):
    """Formula-literal per-pixel resize oracle (double precision)."""
    h_in, w_in = len(img), len(img[0])
    out = [[0.0] * out_w for _ in range(out_h)]
    for i in range(out_h):
        for j in range(out_w):
            sx = (j + 0.5) * w_in / out_w - 0.5
            sy = (i + 0.5) * h_in / out_h - 0.5
            x0 = math.floor(sx)
            y0 = math.floor(sy)
            fx = sx - x0
            fy = sy - y0
            x0c = min(max(x0, 0), w_in - 1)
            x1c = min(max(x0 + 1, 0), w_in - 1)
            y0c = min(max(y0, 0), h_in - 1)
            y1c = min(max(y0 + 1, 0), h_in - 1)
            top = (1 - fx) * img[y0c][x0c] + fx * img[y0c][x1c]
            bot = (1 - fx) * img[y1c][x0c] + fx * img[y1c][x1c]
            out[i][j] = (1 - fy) * top + fy * bot
    return out


def conv2d_scalar(x, weight, bias, stride, padding):
    """Sextuple-loop cross-correlation oracle on (c,h,w) input."""
    c_in, h, w = x.shape
    c_out, _, kh, kw = weight.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    xp = np.zeros((c_in, hp, wp), dtype=x.dtype)
    xp[:, padding:padding + h, padding:padding + w] = x
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    out = np.zeros((c_out, oh, ow), dtype=x.dtype)
    for o in range(c_out):
        for i in range(oh):
            for j in range(ow):
                acc = float(bias[o])
                for c in range(c_in):
                    for u in range(kh):
                        for v in range(kw):
                            acc += float(weight[o, c, u, v]) * \
                                float(xp[c, i * stride + u, j * stride + v])
                out[o, i, j] = acc
    return out


def maxpool_scalar(x, window, stride):
    """Direct windowed-max oracle on (c,h,w) input; exact, no arithmetic."""
    c, h, w = x.shape
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    out = np.zeros((c, oh, ow), dtype=x.dtype)
    for ci in range(c):
        for i in range(oh):
            for j in range(ow):
                block = x[ci, i * stride:i * stride + window,
                          j * stride:j * stride + window]
                out[ci, i, j] = block.max()
    return out


def dense_scalar(x_flat, weight, bias):
    """Row-by-row dot product oracle for the dense layer."""
    out = np.zeros(weight.shape[0], dtype=x_flat.dtype)
    for o in range(weight.shape[0]):
        acc = float(bias[o])
        for i in range(weight.shape[1]):
            acc += float(weight[o, i]) * float(x_flat[i])
        out[o] = acc
    return out


def finite_difference_grads(loss_fn, params, step=1e-5):
    """Central finite differences of loss_fn() w.r.t. every entry of every
    tensor in `params` (a dict of float64 arrays mutated in place)."""
    grads = {}
    for name, tensor in params.items():
        g = np.zeros_like(tensor)
        flat = tensor.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
        grads[name] = g
    return grads


def relative_error(a, b, floor=1e-8):
    """max |a-b| / max(|a|, |b|, floor), elementwise then reduced."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())


def tensor_relative_error(got, want):
    """max |got-want| normalized by the oracle tensor's own scale.

    The per-element metric is meaningless where cancellation drives single
    entries toward zero; this is the right notion of "relative" for
    comparing whole tensors.
    """
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    scale = max(float(np.abs(want).max()), 1e-30)
    return float(np.abs(got - want).max()) / scale
