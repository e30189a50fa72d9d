"""Shared builders and independent naive oracles for the test suite.

Everything here is deliberately primitive: pure-Python loops, four-pass
moment accumulation with math.fsum, explicit enumeration of conv windows.
The production code must agree with these, not the other way round.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from cntnets import Conv2D, Dense, NetworkSnapshot, SnapshotMeta


def make_dense(rng: np.random.Generator, n_in: int, n_out: int, scale: float = 1.0) -> Dense:
    return Dense(weights=rng.normal(0, scale, (n_in, n_out)), bias=np.zeros(n_out))


def make_conv(
    rng: np.random.Generator,
    kh: int,
    kw: int,
    c_in: int,
    c_out: int,
    h: int,
    w: int,
    stride=(1, 1),
    padding="valid",
    scale: float = 1.0,
) -> Conv2D:
    return Conv2D(
        kernel=rng.normal(0, scale, (kh, kw, c_in, c_out)),
        bias=np.zeros(c_out),
        stride=stride,
        padding=padding,
        input_dims=(h, w, c_in),
    )


def dense_chain(rng: np.random.Generator, sizes, **meta) -> NetworkSnapshot:
    layers = tuple(make_dense(rng, a, b) for a, b in zip(sizes[:-1], sizes[1:]))
    return NetworkSnapshot(layers=layers, meta=SnapshotMeta(**meta))


def naive_moments(samples) -> tuple[float, float, float, float]:
    """Four separate fsum passes: mean, then m2, m3, m4."""
    xs = [float(v) for v in np.asarray(samples).ravel()]
    n = len(xs)
    mean = math.fsum(xs) / n
    m2 = math.fsum((x - mean) ** 2 for x in xs) / n
    m3 = math.fsum((x - mean) ** 3 for x in xs) / n
    m4 = math.fsum((x - mean) ** 4 for x in xs) / n
    return mean, m2, m3, m4


def enumerate_conv_edges(conv: Conv2D):
    """Pure-Python window enumeration, independent of cntnets.oracle.

    Yields (in_flat, out_flat, weight) with channel-major flat indices.
    """
    kh, kw, c_in, c_out = conv.kernel.shape
    h, w, _ = conv.input_dims
    sh, sw = conv.stride
    if conv.padding == "valid":
        pt = pl = 0
        h_out = (h - kh) // sh + 1
        w_out = (w - kw) // sw + 1
    else:
        h_out = math.ceil(h / sh)
        w_out = math.ceil(w / sw)
        pad_h = max((h_out - 1) * sh + kh - h, 0)
        pad_w = max((w_out - 1) * sw + kw - w, 0)
        pt, pl = pad_h // 2, pad_w // 2
    for y in range(h_out):
        for x in range(w_out):
            for i in range(kh):
                r = y * sh - pt + i
                if r < 0 or r >= h:
                    continue
                for j in range(kw):
                    c = x * sw - pl + j
                    if c < 0 or c >= w:
                        continue
                    for ci in range(c_in):
                        for co in range(c_out):
                            yield (
                                ci * h * w + r * w + c,
                                co * h_out * w_out + y * w_out + x,
                                float(conv.kernel[i, j, ci, co]),
                            )


def edge_strengths(edges, n_from: int, n_to: int):
    """fsum-accumulated per-neuron strengths from an edge triple iterable."""
    s_out = [[] for _ in range(n_from)]
    s_in = [[] for _ in range(n_to)]
    for f, t, w in edges:
        s_out[f].append(w)
        s_in[t].append(w)
    return (
        np.array([math.fsum(v) for v in s_out]),
        np.array([math.fsum(v) for v in s_in]),
    )


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260808)
