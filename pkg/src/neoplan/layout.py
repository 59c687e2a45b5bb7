"""Tensor storage and blocked-layout transforms.

Feature maps use NCHW (default) or NCHW[x]c, where the channel dimension C
is split into C/x outer blocks with an innermost sub-dimension of size x.
Convolution weights use KCRS or KCRS[x]c[y]k (input channel split by x,
output channel split by y, with c and k innermost in that order).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import IndivisibleChannel, WrongLayout

ALIGNMENT = 64  # bytes; covers 512-bit vector loads


@dataclass(frozen=True)
class Layout:
    """Layout descriptor.

    tag is one of NCHW, NHWC, NCHWc, KCRS, KCRSck.  For blocked tags the
    split factors are carried in x (channel split) and y (output-channel
    split, weights only).
    """

    tag: str
    x: int = 0
    y: int = 0

    # VEC/MAT cover rank-1/2 auxiliaries (bias vectors, dense weights)
    _RANKS = {"NCHW": 4, "NHWC": 4, "NCHWc": 5, "KCRS": 4, "KCRSck": 6,
              "VEC": 1, "MAT": 2}

    def __post_init__(self):
        if self.tag not in self._RANKS:
            raise WrongLayout(f"unknown layout tag {self.tag!r}")
        if self.tag == "NCHWc" and self.x < 1:
            raise WrongLayout("NCHW[x]c needs x >= 1")
        if self.tag == "KCRSck" and (self.x < 1 or self.y < 1):
            raise WrongLayout("KCRS[x]c[y]k needs x >= 1 and y >= 1")

    @property
    def rank(self) -> int:
        return self._RANKS[self.tag]

    @property
    def is_blocked(self) -> bool:
        return self.tag in ("NCHWc", "KCRSck")

    def __str__(self):
        if self.tag == "NCHWc":
            return f"NCHW{self.x}c"
        if self.tag == "KCRSck":
            return f"KCRS{self.x}c{self.y}k"
        return self.tag

    @classmethod
    def parse(cls, s: str) -> "Layout":
        if s in ("NCHW", "NHWC", "KCRS", "VEC", "MAT"):
            return cls(s)
        m = re.fullmatch(r"NCHW(\d+)c", s)
        if m:
            return cls("NCHWc", x=int(m.group(1)))
        m = re.fullmatch(r"KCRS(\d+)c(\d+)k", s)
        if m:
            return cls("KCRSck", x=int(m.group(1)), y=int(m.group(2)))
        raise WrongLayout(f"cannot parse layout {s!r}")


NCHW = Layout("NCHW")
NHWC = Layout("NHWC")
KCRS = Layout("KCRS")


def nchwc(x: int) -> Layout:
    return Layout("NCHWc", x=x)


def kcrsck(x: int, y: int) -> Layout:
    return Layout("KCRSck", x=x, y=y)


def aligned_empty(shape, align: int = ALIGNMENT) -> np.ndarray:
    """f32 buffer whose base address is a multiple of `align` bytes."""
    n = int(np.prod(shape, dtype=np.int64))
    raw = np.empty(n * 4 + align, dtype=np.uint8)
    off = (-raw.ctypes.data) % align
    return raw[off:off + n * 4].view(np.float32).reshape(shape)


class Tensor:
    """Dense f32 array plus its layout descriptor."""

    def __init__(self, data: np.ndarray, layout: Layout = NCHW):
        data = np.ascontiguousarray(data, dtype=np.float32)
        if data.ndim != layout.rank:
            raise WrongLayout(
                f"rank {data.ndim} does not match layout {layout} (rank {layout.rank})")
        if layout.tag == "NCHWc" and data.shape[4] != layout.x:
            raise WrongLayout("innermost dim must equal the channel split x")
        if layout.tag == "KCRSck" and (data.shape[4] != layout.x or data.shape[5] != layout.y):
            raise WrongLayout("innermost dims must equal (x, y)")
        self.data = data
        self.layout = layout

    @property
    def shape(self):
        return self.data.shape

    def logical_channels(self) -> int:
        """Full channel count regardless of blocking."""
        if self.layout.tag == "NCHW":
            return self.shape[1]
        if self.layout.tag == "NHWC":
            return self.shape[3]
        if self.layout.tag == "NCHWc":
            return self.shape[1] * self.layout.x
        raise WrongLayout(f"not a feature-map layout: {self.layout}")

    def __repr__(self):
        return f"Tensor(shape={self.shape}, layout={self.layout})"


# ---------------------------------------------------------------------------
# array-level transforms (used by the executor on raw ndarrays)

def pack_nchw_array(a: np.ndarray, x: int) -> np.ndarray:
    n, c, h, w = a.shape
    if c % x != 0:
        raise IndivisibleChannel(f"C={c} not divisible by x={x}")
    out = aligned_empty((n, c // x, h, w, x))
    np.copyto(out, a.reshape(n, c // x, x, h, w).transpose(0, 1, 3, 4, 2))
    return out


def unpack_nchw_array(a: np.ndarray) -> np.ndarray:
    n, co, h, w, x = a.shape
    out = aligned_empty((n, co * x, h, w))
    np.copyto(out.reshape(n, co, x, h, w), a.transpose(0, 1, 4, 2, 3))
    return out


def pack_kcrs_array(a: np.ndarray, x: int, y: int) -> np.ndarray:
    k, c, r, s = a.shape
    if c % x != 0 or k % y != 0:
        raise IndivisibleChannel(f"(K={k}, C={c}) not divisible by (y={y}, x={x})")
    out = aligned_empty((k // y, c // x, r, s, x, y))
    np.copyto(out, a.reshape(k // y, y, c // x, x, r, s).transpose(0, 2, 4, 5, 3, 1))
    return out


def unpack_kcrs_array(a: np.ndarray) -> np.ndarray:
    ko, co, r, s, x, y = a.shape
    out = aligned_empty((ko * y, co * x, r, s))
    np.copyto(out.reshape(ko, y, co, x, r, s), a.transpose(0, 5, 1, 4, 2, 3))
    return out


def retile_nchw_array(a: np.ndarray, b: int) -> np.ndarray:
    """Reblock NCHW[a]c to NCHW[b]c without materializing NCHW."""
    n, co, h, w, x = a.shape
    c_full = co * x
    if c_full % b != 0:
        raise IndivisibleChannel(f"C={c_full} not divisible by b={b}")
    if x == b:
        out = aligned_empty(a.shape)
        np.copyto(out, a)
        return out
    out = aligned_empty((n, c_full // b, h, w, b))
    # single pass over full channels; each copy is an (N,H,W) slab
    for c in range(c_full):
        out[:, c // b, :, :, c % b] = a[:, c // x, :, :, c % x]
    return out


def nhwc_to_nchw_array(a: np.ndarray) -> np.ndarray:
    out = aligned_empty((a.shape[0], a.shape[3], a.shape[1], a.shape[2]))
    np.copyto(out, a.transpose(0, 3, 1, 2))
    return out


# ---------------------------------------------------------------------------
# Tensor-level transforms

def pack_data(t: Tensor, x: int) -> Tensor:
    if t.layout.tag != "NCHW":
        raise WrongLayout(f"pack_data expects NCHW, got {t.layout}")
    return Tensor(pack_nchw_array(t.data, x), nchwc(x))


def unpack_data(t: Tensor) -> Tensor:
    if t.layout.tag != "NCHWc":
        raise WrongLayout(f"unpack_data expects NCHW[x]c, got {t.layout}")
    return Tensor(unpack_nchw_array(t.data), NCHW)


def pack_weights(t: Tensor, x: int, y: int) -> Tensor:
    if t.layout.tag != "KCRS":
        raise WrongLayout(f"pack_weights expects KCRS, got {t.layout}")
    return Tensor(pack_kcrs_array(t.data, x, y), kcrsck(x, y))


def unpack_weights(t: Tensor) -> Tensor:
    if t.layout.tag != "KCRSck":
        raise WrongLayout(f"unpack_weights expects KCRS[x]c[y]k, got {t.layout}")
    return Tensor(unpack_kcrs_array(t.data), KCRS)


def retile_data(t: Tensor, b: int) -> Tensor:
    if t.layout.tag != "NCHWc":
        raise WrongLayout(f"retile_data expects NCHW[x]c, got {t.layout}")
    return Tensor(retile_nchw_array(t.data, b), nchwc(b))


def transform_array(a: np.ndarray, src: Layout, dst: Layout) -> np.ndarray:
    """Dispatch pack / unpack / retile between feature-map layouts."""
    if src == dst:
        return a
    if src.tag == "NHWC" and dst.tag == "NCHW":
        return nhwc_to_nchw_array(a)
    if src.tag == "NCHW" and dst.tag == "NCHWc":
        return pack_nchw_array(a, dst.x)
    if src.tag == "NCHWc" and dst.tag == "NCHW":
        return unpack_nchw_array(a)
    if src.tag == "NCHWc" and dst.tag == "NCHWc":
        return retile_nchw_array(a, dst.x)
    if src.tag == "KCRS" and dst.tag == "KCRSck":
        return pack_kcrs_array(a, dst.x, dst.y)
    if src.tag == "KCRSck" and dst.tag == "KCRS":
        return unpack_kcrs_array(a)
    raise WrongLayout(f"no transform from {src} to {dst}")
