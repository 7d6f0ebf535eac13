"""Convolution kernel dispatch.

Two interchangeable backends provide the hot inner loops: a compiled
Cython extension (built at install time when a toolchain is available)
and a pure-numpy reference. The compiled backend is selected at import
when present; ``SHRINKEXPAND_KERNELS=python|compiled`` overrides, and
``set_backend`` switches at runtime (used by tests and benchmarks).
Both backends implement the same math; summation order, and therefore
low-order float bits, may differ between them.
"""

from __future__ import annotations

import os

import numpy as np

from . import _convref

try:
    from . import _convcore
except ImportError:
    _convcore = None

_BACKENDS = {"python": _convref}
if _convcore is not None:
    _BACKENDS["compiled"] = _convcore

_active = None


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def set_backend(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown or unavailable kernel backend {name!r}; "
                         f"available: {available_backends()}")
    _active = name


def active_backend() -> str:
    return _active


def _select_initial() -> None:
    choice = os.environ.get("SHRINKEXPAND_KERNELS", "").strip().lower()
    if choice:
        set_backend(choice)
    else:
        set_backend("compiled" if "compiled" in _BACKENDS else "python")


_select_initial()


def same_padding(size: int, filt: int, stride: int) -> tuple[int, int, int]:
    """(output size, pad before, pad after) for ceil-division padding."""
    out = -(-size // stride)
    total = max((out - 1) * stride + filt - size, 0)
    before = total // 2
    return out, before, total - before


def _pads(h, w, f, g, stride):
    y, pt, pb = same_padding(h, f, stride)
    z, pl, pr = same_padding(w, g, stride)
    return y, z, (pt, pb, pl, pr)


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    """x: (n, h, w, i); w: (f, g, i, o). Returns (n, ceil(h/s), ceil(w/s), o)."""
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w)
    n, h, width, n_in = x.shape
    f, g, wi, n_out = w.shape
    if wi != n_in:
        raise ValueError(f"input channels {n_in} do not match filter channels {wi}")
    y, z, pads = _pads(h, width, f, g, stride)
    out = np.zeros((n, y, z, n_out), dtype=x.dtype)
    _BACKENDS[_active].forward(x, w, stride, pads, out)
    return out


def conv2d_backward_input(dy: np.ndarray, w: np.ndarray, stride: int,
                          in_hw: tuple[int, int]) -> np.ndarray:
    dy = np.ascontiguousarray(dy)
    w = np.ascontiguousarray(w)
    n = dy.shape[0]
    f, g, n_in, _ = w.shape
    h, width = in_hw
    _, _, pads = _pads(h, width, f, g, stride)
    dx = np.zeros((n, h, width, n_in), dtype=dy.dtype)
    _BACKENDS[_active].backward_input(dy, w, stride, pads, dx)
    return dx


def conv2d_backward_weights(x: np.ndarray, dy: np.ndarray, stride: int,
                            filter_hw: tuple[int, int]) -> np.ndarray:
    x = np.ascontiguousarray(x)
    dy = np.ascontiguousarray(dy)
    f, g = filter_hw
    _, h, width, n_in = x.shape
    n_out = dy.shape[3]
    _, _, pads = _pads(h, width, f, g, stride)
    dw = np.zeros((f, g, n_in, n_out), dtype=x.dtype)
    _BACKENDS[_active].backward_weights(x, dy, stride, pads, dw)
    return dw
