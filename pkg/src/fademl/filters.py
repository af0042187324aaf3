"""Linear smoothing filters (LAP, LAR) with explicit adjoints.

A filter is a row-stochastic averaging operator over the spatial grid,
applied to every channel independently. Neighbours that fall outside the
image are clamped to the nearest edge pixel (replicate padding), so every
output pixel averages exactly the same number of samples.

LAP(np) averages a pixel with its ``np`` nearest grid neighbours (Euclidean
distance, ties broken in row-major scan order of the offset). LAR(r) averages
every pixel within Euclidean distance ``r``, centre included.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, InputError

LAP_SIZES = (4, 8, 16, 32, 64)
LAR_RADII = (1, 2, 3, 4, 5)
KINDS = ("identity", "lap", "lar")


@dataclass(frozen=True)
class FilterConfig:
    kind: str = "identity"
    np: int | None = None
    r: int | None = None
    boundary: str = "replicate"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"filter.kind must be one of {KINDS}, got {self.kind!r}")
        if self.boundary != "replicate":
            raise ConfigError("filter.boundary only supports 'replicate'")
        if self.kind == "lap":
            if self.np is None or self.r is not None:
                raise ConfigError("lap filter needs filter.np and no filter.r")
            if int(self.np) != self.np or self.np < 1:
                raise ConfigError(f"filter.np must be a positive integer, got {self.np}")
        elif self.kind == "lar":
            if self.r is None or self.np is not None:
                raise ConfigError("lar filter needs filter.r and no filter.np")
            if int(self.r) != self.r or self.r < 1:
                raise ConfigError(f"filter.r must be a positive integer, got {self.r}")
        elif self.np is not None or self.r is not None:
            raise ConfigError("identity filter takes no parameters")

    @property
    def nonstandard(self) -> bool:
        """True for parameters outside the standard sweep sets (accepted for exploration)."""
        if self.kind == "lap":
            return self.np not in LAP_SIZES
        if self.kind == "lar":
            return self.r not in LAR_RADII
        return False

    @property
    def param(self):
        return self.np if self.kind == "lap" else self.r if self.kind == "lar" else None

    @property
    def label(self) -> str:
        if self.kind == "lap":
            return f"lap_np{self.np}"
        if self.kind == "lar":
            return f"lar_r{self.r}"
        return "identity"

    @classmethod
    def parse(cls, text: str) -> "FilterConfig":
        """Parse ``identity``, ``lap:8`` / ``lap_np8`` or ``lar:2`` / ``lar_r2``."""
        t = text.strip().lower()
        if t == "identity":
            return cls()
        for kind, prefix in (("lap", "lap_np"), ("lar", "lar_r")):
            for p in (kind + ":", prefix):
                if t.startswith(p):
                    try:
                        value = int(t[len(p):])
                    except ValueError:
                        raise ConfigError(f"bad filter parameter in {text!r}") from None
                    return cls(kind, np=value) if kind == "lap" else cls(kind, r=value)
        raise ConfigError(f"cannot parse filter {text!r}")

    def to_dict(self):
        return {"kind": self.kind, "np": self.np, "r": self.r}


def default_sweep():
    """Identity plus the five LAP and five LAR settings."""
    return ([FilterConfig()]
            + [FilterConfig("lap", np=n) for n in LAP_SIZES]
            + [FilterConfig("lar", r=r) for r in LAR_RADII])


def neighbor_offsets(cfg: FilterConfig) -> np.ndarray:
    """``(K, 2)`` array of ``(dy, dx)`` offsets averaged by the filter, centre first."""
    if cfg.kind == "identity":
        return np.zeros((1, 2), dtype=np.int64)
    if cfg.kind == "lar":
        reach = int(cfg.r)
    else:
        reach = int(math.isqrt(cfg.np)) + 1
        while (2 * reach + 1) ** 2 <= cfg.np:
            reach += 1
    cand = [(dy * dy + dx * dx, dy, dx)
            for dy in range(-reach, reach + 1)
            for dx in range(-reach, reach + 1)]
    cand.sort()
    if cfg.kind == "lar":
        chosen = [(dy, dx) for d2, dy, dx in cand if d2 <= cfg.r * cfg.r]
    else:
        chosen = [(dy, dx) for _, dy, dx in cand[:cfg.np + 1]]
    return np.array(chosen, dtype=np.int64)


class LinearFilter:
    """A filter bound to one image shape ``(C, H, W)``; immutable after construction."""

    def __init__(self, config: FilterConfig, shape):
        shape = tuple(int(d) for d in shape)
        if len(shape) != 3 or min(shape) < 1:
            raise InputError(f"filter shape must be (C, H, W) with positive sizes, got {shape}")
        self.config = config
        self.shape = shape
        _, h, w = shape
        self.offsets = neighbor_offsets(config)
        k = len(self.offsets)
        rows = np.arange(h)[:, None] + self.offsets[:, 0][None, :]
        cols = np.arange(w)[:, None] + self.offsets[:, 1][None, :]
        rr = np.clip(rows, 0, h - 1)  # (H, K)
        cc = np.clip(cols, 0, w - 1)  # (W, K)
        # neighbor_index[p, k] is the flat source pixel of output pixel p for offset k
        self.neighbor_index = (rr[:, None, :] * w + cc[None, :, :]).reshape(h * w, k)
        self.weights = np.full(k, 1.0 / k)

    @property
    def is_identity(self) -> bool:
        return self.config.kind == "identity"

    @property
    def num_pixels(self) -> int:
        return self.shape[1] * self.shape[2]

    @cached_property
    def _matrix64(self):
        p, k = self.neighbor_index.shape
        rows = np.repeat(np.arange(p), k)
        m = sp.coo_matrix((np.tile(self.weights, p), (rows, self.neighbor_index.ravel())), shape=(p, p))
        return m.tocsr()  # duplicate (clamped) entries are summed here

    @cached_property
    def _matrix32(self):
        return self._matrix64.astype(np.float32)

    @cached_property
    def _adjoint64(self):
        return self._matrix64.T.tocsr()

    @cached_property
    def _adjoint32(self):
        return self._matrix32.T.tocsr()

    def dense_matrix(self) -> np.ndarray:
        """The ``(H*W, H*W)`` spatial averaging matrix in float64."""
        return self._matrix64.toarray()

    def row_sums(self) -> np.ndarray:
        return np.asarray(self._matrix64.sum(axis=1)).ravel()

    def _check(self, x):
        x = np.asarray(x)
        if x.shape[-3:] != self.shape:
            raise InputError(f"filter built for {self.shape}, got input {x.shape}")
        return x

    def _spatial(self, op32, op64, x):
        x = self._check(x)
        if x.dtype == np.float64:
            op = op64
        else:
            x = x.astype(np.float32, copy=False)
            op = op32
        flat = x.reshape(-1, self.num_pixels)
        return np.ascontiguousarray((op @ flat.T).T).reshape(x.shape)

    def apply(self, x):
        """Filter an image ``(C, H, W)`` or a batch ``(B, C, H, W)``."""
        if self.is_identity:
            return self._check(x).copy()
        return self._spatial(self._matrix32, self._matrix64, x)

    def adjoint_apply(self, g):
        """Apply the transpose operator (gradient pullback of ``apply``)."""
        if self.is_identity:
            return self._check(g).copy()
        return self._spatial(self._adjoint32, self._adjoint64, g)

    __call__ = apply

    def __repr__(self):
        return f"LinearFilter({self.config.label}, shape={self.shape})"


def build_filter(cfg: FilterConfig, shape) -> LinearFilter:
    return LinearFilter(cfg, shape)


def apply(filt: LinearFilter, x):
    return filt.apply(x)


def adjoint_apply(filt: LinearFilter, g):
    return filt.adjoint_apply(g)


def total_variation(x) -> float:
    """Anisotropic total variation summed over channels (and batch)."""
    x = np.asarray(x, dtype=np.float64)
    return float(np.abs(np.diff(x, axis=-1)).sum() + np.abs(np.diff(x, axis=-2)).sum())
