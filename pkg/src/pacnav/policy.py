"""Primitive-selection policy: fixed depth-filter branch plus learned residual.

The depth filter scores each motion primitive by the mean sensed depth in
the angular sector around the primitive's endpoint bearing, encoding the
heuristic of steering toward the deepest part of the scene.  A small dense
network (ELU hidden layers, tanh output, so residual scores stay inside
(-1, 1)) adds a learned correction, and the primitive with the highest
aggregate score wins, lowest index on ties.  Weights live in a single flat
vector so search and sampling treat policies as points in R^d.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sim import ray_offsets


@dataclass(frozen=True)
class PolicyArchitecture:
    """Layer sizes of the residual branch; d is the flat parameter count."""

    n_ray: int = 32
    hidden: tuple[int, ...] = (24,)
    n_primitives: int = 15

    def __post_init__(self):
        if self.n_ray < 1 or self.n_primitives < 1:
            raise ValueError("n_ray and n_primitives must be >= 1")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be >= 1")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        sizes = (self.n_ray, *self.hidden, self.n_primitives)
        return [(sizes[i + 1], sizes[i]) for i in range(len(sizes) - 1)]

    @property
    def d(self) -> int:
        return sum(o * i + o for o, i in self.layer_shapes)

    def to_dict(self) -> dict:
        return {
            "n_ray": self.n_ray,
            "hidden": list(self.hidden),
            "n_primitives": self.n_primitives,
            "d": self.d,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PolicyArchitecture":
        arch = cls(n_ray=int(data["n_ray"]), hidden=tuple(data["hidden"]),
                   n_primitives=int(data["n_primitives"]))
        if "d" in data and int(data["d"]) != arch.d:
            raise ValueError("architecture descriptor disagrees with parameter count")
        return arch


def decode_weights(flat, arch: PolicyArchitecture) -> list[tuple[np.ndarray, np.ndarray]]:
    """Flat vector -> [(W, b), ...], layer-major, weights row-major, bias after."""
    v = np.asarray(flat, dtype=float)
    if v.ndim != 1 or v.size != arch.d:
        raise ValueError(f"expected {arch.d} weights, got shape {v.shape}")
    layers = []
    pos = 0
    for out_n, in_n in arch.layer_shapes:
        w = v[pos:pos + out_n * in_n].reshape(out_n, in_n)
        pos += out_n * in_n
        b = v[pos:pos + out_n]
        pos += out_n
        layers.append((w, b))
    return layers


def encode_weights(layers, arch: PolicyArchitecture) -> np.ndarray:
    parts = []
    shapes = arch.layer_shapes
    if len(layers) != len(shapes):
        raise ValueError("layer count mismatch")
    for (w, b), (out_n, in_n) in zip(layers, shapes):
        w = np.asarray(w, dtype=float)
        b = np.asarray(b, dtype=float)
        if w.shape != (out_n, in_n) or b.shape != (out_n,):
            raise ValueError("layer shape mismatch")
        parts.append(w.reshape(-1))
        parts.append(b)
    return np.concatenate(parts)


def _elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, x, np.expm1(x))


def residual_forward(depths: np.ndarray, layers) -> np.ndarray:
    h = depths
    for w, b in layers[:-1]:
        h = _elu(w @ h + b)
    w, b = layers[-1]
    return np.tanh(w @ h + b)


class PlanningPolicy:
    """Maps a normalized depth array to a primitive index.

    Sector membership for the depth filter is precomputed from the sensor
    field of view and the primitive endpoint bearings; sector width is
    fov / n_primitives, and a sector that catches no ray falls back to the
    single nearest ray so every primitive always has a score.
    """

    def __init__(self, arch: PolicyArchitecture, library, fov_rad: float):
        if len(library) != arch.n_primitives:
            raise ValueError("library size and architecture disagree")
        self.arch = arch
        self.fov_rad = float(fov_rad)
        offsets = ray_offsets(arch.n_ray, self.fov_rad)
        width = self.fov_rad / arch.n_primitives
        sector = np.zeros((arch.n_primitives, arch.n_ray))
        for j, prim in enumerate(library):
            bearing = -math.atan2(prim.lateral_offset_m, prim.forward_advance_m)
            mask = np.abs(offsets - bearing) <= width / 2.0 + 1e-12
            if not mask.any():
                mask[np.argmin(np.abs(offsets - bearing))] = True
            sector[j, mask] = 1.0 / mask.sum()
        self._sector = sector

    def depth_filter_score(self, depths) -> np.ndarray:
        d = self._check_obs(depths)
        return self._sector @ d

    def residual_score(self, depths, weights) -> np.ndarray:
        d = self._check_obs(depths)
        return residual_forward(d, decode_weights(weights, self.arch))

    def select_primitive(self, depths, weights) -> int:
        d = self._check_obs(depths)
        layers = decode_weights(weights, self.arch)
        return int(np.argmax(self._sector @ d + residual_forward(d, layers)))

    def bind(self, weights):
        """Pre-decode weights; the returned callable is what rollouts use."""
        layers = decode_weights(weights, self.arch)
        sector = self._sector

        def select(depths: np.ndarray) -> int:
            return int(np.argmax(sector @ depths + residual_forward(depths, layers)))

        return select

    def _check_obs(self, depths) -> np.ndarray:
        d = np.asarray(getattr(depths, "depths", depths), dtype=float)
        if d.shape != (self.arch.n_ray,):
            raise ValueError(f"expected {self.arch.n_ray} rays, got shape {d.shape}")
        return d
