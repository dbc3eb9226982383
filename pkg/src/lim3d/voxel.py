"""Cylindrical sparse voxel tensors.

Points are binned in cylinder coordinates ``(rho, phi, z)``. Bin edges are
uniform and half-open: a point exactly on a boundary falls into the
higher-index bin, and ``phi = pi`` wraps onto the ``-pi`` edge. Per-voxel
features are the reduced point features ``(dx, dy, dz, intensity, *extra)``
where the offsets are measured from the voxel center; voxel labels are the
majority vote of point labels with ties broken toward the smaller class id.
"""

from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import CapacityError, DomainError, FormatError, ShapeError, ValidationError
from .pointcloud import PointCloud

__all__ = [
    "CylGridSpec",
    "SparseVoxelTensor",
    "voxelize",
    "densify",
    "sparsify",
    "save_tensor",
    "load_tensor",
]

log = logging.getLogger(__name__)

DENSIFY_GUARD = 10_000_000
_MAGIC = b"LSVT"
_VERSION = 1


@dataclass(frozen=True)
class CylGridSpec:
    """Cylindrical grid: `n_rho` x `n_phi` x `n_z` bins over
    ``[0, rho_max) x [-pi, pi) x [z_min, z_max)``."""

    n_rho: int
    n_phi: int
    n_z: int
    rho_max: float
    z_range: tuple[float, float]

    def __post_init__(self):
        if min(self.n_rho, self.n_phi, self.n_z) < 1:
            raise DomainError("all bin counts must be >= 1")
        if self.rho_max <= 0:
            raise DomainError("rho_max must be positive")
        if not self.z_range[0] < self.z_range[1]:
            raise DomainError(f"z_range must satisfy min < max, got {self.z_range}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_rho, self.n_phi, self.n_z)

    @property
    def n_cells(self) -> int:
        return self.n_rho * self.n_phi * self.n_z

    def voxel_centers(self, coords: np.ndarray) -> np.ndarray:
        """Cylindrical centers ``(rho, phi, z)`` of integer voxel coordinates."""
        coords = np.asarray(coords, dtype=np.float64)
        z_min, z_max = self.z_range
        rho = (coords[:, 0] + 0.5) * (self.rho_max / self.n_rho)
        phi = -np.pi + (coords[:, 1] + 0.5) * (2.0 * np.pi / self.n_phi)
        z = z_min + (coords[:, 2] + 0.5) * ((z_max - z_min) / self.n_z)
        return np.column_stack([rho, phi, z])


@dataclass(frozen=True)
class SparseVoxelTensor:
    """Active voxel coordinates plus a feature row per active site.

    Coordinates are lexicographically sorted, unique and in-bounds;
    features are float64 with one row per coordinate. `dropped_points`
    counts points discarded during voxelization (out of grid range).
    """

    grid: CylGridSpec
    coords: np.ndarray            # (v, 3) int64, sorted lexicographically
    features: np.ndarray          # (v, channels) float64
    labels: np.ndarray | None = None  # (v,) int64
    dropped_points: int = 0

    def __post_init__(self):
        coords = np.ascontiguousarray(self.coords, dtype=np.int64).reshape(-1, 3)
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        if features.ndim != 2 or len(features) != len(coords):
            raise ShapeError(f"features shape {features.shape} does not match {len(coords)} coords")
        if not np.isfinite(features).all():
            raise ValidationError("voxel features must be finite")
        if len(coords):
            if coords.min() < 0 or np.any(coords >= np.array(self.grid.shape)):
                raise ValidationError("voxel coordinates out of grid bounds")
            keys = self._keys_of(coords)
            if np.unique(keys).size != len(keys):
                raise ValidationError("duplicate voxel coordinates")
            order = np.argsort(keys, kind="stable")
            coords = coords[order]
            features = features[order]
            if self.labels is not None:
                labels = np.ascontiguousarray(self.labels, dtype=np.int64).reshape(-1)
                if len(labels) != len(coords):
                    raise ShapeError("labels length does not match coords")
                object.__setattr__(self, "labels", labels[order])
        for name, arr in (("coords", coords), ("features", features)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def _keys_of(self, coords: np.ndarray) -> np.ndarray:
        g = self.grid
        return (coords[:, 0] * g.n_phi + coords[:, 1]) * g.n_z + coords[:, 2]

    @property
    def n_active(self) -> int:
        return len(self.coords)

    @property
    def channels(self) -> int:
        return self.features.shape[1]

    def keys(self) -> np.ndarray:
        """Sorted linear cell indices of the active sites."""
        return self._keys_of(self.coords)

    def with_features(self, features: np.ndarray) -> "SparseVoxelTensor":
        return replace(self, features=features)

    def coord_set(self) -> set[tuple[int, int, int]]:
        return {tuple(c) for c in self.coords.tolist()}


# ---------------------------------------------------------------------------
# Voxelization
# ---------------------------------------------------------------------------


def voxelize(pc: PointCloud, grid: CylGridSpec, reducer: str = "mean") -> SparseVoxelTensor:
    """Bin a cloud into the cylindrical grid.

    Points with ``rho >= rho_max`` or ``z`` outside the grid are dropped;
    the count is logged and recorded on the result. Feature rows are
    ``(dx, dy, dz, intensity, *extra_features)`` reduced per voxel with
    `reducer` (``mean`` or ``max``); offsets are from the voxel center in
    Cartesian coordinates.
    """
    if reducer not in ("mean", "max"):
        raise DomainError(f"reducer must be 'mean' or 'max', got {reducer!r}")

    xyz = pc.xyz.astype(np.float64)
    rho = np.hypot(xyz[:, 0], xyz[:, 1])
    phi = np.arctan2(xyz[:, 1], xyz[:, 0])
    z = xyz[:, 2]
    z_min, z_max = grid.z_range

    keep = (rho < grid.rho_max) & (z >= z_min) & (z < z_max)
    dropped = int(len(pc) - keep.sum())
    if dropped:
        log.info("voxelize: dropped %d of %d points outside the grid", dropped, len(pc))

    i_rho = np.floor(rho[keep] / grid.rho_max * grid.n_rho).astype(np.int64)
    i_phi = np.floor((phi[keep] + np.pi) / (2.0 * np.pi) * grid.n_phi).astype(np.int64) % grid.n_phi
    i_z = np.floor((z[keep] - z_min) / (z_max - z_min) * grid.n_z).astype(np.int64)
    i_rho = np.minimum(i_rho, grid.n_rho - 1)  # guards rho == rho_max*(1-eps) float edge
    i_z = np.minimum(i_z, grid.n_z - 1)
    coords_all = np.column_stack([i_rho, i_phi, i_z])

    base = [xyz[keep], pc.intensity[keep].astype(np.float64)[:, None]]
    if pc.extra_features is not None:
        base.append(pc.extra_features[keep].astype(np.float64))
    point_feats = np.hstack(base)

    if coords_all.shape[0] == 0:
        channels = point_feats.shape[1]
        empty_labels = np.empty(0, dtype=np.int64) if pc.labels is not None else None
        return SparseVoxelTensor(grid=grid, coords=np.empty((0, 3), dtype=np.int64),
                                 features=np.empty((0, channels)),
                                 labels=empty_labels, dropped_points=dropped)

    keys = (coords_all[:, 0] * grid.n_phi + coords_all[:, 1]) * grid.n_z + coords_all[:, 2]
    uniq_keys, inverse = np.unique(keys, return_inverse=True)
    n_voxels = uniq_keys.size
    coords = np.column_stack([
        uniq_keys // (grid.n_phi * grid.n_z),
        (uniq_keys // grid.n_z) % grid.n_phi,
        uniq_keys % grid.n_z,
    ])

    if reducer == "mean":
        sums = np.zeros((n_voxels, point_feats.shape[1]))
        np.add.at(sums, inverse, point_feats)
        counts = np.bincount(inverse, minlength=n_voxels).astype(np.float64)
        feats = sums / counts[:, None]
    else:
        feats = np.full((n_voxels, point_feats.shape[1]), -np.inf)
        np.maximum.at(feats, inverse, point_feats)

    # Offsets relative to voxel centers replace the absolute coordinates.
    centers_cyl = grid.voxel_centers(coords)
    centers_xyz = np.column_stack([
        centers_cyl[:, 0] * np.cos(centers_cyl[:, 1]),
        centers_cyl[:, 0] * np.sin(centers_cyl[:, 1]),
        centers_cyl[:, 2],
    ])
    feats[:, :3] -= centers_xyz

    labels = None
    if pc.labels is not None:
        kept_labels = pc.labels[keep]
        n_classes = int(kept_labels.max()) + 1 if kept_labels.size else 1
        votes = np.zeros((n_voxels, n_classes), dtype=np.int64)
        np.add.at(votes, (inverse, kept_labels), 1)
        labels = votes.argmax(axis=1)  # argmax takes the smallest id on ties

    return SparseVoxelTensor(grid=grid, coords=coords, features=feats,
                             labels=labels, dropped_points=dropped)


# ---------------------------------------------------------------------------
# Dense round trips (oracle support)
# ---------------------------------------------------------------------------


def densify(t: SparseVoxelTensor) -> np.ndarray:
    """Expand to a dense ``(n_rho, n_phi, n_z, channels)`` array of float64."""
    size = t.grid.n_cells * t.channels
    if size > DENSIFY_GUARD:
        raise CapacityError(f"dense array of {size} elements exceeds the {DENSIFY_GUARD} guard")
    dense = np.zeros(t.grid.shape + (t.channels,), dtype=np.float64)
    if t.n_active:
        dense[t.coords[:, 0], t.coords[:, 1], t.coords[:, 2]] = t.features
    return dense


def sparsify(dense: np.ndarray, grid: CylGridSpec) -> SparseVoxelTensor:
    """Inverse of `densify`; all-zero feature rows become inactive sites."""
    dense = np.asarray(dense, dtype=np.float64)
    if dense.shape[:3] != grid.shape:
        raise ShapeError(f"dense shape {dense.shape[:3]} != grid shape {grid.shape}")
    active = np.argwhere(np.any(dense != 0.0, axis=3))
    features = dense[active[:, 0], active[:, 1], active[:, 2]]
    return SparseVoxelTensor(grid=grid, coords=active, features=features)


# ---------------------------------------------------------------------------
# Serialization: versioned header, sorted coordinate list, feature block
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sB3xIIIdddIIB3x")  # magic, version, grid, channels, count, has_labels


def save_tensor(path: str | os.PathLike, t: SparseVoxelTensor) -> None:
    with open(path, "wb") as f:
        f.write(_HEADER.pack(
            _MAGIC, _VERSION, t.grid.n_rho, t.grid.n_phi, t.grid.n_z,
            t.grid.rho_max, t.grid.z_range[0], t.grid.z_range[1],
            t.channels, t.n_active, 1 if t.labels is not None else 0,
        ))
        f.write(t.coords.astype("<i4").tobytes())
        f.write(t.features.astype("<f8").tobytes())
        if t.labels is not None:
            f.write(t.labels.astype("<i4").tobytes())


def load_tensor(path: str | os.PathLike) -> SparseVoxelTensor:
    with open(path, "rb") as f:
        header = f.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, version, n_rho, n_phi, n_z, rho_max, z_min, z_max, channels, count, has_labels = \
            _HEADER.unpack(header)
        if magic != _MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != _VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        grid = CylGridSpec(n_rho=n_rho, n_phi=n_phi, n_z=n_z, rho_max=rho_max,
                           z_range=(z_min, z_max))
        coords = np.frombuffer(f.read(count * 3 * 4), dtype="<i4").reshape(count, 3)
        features = np.frombuffer(f.read(count * channels * 8), dtype="<f8").reshape(count, channels)
        labels = None
        if has_labels:
            labels = np.frombuffer(f.read(count * 4), dtype="<i4").astype(np.int64)
    return SparseVoxelTensor(grid=grid, coords=coords.astype(np.int64),
                             features=features.copy(), labels=labels)
