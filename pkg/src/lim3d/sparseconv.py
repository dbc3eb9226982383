"""Submanifold sparse convolutions on cylindrical voxel grids.

The spatial kernels never dilate activity: the output active-site set is
exactly the input active-site set, and each output sums kernel taps only
over active neighbors. The azimuth axis wraps circularly (cylindrical
topology); taps falling outside the radius or height extent contribute
nothing.

A depthwise separable convolution is the composition of a depthwise
spatial kernel (one filter per channel) and a pointwise 1x1x1 channel mix.
For kernel size ``D`` it needs ``M*D^3 + M*N`` weights against the
``M*N*D^3`` of a standard kernel.

Forward passes run through the `autodiff` tensor type, so wrapping the
input features in a ``Tensor(..., requires_grad=True)`` and calling
``backward()`` on any scalar of the output yields exact gradients for
weights, biases and input features.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .autodiff import Tensor, as_tensor, scatter_rows
from .errors import DomainError, ShapeError, ValidationError
from .voxel import CylGridSpec, SparseVoxelTensor

__all__ = [
    "ConvKernel",
    "CostReport",
    "identity_kernel",
    "glorot_kernel",
    "Rulebook",
    "build_rulebook",
    "submanifold_conv",
    "sparse_pointwise_conv",
    "separable_conv",
    "strided_conv",
    "apply_spatial",
    "apply_pointwise",
    "cost",
]

KERNEL_KINDS = ("standard", "depthwise", "pointwise")


@dataclass(frozen=True)
class ConvKernel:
    """Weights for one convolution.

    Weight shapes by kind:
      * ``standard``:  ``(D, D, D, in_channels, out_channels)``
      * ``depthwise``: ``(D, D, D, in_channels)`` with in == out channels
      * ``pointwise``: ``(in_channels, out_channels)`` with kernel_size 1
    """

    kind: str
    in_channels: int
    out_channels: int
    kernel_size: int
    weights: np.ndarray
    bias: np.ndarray | None = None
    stride: int = 1

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise DomainError(f"kernel kind must be one of {KERNEL_KINDS}, got {self.kind!r}")
        if self.stride != 1:
            raise DomainError("only stride 1 kernels are supported")
        d, m, n = self.kernel_size, self.in_channels, self.out_channels
        if self.kind == "pointwise":
            if d != 1:
                raise DomainError("pointwise kernels require kernel_size == 1")
            expect = (m, n)
        else:
            if d < 1 or d % 2 == 0:
                raise DomainError(f"spatial kernel_size must be odd, got {d}")
            if self.kind == "depthwise":
                if m != n:
                    raise ShapeError("depthwise kernels require in_channels == out_channels")
                expect = (d, d, d, m)
            else:
                expect = (d, d, d, m, n)
        weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        if weights.shape != expect:
            raise ShapeError(f"{self.kind} weights must have shape {expect}, got {weights.shape}")
        if not np.isfinite(weights).all():
            raise ValidationError("kernel weights must be finite")
        object.__setattr__(self, "weights", weights)
        if self.bias is not None:
            bias = np.ascontiguousarray(self.bias, dtype=np.float64).reshape(-1)
            if bias.shape != (n,):
                raise ShapeError(f"bias must have shape ({n},), got {bias.shape}")
            object.__setattr__(self, "bias", bias)

    @property
    def n_params(self) -> int:
        return self.weights.size + (0 if self.bias is None else self.bias.size)


def identity_kernel(kind: str, channels: int, kernel_size: int = 3) -> ConvKernel:
    """Kernel whose output equals its input (center tap = identity map)."""
    c = (kernel_size - 1) // 2
    if kind == "standard":
        w = np.zeros((kernel_size,) * 3 + (channels, channels))
        w[c, c, c] = np.eye(channels)
    elif kind == "depthwise":
        w = np.zeros((kernel_size,) * 3 + (channels,))
        w[c, c, c] = 1.0
    elif kind == "pointwise":
        return ConvKernel("pointwise", channels, channels, 1, np.eye(channels))
    else:
        raise DomainError(f"unknown kernel kind {kind!r}")
    return ConvKernel(kind, channels, channels, kernel_size, w)


def glorot_kernel(kind: str, in_channels: int, out_channels: int,
                  kernel_size: int, rng: np.random.Generator,
                  bias: bool = False) -> ConvKernel:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out))."""
    d3 = kernel_size ** 3
    if kind == "standard":
        fan_in, fan_out = in_channels * d3, out_channels * d3
        shape = (kernel_size,) * 3 + (in_channels, out_channels)
    elif kind == "depthwise":
        fan_in = fan_out = d3
        shape = (kernel_size,) * 3 + (in_channels,)
    elif kind == "pointwise":
        fan_in, fan_out = in_channels, out_channels
        shape = (in_channels, out_channels)
    else:
        raise DomainError(f"unknown kernel kind {kind!r}")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    weights = rng.uniform(-limit, limit, shape)
    b = np.zeros(out_channels) if bias else None
    return ConvKernel(kind, in_channels, out_channels, kernel_size, weights, bias=b)


# ---------------------------------------------------------------------------
# Rulebook: per kernel offset, the (input row, output row) pairs to visit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Rulebook:
    kernel_size: int
    n_sites: int
    offsets: tuple[tuple[int, int, int], ...]
    pairs: tuple[tuple[np.ndarray, np.ndarray], ...]  # (in_rows, out_rows) per offset

    @property
    def n_pairs(self) -> int:
        return sum(len(i) for i, _ in self.pairs)


def build_rulebook(coords: np.ndarray, grid: CylGridSpec, kernel_size: int) -> Rulebook:
    """Neighbor pairs for every kernel offset over the given active sites."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    n = len(coords)
    keys = (coords[:, 0] * grid.n_phi + coords[:, 1]) * grid.n_z + coords[:, 2]
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]

    r = (kernel_size - 1) // 2
    offsets = []
    pairs = []
    for d_rho, d_phi, d_z in product(range(-r, r + 1), repeat=3):
        offsets.append((d_rho, d_phi, d_z))
        if n == 0:
            pairs.append((np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)))
            continue
        n_rho = coords[:, 0] + d_rho
        n_phi = (coords[:, 1] + d_phi) % grid.n_phi
        n_z = coords[:, 2] + d_z
        valid = (n_rho >= 0) & (n_rho < grid.n_rho) & (n_z >= 0) & (n_z < grid.n_z)
        neigh_keys = (n_rho[valid] * grid.n_phi + n_phi[valid]) * grid.n_z + n_z[valid]
        pos = np.searchsorted(sorted_keys, neigh_keys)
        pos_clip = np.minimum(pos, n - 1)
        found = sorted_keys[pos_clip] == neigh_keys
        out_rows = np.flatnonzero(valid)[found]
        in_rows = order[pos_clip[found]]
        pairs.append((in_rows, out_rows))
    return Rulebook(kernel_size=kernel_size, n_sites=n,
                    offsets=tuple(offsets), pairs=tuple(pairs))


# ---------------------------------------------------------------------------
# Forward passes (autodiff-traced)
# ---------------------------------------------------------------------------


def apply_spatial(features: Tensor | np.ndarray, rulebook: Rulebook,
                  kernel: ConvKernel,
                  weights: Tensor | None = None,
                  bias: Tensor | None = None) -> Tensor:
    """Standard or depthwise spatial convolution over precomputed pairs.

    `weights`/`bias` override the kernel arrays with live tensors during
    training; otherwise the kernel arrays enter the graph as constants.
    """
    x = as_tensor(features)
    if x.shape[1] != kernel.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {kernel.in_channels}")
    if rulebook.kernel_size != kernel.kernel_size:
        raise ShapeError("rulebook kernel size does not match the kernel")
    w = as_tensor(kernel.weights if weights is None else weights)
    d = kernel.kernel_size
    flat_w = w.reshape((d ** 3,) + w.shape[3:])

    out = Tensor(np.zeros((rulebook.n_sites, kernel.out_channels)))
    for tap, (in_rows, out_rows) in enumerate(rulebook.pairs):
        if len(in_rows) == 0:
            continue
        gathered = x.take(in_rows)
        if kernel.kind == "depthwise":
            contrib = gathered * flat_w.take([tap]).reshape((kernel.in_channels,))
        else:
            contrib = gathered @ flat_w.take([tap]).reshape((kernel.in_channels, kernel.out_channels))
        out = out + scatter_rows(rulebook.n_sites, out_rows, contrib)
    if kernel.bias is not None or bias is not None:
        out = out + as_tensor(kernel.bias if bias is None else bias)
    return out


def apply_pointwise(features: Tensor | np.ndarray, kernel: ConvKernel,
                    weights: Tensor | None = None,
                    bias: Tensor | None = None) -> Tensor:
    x = as_tensor(features)
    if x.shape[1] != kernel.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {kernel.in_channels}")
    out = x @ as_tensor(kernel.weights if weights is None else weights)
    if kernel.bias is not None or bias is not None:
        out = out + as_tensor(kernel.bias if bias is None else bias)
    return out


def submanifold_conv(t: SparseVoxelTensor, kernel: ConvKernel,
                     rulebook: Rulebook | None = None) -> SparseVoxelTensor:
    """Spatial convolution preserving the active-site set exactly."""
    if kernel.kind not in ("standard", "depthwise"):
        raise DomainError("submanifold_conv takes a standard or depthwise kernel")
    rb = rulebook if rulebook is not None else build_rulebook(t.coords, t.grid, kernel.kernel_size)
    out = apply_spatial(t.features, rb, kernel)
    return SparseVoxelTensor(grid=t.grid, coords=t.coords, features=out.data,
                             labels=t.labels, dropped_points=t.dropped_points)


def sparse_pointwise_conv(t: SparseVoxelTensor, kernel: ConvKernel) -> SparseVoxelTensor:
    """Per-site channel mix; the active set is untouched."""
    if kernel.kind != "pointwise":
        raise DomainError("sparse_pointwise_conv takes a pointwise kernel")
    out = apply_pointwise(t.features, kernel)
    return SparseVoxelTensor(grid=t.grid, coords=t.coords, features=out.data,
                             labels=t.labels, dropped_points=t.dropped_points)


def separable_conv(t: SparseVoxelTensor, depthwise: ConvKernel,
                   pointwise: ConvKernel) -> SparseVoxelTensor:
    """Depthwise spatial convolution followed by a pointwise channel mix."""
    if depthwise.kind != "depthwise" or pointwise.kind != "pointwise":
        raise DomainError("separable_conv takes (depthwise, pointwise) kernels")
    if depthwise.out_channels != pointwise.in_channels:
        raise ShapeError(
            f"depthwise outputs {depthwise.out_channels} channels, "
            f"pointwise expects {pointwise.in_channels}")
    return sparse_pointwise_conv(submanifold_conv(t, depthwise), pointwise)


def strided_conv(t: SparseVoxelTensor, kernel: ConvKernel, stride: int) -> SparseVoxelTensor:
    """Downsampling variant: a regular sparse convolution with stride.

    Departure from submanifold behavior: an output site exists wherever at
    least one kernel tap lands on an active input. Output site ``o`` reads
    input coordinates ``stride * o + offset``. The azimuth extent must be
    divisible by the stride so the circular wrap stays consistent.
    """
    if kernel.kind != "standard":
        raise DomainError("strided_conv takes a standard kernel")
    if stride < 1:
        raise DomainError("stride must be >= 1")
    g = t.grid
    if g.n_phi % stride != 0:
        raise DomainError(f"n_phi={g.n_phi} not divisible by stride={stride}")
    out_grid = CylGridSpec(
        n_rho=-(-g.n_rho // stride), n_phi=g.n_phi // stride, n_z=-(-g.n_z // stride),
        rho_max=g.rho_max, z_range=g.z_range)

    r = (kernel.kernel_size - 1) // 2
    in_index = {tuple(c): i for i, c in enumerate(t.coords.tolist())}
    d = kernel.kernel_size
    flat_w = kernel.weights.reshape(d ** 3, kernel.in_channels, kernel.out_channels)

    accum: dict[tuple[int, int, int], np.ndarray] = {}
    for tap, (d_rho, d_phi, d_z) in enumerate(product(range(-r, r + 1), repeat=3)):
        for (i_rho, i_phi, i_z), row in in_index.items():
            o_rho, rem_rho = divmod(i_rho - d_rho, stride)
            o_z, rem_z = divmod(i_z - d_z, stride)
            if rem_rho or rem_z:
                continue
            o_phi_raw = i_phi - d_phi
            o_phi, rem_phi = divmod(o_phi_raw % g.n_phi, stride)
            if rem_phi:
                continue
            if not (0 <= o_rho < out_grid.n_rho and 0 <= o_z < out_grid.n_z):
                continue
            key = (o_rho, o_phi, o_z)
            acc = accum.setdefault(key, np.zeros(kernel.out_channels))
            acc += t.features[row] @ flat_w[tap]
    if not accum:
        return SparseVoxelTensor(grid=out_grid, coords=np.empty((0, 3), dtype=np.int64),
                                 features=np.empty((0, kernel.out_channels)))
    coords = np.array(sorted(accum.keys()), dtype=np.int64)
    feats = np.stack([accum[tuple(c)] for c in coords.tolist()])
    if kernel.bias is not None:
        feats = feats + kernel.bias
    return SparseVoxelTensor(grid=out_grid, coords=coords, features=feats)


# ---------------------------------------------------------------------------
# Cost accounting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CostReport:
    trainable_params: int
    mult_adds: int

    def __post_init__(self):
        if self.trainable_params < 0 or self.mult_adds < 0:
            raise ValidationError("cost counts must be nonnegative")


def _params(kernel: ConvKernel) -> int:
    d3 = kernel.kernel_size ** 3
    m, n = kernel.in_channels, kernel.out_channels
    base = {"standard": m * n * d3, "depthwise": m * d3, "pointwise": m * n}[kernel.kind]
    return base + (0 if kernel.bias is None else n)


def cost(kernel, active_sites: int, neighbor_pairs: int | None = None) -> CostReport:
    """Trainable parameters and multiply-adds for one forward pass.

    `kernel` is a ConvKernel or a ``(depthwise, pointwise)`` pair. For
    spatial kernels the multiply-adds scale with the neighbor pairs
    actually visited; when `neighbor_pairs` is not given the fully-active
    neighborhood bound ``active_sites * kernel_size**3`` is assumed.
    """
    if active_sites < 0:
        raise DomainError("active_sites must be nonnegative")
    if isinstance(kernel, tuple):
        dw, pw = kernel
        if dw.kind != "depthwise" or pw.kind != "pointwise":
            raise DomainError("a kernel pair must be (depthwise, pointwise)")
        a = cost(dw, active_sites, neighbor_pairs)
        b = cost(pw, active_sites)
        return CostReport(a.trainable_params + b.trainable_params,
                          a.mult_adds + b.mult_adds)
    if active_sites == 0:
        return CostReport(_params(kernel), 0)
    m, n = kernel.in_channels, kernel.out_channels
    if kernel.kind == "pointwise":
        ma = active_sites * m * n
    else:
        pairs = neighbor_pairs if neighbor_pairs is not None \
            else active_sites * kernel.kernel_size ** 3
        ma = pairs * (m * n if kernel.kind == "standard" else m)
    return CostReport(_params(kernel), int(ma))
