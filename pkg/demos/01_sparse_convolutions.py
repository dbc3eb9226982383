#!/usr/bin/env python3
"""Sparse convolutions on a cylindrical voxel grid.

Builds a small sparse tensor, runs a standard kernel and the equivalent
depthwise-separable pair over it, and compares their parameter and
multiply-add budgets.
"""

import numpy as np

from lim3d import (CylGridSpec, PointCloud, cost, glorot_kernel,
                   separable_conv, submanifold_conv, voxelize)

rng = np.random.default_rng(0)

# A ring of points around the sensor, voxelized into an 8 x 16 x 6 grid.
n = 400
rho = rng.uniform(3.0, 9.0, n)
phi = rng.uniform(-np.pi, np.pi, n)
pc = PointCloud(
    xyz=np.column_stack([rho * np.cos(phi), rho * np.sin(phi), rng.uniform(0, 3, n)]),
    intensity=rng.uniform(size=n),
)
grid = CylGridSpec(n_rho=8, n_phi=16, n_z=6, rho_max=10.0, z_range=(-0.5, 3.5))
tensor = voxelize(pc, grid)
print(f"voxelized {n} points -> {tensor.n_active} active sites, {tensor.channels} channels")

# Submanifold property: the active set never dilates.
standard = glorot_kernel("standard", 4, 16, 3, rng)
out = submanifold_conv(tensor, standard)
print(f"standard conv: {out.n_active} active sites (unchanged: "
      f"{out.coord_set() == tensor.coord_set()}), {out.channels} channels")

# The separable pair computes a spatial pass per channel, then mixes channels.
dw = glorot_kernel("depthwise", 4, 4, 3, rng)
pw = glorot_kernel("pointwise", 4, 16, 1, rng, bias=True)
sep = separable_conv(tensor, dw, pw)
print(f"separable conv: {sep.n_active} active sites, {sep.channels} channels")

# Cost accounting at a realistic layer width.
sites = tensor.n_active
wide_std = glorot_kernel("standard", 64, 64, 3, rng)
wide_dw = glorot_kernel("depthwise", 64, 64, 3, rng)
wide_pw = glorot_kernel("pointwise", 64, 64, 1, rng)
c_std = cost(wide_std, sites)
c_sep = cost((wide_dw, wide_pw), sites)
print(f"\n64 -> 64 channel layer over {sites} sites:")
print(f"  standard:  {c_std.trainable_params:7d} params, {c_std.mult_adds:11,d} mult-adds")
print(f"  separable: {c_sep.trainable_params:7d} params, {c_sep.mult_adds:11,d} mult-adds")
print(f"  parameter reduction: {c_std.trainable_params / c_sep.trainable_params:.1f}x")
