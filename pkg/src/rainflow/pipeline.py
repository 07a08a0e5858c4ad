"""Outer alternation: separate layers, re-estimate flow, repeat.

Rain contaminates the fine-detail layer, so flow is matched between the
piecewise-smooth background layers and their residue channels instead of
between raw frames. Each outer iteration re-anchors frame 1's layer to
frame 2's layer warped by the current flow (and vice versa through the
approximate inverse flow), then re-solves the flow on the refreshed layers.
The full objective is evaluated once per iteration; an iteration that fails
to decrease it is rolled back and the loop stops, so the reported trace is
non-increasing by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .decompose import L0Params, detail_layer, separate_layer
from .flow import EnergyReport, FlowSolveParams, energy, solve_flow
from .imagecore import FlowField, Image, warp_with_mask, zero_flow
from .residue import residue_channel, weight_map

__all__ = [
    "SolverParams",
    "PipelineResult",
    "estimate",
    "inverse_flow",
    "inverse_flow_with_mask",
]


@dataclass(frozen=True)
class SolverParams:
    """Everything the full solver needs, including ablation switches.

    max_iters is the outer iteration budget; 0 is a documented degenerate
    mode that returns the initialization (raw frames as layers, one flow
    solve). use_residue / use_decomposition turn the two contributions off
    for baseline comparisons. sequential_layer_update feeds frame 2's layer
    update with the freshly updated frame-1 layer instead of the previous
    iteration's.
    """

    flow: FlowSolveParams = field(default_factory=FlowSolveParams)
    l0: L0Params = field(default_factory=L0Params)
    gamma: float = 2.0
    max_iters: int = 5
    energy_tolerance: float = 1e-4
    use_residue: bool = True
    use_decomposition: bool = True
    sequential_layer_update: bool = False

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.max_iters < 0:
            raise ValueError(f"max_iters must be non-negative, got {self.max_iters}")
        if self.energy_tolerance < 0:
            raise ValueError(f"energy_tolerance must be non-negative, got {self.energy_tolerance}")


@dataclass(frozen=True, eq=False)
class PipelineResult:
    flow: FlowField
    J1: Image
    J2: Image
    L1: Image
    L2: Image
    energy_trace: tuple[EnergyReport, ...]
    iterations_run: int


def inverse_flow_with_mask(flow: FlowField) -> tuple[FlowField, np.ndarray]:
    """Approximate backward field: v such that v(x + u(x)) is about -u(x).

    Each source pixel splats -u onto the four integer neighbors of its
    target with bilinear weights. Uncovered pixels are filled from the
    nearest covered one and reported False in the mask.
    """
    h, w = flow.height, flow.width
    ys, xs = np.indices((h, w), dtype=np.float64)
    tx = (xs + flow.u).ravel()
    ty = (ys + flow.v).ravel()
    x0 = np.floor(tx).astype(np.intp)
    y0 = np.floor(ty).astype(np.intp)
    fx = tx - x0
    fy = ty - y0
    wsum = np.zeros((h, w))
    usum = np.zeros((h, w))
    vsum = np.zeros((h, w))
    nu = -flow.u.ravel()
    nv = -flow.v.ravel()
    for cx, cy, wt in (
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1, y0, fx * (1.0 - fy)),
        (x0, y0 + 1, (1.0 - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ):
        ok = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h) & (wt > 0.0)
        np.add.at(wsum, (cy[ok], cx[ok]), wt[ok])
        np.add.at(usum, (cy[ok], cx[ok]), wt[ok] * nu[ok])
        np.add.at(vsum, (cy[ok], cx[ok]), wt[ok] * nv[ok])
    covered = wsum > 1e-8
    if not covered.any():
        return zero_flow(h, w), covered
    safe = np.where(covered, wsum, 1.0)
    inv_u = usum / safe
    inv_v = vsum / safe
    _, (iy, ix) = ndimage.distance_transform_edt(~covered, return_indices=True)
    return FlowField(inv_u[iy, ix], inv_v[iy, ix]), covered


def inverse_flow(u: FlowField) -> FlowField:
    return inverse_flow_with_mask(u)[0]


def _zero_like(img: Image) -> Image:
    return Image(np.zeros((img.height, img.width)))


def estimate(I1: Image, I2: Image, params: SolverParams) -> PipelineResult:
    """Run the full alternation on one frame pair."""
    if I1.shape != I2.shape:
        raise ValueError(f"frame shapes differ: {I1.shape} vs {I2.shape}")
    if I1.channels != 3:
        raise ValueError("the solver needs 3-channel frames (the residue term is chroma-based)")

    W = weight_map(I1, params.gamma) if params.use_residue else _zero_like(I1)
    J1, J2 = I1, I2
    R1 = residue_channel(J1)
    R2 = residue_channel(J2)
    u = solve_flow(J1, J2, R1, R2, W, zero_flow(I1.height, I1.width), params.flow)
    trace = [energy(J1, J2, R1, R2, W, u, I1, I2, params.flow, params.l0)]
    iterations = 0

    for i in range(1, params.max_iters + 1):
        if params.use_decomposition:
            j2_warped, m2 = warp_with_mask(J2, u)
            J1_new = separate_layer(I1, j2_warped, Image(m2.astype(np.float64)), params.l0)
            back_source = J1_new if params.sequential_layer_update else J1
            back, covered = inverse_flow_with_mask(u)
            j1_warped, m1 = warp_with_mask(back_source, back)
            J2_new = separate_layer(
                I2, j1_warped, Image((m1 & covered).astype(np.float64)), params.l0
            )
        else:
            J1_new, J2_new = J1, J2
        R1_new = residue_channel(J1_new)
        R2_new = residue_channel(J2_new)
        u_new = solve_flow(J1_new, J2_new, R1_new, R2_new, W, u, params.flow)
        report = energy(J1_new, J2_new, R1_new, R2_new, W, u_new, I1, I2, params.flow, params.l0)
        prev = trace[-1].total
        if report.total > prev:
            break
        trace.append(report)
        J1, J2, R1, R2, u = J1_new, J2_new, R1_new, R2_new, u_new
        iterations = i
        rel_drop = (prev - report.total) / max(abs(prev), 1e-30)
        if rel_drop < params.energy_tolerance:
            break

    return PipelineResult(
        flow=u,
        J1=J1,
        J2=J2,
        L1=detail_layer(I1, J1),
        L2=detail_layer(I2, J2),
        energy_trace=tuple(trace),
        iterations_run=iterations,
    )
