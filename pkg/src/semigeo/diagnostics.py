"""Physical diagnostics of a geopotential state: energy, geostrophic measure,
norm growth, convexity, and conservativity monitors.

All integrals use the midpoint rule on cell centers, consistent with the
second-order stencils elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import curl, gradient, lp_norm, sobolev_norm

__all__ = [
    "DiagnosticsRecord",
    "PushforwardHistogram",
    "SupportCheck",
    "energy",
    "pushforward_histogram",
    "support_bound_check",
    "curl_residual",
    "emit_record",
]


@dataclass(frozen=True)
class DiagnosticsRecord:
    """One row of the per-step time series.

    All entries are finite; the estimate ratios are None when the curl source
    vanishes (nothing to compare against).
    """

    step: int
    time: float
    energy: float
    norm_l2: float
    norm_lp: float
    norm_linf: float
    norm_w3p: float
    lambda_min: float
    lambda_argmin: tuple[int, int, int]
    curl_residual: float
    bbox_min: tuple[float, float, float]
    bbox_max: tuple[float, float, float]
    u_max: float
    solver_iterations: int
    solver_residual: float
    est_ratio_u: float | None = None
    est_ratio_au: float | None = None

    def __post_init__(self):
        numbers = [self.time, self.energy, self.norm_l2, self.norm_lp,
                   self.norm_linf, self.norm_w3p, self.lambda_min,
                   self.curl_residual, self.u_max, self.solver_residual,
                   *self.bbox_min, *self.bbox_max]
        if not all(np.isfinite(v) for v in numbers):
            raise ValueError("diagnostics record contains non-finite entries")


@dataclass(frozen=True)
class PushforwardHistogram:
    """Histogram of the geostrophic measure: pushforward of the normalised
    cell measure under grad P, binned over its exact bounding box."""

    edges: tuple  # three 1-d arrays of bin edges
    masses: np.ndarray  # (bx, by, bz), sums to 1

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.masses))

    @property
    def support_box(self) -> tuple:
        lo = tuple(float(e[0]) for e in self.edges)
        hi = tuple(float(e[-1]) for e in self.edges)
        return lo, hi


def energy(s) -> float:
    """Geostrophic energy  1/2 int (x1-T1)^2 + (x2-T2)^2 - 2 x3 T3 dx  with
    T = grad P, midpoint rule, not volume-normalised."""
    x = s.spec.cell_centers()
    t = s.grad_p.values
    density = 0.5 * (
        (x[..., 0] - t[..., 0]) ** 2
        + (x[..., 1] - t[..., 1]) ** 2
        - 2.0 * x[..., 2] * t[..., 2]
    )
    return float(np.sum(density) * s.spec.cell_volume)


def pushforward_histogram(s, bins=16) -> PushforwardHistogram:
    """Each cell deposits its normalised volume weight 1/N into the bin
    containing its grad P value; bins tile the exact componentwise bounding
    box (degenerate axes widened symmetrically)."""
    t = s.grad_p.values.reshape(-1, 3)
    n = t.shape[0]
    ranges = []
    for a in range(3):
        lo, hi = float(np.min(t[:, a])), float(np.max(t[:, a]))
        if hi <= lo:
            lo, hi = lo - 0.5, hi + 0.5
        ranges.append((lo, hi))
    masses, edges = np.histogramdd(t, bins=bins, range=ranges)
    return PushforwardHistogram(edges=tuple(edges), masses=masses / n)


@dataclass(frozen=True)
class SupportCheck:
    step: int
    time: float
    value: float  # |grad P(t)|_inf
    envelope: float

    @property
    def margin(self) -> float:
        return self.envelope - self.value

    @property
    def passed(self) -> bool:
        return self.value <= self.envelope * (1.0 + 1e-12) + 1e-12


def support_bound_check(states) -> list[SupportCheck]:
    """Exponential support envelope |grad P(t)|_inf <= (|grad P0|_inf + m) e^t - m
    with m the farthest corner radius of the domain; the discrete form of the
    growth argument behind the bounded-support property."""
    if not states:
        return []
    m = states[0].spec.corner_radius()
    t0 = states[0].time
    base = lp_norm(states[0].grad_p, np.inf) + m
    checks = []
    for j, s in enumerate(states):
        value = lp_norm(s.grad_p, np.inf)
        envelope = base * np.exp(s.time - t0) - m
        checks.append(SupportCheck(step=j, time=s.time, value=value, envelope=envelope))
    return checks


def curl_residual(s) -> float:
    """Max magnitude of curl(grad P) over cells two layers in from each face;
    zero to rounding because the transported field is a stored gradient."""
    c = curl(gradient(s.p)).values
    interior = c[2:-2, 2:-2, 2:-2]
    if interior.size == 0:
        return 0.0
    return float(np.max(np.sqrt(np.sum(interior**2, axis=-1))))


def emit_record(s, solution, constants, step: int = 0) -> DiagnosticsRecord:
    """Assemble the full record for one state; pure function of its inputs."""
    t = s.grad_p.values
    bbox_min = tuple(float(v) for v in t.reshape(-1, 3).min(axis=0))
    bbox_max = tuple(float(v) for v in t.reshape(-1, 3).max(axis=0))
    if solution is None:
        u_max, iters, resid = 0.0, 0, 0.0
        ratio_u = ratio_au = None
    else:
        u_max = lp_norm(solution.u, np.inf)
        iters = solution.iterations
        resid = solution.residual
        ratio_u = solution.est_ratio_u
        ratio_au = solution.est_ratio_au
    return DiagnosticsRecord(
        step=step,
        time=s.time,
        energy=energy(s),
        norm_l2=lp_norm(s.grad_p, 2),
        norm_lp=lp_norm(s.grad_p, constants.p),
        norm_linf=lp_norm(s.grad_p, np.inf),
        norm_w3p=sobolev_norm(s.p, 3, constants.p),
        lambda_min=s.lambda_min,
        lambda_argmin=s.lambda_argmin,
        curl_residual=curl_residual(s),
        bbox_min=bbox_min,
        bbox_max=bbox_max,
        u_max=u_max,
        solver_iterations=iters,
        solver_residual=resid,
        est_ratio_u=ratio_u,
        est_ratio_au=ratio_au,
    )
