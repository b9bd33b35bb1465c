"""
Property checks on tiny meshes, run by the `check` command.
Each check returns a CheckResult; none of them writes files.
"""

import time as clock
from typing import Callable, List

import numpy as np
from pydantic import BaseModel

from .adapt import doerfler_mark
from .chstep import AlphaFunction, PhaseState, ch_step, frozen_energy, reduced_gradient
from .diagnostics import reduced_objective
from .fem import ScalarFieldP1, VectorFieldP2, interpolate_boundary, p2_node_coordinates
from .flow import solve_adjoint, solve_state
from .mesh import build_rectangle_mesh
from .state import BoundaryProfile, MarkingParams, OseenOptions, Params

UNIT_SQUARE = (0.0, 0.0, 1.0, 1.0)
CHANNEL = [
    BoundaryProfile(side="left", center=0.5, width=1.0, height=1.0, kind="inflow"),
    BoundaryProfile(side="right", center=0.5, width=1.0, height=1.0, kind="outflow"),
]


class CheckResult(BaseModel):
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _smooth_phase(mesh) -> ScalarFieldP1:
    return ScalarFieldP1.interpolate(mesh, lambda x, y: 0.6 * np.cos(np.pi * x) * np.cos(np.pi * y))


def check_poiseuille() -> CheckResult:
    """Stokes channel without porous drag reproduces the parabola at every P2 node."""
    mesh = build_rectangle_mesh(UNIT_SQUARE, 1.0 / 32)
    trace = interpolate_boundary(CHANNEL, mesh)
    phi = ScalarFieldP1.constant(mesh, 1.0)
    flow = solve_state(phi, trace, 1.0, lambda p: np.zeros_like(p), OseenOptions(stokes=True))
    y = p2_node_coordinates(mesh)[:, 1]
    error = float(np.max(np.abs(flow.u.values[0] - 4.0 * y * (1.0 - y))) + np.max(np.abs(flow.u.values[1])))
    return CheckResult(name="poiseuille", passed=error < 1e-10, detail=f"max nodal error {error:.2e}")


def check_mass_and_energy() -> CheckResult:
    """One Cahn-Hilliard step keeps the mass and lowers the frozen-field energy."""
    mesh = build_rectangle_mesh(UNIT_SQUARE, 1.0 / 64)
    params = Params(gamma=0.1, epsilon=0.05)
    alpha = AlphaFunction.from_params(params)
    phase = PhaseState.from_phi(_smooth_phase(mesh))
    u = VectorFieldP2.interpolate(mesh, lambda x, y: (np.sin(np.pi * y), 0.0 * x))
    new = ch_step(phase, u, None, 0.01, params, alpha)
    drift = abs(new.mass - phase.mass)
    before = frozen_energy(phase.phi, u, None, params, alpha)
    after = frozen_energy(new.phi, u, None, params, alpha)
    passed = drift <= 1e-8 * mesh.domain_area and after <= before
    return CheckResult(name="mass_and_energy", passed=passed,
                       detail=f"mass drift {drift:.2e}, energy {before:.6g} -> {after:.6g}")


def check_gradient(directions: int = 4, h: float = 1e-5, seed: int = 0) -> CheckResult:
    """Assembled reduced gradient against central differences of the reduced objective."""
    mesh = build_rectangle_mesh(UNIT_SQUARE, 1.0 / 64)
    params = Params(gamma=0.01, epsilon=0.05, alpha_bar=5.0)
    alpha = AlphaFunction.from_params(params)
    options = OseenOptions(tolerance=1e-13, self_consistent_adjoint=True)
    trace = interpolate_boundary(CHANNEL, mesh)
    phi = _smooth_phase(mesh)

    _, flow = reduced_objective(phi, trace, params, alpha, options)
    adjoint = solve_adjoint(phi, flow, None, params.mu, alpha, options)
    gradient = reduced_gradient(phi, flow.u, adjoint.q, params, alpha)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(directions):
        d = rng.standard_normal(mesh.n_vertices)
        d -= d.mean()
        plus, _ = reduced_objective(phi.with_values(phi.values + h * d), trace, params, alpha, options)
        minus, _ = reduced_objective(phi.with_values(phi.values - h * d), trace, params, alpha, options)
        fd = (plus - minus) / (2.0 * h)
        exact = float(gradient @ d)
        worst = max(worst, abs(fd - exact) / max(abs(fd), 1e-14))
    return CheckResult(name="gradient", passed=worst <= 1e-4, detail=f"worst relative error {worst:.2e}")


def check_marking() -> CheckResult:
    """Hand-computed Doerfler examples on an all-admissible mesh."""
    mesh = build_rectangle_mesh(UNIT_SQUARE, 0.25)
    mp = MarkingParams(theta_r=0.5, theta_c=0.05, a_min=1e-9, a_max=10.0)
    eta = np.array([4.0, 3.0, 2.0, 1.0])
    refine, coarsen = doerfler_mark(eta, mp, mesh)
    passed = refine.tolist() == [0, 1] and coarsen.size == 0
    return CheckResult(name="marking", passed=passed, detail=f"refine {refine.tolist()}, coarsen {coarsen.tolist()}")


CHECKS: List[Callable[[], CheckResult]] = [check_poiseuille, check_mass_and_energy, check_marking, check_gradient]


def run_checks() -> List[CheckResult]:
    results = []
    for check in CHECKS:
        started = clock.perf_counter()
        try:
            result = check()
        except Exception as e:
            result = CheckResult(name=check.__name__.replace("check_", ""), passed=False, detail=f"raised {e!r}")
        result.seconds = clock.perf_counter() - started
        results.append(result)
    return results
