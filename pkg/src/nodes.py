"""
LangGraph nodes of the phase-field flow optimizer.
One step of the loop is: time step, flow state, adjoint, Cahn-Hilliard step,
mesh adaptation and the monitor (continuation, stopping, snapshots).
"""

import time as clock
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .adapt import adapt_cycle, compute_indicators, next_time_step, refine_interface
from .chstep import AlphaFunction, PhaseState, ch_step
from .diagnostics import build_record, mixing_energy_fields
from .errors import LinearSolverError, MeshLimitError, NewtonNonConvergenceError, SolverError
from .events import EventAction, EventLevel, event_log
from .fem import DirichletTrace, ScalarFieldP1, interpolate_boundary, mass_matrix_p1
from .flow import check_mixing_assumption, solve_adjoint, solve_state
from .mesh import Mesh, build_rectangle_mesh
from .output import load_snapshot, save_snapshot, summary_row, write_history, write_summary, write_vtk
from .state import OptimizationState, RunConfig, RunHistory
from .config import Config


def _say(message: str):
    if Config.VERBOSE:
        print(message)


class OptimizationNodes:
    """Collection of nodes for the optimization workflow."""

    def __init__(self, config: RunConfig, output_dir: str):
        self.config = config
        self.output_dir = Path(output_dir)
        self._trace_mesh: Optional[Mesh] = None
        self._trace: Optional[DirichletTrace] = None

    def trace_for(self, mesh: Mesh) -> DirichletTrace:
        """Dirichlet data on the current mesh, rebuilt after every mesh change."""
        if self._trace_mesh is not mesh:
            b = self.config.boundary
            self._trace = interpolate_boundary(b.profiles, mesh, (b.background_x, b.background_y))
            self._trace_mesh = mesh
        return self._trace

    def alpha_for(self, state: OptimizationState) -> AlphaFunction:
        return AlphaFunction.from_params(self.config.params, alpha_bar=state['alpha_bar'])

    def _fail(self, state: OptimizationState, stage: str, error: Exception) -> OptimizationState:
        error_msg = f"{stage} failed at step {state['step']}: {error}"
        state['errors'].append(error_msg)
        state['current_step'] = f"{stage}_failed"
        event_log.log_solver_failure(state['step'], stage, str(error))
        return state

    # ------------------------------------------------------------------ loop

    def time_step_node(self, state: OptimizationState) -> OptimizationState:
        """Time increment from the current chemical potential."""
        state['tau'] = next_time_step(state['phase'].w, self.config.params.tau_max)
        state['retry_count'] = 0
        state['current_step'] = 'time_step_complete'
        return state

    def state_node(self, state: OptimizationState) -> OptimizationState:
        """Penalized Navier-Stokes solve for the current phase field."""
        started = clock.perf_counter()
        phase = state['phase']
        try:
            state['flow'] = solve_state(phase.phi, self.trace_for(phase.mesh), self.config.params.mu,
                                        self.alpha_for(state), self.config.solver)
            state['current_step'] = 'state_complete'
        except SolverError as e:
            self._fail(state, 'state', e)
        state['history'].add_timing('state', clock.perf_counter() - started)
        return state

    def adjoint_node(self, state: OptimizationState) -> OptimizationState:
        """
        Adjoint solve with the lagged convection term.

        After a mesh change the lagged adjoint is recomputed from zero with one
        extra lag sweep; it is never interpolated between meshes.
        """
        started = clock.perf_counter()
        phase, flow = state['phase'], state['flow']
        options = self.config.solver
        alpha = self.alpha_for(state)
        mu = self.config.params.mu
        try:
            fresh = state['mesh_changed'] or state['q_lag'] is None
            adjoint = solve_adjoint(phase.phi, flow, None if fresh else state['q_lag'], mu, alpha, options)
            if fresh and not options.self_consistent_adjoint and not options.stokes:
                adjoint = solve_adjoint(phase.phi, flow, adjoint.q, mu, alpha, options)
            state['adjoint'] = adjoint
            state['q_lag'] = adjoint.q
            state['mesh_changed'] = False
            minimum = check_mixing_assumption(flow.u, adjoint.q, step=state['step'])
            if minimum < 0:
                state['warnings'].append(f"step {state['step']}: 1/2|u|^2 - u.q reaches {minimum:.3e}")
            state['current_step'] = 'adjoint_complete'
        except SolverError as e:
            self._fail(state, 'adjoint', e)
        state['history'].add_timing('adjoint', clock.perf_counter() - started)
        return state

    def phase_node(self, state: OptimizationState) -> OptimizationState:
        """
        Cahn-Hilliard step with (u, q) frozen.

        A failed Newton solve halves tau and is retried up to max_retries times.
        """
        started = clock.perf_counter()
        params = self.config.params
        phase, flow, adjoint = state['phase'], state['flow'], state['adjoint']
        alpha = self.alpha_for(state)
        tau = state['tau']
        try:
            new_phase = ch_step(phase, flow.u, adjoint.q, tau, params, alpha)
        except (NewtonNonConvergenceError, LinearSolverError) as e:
            state['history'].add_timing('phase', clock.perf_counter() - started)
            if state['retry_count'] < state['max_retries']:
                state['retry_count'] += 1
                state['tau'] = 0.5 * tau
                state['current_step'] = 'phase_retry'
                state['warnings'].append(f"step {state['step']}: {e}; retrying with tau={state['tau']:.3e}")
                event_log.log(EventAction.STEP_RETRY, EventLevel.WARNING,
                              f"Cahn-Hilliard step failed, retrying with tau={state['tau']:.3e}",
                              step=state['step'], details={"tau": state['tau'], "error": str(e)})
                return state
            return self._fail(state, 'phase', e)

        step = state['step'] + 1
        record = build_record(step, state['time'] + tau, tau, state['alpha_bar'], phase.phi, flow, adjoint,
                              new_phase, params, alpha, state['adapting'], self.config.domain.area)
        history = state['history']
        history.records.append(record)
        history.mesh_sizes.append(new_phase.mesh.n_simplices)

        state['phase'] = new_phase
        state['step'] = step
        state['time'] += tau
        state['grad_w_norm'] = record.grad_w_norm
        state['last_record'] = record
        if state['w0_norm'] is None:
            w = new_phase.w.values
            state['w0_norm'] = float(np.sqrt(max(w @ (mass_matrix_p1(new_phase.mesh) @ w), 0.0)))

        elapsed = clock.perf_counter() - started
        history.add_timing('phase', elapsed)
        event_log.log_step(step, tau, record.grad_w_norm, record.n_simplices, int(1000 * elapsed))
        _say(f"step {step:4d}  tau={tau:.3e}  |grad w|={record.grad_w_norm:.3e}  "
             f"J={record.objective:.5g}  simplices={record.n_simplices}")
        state['current_step'] = 'phase_complete'
        return state

    def adapt_node(self, state: OptimizationState) -> OptimizationState:
        """Switch adaptation on when the trigger is met, then run one cycle."""
        started = clock.perf_counter()
        marking = self.config.marking
        if not state['adapting'] and marking.enabled:
            trigger = marking.start_below
            if trigger is None or state['grad_w_norm'] <= trigger:
                state['adapting'] = True
                _say(f"  mesh adaptation switched on at step {state['step']}")

        if state['adapting']:
            try:
                result = adapt_cycle(state['phase'], marking)
            except MeshLimitError as e:
                state['history'].add_timing('adapt', clock.perf_counter() - started)
                return self._fail(state, 'adapt', e)
            state['phase'] = result.phase
            state['mesh'] = result.mesh
            state['indicators'] = result.indicators
            if result.changed:
                state['mesh_changed'] = True
                event_log.log(EventAction.MESH_ADAPTED, step=state['step'],
                              details={"refined": result.refined, "coarsened": result.coarsened,
                                       "n_simplices": result.mesh.n_simplices})
        state['history'].add_timing('adapt', clock.perf_counter() - started)
        state['current_step'] = 'adapt_complete'
        return state

    def monitor_node(self, state: OptimizationState) -> OptimizationState:
        """Continuation schedule, stopping test and periodic snapshots."""
        stages = self.config.continuation.stages
        stopping = self.config.stopping
        grad_w = state['grad_w_norm']

        fired = False
        index = state['continuation_index']
        if index < len(stages) and grad_w <= stages[index].grad_w_below:
            state['alpha_bar'] = stages[index].alpha_bar
            state['continuation_index'] = index + 1
            fired = True
            event_log.log(EventAction.CONTINUATION, step=state['step'],
                          message=f"alpha_bar set to {state['alpha_bar']}",
                          details={"alpha_bar": state['alpha_bar'], "grad_w_norm": grad_w})
            _say(f"  continuation: alpha_bar -> {state['alpha_bar']}")

        exhausted = state['continuation_index'] >= len(stages)
        threshold = stopping.tol_abs + stopping.tol_rel * (state['w0_norm'] or 0.0)
        if not fired and exhausted and grad_w <= threshold:
            state['stop_reason'] = 'converged'
        elif state['step'] >= stopping.max_steps:
            state['stop_reason'] = 'max_steps'

        cadence = self.config.output.cadence
        if state['stop_reason']:
            self.finalize(state)
            state['current_step'] = 'completed'
        else:
            if cadence and state['step'] % cadence == 0:
                self.write_snapshot(state, f"step_{state['step']:05d}")
            state['current_step'] = 'monitor_complete'
        return state

    def abort_node(self, state: OptimizationState) -> OptimizationState:
        """Write the last consistent state and the history, then stop."""
        reason = state['errors'][-1] if state['errors'] else state['current_step']
        state['stop_reason'] = f"aborted: {reason}"
        state['history'].stop_reason = state['stop_reason']
        try:
            save_snapshot(str(self.output_dir / "abort_state.npz"), state['phase'], None, self.counters(state))
            write_history(state['history'], str(self.output_dir / "history.csv"))
        except OSError as e:
            state['warnings'].append(f"could not write abort state: {e}")
        event_log.log(EventAction.RUN_ABORTED, EventLevel.ERROR, state['stop_reason'], step=state['step'])
        state['current_step'] = 'aborted'
        return state

    # ---------------------------------------------------------------- output

    @staticmethod
    def counters(state: OptimizationState) -> Dict[str, object]:
        return {
            "step": state['step'],
            "time": state['time'],
            "tau": state['tau'],
            "alpha_bar": state['alpha_bar'],
            "adapting": state['adapting'],
            "continuation_index": state['continuation_index'],
            "w0_norm": state['w0_norm'],
            "mass0": state['mass0'],
            "mesh_changed": state['mesh_changed'],
        }

    def write_vtk_snapshot(self, state: OptimizationState, label: str):
        phase = state['phase']
        mesh = phase.mesh
        point_data = {"phi": phase.phi.values, "w": phase.w.values}
        indicators = compute_indicators(phase)
        cell_data = {"eta": indicators.values, "eta_w": indicators.eta_w, "eta_phi": indicators.eta_phi}
        flow, adjoint = state['flow'], state['adjoint']
        if flow is not None and flow.mesh is mesh:
            point_data["velocity"] = flow.u.vertex_values
            point_data["pressure"] = flow.p.values
            q = adjoint.q if adjoint is not None and adjoint.q.mesh is mesh else None
            if q is not None:
                point_data["adjoint_velocity"] = q.vertex_values
            cell_data.update(mixing_energy_fields(phase.phi, flow.u, q, self.config.params, self.alpha_for(state)))
        write_vtk(str(self.output_dir / f"{label}.vtk"), mesh, point_data, cell_data,
                  title=f"{self.config.name} {label}")

    def write_snapshot(self, state: OptimizationState, label: str):
        """VTK file plus restart snapshot."""
        if self.config.output.write_vtk:
            self.write_vtk_snapshot(state, label)
        q_lag = None if state['mesh_changed'] else state['q_lag']
        save_snapshot(str(self.output_dir / f"{label}.npz"), state['phase'], q_lag, self.counters(state))
        event_log.log(EventAction.SNAPSHOT, step=state['step'], details={"label": label})

    def finalize(self, state: OptimizationState):
        """Final snapshot, CSV history and summary line."""
        history: RunHistory = state['history']
        history.stop_reason = state['stop_reason']
        self.write_snapshot(state, "final")
        write_history(history, str(self.output_dir / "history.csv"))
        if state['last_record'] is not None:
            params = self.config.params
            write_summary(str(self.output_dir / "summary.txt"),
                          [summary_row(params.gamma, params.mu, state['last_record'])])
        event_log.log(EventAction.RUN_COMPLETE, step=state['step'], message=state['stop_reason'],
                      details={"grad_w_norm": state['grad_w_norm'], "timings": history.timings})


def initial_phase(config: RunConfig) -> PhaseState:
    """Initial mesh and phase field, refined at the interface and projected onto the mass constraint."""
    domain, init = config.domain, config.initial
    if init.kind == "file":
        snapshot = load_snapshot(init.path)
        phase = PhaseState.from_phi(snapshot["phase"].phi)
    else:
        mesh = build_rectangle_mesh(domain.extent, domain.initial_area)
        if init.kind == "disc":
            cx, cy, r = init.center_x, init.center_y, init.radius

            def fn(x, y):
                return np.where((x - cx) ** 2 + (y - cy) ** 2 < r * r, -1.0, 1.0)
        else:
            value = init.value

            def fn(x, y):
                return np.full(np.shape(x), value)

        if init.refine_interface:
            phi = refine_interface(mesh, fn, init.refine_levels, config.marking.a_min)
        else:
            phi = ScalarFieldP1.interpolate(mesh, fn)
        phase = PhaseState.from_phi(phi)

    beta = config.params.beta
    if beta is not None:
        mesh = phase.mesh
        shift = (beta * mesh.domain_area - phase.mass) / mesh.domain_area
        phase = PhaseState.from_phi(phase.phi.with_values(phase.phi.values + shift))
    return phase


def create_initial_state(config: RunConfig, output_dir: str, resume: Optional[str] = None,
                         warm_start: Optional[PhaseState] = None) -> OptimizationState:
    """Create initial state for the optimization workflow."""
    q_lag = None
    counters: Dict[str, object] = {}
    if resume is not None:
        snapshot = load_snapshot(resume)
        phase, q_lag, counters = snapshot["phase"], snapshot["q_lag"], snapshot["counters"]
    elif warm_start is not None:
        phase = PhaseState.from_phi(warm_start.phi)
    else:
        phase = initial_phase(config)

    return OptimizationState(
        config=config,
        mesh=phase.mesh,
        phase=phase,
        flow=None,
        adjoint=None,
        q_lag=q_lag,
        indicators=None,
        output_dir=str(output_dir),
        step=int(counters.get("step", 0)),
        time=float(counters.get("time", 0.0)),
        tau=float(counters.get("tau", config.params.tau_max)),
        alpha_bar=float(counters.get("alpha_bar", config.params.alpha_bar)),
        adapting=bool(counters.get("adapting", False)),
        continuation_index=int(counters.get("continuation_index", 0)),
        mesh_changed=bool(counters.get("mesh_changed", q_lag is None)),
        last_record=None,
        w0_norm=counters.get("w0_norm"),
        grad_w_norm=None,
        mass0=float(counters.get("mass0", phase.mass)),
        current_step="initialized",
        retry_count=0,
        max_retries=Config.MAX_RETRIES,
        stop_reason="",
        history=RunHistory(),
        errors=[],
        warnings=[],
    )
