"""
LangGraph workflow orchestration for the phase-field flow optimizer.
Defines the loop graph, its conditional edges and the run / sweep entry points.
"""

from pathlib import Path
from typing import List, Literal, Optional

from langgraph.graph import StateGraph, END

from .chstep import PhaseState
from .config import Config
from .errors import SolverError
from .events import EventAction, event_log
from .nodes import OptimizationNodes, create_initial_state
from .output import summary_row, write_summary
from .state import OptimizationState, RunConfig


class OptimizationWorkflow:
    """Main workflow orchestrator using LangGraph."""

    def __init__(self, config: RunConfig, output_dir: Optional[str] = None):
        self.config = config
        self.output_dir = Path(output_dir or Path(config.output.directory) / config.output.label)
        self.nodes = OptimizationNodes(config, str(self.output_dir))
        self.graph = self._build_graph()

    def _build_graph(self):
        """Build the LangGraph workflow."""
        workflow = StateGraph(OptimizationState)

        workflow.add_node("time_step", self.nodes.time_step_node)
        workflow.add_node("state", self.nodes.state_node)
        workflow.add_node("adjoint", self.nodes.adjoint_node)
        workflow.add_node("phase", self.nodes.phase_node)
        workflow.add_node("adapt", self.nodes.adapt_node)
        workflow.add_node("monitor", self.nodes.monitor_node)
        workflow.add_node("abort", self.nodes.abort_node)

        workflow.set_entry_point("time_step")
        workflow.add_edge("time_step", "state")

        workflow.add_conditional_edges(
            "state",
            self._route_after_state,
            {
                "adjoint": "adjoint",
                "abort": "abort"
            }
        )

        workflow.add_conditional_edges(
            "adjoint",
            self._route_after_adjoint,
            {
                "phase": "phase",
                "abort": "abort"
            }
        )

        workflow.add_conditional_edges(
            "phase",
            self._route_after_phase,
            {
                "adapt": "adapt",
                "phase": "phase",
                "abort": "abort"
            }
        )

        workflow.add_conditional_edges(
            "adapt",
            self._route_after_adapt,
            {
                "monitor": "monitor",
                "abort": "abort"
            }
        )

        workflow.add_conditional_edges(
            "monitor",
            self._route_after_monitor,
            {
                "time_step": "time_step",
                "end": END
            }
        )

        workflow.add_edge("abort", END)
        return workflow.compile()

    def _route_after_state(self, state: OptimizationState) -> Literal["adjoint", "abort"]:
        return "adjoint" if state.get('current_step') == 'state_complete' else "abort"

    def _route_after_adjoint(self, state: OptimizationState) -> Literal["phase", "abort"]:
        return "phase" if state.get('current_step') == 'adjoint_complete' else "abort"

    def _route_after_phase(self, state: OptimizationState) -> Literal["adapt", "phase", "abort"]:
        """Route after the Cahn-Hilliard step; a retry reuses the current flow pair."""
        current_step = state.get('current_step', '')

        if current_step == 'phase_complete':
            return "adapt"
        elif current_step == 'phase_retry':
            return "phase"
        else:
            return "abort"

    def _route_after_adapt(self, state: OptimizationState) -> Literal["monitor", "abort"]:
        return "monitor" if state.get('current_step') == 'adapt_complete' else "abort"

    def _route_after_monitor(self, state: OptimizationState) -> Literal["time_step", "end"]:
        return "end" if state.get('current_step') == 'completed' else "time_step"

    def run(self, resume: Optional[str] = None, warm_start: Optional[PhaseState] = None) -> OptimizationState:
        """
        Run the optimization loop to convergence or the step cap.

        Args:
            resume: snapshot file to continue from
            warm_start: phase field (and mesh) used instead of the configured initial field

        Returns:
            Final optimization state

        Raises:
            SolverError: a solver failed; the last consistent state is on disk
        """
        self.output_dir.mkdir(parents=True, exist_ok=True)
        event_log.set_directory(str(self.output_dir), run=self.config.name)

        if Config.VERBOSE:
            print(f"Starting optimization run '{self.config.name}' -> {self.output_dir}")
            print("=" * 60)

        initial_state = create_initial_state(self.config, str(self.output_dir), resume=resume,
                                             warm_start=warm_start)
        event_log.log(EventAction.RUN_START, message=self.config.name, step=initial_state['step'],
                      details={"n_simplices": initial_state['mesh'].n_simplices, "resume": resume})
        if resume is None:
            self.nodes.write_snapshot(initial_state, "initial")

        limit = 10 * self.config.stopping.max_steps + 50
        final_state = self.graph.invoke(initial_state, config={"recursion_limit": limit})

        self._print_results(final_state)
        if final_state['current_step'] != 'completed':
            raise SolverError(final_state['stop_reason'] or "optimization aborted")
        return final_state

    def _print_results(self, state: OptimizationState):
        """Print workflow results."""
        if not Config.VERBOSE:
            return
        print("\n" + "=" * 60)
        print("OPTIMIZATION RESULTS")
        print("=" * 60)

        print(f"Run: {self.config.name}")
        print(f"Status: {state['current_step']} ({state['stop_reason']})")
        print(f"Steps: {state['step']}")
        print(f"Simplices: {state['phase'].mesh.n_simplices}")

        record = state.get('last_record')
        if record is not None:
            print(f"Objective: {record.objective:.6g}")
            print(f"Dissipative power F: {record.dissipative_power:.6g}")
            print(f"Drag F_D: {record.drag:.6g}")
            if record.circularity is not None:
                print(f"Circularity: {record.circularity:.4f}")
            print(f"|grad w|: {record.grad_w_norm:.3e}")

        if state.get('errors'):
            print(f"Errors: {len(state['errors'])}")
            for error in state['errors'][-3:]:
                print(f"   - {error}")

        if state.get('warnings'):
            print(f"Warnings: {len(state['warnings'])}")
            for warning in state['warnings'][-3:]:
                print(f"   - {warning}")

        print("\n" + "=" * 60)


def run_optimization(config: RunConfig, output_dir: Optional[str] = None,
                     resume: Optional[str] = None) -> OptimizationState:
    """
    Convenience function to run one configuration.

    A config with a sweep section is delegated to run_sweep and returns the
    state of the last sweep point.
    """
    if config.sweep.parameter is not None and resume is None:
        return run_sweep(config, output_dir)[-1]
    workflow = OptimizationWorkflow(config, output_dir)
    return workflow.run(resume=resume)


def run_sweep(config: RunConfig, output_dir: Optional[str] = None) -> List[OptimizationState]:
    """
    Warm-started sweep over gamma or mu.

    Each point starts from the final phase field and mesh of the previous one
    and adds one line to summary.txt in the sweep directory.
    """
    sweep = config.sweep
    root = Path(output_dir or Path(config.output.directory) / config.output.label)
    states: List[OptimizationState] = []
    rows: List[str] = []
    warm_start: Optional[PhaseState] = None

    for value in sweep.values:
        params = config.params.model_copy(update={sweep.parameter: value})
        point = config.model_copy(update={"params": params})
        workflow = OptimizationWorkflow(point, str(root / f"{sweep.parameter}_{value:g}"))
        state = workflow.run(warm_start=warm_start)
        event_log.log(EventAction.SWEEP_POINT, message=f"{sweep.parameter}={value:g}", step=state['step'])
        states.append(state)
        warm_start = state['phase']
        if state['last_record'] is not None:
            rows.append(summary_row(params.gamma, params.mu, state['last_record']))
        write_summary(str(root / "summary.txt"), rows)
    return states
