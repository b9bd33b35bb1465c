"""
State management for the phase-field flow optimizer.
Defines run configuration models and the workflow state passed between graph nodes.
"""

from typing import List, Dict, Any, Optional, Literal

from typing_extensions import TypedDict

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .config import Config


class _Section(BaseModel):
    """Config section: unknown keys are rejected."""
    model_config = ConfigDict(extra="forbid")


def _split_floats(value: Any) -> Any:
    if isinstance(value, str):
        return [float(v) for v in value.replace(";", ",").split(",") if v.strip()]
    return value


class DomainConfig(_Section):
    """Rectangular holdall domain and initial mesh resolution."""
    x0: float = 0.0
    y0: float = 0.0
    x1: float = 1.0
    y1: float = 1.0
    initial_area: float = Field(default=1.0 / 1024, gt=0)

    @model_validator(mode="after")
    def _check_extent(self) -> "DomainConfig":
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError("domain rectangle is degenerate (need x1 > x0 and y1 > y0)")
        return self

    @property
    def extent(self) -> tuple:
        return (self.x0, self.y0, self.x1, self.y1)

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)


class Params(_Section):
    """Model constants of the relaxed phase-field problem."""
    gamma: float = Field(default=0.01, gt=0)
    epsilon: float = Field(default=0.005, gt=0)
    mu: float = Field(default=1.0, gt=0)
    s: float = Field(default=1.0e6, gt=0)
    alpha_bar: float = Field(default=50.0, gt=0)
    q: float = Field(default=10.0, gt=0)
    beta: Optional[float] = None
    tau_max: float = Field(default=1.0e4, gt=0)
    phi_cut: float = Field(default=1.1, gt=1.0)
    alpha_epsilon_scaling: bool = True

    @field_validator("beta")
    @classmethod
    def _check_beta(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and not -1.0 < value < 1.0:
            raise ValueError("beta must lie in (-1, 1)")
        return value


class BoundaryProfile(_Section):
    """Parabolic profile h(1-((x-m)/(l/2))^2) on one side of the rectangle."""
    side: Literal["left", "right", "bottom", "top"]
    center: float
    width: float = Field(gt=0)
    height: float
    kind: Literal["inflow", "outflow"] = "inflow"
    normal: float = 1.0
    tangential: float = 0.0


class BoundaryConfig(_Section):
    """Dirichlet data: profiles on tagged sides, background value elsewhere."""
    profiles: List[BoundaryProfile] = Field(default_factory=list)
    background_x: float = 0.0
    background_y: float = 0.0


class InitialConfig(_Section):
    """Initial phase field."""
    kind: Literal["constant", "disc", "file"] = "constant"
    value: float = 0.0
    center_x: float = 0.5
    center_y: float = 0.5
    radius: float = Field(default=0.25, gt=0)
    path: Optional[str] = None
    refine_interface: bool = False
    refine_levels: int = Field(default=24, ge=0)

    @model_validator(mode="after")
    def _check_file(self) -> "InitialConfig":
        if self.kind == "file" and not self.path:
            raise ValueError("initial.path is required when initial.kind=file")
        return self


class MarkingParams(_Section):
    """Doerfler marking constants and admissible simplex areas."""
    theta_r: float = Field(default=0.2, gt=0, lt=1)
    theta_c: float = Field(default=0.05, gt=0, lt=1)
    a_min: float = Field(default=1e-7, gt=0)
    a_max: float = Field(default=5e-4, gt=0)
    enabled: bool = True
    start_below: Optional[float] = None
    max_simplices: int = Field(default=Config.MAX_SIMPLICES, ge=4)

    @model_validator(mode="after")
    def _check_window(self) -> "MarkingParams":
        if not self.a_min < self.a_max:
            raise ValueError("a_min must be smaller than a_max")
        return self


class ContinuationStage(_Section):
    """Set alpha_bar once the stopping norm falls below a threshold."""
    grad_w_below: float = Field(gt=0)
    alpha_bar: float = Field(gt=0)


class ContinuationConfig(_Section):
    stages: List[ContinuationStage] = Field(default_factory=list)


class StoppingConfig(_Section):
    tol_abs: float = Field(default=1e-6, gt=0)
    tol_rel: float = Field(default=1e-12, ge=0)
    max_steps: int = Field(default=500, ge=1)


class OseenOptions(_Section):
    """Nonlinear and linear solver controls for state and adjoint solves."""
    tolerance: float = Field(default=Config.OSEEN_TOLERANCE, gt=0)
    max_sweeps: int = Field(default=Config.OSEEN_MAX_SWEEPS, ge=1)
    linear_solver: Literal["direct", "gmres"] = Config.LINEAR_SOLVER
    gmres_restart: int = Field(default=Config.GMRES_RESTART, ge=1)
    gmres_tolerance: float = Field(default=Config.GMRES_TOLERANCE, gt=0)
    gmres_max_iterations: int = Field(default=Config.GMRES_MAX_ITERATIONS, ge=1)
    stokes: bool = False
    self_consistent_adjoint: bool = False


class OutputConfig(_Section):
    directory: str = Config.OUTPUT_DIR
    cadence: int = Field(default=0, ge=0)
    write_vtk: bool = True
    label: str = "run"


class SweepConfig(_Section):
    """Warm-started parameter sweep."""
    parameter: Optional[Literal["gamma", "mu"]] = None
    values: List[float] = Field(default_factory=list)

    @field_validator("values", mode="before")
    @classmethod
    def _split_values(cls, value: Any) -> Any:
        return _split_floats(value)

    @model_validator(mode="after")
    def _check_sweep(self) -> "SweepConfig":
        if self.parameter is not None and not self.values:
            raise ValueError("sweep.values must be given with sweep.parameter")
        if any(v <= 0 for v in self.values):
            raise ValueError("sweep values must be positive")
        return self


class RunConfig(_Section):
    """Complete description of one optimization run (or sweep)."""
    name: str = "custom"
    seed: int = 0
    domain: DomainConfig = Field(default_factory=DomainConfig)
    params: Params = Field(default_factory=Params)
    boundary: BoundaryConfig = Field(default_factory=BoundaryConfig)
    initial: InitialConfig = Field(default_factory=InitialConfig)
    marking: MarkingParams = Field(default_factory=MarkingParams)
    continuation: ContinuationConfig = Field(default_factory=ContinuationConfig)
    stopping: StoppingConfig = Field(default_factory=StoppingConfig)
    solver: OseenOptions = Field(default_factory=OseenOptions)
    output: OutputConfig = Field(default_factory=OutputConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    notes: str = ""


class DiagnosticsRecord(BaseModel):
    """One row of the per-step history; field order is the CSV column order."""
    step: int
    time: float
    tau: float
    alpha_bar: float
    porous_energy: float
    dissipation: float
    gradient_energy: float
    potential_energy: float
    objective: float
    penalty_upper: float
    penalty_lower: float
    dissipative_power: float
    drag: float
    circularity: Optional[float] = None
    interface_width: Optional[float] = None
    mass: float
    min_mixing_weight: float
    grad_w_norm: float
    grad_u_norm: float
    uniqueness_bound: float
    uniqueness_satisfied: bool
    n_simplices: int
    n_vertices: int
    adapting: bool = False

    @classmethod
    def csv_header(cls) -> List[str]:
        return list(cls.model_fields.keys())


class RunHistory(BaseModel):
    """Ordered diagnostics plus wall-clock accounting per loop phase."""
    records: List[DiagnosticsRecord] = Field(default_factory=list)
    timings: Dict[str, float] = Field(default_factory=dict)
    mesh_sizes: List[int] = Field(default_factory=list)
    stop_reason: str = ""

    def add_timing(self, phase: str, seconds: float):
        self.timings[phase] = self.timings.get(phase, 0.0) + seconds


class OptimizationState(TypedDict):
    """
    Workflow state for the optimization graph.
    Numerical objects (mesh, fields) are carried as-is between nodes.
    """
    config: RunConfig
    mesh: Any
    phase: Any
    flow: Any
    adjoint: Any
    q_lag: Any
    indicators: Any
    output_dir: str

    # Loop control
    step: int
    time: float
    tau: float
    alpha_bar: float
    adapting: bool
    continuation_index: int
    mesh_changed: bool
    last_record: Optional[DiagnosticsRecord]
    w0_norm: Optional[float]
    grad_w_norm: Optional[float]
    mass0: float

    current_step: str
    retry_count: int
    max_retries: int
    stop_reason: str

    history: RunHistory

    # Error handling
    errors: List[str]
    warnings: List[str]
