"""
Configuration management for the phase-field flow optimizer.
Handles environment variables and process-wide solver defaults.
"""

import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


def _env_bool(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


class Config:
    """Process-wide defaults; run-specific values live in RunConfig."""

    # Oseen iteration
    OSEEN_TOLERANCE: float = float(os.getenv("OSEEN_TOLERANCE", "1e-9"))
    OSEEN_MAX_SWEEPS: int = int(os.getenv("OSEEN_MAX_SWEEPS", "50"))
    OSEEN_DIVERGENCE_WINDOW: int = 5

    # Linear algebra
    LINEAR_SOLVER: str = os.getenv("LINEAR_SOLVER", "direct")
    GMRES_RESTART: int = int(os.getenv("GMRES_RESTART", "30"))
    GMRES_TOLERANCE: float = float(os.getenv("GMRES_TOLERANCE", "1e-12"))
    GMRES_MAX_ITERATIONS: int = int(os.getenv("GMRES_MAX_ITERATIONS", "2000"))

    # Cahn-Hilliard Newton
    NEWTON_TOLERANCE: float = float(os.getenv("NEWTON_TOLERANCE", "1e-10"))
    NEWTON_MAX_ITERATIONS: int = int(os.getenv("NEWTON_MAX_ITERATIONS", "50"))
    NEWTON_MIN_DAMPING: float = 2.0 ** -10
    MAX_RETRIES: int = int(os.getenv("MAX_RETRIES", "1"))

    # Adjoint self-consistency (gradient-check mode)
    ADJOINT_FIXED_POINT_TOLERANCE: float = float(os.getenv("ADJOINT_FIXED_POINT_TOLERANCE", "1e-10"))
    ADJOINT_FIXED_POINT_MAX: int = int(os.getenv("ADJOINT_FIXED_POINT_MAX", "100"))

    # Mesh
    MAX_SIMPLICES: int = int(os.getenv("MAX_SIMPLICES", "500000"))
    ISOLINE_TIE_BREAK: float = 1e-12
    INTERFACE_CUTOFF: float = 1e-3

    # Output
    OUTPUT_DIR: str = os.getenv("OUTPUT_DIR", "runs")
    EVENT_LOG_DIR: str = os.getenv("EVENT_LOG_DIR", "data/events")
    VERBOSE: bool = _env_bool("VERBOSE", "true")

    @classmethod
    def validate_config(cls) -> bool:
        """Validate that the environment-driven defaults are usable."""
        if cls.OSEEN_TOLERANCE <= 0 or cls.NEWTON_TOLERANCE <= 0:
            print("ERROR: solver tolerances must be positive")
            return False

        if cls.OSEEN_MAX_SWEEPS < 1 or cls.NEWTON_MAX_ITERATIONS < 1:
            print("ERROR: iteration caps must be at least 1")
            return False

        if cls.LINEAR_SOLVER not in ("direct", "gmres"):
            print(f"ERROR: LINEAR_SOLVER must be 'direct' or 'gmres', got '{cls.LINEAR_SOLVER}'")
            return False

        if cls.GMRES_RESTART < 1:
            print("ERROR: GMRES_RESTART must be at least 1")
            return False

        if cls.MAX_SIMPLICES < 4:
            print("ERROR: MAX_SIMPLICES is too small")
            return False

        return True

    @classmethod
    def get_safe_config(cls) -> dict:
        """Get configuration for display."""
        return {
            "oseen_tolerance": cls.OSEEN_TOLERANCE,
            "oseen_max_sweeps": cls.OSEEN_MAX_SWEEPS,
            "linear_solver": cls.LINEAR_SOLVER,
            "gmres_restart": cls.GMRES_RESTART,
            "newton_tolerance": cls.NEWTON_TOLERANCE,
            "newton_max_iterations": cls.NEWTON_MAX_ITERATIONS,
            "max_retries": cls.MAX_RETRIES,
            "max_simplices": cls.MAX_SIMPLICES,
            "output_dir": cls.OUTPUT_DIR,
            "event_log_dir": cls.EVENT_LOG_DIR,
            "verbose": cls.VERBOSE,
        }
