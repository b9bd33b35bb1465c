"""
Run event logging for the phase-field flow optimizer.
File-based JSON-lines log with a structured entry format.
"""

import json
import os
from datetime import datetime
from pathlib import Path
from typing import Optional, Dict, Any, List
from enum import Enum

from pydantic import BaseModel, Field

from .config import Config


class EventAction(str, Enum):
    """Event types."""
    # Run lifecycle
    RUN_START = "run_start"
    RUN_COMPLETE = "run_complete"
    RUN_ABORTED = "run_aborted"
    SWEEP_POINT = "sweep_point"

    # Loop
    STEP_ACCEPTED = "step_accepted"
    STEP_RETRY = "step_retry"
    MESH_ADAPTED = "mesh_adapted"
    CONTINUATION = "continuation"
    SNAPSHOT = "snapshot"

    # Numerics
    ASSUMPTION_WARNING = "assumption_warning"
    DIAGNOSTIC_WARNING = "diagnostic_warning"
    SOLVER_FAILURE = "solver_failure"


class EventLevel(str, Enum):
    """Event levels."""
    INFO = "info"
    WARNING = "warning"
    ERROR = "error"


class RunEvent(BaseModel):
    """Event log entry model."""
    timestamp: str
    level: EventLevel
    action: EventAction
    run: Optional[str] = None
    step: Optional[int] = None
    message: str = ""
    details: Dict[str, Any] = Field(default_factory=dict)
    duration_ms: Optional[int] = None


class RunEventLogger:
    """JSON-lines event logger; the directory is created on first write."""

    def __init__(self, log_dir: str = None, run: Optional[str] = None):
        self.log_dir = Path(log_dir or os.getenv("EVENT_LOG_DIR", Config.EVENT_LOG_DIR))
        self.run = run

    def set_directory(self, log_dir: str, run: Optional[str] = None):
        """Redirect subsequent events, e.g. into a run's output directory."""
        self.log_dir = Path(log_dir)
        self.run = run

    def _get_log_file(self, date: datetime = None) -> Path:
        if date is None:
            date = datetime.now()
        return self.log_dir / f"events_{date.strftime('%Y%m%d')}.log"

    def _write_entry(self, entry: RunEvent):
        self.log_dir.mkdir(parents=True, exist_ok=True)
        with open(self._get_log_file(), 'a', encoding='utf-8') as f:
            f.write(entry.model_dump_json() + "\n")

    def log(
        self,
        action: EventAction,
        level: EventLevel = EventLevel.INFO,
        message: str = "",
        step: Optional[int] = None,
        details: Optional[Dict[str, Any]] = None,
        duration_ms: Optional[int] = None
    ):
        """Log an event; warnings and errors are echoed to the console."""
        entry = RunEvent(
            timestamp=datetime.now().isoformat(),
            level=level,
            action=action,
            run=self.run,
            step=step,
            message=message,
            details=details or {},
            duration_ms=duration_ms
        )

        if level != EventLevel.INFO and Config.VERBOSE:
            print(f"{level.value.upper()}: {message}")

        try:
            self._write_entry(entry)
        except OSError as e:
            print(f"WARNING: could not write event log: {e}")

    def warning(self, action: EventAction, message: str, step: Optional[int] = None, **details):
        self.log(action, EventLevel.WARNING, message, step=step, details=details)

    def log_step(self, step: int, tau: float, grad_w_norm: float, n_simplices: int, duration_ms: int):
        """Log an accepted time step."""
        self.log(
            action=EventAction.STEP_ACCEPTED,
            step=step,
            duration_ms=duration_ms,
            details={"tau": tau, "grad_w_norm": grad_w_norm, "n_simplices": n_simplices}
        )

    def log_solver_failure(self, step: int, stage: str, error: str):
        """Log a solver failure."""
        self.log(
            action=EventAction.SOLVER_FAILURE,
            level=EventLevel.ERROR,
            message=f"{stage} failed: {error}",
            step=step,
            details={"stage": stage, "error": error}
        )

    def read_events(self, action: Optional[EventAction] = None) -> List[dict]:
        """Read back all events in the current directory, oldest first."""
        events = []
        for log_file in sorted(self.log_dir.glob("events_*.log")):
            with open(log_file, 'r', encoding='utf-8') as f:
                for line in f:
                    try:
                        entry = json.loads(line.strip())
                    except json.JSONDecodeError:
                        continue
                    if action is None or entry.get('action') == action.value:
                        events.append(entry)
        return events


# Global event log instance
event_log = RunEventLogger()
