"""
File output for optimization runs.
Legacy ASCII VTK snapshots, the CSV history, the Table-style summary lines
and .npz restart snapshots.
"""

import csv
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import numpy as np

from .chstep import PhaseState
from .errors import ConfigError
from .fem import ScalarFieldP1, VectorFieldP2
from .mesh import Mesh, RefinementTree
from .state import DiagnosticsRecord, RunHistory

SUMMARY_HEADER = "gamma, mu, F, theta, F_D"


def write_vtk(path: str, mesh: Mesh, point_data: Optional[Mapping[str, np.ndarray]] = None,
              cell_data: Optional[Mapping[str, np.ndarray]] = None, title: str = "phase field snapshot") -> Path:
    """
    Write the mesh with attached fields as a legacy VTK UNSTRUCTURED_GRID.

    Arrays of shape (n,) become SCALARS, arrays of shape (n, 2) become VECTORS
    with a zero third component.
    """
    file = Path(path)
    file.parent.mkdir(parents=True, exist_ok=True)
    n, m = mesh.n_vertices, mesh.n_simplices
    with open(file, "w", encoding="utf-8") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(f"{title.splitlines()[0][:255]}\n")
        f.write("ASCII\n")
        f.write("DATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {n} double\n")
        for x, y in mesh.vertices:
            f.write(f"{x:.12g} {y:.12g} 0\n")
        f.write(f"CELLS {m} {4 * m}\n")
        for a, b, c in mesh.simplices:
            f.write(f"3 {a} {b} {c}\n")
        f.write(f"CELL_TYPES {m}\n")
        f.write("5\n" * m)
        _write_attributes(f, "POINT_DATA", n, point_data)
        _write_attributes(f, "CELL_DATA", m, cell_data)
    return file


def _write_attributes(f, section: str, count: int, data: Optional[Mapping[str, np.ndarray]]):
    if not data:
        return
    f.write(f"{section} {count}\n")
    for name, values in data.items():
        values = np.asarray(values, dtype=float)
        if len(values) != count:
            raise ValueError(f"{section} field '{name}' has {len(values)} entries, expected {count}")
        label = name.replace(" ", "_")
        if values.ndim == 1:
            f.write(f"SCALARS {label} double 1\nLOOKUP_TABLE default\n")
            f.writelines(f"{v:.12g}\n" for v in values)
        else:
            f.write(f"VECTORS {label} double\n")
            f.writelines(f"{v[0]:.12g} {v[1]:.12g} 0\n" for v in values)


def write_history(history: RunHistory, path: str) -> Path:
    """CSV with one row per DiagnosticsRecord; the header is the record field list."""
    file = Path(path)
    file.parent.mkdir(parents=True, exist_ok=True)
    header = DiagnosticsRecord.csv_header()
    with open(file, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for record in history.records:
            row = record.model_dump()
            writer.writerow(["" if row[k] is None else repr(row[k]) for k in header])
    return file


def read_history(path: str) -> List[DiagnosticsRecord]:
    file = Path(path)
    if not file.is_file():
        raise ConfigError(f"history file not found: {path}")
    with open(file, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != DiagnosticsRecord.csv_header():
            raise ConfigError(f"{path} is not a diagnostics history (unexpected header)")
        return [DiagnosticsRecord.model_validate({k: (v if v != "" else None) for k, v in row.items()})
                for row in reader]


def summary_row(gamma: float, mu: float, record: DiagnosticsRecord) -> str:
    theta = "nan" if record.circularity is None else f"{record.circularity:.4f}"
    return f"{gamma:.4f}, {mu:.6g}, {record.dissipative_power:.4f}, {theta}, {record.drag:.4f}"


def write_summary(path: str, rows: List[str]) -> Path:
    file = Path(path)
    file.parent.mkdir(parents=True, exist_ok=True)
    file.write_text("\n".join([SUMMARY_HEADER, *rows]) + "\n", encoding="utf-8")
    return file


def summarize_history(path: str) -> Dict[str, Any]:
    """Key figures of a history CSV, for the summarize command."""
    records = read_history(path)
    if not records:
        raise ConfigError(f"{path} holds no diagnostics rows")
    first, last = records[0], records[-1]
    return {
        "steps": last.step,
        "final_time": last.time,
        "objective": last.objective,
        "dissipative_power": last.dissipative_power,
        "drag": last.drag,
        "circularity": last.circularity,
        "interface_width": last.interface_width,
        "grad_w_norm": last.grad_w_norm,
        "mass_drift": max(abs(r.mass - first.mass) for r in records),
        "n_simplices": last.n_simplices,
        "alpha_bar": last.alpha_bar,
    }


def save_snapshot(path: str, phase: PhaseState, q_lag: Optional[VectorFieldP2], counters: Mapping[str, Any]) -> Path:
    """Restart snapshot: mesh with refinement tree, phi, w, lagged adjoint and loop counters."""
    file = Path(path)
    file.parent.mkdir(parents=True, exist_ok=True)
    mesh = phase.mesh
    tree = mesh.tree
    arrays = {
        "vertices": mesh.vertices,
        "simplices": mesh.simplices,
        "extent": np.asarray(mesh.extent),
        "tree_nodes": tree.nodes,
        "tree_parent": tree.parent,
        "tree_children": tree.children,
        "tree_leaf": tree.leaf,
        "phi": phase.phi.values,
        "w": phase.w.values,
    }
    if q_lag is not None:
        arrays["q_lag"] = q_lag.values
    for key, value in counters.items():
        arrays[f"counter_{key}"] = np.asarray(np.nan if value is None else value)
    with open(file, "wb") as f:
        np.savez_compressed(f, **arrays)
    return file


def load_snapshot(path: str) -> Dict[str, Any]:
    """Inverse of save_snapshot; returns phase, q_lag and a counters dict."""
    file = Path(path)
    if not file.is_file():
        raise ConfigError(f"snapshot not found: {path}")
    with np.load(file) as data:
        tree = RefinementTree(data["tree_nodes"], data["tree_parent"], data["tree_children"], data["tree_leaf"])
        mesh = Mesh(data["vertices"], data["simplices"], tuple(data["extent"]), tree)
        phase = PhaseState(ScalarFieldP1(mesh, data["phi"]), ScalarFieldP1(mesh, data["w"]))
        q_lag = VectorFieldP2(mesh, data["q_lag"]) if "q_lag" in data.files else None
        counters = {}
        for key in data.files:
            if key.startswith("counter_"):
                value = data[key].item()
                counters[key[len("counter_"):]] = None if isinstance(value, float) and np.isnan(value) else value
    return {"mesh": mesh, "phase": phase, "q_lag": q_lag, "counters": counters}
