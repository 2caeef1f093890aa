"""JSON plant and controller files, CSV trajectories."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any

import numpy as np

from .errors import RetrofitError
from .geometry import Plant
from .retrofit import RetrofitController
from .sim import ClosedLoop, Trajectory
from .statespace import Realization

CONTROLLER_FORMAT = "retrofitctl-controller"
CONTROLLER_VERSION = 1


class ModelFileError(RetrofitError, ValueError):
    """Malformed or inconsistent model file."""


def _reject_constant(name: str) -> float:
    raise ModelFileError(f"non-finite number {name!r} is not allowed")


def _load_json(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ModelFileError(f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        data = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ModelFileError(f"{path}: top level must be an object")
    return data


def _matrix(data: dict, key: str, rows: int, cols: int) -> np.ndarray:
    if key not in data:
        raise ModelFileError(f"missing matrix {key!r}")
    value = data[key]
    if rows == 0 or cols == 0:
        # empty matrices may be written as [] or as a list of empty rows
        arr = np.asarray(value, dtype=float) if value else np.zeros((rows, cols))
        if arr.size:
            raise ModelFileError(f"{key} must be empty for shape {rows}x{cols}")
        return np.zeros((rows, cols))
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelFileError(f"{key} is not a rectangular numeric array") from exc
    if arr.shape != (rows, cols):
        raise ModelFileError(f"{key} has shape {arr.shape}, expected ({rows}, {cols})")
    if not np.all(np.isfinite(arr)):
        raise ModelFileError(f"{key} contains non-finite entries")
    return arr


def _dim(data: dict, key: str) -> int:
    value = data.get(key)
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ModelFileError(f"dimension {key!r} must be a nonnegative integer, got {value!r}")
    return value


def plant_from_dict(data: dict) -> Plant:
    n = _dim(data, "n")
    dims = data.get("dims")
    if not isinstance(dims, dict):
        raise ModelFileError("missing object 'dims' with keys v, w, u, y")
    m, w, q, p = (_dim(dims, k) for k in ("v", "w", "u", "y"))
    return Plant(
        _matrix(data, "A", n, n),
        _matrix(data, "L", n, m),
        _matrix(data, "B", n, q),
        _matrix(data, "Gamma", w, n),
        _matrix(data, "C", p, n),
    )


def plant_to_dict(plant: Plant) -> dict:
    return {
        "n": plant.n,
        "dims": {"v": plant.m, "w": plant.w_dim, "u": plant.q, "y": plant.p},
        "A": plant.A.tolist(), "L": plant.L.tolist(), "B": plant.B.tolist(),
        "Gamma": plant.Gamma.tolist(), "C": plant.C.tolist(),
    }


def read_plant(path: str | Path) -> Plant:
    return plant_from_dict(_load_json(path))


def write_json(path: str | Path, data: dict) -> None:
    Path(path).write_text(dumps(data) + "\n")


def dumps(data: Any) -> str:
    """Deterministic JSON text."""
    return json.dumps(data, sort_keys=True, indent=2, allow_nan=False)


def write_plant(path: str | Path, plant: Plant) -> None:
    write_json(path, plant_to_dict(plant))


def _abscissa(value: float) -> float | None:
    return None if not np.isfinite(value) else float(value)


def controller_to_dict(ctrl: RetrofitController | Realization, settings: dict | None = None) -> dict:
    """Serialize a controller; a bare realization is written without metadata."""
    K = ctrl.K if isinstance(ctrl, RetrofitController) else ctrl
    data: dict[str, Any] = {
        "format": CONTROLLER_FORMAT,
        "version": CONTROLLER_VERSION,
        "n": K.n,
        "inputs": K.n_inputs,
        "outputs": K.n_outputs,
        "A": K.A.tolist(), "B": K.B.tolist(), "C": K.C.tolist(), "D": K.D.tolist(),
    }
    if isinstance(ctrl, RetrofitController):
        coords = ctrl.rect.coords
        diag = ctrl.diagnostics
        data["metadata"] = {
            "relative_degrees": list(ctrl.rect.degree_data["profile"].r),
            "T": coords.T.tolist(),
            "P_rows": [int(i) for i in np.argmax(coords.P, axis=1)],
            "Pbar_rows": [int(i) for i in np.argmax(coords.Pbar, axis=1)],
            "normal_form_condition": float(coords.condition),
            "internal_order": ctrl.Khat.n,
            "settings": dict(settings or {}),
            "verdict": {
                "output_rectifying": True,
                "kgyv_residual": float(diag["kgyv_residual"]),
                "q_abscissa": _abscissa(diag["q"].spectral_abscissa),
                "qhat_abscissa": _abscissa(diag["qhat"].spectral_abscissa),
                "qhat_gyv_abscissa": _abscissa(diag["qhat_gyv"].spectral_abscissa),
            },
        }
    return data


def controller_from_dict(data: dict) -> tuple[Realization, dict]:
    if data.get("format", CONTROLLER_FORMAT) != CONTROLLER_FORMAT:
        raise ModelFileError(f"unknown controller format {data.get('format')!r}")
    n = _dim(data, "n")
    k_in, k_out = _dim(data, "inputs"), _dim(data, "outputs")
    K = Realization(
        _matrix(data, "A", n, n),
        _matrix(data, "B", n, k_in),
        _matrix(data, "C", k_out, n),
        _matrix(data, "D", k_out, k_in),
    )
    metadata = data.get("metadata", {})
    if not isinstance(metadata, dict):
        raise ModelFileError("'metadata' must be an object")
    return K, metadata


def read_controller(path: str | Path) -> tuple[Realization, dict]:
    return controller_from_dict(_load_json(path))


def write_controller(path: str | Path, ctrl: RetrofitController | Realization,
                     settings: dict | None = None) -> None:
    write_json(path, controller_to_dict(ctrl, settings))


def trajectory_header(cl: ClosedLoop) -> list[str]:
    names = ["t"]
    names += [f"x_plant{i}" for i in range(cl.n_plant)]
    names += [f"x_env{i}" for i in range(cl.n_env)]
    names += [f"x_ctrl{i}" for i in range(cl.n_ctrl)]
    for channel in ("u", "y", "v", "w"):
        names += [f"{channel}{i}" for i in range(cl.dims[channel])]
    return names


def trajectory_csv(cl: ClosedLoop, traj: Trajectory) -> str:
    """CSV text with columns ``t, x_plant.., x_env.., x_ctrl.., u.., y.., v.., w..``."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(trajectory_header(cl))
    table = np.hstack([traj.times[:, None], traj.states, traj.outputs])
    for row in table:
        writer.writerow([repr(float(x)) for x in row])
    return buffer.getvalue()
