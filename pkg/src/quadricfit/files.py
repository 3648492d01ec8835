"""Scene and result file I/O with JSON Schema validation.

A scene file carries calibrated cameras, per-frame 2D detections (either
bounding boxes or ellipses) and optional ground-truth quadrics.  A result
file carries one record per estimated object.  Matrices are row-major
nested lists; floats serialize with full round-trip precision, so a
fit -> eval pipeline loses nothing.  Non-finite numbers are rejected on
load (strict JSON).
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Union

import jsonschema
import numpy as np

from .closed_form import ClosedFormSolution
from .errors import InvalidInputError, NoFiniteCenterError
from .geometry import (
    BoundingBox,
    CameraProjection,
    Ellipse2D,
    Ellipsoid3D,
    Quadric,
    ellipse_from_bbox,
    quadric_center,
)
from .regularized import RegularizedSolution


@functools.lru_cache(maxsize=None)
def _schema(name: str) -> dict:
    text = (resources.files("quadricfit") / "schemas" / f"{name}.schema.json").read_text()
    return json.loads(text)


def _validate(payload, schema_name: str, source: str) -> None:
    try:
        jsonschema.validate(payload, _schema(schema_name))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InvalidInputError(f"{source}: schema violation at {where}: {exc.message}")


def load_json(path: Union[str, Path]):
    """Strict JSON load: IO and syntax problems surface as InvalidInputError."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}")
    try:
        # NaN/Infinity are valid Python-JSON extensions but not valid JSON;
        # files must stay interchangeable, so reject them
        return json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: not valid JSON: {exc}")


def _reject_constant(token: str):
    raise InvalidInputError(f"non-finite number {token!r} is not allowed in JSON files")


@dataclass(frozen=True)
class Scene:
    """Parsed scene file: cameras by frame, detections grouped by object."""

    cameras: dict
    detections: dict
    gt: dict

    def frames_of(self, object_id: str) -> tuple:
        return tuple(f for f, _ in self.detections.get(object_id, ()))


def load_scene(path: Union[str, Path]) -> Scene:
    """Read and validate a scene file.

    Enforces the cross-field invariants the schema cannot express: unique
    camera frames, a camera for every detection frame, and at most one
    detection per (object, frame) pair.
    """
    source = str(path)
    payload = load_json(path)
    _validate(payload, "scene", source)

    cameras = {}
    for item in payload["cameras"]:
        frame = item["frame"]
        if frame in cameras:
            raise InvalidInputError(f"{source}: duplicate camera for frame {frame}")
        cameras[frame] = CameraProjection(np.array(item["P"], dtype=float), frame_id=frame)

    detections: dict = {}
    seen = set()
    for item in payload["detections"]:
        object_id, frame = item["object"], item["frame"]
        if frame not in cameras:
            raise InvalidInputError(
                f"{source}: detection of {object_id!r} in frame {frame} has no camera"
            )
        if (object_id, frame) in seen:
            raise InvalidInputError(
                f"{source}: duplicate detection for ({object_id!r}, frame {frame})"
            )
        seen.add((object_id, frame))
        if "bbox" in item:
            b = item["bbox"]
            ellipse = ellipse_from_bbox(
                BoundingBox(width=b["w"], height=b["h"], center=(b["cx"], b["cy"]))
            )
        else:
            e = item["ellipse"]
            ellipse = Ellipse2D(
                center=(e["cx"], e["cy"]), semi_axes=(e["l1"], e["l2"]), angle=e["alpha"]
            )
        detections.setdefault(object_id, []).append((frame, ellipse))

    gt = {}
    for item in payload.get("gt", []):
        object_id = item["object"]
        if object_id in gt:
            raise InvalidInputError(f"{source}: duplicate ground truth for {object_id!r}")
        # Quadric construction checks symmetry and applies the sign convention
        gt[object_id] = Quadric(np.array(item["quadric"], dtype=float)).matrix

    detections = {k: tuple(v) for k, v in detections.items()}
    return Scene(cameras=cameras, detections=detections, gt=gt)


def _matrix_list(m: Optional[np.ndarray]):
    return None if m is None else [[float(x) for x in row] for row in m]


def result_entry(solution: Union[ClosedFormSolution, RegularizedSolution]) -> dict:
    """Serialize one solver solution to a result record.

    The quadric field holds the primal (point) quadric; it is null in the
    rare case primal recovery failed.  For the regularized solver the
    residual is the final residual norm (square root of the cost); for
    the closed form it is the smallest singular value.
    """
    ellipsoid = solution.ellipsoid
    if ellipsoid.valid:
        ell_payload = {
            "center": [float(x) for x in ellipsoid.center],
            "semi_axes": [float(x) for x in ellipsoid.semi_axes],
            "rotation": _matrix_list(ellipsoid.rotation),
        }
    else:
        ell_payload = None
    entry = {
        "object": solution.object_id,
        "method": "pfd" if isinstance(solution, ClosedFormSolution) else "pfd-reg",
        "quadric": _matrix_list(solution.primal.matrix if solution.primal is not None else None),
        "ellipsoid": ell_payload,
        "valid": bool(ellipsoid.valid),
        "betas": [float(b) for b in solution.betas],
        "n_views": len(solution.frame_ids),
    }
    if isinstance(solution, ClosedFormSolution):
        entry["residual"] = float(solution.residual)
    else:
        entry["residual"] = float(solution.cost_history[-1]) ** 0.5
        entry["converged"] = bool(solution.converged)
    if solution.warnings:
        entry["warnings"] = list(solution.warnings)
    return entry


def results_payload(entries: list) -> dict:
    payload = {"results": list(entries)}
    _validate(payload, "results", "<results>")
    return payload


@dataclass(frozen=True)
class LoadedResult:
    """One result record rehydrated into geometry types.

    ``ellipsoid`` is always present: invalid records come back as invalid
    ellipsoids carrying the quadric center when one is computable, which
    is exactly what the evaluation metrics expect.
    """

    object_id: str
    method: str
    quadric: Optional[np.ndarray]
    ellipsoid: Ellipsoid3D
    residual: Optional[float]
    betas: np.ndarray
    n_views: int
    warnings: tuple


def load_results(path: Union[str, Path]) -> list:
    source = str(path)
    payload = load_json(path)
    _validate(payload, "results", source)
    out = []
    for item in payload["results"]:
        if item["valid"] != (item["ellipsoid"] is not None):
            raise InvalidInputError(
                f"{source}: record {item['object']!r} valid flag contradicts ellipsoid"
            )
        quadric = None if item["quadric"] is None else np.array(item["quadric"], dtype=float)
        if item["valid"]:
            e = item["ellipsoid"]
            ellipsoid = Ellipsoid3D.make(
                center=e["center"], semi_axes=e["semi_axes"], rotation=np.array(e["rotation"])
            )
        else:
            center = None
            if quadric is not None:
                try:
                    center = quadric_center(quadric)
                except NoFiniteCenterError:
                    center = None
            ellipsoid = Ellipsoid3D.invalid(center=center)
        out.append(
            LoadedResult(
                object_id=item["object"],
                method=item["method"],
                quadric=quadric,
                ellipsoid=ellipsoid,
                residual=item["residual"],
                betas=np.array(item["betas"], dtype=float),
                n_views=item["n_views"],
                warnings=tuple(item.get("warnings", ())),
            )
        )
    return out


def validate_eval_report(payload, source: str = "<report>") -> None:
    _validate(payload, "eval_report", source)


def dump_json(payload) -> str:
    """Serialize a payload with full float precision, rejecting non-finite values."""
    return json.dumps(payload, indent=2, allow_nan=False)


def write_text(text: str, out: Optional[Union[str, Path]]) -> None:
    """Write to a file, or to stdout when ``out`` is None."""
    if out is None:
        print(text, end="" if text.endswith("\n") else "\n")
    else:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")
