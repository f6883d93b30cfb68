"""Flat binary array persistence with JSON sidecars.

Every array is written as row-major little-endian float32.  Complex arrays
store interleaved (real, imag) pairs, so a complex (H, W) array occupies
2*H*W floats.  Sidecars record shape and encoding.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from adaptscan.common import LABEL_NAMES, PhantomKind
from adaptscan.phantom import CoilSensitivities, GroundTruthCase
from adaptscan.sampling import MaskKind, SamplingMask


def write_array(path: Path, arr: np.ndarray) -> dict:
    """Write ``arr`` and return its shape/dtype descriptor."""
    arr = np.asarray(arr)
    if np.iscomplexobj(arr):
        flat = np.ascontiguousarray(arr.astype("<c8")).view("<f4")
        dtype = "complex64-interleaved"
    else:
        flat = np.ascontiguousarray(arr.astype("<f4"))
        dtype = "float32"
    Path(path).write_bytes(flat.tobytes(order="C"))
    return {"file": Path(path).name, "shape": list(arr.shape), "dtype": dtype}


def read_array(path: Path, shape, dtype: str) -> np.ndarray:
    raw = np.frombuffer(Path(path).read_bytes(), dtype="<f4")
    if dtype == "complex64-interleaved":
        return raw.view("<c8").reshape(shape).astype(np.complex128)
    if dtype == "float32":
        return raw.reshape(shape).astype(np.float64)
    raise ValueError(f"unknown array encoding {dtype!r}")


def _case_fields(case: GroundTruthCase) -> dict[str, np.ndarray]:
    fields = {"coils": case.coils.maps}
    if case.kind is PhantomKind.KNEE_STATIC:
        fields["image"] = case.image
        fields["labels"] = case.labels
    else:
        (ed_img, ed_lab), (es_img, es_lab) = case.phases
        fields.update(image_ed=ed_img, labels_ed=ed_lab, image_es=es_img, labels_es=es_lab)
    return fields


def save_case(directory, index: int, case: GroundTruthCase) -> Path:
    """Write ``case_<index>_<field>.bin`` files plus ``case_<index>.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    arrays = {
        name: write_array(d / f"case_{index}_{name}.bin", arr) for name, arr in _case_fields(case).items()
    }
    sidecar = {
        "index": index,
        "kind": case.kind.value,
        "seed": case.seed,
        "voxel_spacing": list(case.voxel_spacing),
        "true_metric": case.true_metric,
        "metric_units": "cm3" if case.kind is PhantomKind.KNEE_STATIC else "percent",
        "labels_encoding": {str(k): v for k, v in LABEL_NAMES.items()},
        "params": case.params,
        "arrays": arrays,
    }
    path = d / f"case_{index}.json"
    path.write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path


def load_case(directory, index: int) -> GroundTruthCase:
    d = Path(directory)
    meta = json.loads((d / f"case_{index}.json").read_text())
    arr = {
        name: read_array(d / a["file"], a["shape"], a["dtype"]) for name, a in meta["arrays"].items()
    }
    kind = PhantomKind(meta["kind"])
    if kind is PhantomKind.KNEE_STATIC:
        image, labels, phases = arr["image"], arr["labels"].astype(np.int32), None
    else:
        phases = (
            (arr["image_ed"], arr["labels_ed"].astype(np.int32)),
            (arr["image_es"], arr["labels_es"].astype(np.int32)),
        )
        image, labels = phases[0]
    return GroundTruthCase(
        kind=kind,
        image=image,
        labels=labels,
        voxel_spacing=tuple(meta["voxel_spacing"]),
        true_metric=float(meta["true_metric"]),
        coils=CoilSensitivities(arr["coils"]),
        seed=int(meta["seed"]),
        params=meta["params"],
        phase_images=phases,
    )


def save_mask(directory, name: str, mask: SamplingMask) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    desc = write_array(d / f"{name}.bin", mask.grid)
    sidecar = {
        **desc,
        "kind": mask.kind.value,
        "target_R": mask.target_R,
        "realized_R": mask.realized_R,
        "seed": mask.seed,
        "center_radius": mask.center_radius,
    }
    path = d / f"{name}.json"
    path.write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path


def load_mask(directory, name: str) -> SamplingMask:
    d = Path(directory)
    meta = json.loads((d / f"{name}.json").read_text())
    grid = read_array(d / meta["file"], meta["shape"], meta["dtype"]) > 0.5
    return SamplingMask(grid, float(meta["target_R"]), MaskKind(meta["kind"]), int(meta["seed"]), int(meta["center_radius"]))
