"""JSON plant and result files."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .descriptor import BLOCK_NAMES, DescriptorPlant, Weights
from .errors import InputError

FORMAT_VERSION = 1
REQUIRED = ("E", "A", "B1", "C1")


@dataclass
class PlantBundle:
    """A plant file's contents. ``original`` and ``K1`` are set when the
    file is a ``regularize`` result: ``plant`` is then the transformed plant
    seen by the new control and ``original`` the plant it came from."""

    plant: DescriptorPlant
    weights: Weights
    options: dict = field(default_factory=dict)
    K1: np.ndarray | None = None
    original: DescriptorPlant | None = None
    source: dict = field(default_factory=dict)


def _parse_matrix(value, name: str, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [[value]]
    if not isinstance(value, list):
        raise InputError(f"field {name!r}: expected an array of row arrays")
    if not value:
        return np.zeros((0 if rows is None else rows, 0 if cols is None else cols))
    width = None
    for i, row in enumerate(value, start=1):
        if not isinstance(row, list):
            raise InputError(f"field {name!r}, row {i}: expected an array of numbers")
        for j, v in enumerate(row, start=1):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise InputError(f"field {name!r}, row {i}, column {j}: {v!r} is not a number")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise InputError(f"field {name!r}, row {i}: has {len(row)} entries, expected {width}")
    M = np.array(value, dtype=float)
    if M.size and not np.all(np.isfinite(M)):
        raise InputError(f"field {name!r}: entries must be finite")
    return M


def _read_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise InputError(f"{path}: top level must be an object")
    return doc


def plant_from_dict(doc: dict) -> tuple[DescriptorPlant, Weights]:
    missing = [k for k in REQUIRED if k not in doc]
    if missing:
        raise InputError(f"missing required field(s): {', '.join(missing)}")
    mats = {}
    for name in BLOCK_NAMES:
        if name in doc and doc[name] is not None:
            mats[name] = _parse_matrix(doc[name], name)
    n = mats["E"].shape[0]
    # empty lists for optional blocks mean zero-sized matrices
    for name, shape in (("B2", (n, 0)), ("C2", (0, n))):
        if name in mats and mats[name].size == 0:
            mats[name] = np.zeros(shape)
    for name in ("D11", "D12", "D21", "D22"):
        if name in mats and mats[name].size == 0:
            del mats[name]
    plant = DescriptorPlant.from_blocks(**mats)
    w = doc.get("weights")
    if not isinstance(w, dict):
        raise InputError("missing 'weights' object with fields P, Q, H")
    for key in ("P", "Q", "H"):
        if key not in w:
            raise InputError(f"field 'weights.{key}' is missing")
    weights = Weights(*(_parse_matrix(w[k], f"weights.{k}") for k in ("P", "Q", "H")))
    weights.check(plant)
    return plant, weights


def plant_to_dict(plant: DescriptorPlant, weights: Weights | None = None, options=None) -> dict:
    doc = {name: to_json(getattr(plant, name)) for name in BLOCK_NAMES}
    if weights is not None:
        doc["weights"] = {k: to_json(getattr(weights, k)) for k in ("P", "Q", "H")}
    if options:
        doc["options"] = options
    return doc


def load_plant(path) -> PlantBundle:
    """Read a plant file, or a ``regularize`` result (for chaining)."""
    doc = _read_json(path)
    if "format_version" in doc and "result" in doc:
        res = doc["result"]
        if "transformed_plant" not in res:
            raise InputError(f"{path}: result file of command {doc.get('command')!r} holds no plant")
        plant, weights = plant_from_dict(res["transformed_plant"])
        original, _ = plant_from_dict(doc["input"]["plant"])
        K1 = _parse_matrix(res["K1"], "K1")
        return PlantBundle(plant, weights, doc["input"]["plant"].get("options", {}), K1, original, doc)
    plant, weights = plant_from_dict(doc)
    options = doc.get("options", {}) or {}
    if not isinstance(options, dict):
        raise InputError("field 'options' must be an object")
    return PlantBundle(plant, weights, options, source=doc)


def to_json(value):
    """Matrices as row arrays, complex numbers as ``[re, im]``."""
    if isinstance(value, np.ndarray):
        if np.iscomplexobj(value):
            return [[float(v.real), float(v.imag)] for v in value.reshape(-1)]
        if value.ndim == 2:
            return [[float(v) for v in row] for row in value]
        return [float(v) for v in value.reshape(-1)]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {k: to_json(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_json(v) for v in value]
    return value


def regulator_to_dict(reg) -> dict:
    doc = {"kind": reg.kind, "p": reg.p, "K": to_json(reg.K)}
    if reg.kind == "dynamic":
        doc.update(Z=to_json(reg.Z), V=to_json(reg.V), U=to_json(reg.U))
    return doc


def regulator_from_dict(doc: dict):
    from .synthesis import Regulator

    if "K" not in doc:
        raise InputError("regulator record has no 'K'")
    K = _parse_matrix(doc["K"], "regulator.K")
    if doc.get("kind", "static") == "dynamic":
        p = int(doc["p"])
        return Regulator(
            K,
            _parse_matrix(doc["Z"], "regulator.Z", p, p),
            _parse_matrix(doc["V"], "regulator.V", p, K.shape[1]),
            _parse_matrix(doc["U"], "regulator.U", K.shape[0], p),
        )
    return Regulator(K)


def load_regulator(path):
    """Regulator stored in a ``synth`` result file (or a bare regulator record)."""
    doc = _read_json(path)
    record = doc.get("result", {}).get("regulator") if "format_version" in doc else doc
    if not isinstance(record, dict):
        raise InputError(f"{path}: no regulator record found")
    K1 = doc.get("result", {}).get("K1")
    return regulator_from_dict(record), (None if K1 is None else _parse_matrix(K1, "K1"))


def result_document(command: str, bundle: PlantBundle, result: dict, argv=None) -> dict:
    plant_doc = plant_to_dict(bundle.original or bundle.plant, bundle.weights, bundle.options)
    doc = {
        "format_version": FORMAT_VERSION,
        "dhinf_version": __version__,
        "command": command,
        "input": {"plant": plant_doc},
        "result": to_json(result),
    }
    if argv is not None:
        doc["argv"] = list(argv)
    if bundle.K1 is not None:
        doc["input"]["K1"] = to_json(bundle.K1)
    return doc


def write_result(path, doc: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path
