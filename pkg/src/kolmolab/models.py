"""Model configurations: JSON schema, validation and the bundled builtins."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidInputError
from .matrix_core import PSD_TOL, SYMMETRY_TOL, OperatorSpec

_TOP_KEYS = {"name", "N", "A", "B", "jordan", "defaults"}
_REQUIRED = ("name", "N", "A", "B")
_JORDAN_KEYS = {"nilpotent", "rotations"}
_DEFAULT_KEYS = {"p": int, "seed": int, "t_min": float, "t_max": float, "t_points": int, "samples": int}


@dataclass(frozen=True)
class ModelConfig:
    name: str
    N: int
    A: tuple
    B: tuple
    jordan: dict | None = None
    defaults: dict = field(default_factory=dict)

    def spec(self) -> OperatorSpec:
        N = self.N
        return OperatorSpec(np.reshape(self.A, (N, N)), np.reshape(self.B, (N, N)), name=self.name)

    def structure(self):
        """The declared Jordan structure, or ``None``."""
        if self.jordan is None:
            return None
        from .asymptotic import JordanStructure

        return JordanStructure(tuple(self.jordan["nilpotent"]),
                               tuple((int(m), float(b)) for m, b in self.jordan["rotations"]))


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _matrix(raw: dict, key: str, N: int) -> list:
    vals = raw[key]
    if not isinstance(vals, list) or len(vals) != N * N:
        raise ConfigError(key, f"expected a list of N*N = {N * N} numbers")
    for i, v in enumerate(vals):
        if not _is_number(v):
            raise ConfigError(f"{key}[{i}]", "expected a finite number")
    return [float(v) for v in vals]


def _parse_jordan(raw, N: int, B: np.ndarray) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("jordan", "expected an object")
    for k in raw:
        if k not in _JORDAN_KEYS:
            raise ConfigError(f"jordan.{k}", "unknown key")
    nil = raw.get("nilpotent", [])
    rot = raw.get("rotations", [])
    if not isinstance(nil, list):
        raise ConfigError("jordan.nilpotent", "expected a list of block sizes")
    for i, n in enumerate(nil):
        if not _is_int(n) or n < 1:
            raise ConfigError(f"jordan.nilpotent[{i}]", "block sizes must be integers >= 1")
    if not isinstance(rot, list):
        raise ConfigError("jordan.rotations", "expected a list of [m, b] pairs")
    for i, pair in enumerate(rot):
        if not (isinstance(pair, list) and len(pair) == 2 and _is_int(pair[0]) and pair[0] >= 1
                and _is_number(pair[1]) and pair[1] != 0):
            raise ConfigError(f"jordan.rotations[{i}]", "expected [m >= 1, b != 0]")
    out = {"nilpotent": [int(n) for n in nil], "rotations": [[int(m), float(b)] for m, b in rot]}
    from .asymptotic import JordanStructure

    try:
        structure = JordanStructure(tuple(out["nilpotent"]), tuple((m, b) for m, b in out["rotations"]))
        structure.validate_against(B)
    except InvalidInputError as exc:
        raise ConfigError("jordan", str(exc)) from exc
    return out


def config_from_dict(raw) -> ModelConfig:
    if not isinstance(raw, dict):
        raise ConfigError("$", "expected a JSON object")
    for k in raw:
        if k not in _TOP_KEYS:
            raise ConfigError(k, "unknown key")
    for k in _REQUIRED:
        if k not in raw:
            raise ConfigError(k, "missing required key")
    if not isinstance(raw["name"], str) or not raw["name"]:
        raise ConfigError("name", "expected a non-empty string")
    N = raw["N"]
    if not _is_int(N) or N < 1:
        raise ConfigError("N", "expected a positive integer")
    A = _matrix(raw, "A", N)
    B = _matrix(raw, "B", N)
    Am = np.reshape(A, (N, N))
    Bm = np.reshape(B, (N, N))
    if np.max(np.abs(Am - Am.T)) > SYMMETRY_TOL:
        raise ConfigError("A", "matrix is not symmetric")
    if np.linalg.eigvalsh(Am)[0] < -PSD_TOL:
        raise ConfigError("A", "matrix is not positive semidefinite")
    jordan = None
    if raw.get("jordan") is not None:
        jordan = _parse_jordan(raw["jordan"], N, Bm)
    defaults = {}
    if "defaults" in raw:
        d = raw["defaults"]
        if not isinstance(d, dict):
            raise ConfigError("defaults", "expected an object")
        for k, v in d.items():
            if k not in _DEFAULT_KEYS:
                raise ConfigError(f"defaults.{k}", "unknown key")
            kind = _DEFAULT_KEYS[k]
            if kind is int and not _is_int(v):
                raise ConfigError(f"defaults.{k}", "expected an integer")
            if kind is float and not _is_number(v):
                raise ConfigError(f"defaults.{k}", "expected a finite number")
            defaults[k] = kind(v)
    return ModelConfig(raw["name"], N, tuple(A), tuple(B), jordan, defaults)


def parse_model_config(text: str) -> ModelConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON: {exc}") from exc
    return config_from_dict(raw)


BUILTIN_MODELS = {
    "heat1d": {"name": "heat1d", "N": 1, "A": [1], "B": [0],
               "jordan": {"nilpotent": [1], "rotations": []}},
    "rotation": {"name": "rotation", "N": 2, "A": [1, 0, 0, 1], "B": [0, -1, 1, 0],
                 "jordan": {"nilpotent": [], "rotations": [[1, -1]]}},
    "kolmogorov": {"name": "kolmogorov", "N": 2, "A": [1, 0, 0, 0], "B": [0, 0, 1, 0],
                   "jordan": {"nilpotent": [2], "rotations": []}},
    # two rotation planes with frequencies 1 and 2; A couples them so the
    # cut-off and flip residuals do not vanish identically
    "mix": {"name": "mix", "N": 4,
            "A": [2.0, 0.3, 0.5, 0.2,
                  0.3, 1.0, 0.1, 0.4,
                  0.5, 0.1, 1.5, 0.3,
                  0.2, 0.4, 0.3, 1.0],
            "B": [0, -1, 0, 0,
                  1, 0, 0, 0,
                  0, 0, 0, -2,
                  0, 0, 2, 0],
            "jordan": {"nilpotent": [], "rotations": [[1, -1], [1, -2]]}},
}


def builtin_model(name: str) -> ModelConfig:
    try:
        return config_from_dict(BUILTIN_MODELS[name])
    except KeyError:
        raise InvalidInputError(f"unknown builtin model {name!r}; choose from {sorted(BUILTIN_MODELS)}") from None


def load_model(ref: str) -> ModelConfig:
    """Resolve ``ref`` as a builtin name first, then as a path to a JSON file."""
    if ref in BUILTIN_MODELS:
        return builtin_model(ref)
    path = Path(ref)
    if not path.is_file():
        raise InvalidInputError(f"model {ref!r} is neither a builtin ({', '.join(sorted(BUILTIN_MODELS))}) nor a file")
    return parse_model_config(path.read_text(encoding="utf-8"))
