"""Scattering and reflectometry models built from expression graphs."""

import json

from ._core import (
    Error,
    EvalError,
    FitError,
    Functor,
    ModelFile,
    Parameter,
    ParseError,
    SchemaError,
    run_cli,
)

__all__ = [
    "Error",
    "EvalError",
    "FitError",
    "Functor",
    "ModelFile",
    "Parameter",
    "ParseError",
    "SchemaError",
    "from_dict",
    "load",
    "run_cli",
]


def load(path):
    return ModelFile.load(str(path))


def from_dict(doc, base_dir=""):
    return ModelFile.from_json(json.dumps(doc), str(base_dir))
