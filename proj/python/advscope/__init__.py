"""Adversarial-attack interpretability workbench."""

import json

from ._advscope import (
    Api,
    FormatError,
    InsufficientMembersError,
    IoError,
    Model,
    NotFoundError,
    ValidationError,
    Workspace,
    generate_shapes,
    run_cli,
)

__all__ = [
    "Api",
    "FormatError",
    "InsufficientMembersError",
    "IoError",
    "Model",
    "NotFoundError",
    "ValidationError",
    "Workspace",
    "generate_shapes",
    "get_json",
    "run_cli",
]


def get_json(api, path, **params):
    """Calls an API path and decodes the JSON body; raises on non-200."""
    status, _, body = api.get(path, {k: str(v) for k, v in params.items()})
    payload = json.loads(body)
    if status != 200:
        raise RuntimeError(f"{path}: {status} {payload.get('error')}")
    return payload
