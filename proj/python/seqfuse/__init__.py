# SPDX-License-Identifier: Apache-2.0
"""Sequential multi-camera feature fusion for person re-identification.

Thin Python layer over the C++ core. Structured results are returned as
plain dicts and lists.
"""

from __future__ import annotations

import json
from typing import Any, Iterable, Optional, Sequence

from . import _seqfuse
from ._seqfuse import (
    ArgumentError,
    ConflictError,
    DataError,
    Dataset,
    DimensionError,
    DivergenceError,
    FusionModel,
    NotFoundError,
    NumericError,
    SeqfuseError,
    init_params,
    lambda_r,
    load_checkpoint,
    load_manifest,
    parse_manifest,
    scheduled_value,
)

__all__ = [
    "ArgumentError",
    "ConflictError",
    "DataError",
    "Dataset",
    "DimensionError",
    "DivergenceError",
    "FusionModel",
    "NotFoundError",
    "NumericError",
    "SeqfuseError",
    "Service",
    "default_spec",
    "evaluate",
    "generate_synthetic",
    "init_params",
    "lambda_r",
    "load_checkpoint",
    "load_manifest",
    "parse_manifest",
    "record",
    "run_cli",
    "scheduled_value",
    "train",
]


def default_spec() -> dict:
    """Default synthetic world parameters."""
    return json.loads(_seqfuse.default_spec_json())


def generate_synthetic(**spec: Any) -> Dataset:
    """Synthetic train/query/gallery dataset; keyword arguments override default_spec()."""
    return _seqfuse.generate_synthetic(json.dumps(spec))


def record(dataset: Dataset, index: int) -> dict:
    """One feature record as a dict with id, pid, cam, split and feat."""
    return json.loads(dataset.record_json(index))


def train(dataset: Dataset, **config: Any) -> tuple[FusionModel, list[str]]:
    """Trains a fusion model. Returns the model and the loss log lines.

    Recognised keys: iterations, seed, hidden, lr, t0, t1, lambda0,
    batch_identities, mloss, soft_margin, margin, fc_activation, gru_input,
    full_scale.
    """
    return _seqfuse.train(dataset, json.dumps(config))


def evaluate(
    dataset: Dataset,
    model: Optional[FusionModel] = None,
    protocol: str = "vsp",
    fuser: str = "gru",
    gallery: Optional[Sequence[int]] = None,
) -> dict:
    """Runs a protocol. FSP without a gallery covers every single-camera gallery."""
    return json.loads(
        _seqfuse.run_protocol(dataset, model, protocol, fuser, list(gallery) if gallery is not None else None)
    )


def run_cli(args: Iterable[str]) -> tuple[int, str, str]:
    """Runs the seqfuse command line in-process: (exit code, stdout, stderr)."""
    return _seqfuse.run_cli(list(args))


class Service:
    """Operator sessions over one dataset and optional model."""

    def __init__(
        self,
        dataset: Dataset,
        model: Optional[FusionModel] = None,
        mode: str = "demo",
        top: int = 20,
        journal: Optional[str] = None,
    ) -> None:
        self._svc = _seqfuse.Service(dataset, model, mode, top, journal)

    def create(self, query_record: str, fuser: Optional[str] = None, scope: Optional[Sequence[int]] = None) -> dict:
        return json.loads(self._svc.create(query_record, fuser, list(scope) if scope is not None else None))

    def confirm(self, session: str, camera: int, record: str, elapsed_seconds: Optional[float] = None) -> dict:
        return json.loads(self._svc.confirm(session, camera, record, elapsed_seconds))

    def restart(self, session: str) -> dict:
        return json.loads(self._svc.restart(session))

    def state(self, session: str, top: Optional[int] = None) -> dict:
        return json.loads(self._svc.state(session, top))

    def logs(self, session: Optional[str] = None) -> dict:
        return json.loads(self._svc.logs(session))

    def request(self, method: str, path: str, query: Optional[dict] = None, body: Any = None) -> tuple[int, Any]:
        """Routes one /v1 request without a socket. JSON bodies are decoded."""
        payload = "" if body is None else json.dumps(body)
        status, content_type, text, _headers = self._svc.handle(method, path, dict(query or {}), payload)
        return status, json.loads(text) if content_type == "application/json" and text else text
