"""Decompiler adapter registry.

An adapter turns raw listing bytes into a PseudoModule. Only the textual
reference adapter ships; LLM or disassembler front-ends register here.
"""
from __future__ import annotations

from pathlib import Path
from typing import Callable

from ..errors import IoFailure, ListingSyntaxError, UnknownAdapter
from .model import PseudoModule
from .parser import parse_pseudocode

Adapter = Callable[[bytes, str], PseudoModule]

_REGISTRY: dict = {}


def register_adapter(adapter_id: str, fn: Adapter) -> None:
    _REGISTRY[adapter_id] = fn


def unregister_adapter(adapter_id: str) -> None:
    _REGISTRY.pop(adapter_id, None)


def registered_adapters() -> list:
    return sorted(_REGISTRY)


def _text_listing(data: bytes, source_id: str) -> PseudoModule:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ListingSyntaxError(1, exc.start + 1, "UTF-8 text") from exc
    return parse_pseudocode(text, source_id, adapter_id="text-listing")


register_adapter("text-listing", _text_listing)


def load_listing(path, adapter_id: str = "text-listing", source_id: str | None = None) -> PseudoModule:
    """Read ``path`` and hand its bytes to the adapter registered as ``adapter_id``."""
    if adapter_id not in _REGISTRY:
        raise UnknownAdapter(f"no adapter registered for {adapter_id!r}")
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc.strerror or exc}") from exc
    module = _REGISTRY[adapter_id](data, source_id or path.name)
    if module.adapter_id != adapter_id:
        # adapters may reuse the text parser; the stamp reflects who was asked
        module = PseudoModule(module.source_id, module.functions, adapter_id, module.raw_text_hash)
    return module
