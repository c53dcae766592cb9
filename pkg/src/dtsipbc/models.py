"""Bundled example models shipped with the package."""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import List

from .parser import ModelFile, parse_model

__all__ = ["bundled_model_names", "load_model", "model_text"]

BUNDLED = (
    "ts_example",
    "choice_stoch",
    "choice_imm",
    "sync_pair",
    "ssbsspt_pair",
    "qts_f",
    "shared_memory",
    "shared_memory_abstract",
)


def bundled_model_names() -> List[str]:
    return list(BUNDLED)


def model_text(name_or_path: str) -> str:
    """Text of a bundled model (by bare name) or of a model file on disk."""
    path = Path(name_or_path)
    if path.suffix == ".dtsi" and path.exists():
        return path.read_text(encoding="utf-8")
    if name_or_path in BUNDLED:
        return resources.files(__package__).joinpath("models/%s.dtsi" % name_or_path).read_text("utf-8")
    if path.exists():
        return path.read_text(encoding="utf-8")
    raise FileNotFoundError("no model file or bundled model named %r" % name_or_path)


def load_model(name_or_path: str) -> ModelFile:
    return parse_model(model_text(name_or_path))
