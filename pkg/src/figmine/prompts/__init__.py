"""Versioned prompt texts and the response templates they ask for.

Prompt bodies ship as package resources so that an evaluation run can be
reproduced from ``(kind, version)`` alone. ``PromptText.from_file`` exists for
ad-hoc experiments; its version tag is derived from the file content.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Literal

PromptKind = Literal["classification", "extraction"]

PROMPT_VERSION = "v1"
NA_TOKEN = "N/A"
UNSURE_TOKEN = "I do not know"

CLASS_NAMES = {
    1: "Nitrogen Isotherm",
    2: "PXRD Pattern",
    3: "TGA Curve",
    4: "Crystal Structure or Topology",
    5: "Other Gas Sorption Isotherm",
    6: "None of Above",
}
CLASS_ABBREV = {1: "NI", 2: "PXRD", 3: "TGA", 4: "CST", 5: "OI", 6: "NOA"}

FIGURES_KEY = "Figures"
ISOTHERM_KEY = "Nitrogen Isotherm"
DESCRIPTOR_KEYS = ("Compound", "Porosity", "Hysteresis", "Saturation", "Position")


@dataclass(frozen=True)
class PromptText:
    kind: PromptKind
    body: str
    version: str

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.body.encode("utf-8")).hexdigest()

    @classmethod
    def from_file(cls, path: str | Path, kind: PromptKind = "extraction") -> "PromptText":
        body = Path(path).read_text(encoding="utf-8")
        digest = hashlib.sha256(body.encode("utf-8")).hexdigest()[:12]
        return cls(kind=kind, body=body, version=f"file-{digest}")


@dataclass(frozen=True)
class ResponseSchema:
    kind: PromptKind
    required_keys_no_isotherm: tuple[str, ...]
    required_keys_with_isotherm: tuple[str, ...]
    na_token: str = NA_TOKEN
    unsure_token: str = UNSURE_TOKEN
    keys: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        merged = list(self.required_keys_no_isotherm)
        merged += [k for k in self.required_keys_with_isotherm if k not in merged]
        object.__setattr__(self, "keys", tuple(merged))


def _load(kind: str, version: str) -> str:
    name = f"{kind}_{version}.txt"
    try:
        return resources.files(__name__).joinpath(name).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ValueError(f"no stored prompt for kind={kind!r} version={version!r}") from None


def build_classification_prompt(version: str = PROMPT_VERSION) -> PromptText:
    """Short six-choice page labeling prompt."""
    return PromptText("classification", _load("classification", version), version)


def build_extraction_prompt(version: str = PROMPT_VERSION) -> PromptText:
    """Full six-question prompt with both answer templates.

    This is also the default prompt for page classification, since its first
    question carries the same six choices.
    """
    return PromptText("extraction", _load("extraction", version), version)


def build_prompt(kind: PromptKind, version: str = PROMPT_VERSION) -> PromptText:
    if kind == "classification":
        return build_classification_prompt(version)
    if kind == "extraction":
        return build_extraction_prompt(version)
    raise ValueError(f"unknown prompt kind {kind!r}")


def schema_for(kind: PromptKind) -> ResponseSchema:
    if kind == "classification":
        return ResponseSchema(kind, (FIGURES_KEY,), (FIGURES_KEY,))
    if kind == "extraction":
        return ResponseSchema(
            kind,
            (FIGURES_KEY, ISOTHERM_KEY),
            (FIGURES_KEY, ISOTHERM_KEY) + DESCRIPTOR_KEYS,
        )
    raise ValueError(f"unknown prompt kind {kind!r}")
