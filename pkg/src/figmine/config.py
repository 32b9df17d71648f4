"""Flat ``section.key = value`` configuration.

Precedence: built-in defaults < config file < command-line flags. The API key
itself is never read from here, only the name of the environment variable
that holds it.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Any, Callable, Mapping

from .errors import ValidationError
from .isotherm import parse_range
from .metrics import ComparatorConfig
from .vision import BatchPolicy, CostModel, ModelConfig


def _positive(conv: Callable[[str], Any]) -> Callable[[Any], Any]:
    def check(raw):
        try:
            value = conv(raw) if isinstance(raw, str) else raw
        except (ValueError, InvalidOperation):
            raise ValidationError(f"not a number: {raw!r}") from None
        if not value > 0:
            raise ValidationError(f"must be positive: {raw!r}")
        return value
    return check


def _range(raw):
    return parse_range(raw) if isinstance(raw, str) else tuple(raw)


def _text(raw):
    value = str(raw).strip()
    if not value:
        raise ValidationError("empty value")
    return value


SPEC: dict[str, tuple[Callable[[Any], Any], Any]] = {
    "api.base_url": (_text, ModelConfig.base_url),
    "api.model_id": (_text, ModelConfig.model_id),
    "api.key_env_name": (_text, ModelConfig.api_key_env),
    "api.max_tokens": (_positive(int), ModelConfig.max_tokens),
    "api.timeout_s": (_positive(float), ModelConfig.timeout_s),
    "batch.concurrency": (_positive(int), BatchPolicy.concurrency),
    "batch.rate_per_min": (_positive(float), BatchPolicy.requests_per_minute),
    "batch.max_attempts": (_positive(int), BatchPolicy.max_attempts),
    "batch.backoff_initial_s": (_positive(float), BatchPolicy.backoff_initial_s),
    "analysis.bet_range": (_range, (0.05, 0.30)),
    "analysis.slope_eps": (_positive(float), 0.05),
    "analysis.gap_tol": (_positive(float), 0.02),
    "analysis.iou_threshold": (_positive(float), ComparatorConfig.iou_threshold),
    "cost.usd_per_image": (_positive(Decimal), Decimal("0.02")),
    "cost.seconds_per_request": (_positive(Decimal), Decimal("5.2")),
    "cost.pages_per_paper": (_positive(Decimal), Decimal("18")),
}


@dataclass(frozen=True)
class Config:
    values: Mapping[str, Any]
    explicit: frozenset[str] = field(default_factory=frozenset)

    def __getitem__(self, key: str):
        return self.values[key]

    def is_set(self, key: str) -> bool:
        return key in self.explicit

    def model_config(self, **overrides) -> ModelConfig:
        v = self.values
        kwargs = dict(base_url=v["api.base_url"], model_id=v["api.model_id"],
                      max_tokens=v["api.max_tokens"], timeout_s=v["api.timeout_s"],
                      api_key_env=v["api.key_env_name"])
        kwargs.update(overrides)
        return ModelConfig(**kwargs)

    def batch_policy(self) -> BatchPolicy:
        v = self.values
        return BatchPolicy(concurrency=v["batch.concurrency"], requests_per_minute=v["batch.rate_per_min"],
                           max_attempts=v["batch.max_attempts"],
                           backoff_initial_s=v["batch.backoff_initial_s"])

    def cost_model(self) -> CostModel:
        v = self.values
        return CostModel(v["cost.usd_per_image"], v["cost.seconds_per_request"], v["cost.pages_per_paper"])

    def comparator(self) -> ComparatorConfig:
        return ComparatorConfig(iou_threshold=self.values["analysis.iou_threshold"])


def read_config_file(path: str | Path) -> dict[str, str]:
    text = Path(path).read_text(encoding="utf-8")
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    try:
        parser.read_string("[config]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return dict(parser["config"])


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> Config:
    """Merge defaults, the optional file, then non-``None`` overrides."""
    raw: dict[str, Any] = {}
    if path is not None:
        raw.update(read_config_file(path))
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = sorted(set(raw) - set(SPEC))
    if unknown:
        raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
    values = {}
    for key, (conv, default) in SPEC.items():
        try:
            values[key] = conv(raw[key]) if key in raw else default
        except ValidationError as exc:
            raise ValidationError(f"{key}: {exc}") from None
    # surfaces a malformed base_url at load time rather than on first request
    Config(values).model_config()
    return Config(values, frozenset(raw))
