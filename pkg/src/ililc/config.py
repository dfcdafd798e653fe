"""JSON run configuration shared by the command-line subcommands.

Every section is optional; missing keys keep their defaults. Example::

    {
      "model": "cart-pendulum",
      "reference": {"N": 250, "amplitude": 0.2, "hold_fraction": 0.4},
      "cart_pendulum": {"M_c": 0.5, "kappa": [630, -5900, 5900, -3700, 4300]},
      "lti": {"A": [[0.5]], "B": [1.0], "C": [1.0]},
      "ilc": {"gamma": 1.1, "m_final": 1, "n_trials": 50, "ptype_gain": 0.5},
      "campaign": {"n_bins": 10, "models_per_bin": 5, "tolerance": 5e-4}
    }
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .bench import CampaignConfig
from .model import (
    CartPendulumModel,
    CartPendulumParams,
    LtiModel,
    ReferenceProfile,
    appendix_lti,
    make_reference,
)

__all__ = ["ConfigError", "RunConfig", "load_config", "MODEL_KINDS"]

MODEL_KINDS = ("cart-pendulum", "lti", "appendix-lti")
_REFERENCE_KEYS = ("N", "Ts", "lead", "tail", "amplitude", "hold_fraction")
_ILC_KEYS = ("gamma", "m_final", "n_trials", "ptype_gain")


class ConfigError(ValueError):
    """Malformed configuration file or override."""


@dataclass
class RunConfig:
    model: str = "cart-pendulum"
    reference: dict = field(default_factory=dict)
    cart_pendulum: dict = field(default_factory=dict)
    lti: dict = field(default_factory=dict)
    gamma: float = 1.1
    m_final: int = 1
    n_trials: int = 50
    ptype_gain: float = 0.5
    campaign: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        unknown = set(self.reference) - set(_REFERENCE_KEYS)
        if unknown:
            raise ConfigError(f"unknown reference keys {sorted(unknown)}")
        if self.m_final < 1 or self.n_trials < 1 or not self.gamma > 0:
            raise ConfigError("m_final and n_trials must be >= 1 and gamma positive")

    def build_reference(self) -> ReferenceProfile:
        return make_reference(**self.reference)

    def build_params(self, noisy: bool = True) -> CartPendulumParams:
        try:
            p = CartPendulumParams(**self.cart_pendulum)
        except TypeError as exc:
            raise ConfigError(f"bad cart_pendulum section: {exc}") from exc
        return p if noisy else p.noiseless()

    def build_lti(self) -> LtiModel:
        if self.model == "appendix-lti":
            return appendix_lti()
        try:
            return LtiModel(np.array(self.lti["A"]), np.array(self.lti["B"]), np.array(self.lti["C"]))
        except KeyError as exc:
            raise ConfigError(f"lti section needs A, B and C (missing {exc})") from exc

    def build_model(self, noisy: bool = False):
        """Control model (noise-free) or, with ``noisy=True``, the nominal truth model."""
        ref = self.build_reference()
        if self.model == "cart-pendulum":
            return CartPendulumModel(self.build_params(noisy), ref)
        return self.build_lti().normal_form(ref)

    def campaign_config(self, preset: dict | None = None, **overrides) -> CampaignConfig:
        """Merge, lowest priority first: preset, this config, ``overrides`` (``None`` values skipped)."""
        base = dict(preset or {})
        base.update({k: self.reference[k] for k in _REFERENCE_KEYS if k in self.reference})
        base.update(gamma=self.gamma, m_final=self.m_final, n_trials=self.n_trials)
        base.update(self.campaign)
        base.update({k: v for k, v in overrides.items() if v is not None})
        allowed = {f.name for f in fields(CampaignConfig)}
        unknown = set(base) - allowed
        if unknown:
            raise ConfigError(f"unknown campaign keys {sorted(unknown)}")
        try:
            return CampaignConfig(**base)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def with_overrides(self, N: int | None = None, **kw) -> "RunConfig":
        ref = dict(self.reference)
        if N is not None:
            ref["N"] = N
        return replace(self, reference=ref, **{k: v for k, v in kw.items() if v is not None})


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    ilc = data.pop("ilc", {})
    unknown = set(ilc) - set(_ILC_KEYS)
    if unknown:
        raise ConfigError(f"unknown ilc keys {sorted(unknown)}")
    allowed = {"model", "reference", "cart_pendulum", "lti", "campaign"}
    extra = set(data) - allowed
    if extra:
        raise ConfigError(f"unknown config sections {sorted(extra)}")
    return RunConfig(**data, **ilc)
