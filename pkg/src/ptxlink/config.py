"""Built-in link/deployment profiles and scenario configuration loading.

The three mobile-network profiles are calibrated so a reference transfer of
222 800 bytes lands on their headline medians (LTE 150 ms, 5G NSA 240 ms,
5G SA 70 ms); dispersion ratios are plausibility choices, not ground truth.
Backhaul and teleop constants have no measured reference at all and are
flagged uncalibrated so reports can annotate them.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field
from typing import Any

from .linkmodel import DelayDist, DeploymentProfile, LinkProfile

REF_TRANSFER_BYTES = 222_800

NETWORK_ALIASES = {
    "lte": "lte", "4g": "lte",
    "5g_nsa": "5g_nsa", "5g-nsa": "5g_nsa", "5gnsa": "5g_nsa", "nsa": "5g_nsa",
    "5g_sa": "5g_sa", "5g-sa": "5g_sa", "5gsa": "5g_sa", "sa": "5g_sa",
}

DEPLOYMENT_ALIASES = {
    "function": "function", "conventional": "function",
    "container": "container", "docker": "container",
    "orchestrated": "orchestrated", "kubernetes": "orchestrated", "k8s": "orchestrated",
}


class ConfigError(Exception):
    pass


DEFAULT_CONFIG: dict[str, Any] = {
    "profiles": {
        # WAN mobile networks (reference-transfer calibrated)
        "lte": {
            "median_ms": 3.0, "iqr_ratio": 0.30, "per_byte_us": 0.639332,
            "loss_prob": 0.0, "corrupt_prob": 0.0,
            "transfer_ref_bytes": REF_TRANSFER_BYTES, "transfer_target_ms": 150.0,
        },
        "5g_nsa": {
            "median_ms": 4.0, "iqr_ratio": 0.30, "per_byte_us": 1.030730,
            "loss_prob": 0.0, "corrupt_prob": 0.0,
            "transfer_ref_bytes": REF_TRANSFER_BYTES, "transfer_target_ms": 240.0,
        },
        # campus network (local platform coverage)
        "5g_sa": {
            "median_ms": 1.2, "iqr_ratio": 0.20, "per_byte_us": 0.300015,
            "loss_prob": 0.0, "corrupt_prob": 0.0,
            "transfer_ref_bytes": REF_TRANSFER_BYTES, "transfer_target_ms": 70.0,
        },
        # wired segments
        "platform_lan": {"median_ms": 0.3, "iqr_ratio": 0.05, "per_byte_us": 0.0008},
        "shore_fiber": {"median_ms": 3.0, "iqr_ratio": 0.05, "per_byte_us": 0.001,
                        "uncalibrated": True},
        "wired_wan": {"median_ms": 15.0, "iqr_ratio": 0.10, "per_byte_us": 0.002,
                      "uncalibrated": True},
        # long-haul backhaul (no measured reference; defaults only)
        "microwave": {"median_ms": 5.0, "iqr_ratio": 0.10, "per_byte_us": 0.01,
                      "uncalibrated": True},
        "satellite": {"median_ms": 270.0, "iqr_ratio": 0.05, "per_byte_us": 0.02,
                      "uncalibrated": True},
    },
    "deployments": {
        "function": {"processing_mean_ms": 244.8, "iqr_ratio": 0.05,
                     "link_load_factor": 230.0 / 240.0, "uncalibrated": True},
        "container": {"processing_mean_ms": 247.2, "iqr_ratio": 0.05,
                      "link_load_factor": 310.0 / 240.0, "uncalibrated": True},
        "orchestrated": {"processing_mean_ms": 246.0, "iqr_ratio": 0.05,
                         "link_load_factor": 1.0, "uncalibrated": True},
    },
    "payload": {
        "mean_bytes": REF_TRANSFER_BYTES, "sigma_rel": 0.10,
        "min_bytes": 1024, "response_bytes": 512,
    },
    "arq": {"window": 1024, "max_retries": 8, "mtu": 1400},
    "teleop": {
        # all uncalibrated: tunnel policy/rewrap cost at the jump host and the
        # robot's high-level command handling before it confirms
        "tunnel_median_ms": 12.0, "tunnel_iqr": 0.20,
        "handling_median_ms": 30.0, "handling_iqr": 0.30,
        "command_rate_hz": 10.0,
        "session_ttl_s": 900.0,
    },
    "topology": {"preset": "Setup3", "turbines": 2},
}


def profile_from_dict(name: str, doc: dict) -> LinkProfile:
    try:
        return LinkProfile(
            name=name,
            base_delay=DelayDist(median_us=float(doc["median_ms"]) * 1000.0,
                                 iqr_ratio=float(doc.get("iqr_ratio", 0.0))),
            per_byte_us=float(doc.get("per_byte_us", 0.0)),
            loss_prob=float(doc.get("loss_prob", 0.0)),
            corrupt_prob=float(doc.get("corrupt_prob", 0.0)),
            jitter_seed_domain=doc.get("jitter_seed_domain", ""),
            uncalibrated=bool(doc.get("uncalibrated", False)),
            transfer_ref_bytes=doc.get("transfer_ref_bytes"),
            transfer_target_ms=doc.get("transfer_target_ms"),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad link profile {name!r}: {exc}") from exc


def deployment_from_dict(name: str, doc: dict) -> DeploymentProfile:
    try:
        return DeploymentProfile(
            name=name,
            processing=DelayDist.from_mean(float(doc["processing_mean_ms"]),
                                           float(doc.get("iqr_ratio", 0.0))),
            link_load_factor=float(doc.get("link_load_factor", 1.0)),
            uncalibrated=bool(doc.get("uncalibrated", False)),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad deployment profile {name!r}: {exc}") from exc


@dataclass
class Config:
    raw: dict[str, Any]

    @property
    def profiles(self) -> dict[str, LinkProfile]:
        return {name: profile_from_dict(name, doc) for name, doc in self.raw["profiles"].items()}

    @property
    def deployments(self) -> dict[str, DeploymentProfile]:
        return {name: deployment_from_dict(name, doc)
                for name, doc in self.raw["deployments"].items()}

    def profile(self, name: str) -> LinkProfile:
        key = NETWORK_ALIASES.get(name.lower(), name)
        try:
            return profile_from_dict(key, self.raw["profiles"][key])
        except KeyError:
            raise ConfigError(f"unknown network profile {name!r}") from None

    def deployment(self, name: str) -> DeploymentProfile:
        key = DEPLOYMENT_ALIASES.get(name.lower(), name)
        try:
            return deployment_from_dict(key, self.raw["deployments"][key])
        except KeyError:
            raise ConfigError(f"unknown deployment profile {name!r}") from None

    def section(self, name: str) -> dict:
        return self.raw[name]


def _deep_merge(base: dict, override: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_config(path: str | None = None) -> Config:
    """Defaults, optionally overridden by a user JSON document."""
    raw = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path) as fh:
                user = json.load(fh)
        except ValueError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        raw = _deep_merge(raw, user)
    config = Config(raw)
    config.profiles  # validate eagerly
    config.deployments
    return config


def resolve_seed(cli_seed: int | None, config_seed: int | None = None) -> int:
    """CLI flag beats PTXLINK_SEED beats config beats default."""
    if cli_seed is not None:
        return cli_seed
    env = os.environ.get("PTXLINK_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"PTXLINK_SEED must be an integer, got {env!r}") from None
    if config_seed is not None:
        return config_seed
    return 42
