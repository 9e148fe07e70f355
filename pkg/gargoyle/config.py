# gargoyle/config.py
# Defaults for every tunable in the pipeline plus the JSON-backed config models.

import json
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from gargoyle.errors import ConfigError

# ------------- CONFIG -------------
NOMINAL_HOP_MS      = 1          # simulated per-hop latency
TOLERANCE_MS        = 10         # data-plane verifier slack (delta)
PORT_SCAN_THRESHOLD = 20         # distinct destination ports ...
PORT_SCAN_WINDOW_MS = 10_000     # ... inside this window
RATE_THRESHOLD_PPS  = 1_000      # DoS rate ...
RATE_WINDOW_MS      = 1_000      # ... measured over this window
RECENT_WINDOW_MS    = 60_000     # recent vs historical split
CLOCK_ORIGIN_HOUR   = 9          # t=0 of every run is 09:00
HACKING_TOOLS       = ("kali", "vuln-scanner", "metasploit", "nmap")
ORG_NETWORKS        = ("10.0.0.0/16",)
PROVIDER_IP         = "10.0.100.1"
SEED                = 42
# ----------------------------------

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

REQUESTER_SUBTYPES = frozenset({"restricted-domain", "hacking-tool", "port-scan", "historic-malware", "dos"})
PROXIMITY_SUBTYPES = frozenset({"hacking-tool", "port-scan", "malware"})
COMPOUNDS = frozenset({"1+2", "1+3", "2+3", "1+2+3"})


class DetectorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    port_scan_threshold: int = Field(default=PORT_SCAN_THRESHOLD, ge=1)
    port_scan_window_ms: int = Field(default=PORT_SCAN_WINDOW_MS, ge=1)
    rate_threshold_pps: float = Field(default=RATE_THRESHOLD_PPS, gt=0)
    rate_window_ms: int = Field(default=RATE_WINDOW_MS, ge=1)
    recent_window_ms: int = Field(default=RECENT_WINDOW_MS, ge=1)
    hacking_tools: frozenset[str] = frozenset(HACKING_TOOLS)
    org_networks: tuple[str, ...] = ORG_NETWORKS


class EngineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    recent_window_ms: int = Field(default=RECENT_WINDOW_MS, ge=1)
    tolerance_ms: int = Field(default=TOLERANCE_MS, ge=0)
    provider_ip: str = PROVIDER_IP
    latency_samples: int = Field(default=100_000, ge=1)
    closed_sessions_kept: int = Field(default=10_000, ge=0)


class GeneratorConfig(BaseModel):
    """Knobs for the synthetic insider-scenario generator."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    scenarios: int = Field(default=1000, ge=0)
    maps: list[int] = Field(default_factory=lambda: [1, 2, 3, 4, 5, 6, 7])
    category_shares: dict[int, float] = Field(default_factory=lambda: {1: 0.20, 2: 0.30, 3: 0.10, 4: 0.40})
    users_mean: float = 35.0
    users_sd: float = 15.0
    users_min: int = Field(default=3, ge=2)
    users_max: int = Field(default=90, ge=2)
    # sub-type weights for the data requester's own device
    requester_mix: dict[str, float] = Field(default_factory=lambda: {
        "restricted-domain": 0.35, "hacking-tool": 0.30, "port-scan": 0.15,
        "historic-malware": 0.12, "dos": 0.08,
    })
    # sub-type weights for a device in the requester's zone
    proximity_mix: dict[str, float] = Field(default_factory=lambda: {
        "hacking-tool": 0.45, "port-scan": 0.30, "malware": 0.25,
    })
    # which pair/triple of the three single categories a compound scenario mixes
    compound_mix: dict[str, float] = Field(default_factory=lambda: {
        "1+2": 0.55, "1+3": 0.10, "2+3": 0.15, "1+2+3": 0.20,
    })
    war_object_share: float = Field(default=0.20, ge=0, le=1)
    reroute_share: float = Field(default=0.50, ge=0, le=1)
    role_mismatch_rate: float = Field(default=0.02, ge=0, le=1)
    zone_mismatch_rate: float = Field(default=0.04, ge=0, le=1)

    @model_validator(mode="after")
    def _check(self) -> "GeneratorConfig":
        if sorted(self.category_shares) != [1, 2, 3, 4]:
            raise ValueError("category_shares must name categories 1..4")
        if abs(sum(self.category_shares.values()) - 1.0) > 1e-9:
            raise ValueError("category_shares must sum to 1")
        if any(m < 1 or m > 7 for m in self.maps) or not self.maps:
            raise ValueError("maps must be ids in 1..7")
        if self.users_min > self.users_max:
            raise ValueError("users_min > users_max")
        for name, mix, known in (
            ("requester_mix", self.requester_mix, REQUESTER_SUBTYPES),
            ("proximity_mix", self.proximity_mix, PROXIMITY_SUBTYPES),
            ("compound_mix", self.compound_mix, COMPOUNDS),
        ):
            if not mix or set(mix) - known or any(w < 0 for w in mix.values()):
                raise ValueError(f"{name} must weight some of {sorted(known)}")
        return self


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Could not read config {path}: {e}") from e


def load_generator_config(path=None) -> GeneratorConfig:
    raw = _read_json(path) if path else {}
    try:
        return GeneratorConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"Invalid generator config {path}: {e}") from e


def load_detector_config(path=None) -> DetectorConfig:
    raw = _read_json(path) if path else {}
    try:
        return DetectorConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"Invalid detector config {path}: {e}") from e
