"""Node configuration: one JSON file describes a community node."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..engine import DEFAULT_VALIDITY_DAYS, LibraryProfile
from ..errors import ConfigInvalid
from ..ledger import CostPolicy
from ..money import to_cents
from ..routing import Partner, Pod, ServiceHours


@dataclass
class NodeConfig:
    node_id: str
    display_name: str = ""
    latitude: float = 0.0
    longitude: float = 0.0
    utc_offset_minutes: int = 0
    service_hours: ServiceHours = field(default_factory=ServiceHours)
    profile: LibraryProfile = field(default_factory=LibraryProfile)
    cost_policy: CostPolicy = field(default_factory=CostPolicy.free)
    validity_days: int = DEFAULT_VALIDITY_DAYS
    data_dir: Path | None = None
    listen_address: str = "127.0.0.1:8042"
    admin_user: str = "admin"
    token_ttl_hours: int = 24
    include_all_libraries: bool = True
    purchase_vendor: str | None = None
    external_brokers: tuple[str, ...] = ()
    pods: list[Pod] = field(default_factory=list)
    peers: list[Partner] = field(default_factory=list)
    patron_groups: dict[str, str] = field(default_factory=dict)
    domestic_country: str = "IT"


def _parse_profile(raw: dict) -> LibraryProfile:
    return LibraryProfile(
        mode=raw.get("mode", "FULL"),
        patron_requests_enabled=raw.get("patron_requests_enabled", True),
        weekly_patron_quota=raw.get("weekly_patron_quota"),
        quarantine_days=raw.get("quarantine_days", 0),
        loan_caps=dict(raw.get("loan_caps", {})),
    )


def _parse_policy(raw: dict) -> CostPolicy:
    variant = raw.get("variant", "FREE")
    return CostPolicy(
        variant=variant,
        threshold_units=raw.get("threshold_units", 0),
        unit_price=to_cents(raw.get("unit_price", 0)),
    )


def _parse_partner(raw: dict) -> Partner:
    return Partner(
        id=raw["id"],
        kind=raw.get("kind", "NETWORK_NODE"),
        profile_mode=raw.get("profile", "FULL"),
        utc_offset_minutes=raw.get("utc_offset_minutes", 0),
        service_hours=ServiceHours.parse(raw.get("service_hours", "08:00-18:00")),
        latitude=raw.get("latitude", 0.0),
        longitude=raw.get("longitude", 0.0),
        cost_policy_ref=raw.get("cost_policy"),
        supported_flows=frozenset(
            raw.get("supported_flows", ["returnable", "non_returnable"])),
    )


def parse_config(raw: dict) -> NodeConfig:
    """Validate and build a NodeConfig from a JSON-shaped dict."""
    try:
        node_id = raw["node_id"]
    except KeyError as exc:
        raise ConfigInvalid("node_id is required") from exc
    try:
        latitude = float(raw.get("latitude", 0.0))
        longitude = float(raw.get("longitude", 0.0))
        if not (-90 <= latitude <= 90 and -180 <= longitude <= 180):
            raise ConfigInvalid("coordinates out of range")
        peers = [_parse_partner(p) for p in raw.get("peers", [])]
        peer_ids = [p.id for p in peers]
        if len(set(peer_ids)) != len(peer_ids):
            raise ConfigInvalid("duplicate peer id in directory")
        pods = [Pod(name=p["name"], members=frozenset(p["members"]),
                    reciprocal=p.get("reciprocal", True))
                for p in raw.get("pods", [])]
        config = NodeConfig(
            node_id=node_id,
            display_name=raw.get("display_name", node_id),
            latitude=latitude,
            longitude=longitude,
            utc_offset_minutes=int(raw.get("utc_offset_minutes", 0)),
            service_hours=ServiceHours.parse(
                raw.get("service_hours", "08:00-18:00")),
            profile=_parse_profile(raw.get("profile", {})),
            cost_policy=_parse_policy(raw.get("cost_policy", {})),
            validity_days=int(raw.get("validity_days", DEFAULT_VALIDITY_DAYS)),
            data_dir=Path(raw["data_dir"]) if raw.get("data_dir") else None,
            listen_address=raw.get("listen_address", "127.0.0.1:8042"),
            admin_user=raw.get("admin_user", "admin"),
            token_ttl_hours=int(raw.get("token_ttl_hours", 24)),
            include_all_libraries=raw.get("include_all_libraries", True),
            purchase_vendor=raw.get("purchase_vendor"),
            external_brokers=tuple(raw.get("external_brokers", [])),
            pods=pods,
            peers=peers,
            patron_groups=dict(raw.get("patron_groups", {})),
            domestic_country=raw.get("domestic_country", "IT"),
        )
    except ConfigInvalid:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigInvalid(str(exc)) from exc
    return config


def load_config(path: str | Path) -> NodeConfig:
    with open(path, encoding="utf-8") as handle:
        try:
            raw = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"bad JSON: {exc}") from exc
    return parse_config(raw)
