"""Runtime configuration shared by the SpiralLab API and the lab command line."""

from __future__ import annotations

import ipaddress
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

ROOT = Path(__file__).resolve().parent.parent
RUNTIME_CONFIG_PATH = ROOT / "runtime-config.json"


class ConfigurationError(ValueError):
    """Raised when runtime environment values or experiment files are invalid."""

    def __init__(self, message: str, issues: list[str] | None = None) -> None:
        super().__init__(message)
        self.issues = issues or [message]


def load_runtime_defaults() -> dict[str, object]:
    with RUNTIME_CONFIG_PATH.open(encoding="utf-8") as config_file:
        return json.load(config_file)


def parse_boolean(value: str | None, *, name: str, default: bool = False) -> bool:
    if value is None:
        return default
    normalized = value.strip().lower()
    if normalized in {"1", "true", "yes", "on"}:
        return True
    if normalized in {"0", "false", "no", "off"}:
        return False
    raise ConfigurationError(f"{name} must be true or false.")


def parse_positive_int(
    value: str | int | object, *, name: str, maximum: int | None = None
) -> int:
    try:
        number = int(value)  # type: ignore[call-overload]
    except (TypeError, ValueError) as error:
        raise ConfigurationError(f"{name} must be an integer.") from error
    if number < 1 or (maximum is not None and number > maximum):
        upper = f" and at most {maximum}" if maximum is not None else ""
        raise ConfigurationError(f"{name} must be at least 1{upper}.")
    return number


def parse_port(value: str | int | object, *, name: str) -> int:
    try:
        return parse_positive_int(value, name=name, maximum=65535)
    except ConfigurationError as error:
        if "integer" in str(error):
            raise
        raise ConfigurationError(f"{name} must be between 1 and 65535.") from None


def is_loopback_host(host: str) -> bool:
    normalized = host.strip().lower()
    if normalized == "localhost":
        return True
    try:
        return ipaddress.ip_address(normalized).is_loopback
    except ValueError:
        return False


def format_url_host(host: str) -> str:
    try:
        address = ipaddress.ip_address(host)
    except ValueError:
        return host
    return f"[{host}]" if address.version == 6 else host


def origin_for(host: str, port: int) -> str:
    return f"http://{format_url_host(host)}:{port}"


@dataclass(frozen=True)
class RuntimeSettings:
    service_name: str
    application_version: str
    api_host: str
    api_port: int
    allow_lan_access: bool
    point_cap: int
    chunk_size: int
    threads: int
    output_dir: Path

    @property
    def api_url(self) -> str:
        return origin_for(self.api_host, self.api_port)

    @property
    def network_mode(self) -> str:
        return "loopback" if is_loopback_host(self.api_host) else "lan"

    @classmethod
    def from_env(
        cls, environment: Mapping[str, str] | None = None
    ) -> "RuntimeSettings":
        env = os.environ if environment is None else environment
        runtime = load_runtime_defaults()
        defaults = runtime["defaults"]
        if not isinstance(defaults, dict):
            raise ConfigurationError("runtime-config.json defaults must be an object.")

        api_host = env.get("SPIRALLAB_API_HOST", str(defaults["apiHost"])).strip()
        allow_lan_access = parse_boolean(
            env.get("SPIRALLAB_ALLOW_LAN_ACCESS"),
            name="SPIRALLAB_ALLOW_LAN_ACCESS",
        )
        if not api_host:
            raise ConfigurationError("Configured hosts cannot be empty.")
        if not allow_lan_access and not is_loopback_host(api_host):
            raise ConfigurationError(
                f"SPIRALLAB_API_HOST={api_host} requires "
                "SPIRALLAB_ALLOW_LAN_ACCESS=true."
            )

        api_port = parse_port(
            env.get("SPIRALLAB_API_PORT", defaults["apiPort"]),
            name="SPIRALLAB_API_PORT",
        )
        point_cap = parse_positive_int(
            env.get("SPIRALLAB_POINT_CAP", defaults["pointCap"]),
            name="SPIRALLAB_POINT_CAP",
        )
        chunk_size = parse_positive_int(
            env.get("SPIRALLAB_CHUNK_SIZE", defaults["chunkSize"]),
            name="SPIRALLAB_CHUNK_SIZE",
        )
        threads = parse_positive_int(
            env.get("SPIRALLAB_THREADS", defaults["threads"]),
            name="SPIRALLAB_THREADS",
            maximum=256,
        )
        output_dir = env.get("SPIRALLAB_OUTPUT_DIR", str(defaults["outputDir"])).strip()
        if not output_dir:
            raise ConfigurationError("SPIRALLAB_OUTPUT_DIR cannot be empty.")

        return cls(
            service_name=str(runtime["serviceName"]),
            application_version=str(runtime["applicationVersion"]),
            api_host=api_host,
            api_port=api_port,
            allow_lan_access=allow_lan_access,
            point_cap=point_cap,
            chunk_size=chunk_size,
            threads=threads,
            output_dir=Path(output_dir),
        )
