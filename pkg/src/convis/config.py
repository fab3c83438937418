"""Service/CLI configuration: plain-text key-value files and backend specs.

Config files are UTF-8 ``key = value`` lines; ``#`` starts a comment.
Recognized keys mirror :class:`ServiceConfig` fields. The cache directory
honors the ``CONVIS_CACHE_DIR`` environment override everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .encoder import (
    EncoderBackend,
    FixtureTableBackend,
    MockHashBackend,
    RemoteServiceBackend,
    RuntimeModelBackend,
)
from .errors import ConfigError
from .saliency import SaliencyConfig

__all__ = ["ServiceConfig", "load_config", "build_backend", "parse_backend_spec"]

_INT_KEYS = {"port", "mock_dimension", "delta_s", "delta_l", "omega", "max_upload_mb"}


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8765
    lexicon_path: str = ""
    seed_path: str = ""
    backend: str = "mock"
    model_path: str = ""
    service_url: str = ""
    fixture_path: str = ""
    mock_dimension: int = 512
    cache_dir: str = ""
    data_dir: str = "convis-data"
    quiz_path: str = ""
    ui_dir: str = ""
    delta_s: int = 64
    delta_l: int = 128
    omega: int = 16
    window_mode: str = "containment"
    boundary_policy: str = "fit-only"
    max_upload_mb: int = 16

    def saliency_config(self) -> SaliencyConfig:
        try:
            return SaliencyConfig(
                delta_s=self.delta_s,
                delta_l=self.delta_l,
                omega=self.omega,
                window_mode=self.window_mode,
                boundary_policy=self.boundary_policy,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def backend_spec(self) -> str:
        kind = self.backend
        if kind == "mock":
            return f"mock:{self.mock_dimension}"
        if kind == "fixture":
            if not self.fixture_path:
                raise ConfigError("backend 'fixture' requires fixture_path")
            return f"fixture:{self.fixture_path}"
        if kind == "remote":
            if not self.service_url:
                raise ConfigError("backend 'remote' requires service_url")
            return f"remote:{self.service_url}"
        if kind == "runtime":
            if not self.model_path:
                raise ConfigError("backend 'runtime' requires model_path")
            return f"runtime:{self.model_path}"
        raise ConfigError(f"unknown backend kind {kind!r}")


def load_config(path: str | Path) -> ServiceConfig:
    """Parse a key-value config file; unknown keys are rejected."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    known = {f.name for f in fields(ServiceConfig)}
    values: dict[str, object] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = stripped.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            if key in _INT_KEYS:
                try:
                    values[key] = int(value)
                except ValueError:
                    raise ConfigError(f"{path}:{lineno}: {key} must be an integer") from None
            else:
                values[key] = value
    return ServiceConfig(**values)


def parse_backend_spec(spec: str) -> tuple[str, str]:
    """Split a 'kind[:argument]' backend spec string."""
    kind, _, arg = spec.partition(":")
    if kind not in ("mock", "fixture", "remote", "runtime"):
        raise ConfigError(
            f"unknown backend kind {kind!r} (expected mock|fixture|remote|runtime)"
        )
    return kind, arg


def build_backend(spec: str) -> EncoderBackend:
    """Instantiate a backend from a spec string.

    Forms: ``mock[:dimension]``, ``fixture:table.json``,
    ``remote:http://host:port``, ``runtime:/path/to/bundle``.
    """
    kind, arg = parse_backend_spec(spec)
    if kind == "mock":
        try:
            dimension = int(arg) if arg else 512
        except ValueError:
            raise ConfigError(f"mock backend dimension must be an integer, got {arg!r}") from None
        return MockHashBackend(dimension=dimension)
    if not arg:
        raise ConfigError(f"backend {kind!r} requires an argument after ':'")
    if kind == "fixture":
        return FixtureTableBackend.from_file(arg)
    if kind == "remote":
        return RemoteServiceBackend(arg)
    return RuntimeModelBackend(arg)
