"""In-process network: host routing, fake DNS, static web hosting and faults.

Services talk to each other by asking the network for the object serving a
URL. Killing a host, partitioning two hosts or adding latency beyond a
caller's timeout makes ``connect`` raise ``Unreachable``.
"""

from __future__ import annotations

import logging
from typing import Any
from urllib.parse import urlparse

from atnet.clock import VirtualClock
from atnet.identity import FetchError, PlcOperation, ResolverEnv

logger = logging.getLogger(__name__)

PLC_URL = "https://plc.directory"


class Unreachable(FetchError, ConnectionError):
    pass


class Timeout(Unreachable):
    pass


def host_of(url: str) -> str:
    host = urlparse(url).hostname
    if not host:
        raise ValueError(f"URL has no host: {url!r}")
    return host


class Network:
    def __init__(self, clock: VirtualClock | None = None):
        self.clock = clock or VirtualClock()
        self._services: dict[str, Any] = {}
        self.down: set[str] = set()
        self.partitions: set[frozenset[str]] = set()
        self.latency: dict[str, float] = {}
        self.dns: dict[str, list[str]] = {}
        self.web: dict[str, dict[str, str]] = {}

    def serve(self, url: str, service: Any) -> None:
        self._services[host_of(url)] = service

    def unserve(self, url: str) -> None:
        self._services.pop(host_of(url), None)

    def kill(self, url: str) -> None:
        self.down.add(host_of(url))

    def restore(self, url: str) -> None:
        self.down.discard(host_of(url))

    def partition(self, a: str, b: str) -> None:
        self.partitions.add(frozenset((host_of(a), host_of(b))))

    def heal(self, a: str | None = None, b: str | None = None) -> None:
        if a is None:
            self.partitions.clear()
        else:
            self.partitions.discard(frozenset((host_of(a), host_of(b))))

    def reachable(self, url: str, origin: str | None = None) -> bool:
        host = host_of(url)
        if host in self.down or host not in self._services and host not in self.web:
            return False
        if origin is not None and frozenset((host, host_of(origin))) in self.partitions:
            return False
        return True

    def connect(self, url: str, origin: str | None = None, timeout: float | None = None) -> Any:
        host = host_of(url)
        if not self.reachable(url, origin) or host not in self._services:
            raise Unreachable(f"{host} is unreachable")
        if timeout is not None and self.latency.get(host, 0.0) > timeout:
            raise Timeout(f"{host} did not answer within {timeout}s")
        return self._services[host]

    def set_txt(self, name: str, values: list[str]) -> None:
        self.dns[name] = list(values)

    def clear_txt(self, name: str) -> None:
        self.dns.pop(name, None)

    def publish(self, url: str, body: str | None) -> None:
        """Serve (or with ``None`` withdraw) a static file at ``url``."""
        parsed = urlparse(url)
        files = self.web.setdefault(parsed.hostname, {})
        if body is None:
            files.pop(parsed.path, None)
        else:
            files[parsed.path] = body

    def https_get(self, url: str, origin: str | None = None) -> str | None:
        parsed = urlparse(url)
        host = parsed.hostname
        if not self.reachable(url, origin):
            raise Unreachable(f"{host} is unreachable")
        files = self.web.get(host, {})
        if parsed.path in files:
            return files[parsed.path]
        service = self._services.get(host)
        if service is not None and hasattr(service, "well_known"):
            return service.well_known(host, parsed.path)
        return None

    def resolver(self, origin: str | None = None, plc_url: str = PLC_URL) -> ResolverEnv:
        def plc_audit_log(did: str) -> list[PlcOperation]:
            directory = self.connect(plc_url, origin)
            try:
                return directory.get_audit_log(did)
            except KeyError:
                return []

        return ResolverEnv(
            dns_txt=lambda name: list(self.dns.get(name, [])),
            https_get=lambda url: self.https_get(url, origin),
            plc_audit_log=plc_audit_log,
            now=self.clock.now,
        )
