"""Collect raw activity counts for a release window from toolchain sources.

Three source kinds are supported: ``vcs`` (commits, changed lines, repository
issues), ``ci`` (failed pipeline runs by stage) and ``quality`` (code-quality
issues). A source is either an HTTP JSON API or a ``file://`` directory with
the same payloads saved as ``commits.json``, ``issues.json`` and ``runs.json``.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable
from urllib.parse import unquote, urlparse
from zoneinfo import ZoneInfo

import requests

from .dataset import RawActivityCounts
from .errors import CollectionError, ConfigError, PayloadError, SourceUnavailableError

logger = logging.getLogger(__name__)

KINDS = ("vcs", "ci", "quality")
CI_STAGES = ("build", "test", "delivery")


@dataclass(frozen=True)
class SourceConfig:
    kind: str
    base_url: str
    auth_token: str | None = None
    repo_or_job: str = ""
    timeout: float = 30.0
    retries: int = 2
    backoff_base: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown source kind {self.kind!r}")
        if not self.base_url:
            raise ConfigError("base_url must be nonempty")
        if not self.timeout > 0:
            raise ConfigError("timeout must be positive")
        if self.retries < 0:
            raise ConfigError("retries must be nonnegative")

    @property
    def label(self) -> str:
        return f"{self.kind} source {self.repo_or_job or self.base_url}"


@dataclass(frozen=True)
class MetricsWindow:
    """Release window: ``start`` exclusive, ``end`` inclusive."""

    start: date
    end: date

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise ValueError(f"window start {self.start} must precede end {self.end}")

    def __contains__(self, day: date) -> bool:
        return self.start < day <= self.end


def event_date(value: Any, tz: str = "UTC") -> date:
    """Calendar date of an ISO 8601 timestamp in timezone ``tz``.

    Naive timestamps are taken as UTC; bare dates are returned unchanged.
    """
    if not isinstance(value, str) or not value:
        raise ValueError(f"expected an ISO 8601 string, got {value!r}")
    text = value.strip()
    if len(text) == 10:
        return date.fromisoformat(text)
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    stamp = datetime.fromisoformat(text)
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp.astimezone(ZoneInfo(tz)).date()


class _Fetcher:
    """Reads one endpoint of a source over HTTP (with retries) or from disk."""

    def __init__(
        self,
        config: SourceConfig,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.config = config
        self.session = session or requests.Session()
        self.sleep = sleep
        parsed = urlparse(config.base_url)
        self.local_dir = Path(unquote(parsed.path)) if parsed.scheme == "file" else None

    def _fail(self, cls, message: str):
        return cls(self.config.label, message)

    def _read_file(self, endpoint: str) -> list:
        path = self.local_dir / f"{endpoint}.json"
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise self._fail(SourceUnavailableError, f"cannot read {path}: {exc}") from None
        return self._decode(text)

    def _decode(self, text: str) -> list:
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise self._fail(PayloadError, f"malformed JSON: {exc}") from None
        if not isinstance(payload, list):
            raise self._fail(PayloadError, "expected a JSON array")
        return payload

    def _get(self, url: str, params: dict) -> list:
        headers = {"Accept": "application/json"}
        if self.config.auth_token:
            headers["Authorization"] = f"Bearer {self.config.auth_token}"
        attempts = self.config.retries + 1
        for attempt in range(attempts):
            retryable = None
            try:
                resp = self.session.get(
                    url, params=params, headers=headers, timeout=self.config.timeout
                )
            except (requests.Timeout, requests.ConnectionError) as exc:
                retryable = str(exc)
            else:
                if resp.status_code >= 500:
                    retryable = f"HTTP {resp.status_code}"
                elif resp.status_code >= 400:
                    raise self._fail(SourceUnavailableError, f"HTTP {resp.status_code} from {url}")
                else:
                    return self._decode(resp.text)
            if attempt + 1 < attempts:
                delay = self.config.backoff_base * 2**attempt
                logger.warning("%s: %s, retrying in %.1fs", self.config.label, retryable, delay)
                self.sleep(delay)
        raise self._fail(
            SourceUnavailableError, f"{retryable} from {url} after {attempts} attempts"
        )

    def fetch(self, endpoint: str, window: MetricsWindow, paginated: bool) -> list:
        if self.local_dir is not None:
            return self._read_file(endpoint)
        url = f"{self.config.base_url.rstrip('/')}/{endpoint}"
        params = {"since": window.start.isoformat(), "until": window.end.isoformat()}
        if not paginated:
            return self._get(url, params)
        items: list = []
        page = 1
        while True:
            batch = self._get(url, {**params, "page": page})
            if not batch:
                return items
            items.extend(batch)
            page += 1


def _in_window(items: Iterable, key: str, window: MetricsWindow, tz: str, fetcher: _Fetcher):
    for item in items:
        if not isinstance(item, dict) or key not in item:
            raise fetcher._fail(PayloadError, f"item without {key!r}: {item!r}")
        try:
            day = event_date(item[key], tz)
        except ValueError as exc:
            raise fetcher._fail(PayloadError, str(exc)) from None
        if day in window:
            yield item


def _count(item: dict, key: str, fetcher: _Fetcher) -> int:
    value = item.get(key, 0)
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise fetcher._fail(PayloadError, f"{key} must be a nonnegative integer, got {value!r}")
    return value


def _require_kind(config: SourceConfig, kind: str) -> None:
    if config.kind != kind:
        raise ConfigError(f"expected a {kind} source, got {config.kind}")


def collect_vcs(
    config: SourceConfig,
    window: MetricsWindow,
    tz: str = "UTC",
    session: requests.Session | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[int, int, int]:
    """Return ``(lines_changed, commits, repo_issues)`` for the window."""
    _require_kind(config, "vcs")
    fetcher = _Fetcher(config, session, sleep)
    lines = commits = 0
    for commit in _in_window(fetcher.fetch("commits", window, True), "date", window, tz, fetcher):
        lines += _count(commit, "additions", fetcher) + _count(commit, "deletions", fetcher)
        commits += 1
    issues = fetcher.fetch("issues", window, False)
    opened = sum(1 for _ in _in_window(issues, "opened_date", window, tz, fetcher))
    return lines, commits, opened


def collect_ci(
    config: SourceConfig,
    window: MetricsWindow,
    tz: str = "UTC",
    session: requests.Session | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[int, int, int]:
    """Return ``(failed_builds, failed_tests, failed_deliveries)`` for the window."""
    _require_kind(config, "ci")
    fetcher = _Fetcher(config, session, sleep)
    failed = dict.fromkeys(CI_STAGES, 0)
    for run in _in_window(fetcher.fetch("runs", window, True), "date", window, tz, fetcher):
        status = run.get("status")
        if status == "success":
            continue
        if status != "failed":
            raise fetcher._fail(PayloadError, f"unknown run status {status!r}")
        stage = run.get("failed_stage")
        if stage not in failed:
            raise fetcher._fail(PayloadError, f"failed run with stage {stage!r}")
        failed[stage] += 1
    return failed["build"], failed["test"], failed["delivery"]


def collect_quality(
    config: SourceConfig,
    window: MetricsWindow,
    tz: str = "UTC",
    session: requests.Session | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> int:
    """Return the number of quality issues reported in the window."""
    _require_kind(config, "quality")
    fetcher = _Fetcher(config, session, sleep)
    issues = fetcher.fetch("issues", window, False)
    return sum(1 for _ in _in_window(issues, "reported_date", window, tz, fetcher))


_COLLECTORS = {"vcs": collect_vcs, "ci": collect_ci, "quality": collect_quality}


def collect_all(
    configs: list[SourceConfig],
    window: MetricsWindow,
    tz: str = "UTC",
    sleep: Callable[[float], None] = time.sleep,
) -> RawActivityCounts:
    """Run the three collectors concurrently and merge their counts.

    Any failing source aborts the whole collection; no partial counts are returned.
    """
    by_kind: dict[str, SourceConfig] = {}
    for cfg in configs:
        if cfg.kind in by_kind:
            raise ConfigError(f"more than one {cfg.kind} source configured")
        by_kind[cfg.kind] = cfg
    missing = [k for k in KINDS if k not in by_kind]
    if missing:
        raise ConfigError(f"missing source(s): {', '.join(missing)}")

    with ThreadPoolExecutor(max_workers=len(KINDS)) as pool:
        futures = {
            kind: pool.submit(_COLLECTORS[kind], by_kind[kind], window, tz, None, sleep)
            for kind in KINDS
        }
    results: dict[str, Any] = {}
    failures: list[CollectionError] = []
    for kind in KINDS:
        try:
            results[kind] = futures[kind].result()
        except CollectionError as exc:
            failures.append(exc)
    if failures:
        names = ", ".join(f.source for f in failures)
        detail = "; ".join(str(f) for f in failures)
        raise CollectionError(names, f"collection aborted: {detail}")

    lines, commits, repo_issues = results["vcs"]
    builds, tests, deliveries = results["ci"]
    return RawActivityCounts(
        lines_changed=lines,
        commits=commits,
        failed_builds=builds,
        failed_tests=tests,
        failed_deliveries=deliveries,
        quality_issues=results["quality"],
        repo_issues=repo_issues,
        window_start=window.start,
        window_end=window.end,
    )
