"""Best-effort webhook alerts for gate decisions."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable
from urllib.parse import urlparse

import requests

from .gate import GateDecision

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NotificationPayload:
    text: str
    verdict: str
    candidate_id: int
    top_features: list[tuple[str, float]] = field(default_factory=list)
    scores: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("notification text must be nonempty")

    @classmethod
    def from_decision(cls, decision: GateDecision) -> NotificationPayload:
        top = [(e.feature, e.z_value) for e in decision.explanation[:3]]
        drivers = ", ".join(f"{name} (z={z:+.2f})" for name, z in top) or "n/a"
        lof = f"{decision.lof_score:.3f}" if decision.lof_score is not None else "n/a"
        text = (
            f"Release {decision.candidate_id}: {decision.verdict.value.upper()} "
            f"(LOF {lof}). Top drivers: {drivers}."
        )
        if decision.reason:
            text += f" {decision.reason}."
        return cls(
            text=text,
            verdict=decision.verdict.value,
            candidate_id=decision.candidate_id,
            top_features=top,
            scores=dict(decision.per_detector_scores),
        )

    def to_json(self) -> dict:
        body = asdict(self)
        body["top_features"] = [{"feature": n, "z_value": z} for n, z in self.top_features]
        return body


@dataclass(frozen=True)
class DeliveryResult:
    ok: bool
    attempts: int
    status: int | None = None
    error: str | None = None


def notify(
    webhook_url: str,
    payload: NotificationPayload,
    timeout: float = 10.0,
    retry_delay: float = 1.0,
    session: requests.Session | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> DeliveryResult:
    """POST ``payload`` as JSON. Retries once on 5xx or timeout; never raises."""
    parsed = urlparse(webhook_url or "")
    if parsed.scheme not in ("http", "https") or not parsed.netloc:
        logger.error("webhook url %r is not a valid http(s) URL", webhook_url)
        return DeliveryResult(False, 0, error=f"invalid webhook url {webhook_url!r}")

    session = session or requests.Session()
    status = None
    error = None
    for attempt in (1, 2):
        try:
            resp = session.post(webhook_url, json=payload.to_json(), timeout=timeout)
        except requests.Timeout as exc:
            status, error = None, f"timeout: {exc}"
        except requests.RequestException as exc:
            logger.error("webhook delivery failed: %s", exc)
            return DeliveryResult(False, attempt, error=str(exc))
        else:
            status = resp.status_code
            if 200 <= status < 300:
                return DeliveryResult(True, attempt, status)
            error = f"HTTP {status}"
            if status < 500:
                break
        if attempt == 1:
            sleep(retry_delay)
    logger.error("webhook delivery failed: %s", error)
    return DeliveryResult(False, attempt, status, error)
