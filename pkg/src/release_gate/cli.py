"""``release-gate`` command line: collect, check, append, report.

Exit codes: 0 release proceeds (pass or warm-up), 1 anomaly (release
suspended), 2 review needed, 3 operational error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import date
from pathlib import Path
from typing import Sequence

from filelock import FileLock

from .collectors import MetricsWindow, collect_all
from .config import DEFAULT_CONFIG, ToolConfig, load_config
from .dataset import (
    ReleaseDataset,
    ReleaseRecord,
    append_release,
    load_dataset,
    normalize,
)
from .errors import ReleaseGateError
from .gate import Verdict, gate_check
from .notify import NotificationPayload, notify
from .report import write_boundaries_report, write_scores_report

logger = logging.getLogger("release_gate")

EXIT_OK = 0
EXIT_ANOMALY = 1
EXIT_REVIEW = 2
EXIT_ERROR = 3

VERDICT_EXIT = {
    Verdict.PASS: EXIT_OK,
    Verdict.INSUFFICIENT_HISTORY: EXIT_OK,
    Verdict.ANOMALY: EXIT_ANOMALY,
    Verdict.REVIEW: EXIT_REVIEW,
}


class CommandError(ReleaseGateError):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2)


def _load_history(config: ToolConfig) -> ReleaseDataset:
    if not config.dataset_path.exists():
        return ReleaseDataset()
    return load_dataset(config.dataset_path)


def _read_candidate(config: ToolConfig) -> dict:
    path = config.candidate_path
    if not path.exists():
        raise CommandError(f"no candidate at {path}; run `release-gate collect` first")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CommandError(f"candidate file {path} is corrupt: {exc}") from None


def _write_candidate(config: ToolConfig, payload: dict) -> None:
    config.candidate_path.write_text(_dumps(payload) + "\n", encoding="utf-8")


def cmd_collect(config: ToolConfig, release_date: date) -> ReleaseRecord:
    history = _load_history(config)
    if history.last is not None:
        start, next_id = history.last.date, history.last.id + 1
    elif config.project_start_date is not None:
        start, next_id = config.project_start_date, 1
    else:
        raise CommandError("dataset is empty and project_start_date is not configured")
    if not release_date > start:
        raise CommandError(f"release date {release_date} must be after {start}")

    window = MetricsWindow(start, release_date)
    raw = collect_all(list(config.sources), window, config.timezone)
    record = normalize(raw, start, release_date, next_id)
    _write_candidate(
        config,
        {
            "record": record.to_json(),
            "raw": {
                "lines_changed": raw.lines_changed,
                "commits": raw.commits,
                "failed_builds": raw.failed_builds,
                "failed_tests": raw.failed_tests,
                "failed_deliveries": raw.failed_deliveries,
                "quality_issues": raw.quality_issues,
                "repo_issues": raw.repo_issues,
            },
            "window": {"start": start.isoformat(), "end": release_date.isoformat()},
        },
    )
    print(_dumps(record.to_json()))
    return record


def cmd_check(config: ToolConfig) -> int:
    staged = _read_candidate(config)
    candidate = ReleaseRecord.from_json(staged["record"])
    history = _load_history(config)
    decision = gate_check(history, candidate, config.gate)

    staged["record"] = decision.candidate.to_json()
    _write_candidate(config, staged)

    output = decision.to_json()
    if decision.verdict in (Verdict.ANOMALY, Verdict.REVIEW) and config.webhook_url:
        result = notify(config.webhook_url, NotificationPayload.from_decision(decision))
        output["notification"] = {"delivered": result.ok, "attempts": result.attempts, "error": result.error}
    print(_dumps(output))
    return VERDICT_EXIT[decision.verdict]


def cmd_append(config: ToolConfig) -> ReleaseDataset:
    staged = _read_candidate(config)
    record = ReleaseRecord.from_json(staged["record"])
    with FileLock(f"{config.dataset_path}.lock", timeout=60):
        history = _load_history(config)
        if record.flag.name == "UNSET" and len(history) >= config.gate.warmup_releases:
            raise CommandError("candidate has not been checked; run `release-gate check` first")
        updated = append_release(history, record, config.dataset_path)
    config.candidate_path.unlink()
    print(f"appended release {record.id} ({len(updated)} releases in {config.dataset_path})")
    return updated


def cmd_report(
    config: ToolConfig,
    mode: str,
    out_dir: Path,
    fx: int = 0,
    fy: int = 3,
    resolution: int = 100,
    figures: bool = True,
) -> list[Path]:
    dataset = load_dataset(config.dataset_path)
    if len(dataset) < config.gate.warmup_releases:
        raise CommandError(
            f"report needs at least {config.gate.warmup_releases} releases, dataset has {len(dataset)}"
        )
    dcfg = config.gate.detector_config
    if mode == "scores":
        written = write_scores_report(dataset, dcfg, out_dir, figures)
    else:
        written = write_boundaries_report(dataset, dcfg, out_dir, fx, fy, resolution, figures)
    for path in written:
        print(path)
    return written


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="release-gate", description="Detect anomalous releases before they reach production."
    )
    parser.add_argument("--config", default=DEFAULT_CONFIG, help="path to the JSON config")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="gather metrics for the release window")
    p.add_argument("--date", required=True, type=date.fromisoformat, help="release date YYYY-MM-DD")

    sub.add_parser("check", help="run the gate on the staged candidate")
    sub.add_parser("append", help="store the checked candidate in the dataset")

    p = sub.add_parser("report", help="write score or decision-boundary reports")
    p.add_argument("--mode", choices=("scores", "boundaries"), required=True)
    p.add_argument("--fx", type=int, default=0, help="x feature column index (0 = P1)")
    p.add_argument("--fy", type=int, default=3, help="y feature column index (3 = P4)")
    p.add_argument("--resolution", type=int, default=100)
    p.add_argument("--out", type=Path, default=Path("reports"), help="output directory")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args.config)
        if args.command == "collect":
            cmd_collect(config, args.date)
            return EXIT_OK
        if args.command == "check":
            return cmd_check(config)
        if args.command == "append":
            cmd_append(config)
            return EXIT_OK
        cmd_report(
            config, args.mode, args.out, args.fx, args.fy, args.resolution, not args.no_figures
        )
        return EXIT_OK
    except (ReleaseGateError, ValueError, OSError, KeyError) as exc:
        print(f"release-gate: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception:
        logger.exception("unexpected failure")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
