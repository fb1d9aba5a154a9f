"""Release gate: flag anomalous software releases from DevOps toolchain metrics."""

from importlib.resources import files

from .dataset import (
    Flag,
    RawActivityCounts,
    ReleaseDataset,
    ReleaseRecord,
    append_release,
    load_dataset,
    normalize,
    working_days,
)
from .detectors import DetectorConfig, FeatureMatrix, ScoreVector
from .gate import GateConfig, GateDecision, Verdict, gate_check

__all__ = [
    "DetectorConfig",
    "FeatureMatrix",
    "Flag",
    "GateConfig",
    "GateDecision",
    "RawActivityCounts",
    "ReleaseDataset",
    "ReleaseRecord",
    "ScoreVector",
    "Verdict",
    "append_release",
    "gate_check",
    "load_dataset",
    "normalize",
    "spaceviewer_path",
    "working_days",
]


def spaceviewer_path():
    """Path of the bundled 25-release SpaceViewer dataset."""
    return files(__package__) / "data" / "spaceviewer.csv"
