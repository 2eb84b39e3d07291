"""Quorum-sensing-style dynamic clustering.

Every data point is treated as a cell with a Gaussian influence radius.
Radii are tuned by a local ODE so each cell's received influence (its
local density) settles near a goal value; dense cells seed colonies that
compete for cells through saturated gradient dynamics, merge when their
mutual connection mass is high, and split when a shadow re-growth of the
claims disagrees with the current partition.  The same loop runs on
static datasets and on streams of moving/appearing/disappearing points.
"""

__version__ = "0.1.0"

from .medium import CellSet, InfluenceMatrix, SIGMA_FLOOR
from .tuning import TuningConfig, TuningState, TuningPolicy
from .colonies import ColonyState, Assignment, OUTLIER
from .engine import EngineConfig, RunResult, StreamEvent, run_static, run_stream

__all__ = [
    "CellSet",
    "InfluenceMatrix",
    "SIGMA_FLOOR",
    "TuningConfig",
    "TuningState",
    "TuningPolicy",
    "ColonyState",
    "Assignment",
    "OUTLIER",
    "EngineConfig",
    "RunResult",
    "StreamEvent",
    "run_static",
    "run_stream",
]
