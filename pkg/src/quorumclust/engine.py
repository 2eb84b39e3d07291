"""Run loop tying the medium, radius tuning, and colony dynamics together.

One engine step, in fixed order: apply any stream events scheduled for
this step, rebuild the influence matrix, step the radii, spawn colonies
at hungry unclaimed cells, step the claim and shadow matrices, run the
split check, run the merge pass, refresh per-cell recognition, and log a
snapshot if due.  The loop is fully deterministic: no randomness enters
after the input data is fixed.

Static runs stop once both continuous rates are quiet, no structural
event has fired for a while, and the shadow watchdog has completed at
least one clean comparison since the last structural change.  Streaming
runs advance to max_steps regardless, since the data never settles.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np

from .colonies import (
    Assignment,
    ColonyState,
    apply_merges,
    extract_assignment,
    spawn_colonies,
    split_detection,
    step_colonies,
    v_colony,
)
from .exceptions import NumericBlowupError, StreamEventError
from .medium import SIGMA_FLOOR, CellSet, build_influence_matrix
from .tuning import TuningConfig, TuningState, step_sigma, v_density


@dataclass
class EngineConfig:
    tuning: TuningConfig = field(default_factory=TuningConfig)
    b: float = 3.0                      # spawn threshold on local density
    epsilon: float = 1e-3               # influence sparsity threshold
    merge_threshold: float = 0.2
    claim_floor: float = 0.5
    equilibrium_tol: float = 1e-3       # shadow settledness for the split check
    convergence_tol: float = 1e-4       # rate-norm tolerance for stopping
    quiet_steps: int = 50               # consecutive quiet steps required
    split_min_steps: int = 50           # shadow maturity before it may be compared
    gamma_grow: float = 1.5
    t_grow: int = 1000                  # steps run at gamma_grow before dropping to 1
    max_steps: int = 4000
    snapshot_every: int = 50            # 0 disables periodic snapshots
    record_traces: bool = False         # include per-cell sigma/density/labels
    sigma_guard: float = 1e8            # abort when any radius exceeds this
    seed: int = 0

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.b > self.tuning.a:
            raise ValueError("spawn threshold b must not exceed goal density a")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError("epsilon must lie in [0, 1)")
        if not 0.0 < self.claim_floor <= 1.0:
            raise ValueError("claim_floor must lie in (0, 1]")
        if self.merge_threshold <= 0.0:
            raise ValueError("merge_threshold must be positive")
        if self.gamma_grow <= 0.0:
            raise ValueError("gamma_grow must be positive")
        if self.t_grow < 0:
            raise ValueError("t_grow must be non-negative")


@dataclass
class StreamEvent:
    time: int
    kind: str                           # "add" | "remove" | "move"
    cell_id: int | None = None
    position: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("add", "remove", "move"):
            raise StreamEventError(f"unknown event kind {self.kind!r}")
        if self.kind == "add" and self.position is None:
            raise StreamEventError("add event needs a position")
        if self.kind in ("remove", "move") and self.cell_id is None:
            raise StreamEventError(f"{self.kind} event needs a cell id")
        if self.kind == "move" and self.position is None:
            raise StreamEventError("move event needs a position")
        if self.position is not None:
            self.position = np.asarray(self.position, dtype=float)


@dataclass
class RunResult:
    assignment: Assignment
    history: list
    converged: bool
    steps_used: int
    events_log: list = field(default_factory=list)
    cell_ids: list = field(default_factory=list)
    final_sigma: np.ndarray | None = None
    final_density: np.ndarray | None = None
    elapsed_seconds: float = 0.0

    @property
    def labels(self):
        return self.assignment.labels

    @property
    def k_found(self):
        return self.assignment.k_found


class Engine:
    """Stateful stepping core shared by the static and streaming entry points."""

    def __init__(self, cells: CellSet, cfg: EngineConfig,
                 events: list | None = None, trace_hook=None):
        self.cells = cells
        self.cfg = cfg
        self.trace_hook = trace_hook
        self.tuning_state = TuningState()
        self.colonies = ColonyState(n=cells.n, gamma=cfg.gamma_grow, b=cfg.b)
        self.cell_ids = list(range(cells.n))
        self.next_cell_id = cells.n
        self.step_index = 0
        self.quiet_streak = 0
        self.last_event_step = -1
        self.last_clean_check = -1
        self.history = []
        self.events_log = []
        self.medium = None                  # influence matrix of the current step
        self.events = sorted(events or [], key=lambda e: e.time)
        for ev in self.events:
            if ev.time < 0:
                raise StreamEventError("event time must be nonnegative")
            if ev.time >= cfg.max_steps:
                raise StreamEventError(
                    f"event at step {ev.time} beyond max_steps={cfg.max_steps}")
        self._event_ptr = 0

    # -- stream event surgery ------------------------------------------------

    def _row_of(self, cell_id):
        try:
            return self.cell_ids.index(cell_id)
        except ValueError:
            raise StreamEventError(f"unknown cell id {cell_id}") from None

    def _apply_event(self, ev: StreamEvent):
        if ev.kind == "add":
            if self.cells.coords is None:
                raise StreamEventError("add events require coordinate mode")
            self.cells.coords = np.vstack([self.cells.coords, ev.position[None, :]])
            self.cells.sigma = np.append(self.cells.sigma, SIGMA_FLOOR)
            self.cells.recognized = np.append(self.cells.recognized, False)
            self.colonies.claims = np.vstack(
                [self.colonies.claims, np.zeros((1, self.colonies.k))])
            self.colonies.shadow = np.vstack(
                [self.colonies.shadow, np.zeros((1, self.colonies.k))])
            self.colonies.n += 1
            new_id = ev.cell_id if ev.cell_id is not None else self.next_cell_id
            if new_id in self.cell_ids:
                raise StreamEventError(f"cell id {new_id} already present")
            self.cell_ids.append(new_id)
            self.next_cell_id = max(self.next_cell_id, new_id + 1)
        elif ev.kind == "remove":
            row = self._row_of(ev.cell_id)
            keep = np.arange(self.cells.n) != row
            self.cells.coords = self.cells.coords[keep]
            self.cells.sigma = self.cells.sigma[keep]
            self.cells.recognized = self.cells.recognized[keep]
            self.colonies.claims = self.colonies.claims[keep]
            self.colonies.shadow = self.colonies.shadow[keep]
            self.colonies.n -= 1
            del self.cell_ids[row]
            for colony in self.colonies.registry:
                if colony.core_cell == row:
                    colony.core_cell = -1
                elif colony.core_cell > row:
                    colony.core_cell -= 1
        else:                               # move
            row = self._row_of(ev.cell_id)
            self.cells.coords[row] = ev.position
        self.cells.invalidate_geometry()

    def _apply_due_events(self):
        applied = []
        while (self._event_ptr < len(self.events)
               and self.events[self._event_ptr].time == self.step_index):
            ev = self.events[self._event_ptr]
            self._apply_event(ev)
            applied.append(ev)
            self._event_ptr += 1
        if applied:
            self.last_event_step = self.step_index
            self.events_log.append({
                "step": self.step_index,
                "kind": "stream",
                "detail": [{"event": e.kind, "cell_id": e.cell_id} for e in applied],
            })
        return applied

    # -- stepping ------------------------------------------------------------

    def _trace(self, phase):
        if self.trace_hook is not None:
            self.trace_hook(phase, self.step_index)

    def _gamma_at(self, step):
        if step < self.cfg.t_grow:
            return self.cfg.gamma_grow
        return 1.0

    def _guard_sigma(self):
        worst = float(np.abs(self.cells.sigma).max()) if self.cells.n else 0.0
        if not np.isfinite(worst) or worst > self.cfg.sigma_guard:
            raise NumericBlowupError(
                f"radius magnitude {worst:.3g} exceeded guard "
                f"{self.cfg.sigma_guard:.3g}; decrease dt",
                diagnostic=self._snapshot(force_traces=True),
            )

    def step(self):
        """One full engine step. Returns True if anything structural happened."""
        cfg = self.cfg
        self._trace("events")
        self._apply_due_events()

        self._trace("medium")
        self.medium = build_influence_matrix(self.cells, cfg.epsilon)
        density_before = self.medium.density

        self._trace("sigma")
        sigma_before = self.cells.sigma.copy()
        try:
            step_sigma(self.cells, self.medium, cfg.tuning, self.tuning_state)
        except NumericBlowupError as err:
            if err.diagnostic is None:
                err.diagnostic = self._snapshot(force_traces=True)
            raise
        self._guard_sigma()
        if self.cells.n:
            sigma_rate_norm = float(
                np.abs(self.cells.sigma - sigma_before).max()) / cfg.tuning.dt
        else:
            sigma_rate_norm = 0.0

        self._trace("spawn")
        self.colonies.gamma = self._gamma_at(self.step_index)
        k_before = self.colonies.k
        spawn_colonies(density_before, self.cells.recognized,
                       self.colonies, step=self.step_index)
        spawned = self.colonies.k - k_before
        if spawned:
            self.events_log.append(
                {"step": self.step_index, "kind": "spawn", "detail": spawned})

        self._trace("colonies")
        step_colonies(self.medium, self.colonies, cfg.tuning.dt)

        self._trace("split")
        split = split_detection(self.medium, self.colonies, cfg.tuning.dt,
                                cfg.equilibrium_tol, cfg.claim_floor,
                                cfg.split_min_steps)
        if split.checked:
            self.last_clean_check = self.step_index
        if split.accepted:
            self.events_log.append({"step": self.step_index, "kind": "split",
                                    "detail": {"pruned": split.pruned}})

        self._trace("merge")
        merges = apply_merges(self.medium, self.colonies, cfg.merge_threshold,
                              cfg.claim_floor)
        if merges.changed:
            self.events_log.append({"step": self.step_index, "kind": "merge",
                                    "detail": {"merged": merges.merged,
                                               "dissolved": merges.dissolved}})

        self._trace("refresh")
        if self.colonies.k:
            self.cells.recognized = (
                self.colonies.claims.max(axis=1) >= cfg.claim_floor)
        else:
            self.cells.recognized = np.zeros(self.cells.n, dtype=bool)

        structural = bool(spawned) or split.accepted or merges.changed
        rates_quiet = (sigma_rate_norm < cfg.convergence_tol
                       and self.colonies.last_claim_change < cfg.convergence_tol)
        if structural:
            self.last_event_step = self.step_index
        if rates_quiet and not structural:
            self.quiet_streak += 1
        else:
            self.quiet_streak = 0

        self._trace("snapshot")
        if cfg.snapshot_every and self.step_index % cfg.snapshot_every == 0:
            self.history.append(self._snapshot())
        self.step_index += 1
        return structural

    def converged(self):
        if self.quiet_streak < self.cfg.quiet_steps:
            return False
        if self.colonies.k == 0:
            return True                 # nothing for the watchdog to verify
        return self.last_clean_check > self.last_event_step

    # -- reporting -----------------------------------------------------------

    def _snapshot(self, force_traces=False):
        """State after the current step; density is rebuilt from current radii."""
        cfg = self.cfg
        if self.cells.n:
            m = build_influence_matrix(self.cells, cfg.epsilon)
            density = m.density
            v_col = v_colony(m, self.colonies)
        else:
            density = np.zeros(0)
            v_col = 0.0
        assignment = extract_assignment(self.colonies, cfg.claim_floor)
        sigma = self.cells.sigma
        snap = {
            "step": self.step_index,
            "n": self.cells.n,
            "k": len(self.colonies.alive_colonies()),
            "v_density": v_density(density, cfg.tuning.a),
            "v_colony": v_col,
            "mean_density": float(density.mean()) if density.size else 0.0,
            "sigma_min": float(sigma.min()) if sigma.size else 0.0,
            "sigma_max": float(sigma.max()) if sigma.size else 0.0,
            "sigma_mean": float(sigma.mean()) if sigma.size else 0.0,
            "sigma_median": float(np.median(sigma)) if sigma.size else 0.0,
            "recognized": int(self.cells.recognized.sum()),
            "outliers": assignment.outlier_count,
            "gamma": self._gamma_at(max(self.step_index - 1, 0)),
            "f_init_active": self.tuning_state.f_init_active,
        }
        if cfg.record_traces or force_traces:
            snap["cell_ids"] = list(self.cell_ids)
            snap["sigma"] = [float(s) for s in sigma]
            snap["density"] = [float(x) for x in density]
            snap["labels"] = [int(l) for l in assignment.labels]
        return snap

    def result(self, converged: bool, elapsed: float) -> RunResult:
        if self.cells.n:
            final_m = build_influence_matrix(self.cells, self.cfg.epsilon)
            final_density = final_m.density
        else:
            final_density = np.zeros(0)
        final = self._snapshot()
        if not self.history or self.history[-1]["step"] < final["step"]:
            self.history.append(final)
        return RunResult(
            assignment=extract_assignment(self.colonies, self.cfg.claim_floor),
            history=self.history,
            converged=converged,
            steps_used=self.step_index,
            events_log=self.events_log,
            cell_ids=list(self.cell_ids),
            final_sigma=self.cells.sigma.copy(),
            final_density=final_density,
            elapsed_seconds=elapsed,
        )


def run_static(data: CellSet, cfg: EngineConfig, trace_hook=None) -> RunResult:
    """Run to convergence (or max_steps) on fixed data."""
    if data.n < 1:
        raise ValueError("need at least one cell")
    start = _time.perf_counter()
    eng = Engine(data, cfg, trace_hook=trace_hook)
    converged = False
    for _ in range(cfg.max_steps):
        eng.step()
        if eng.converged():
            converged = True
            break
    return eng.result(converged, _time.perf_counter() - start)


def run_stream(initial: CellSet, events: list, cfg: EngineConfig,
               trace_hook=None) -> RunResult:
    """Advance the loop across a scripted event stream; never stops early.

    The returned history is the snapshot series (one every snapshot_every
    steps), whose k column is the colony-count-over-time curve.
    """
    start = _time.perf_counter()
    eng = Engine(initial, cfg, events=events, trace_hook=trace_hook)
    for _ in range(cfg.max_steps):
        eng.step()
    return eng.result(eng.converged(), _time.perf_counter() - start)


def tune_hint(result: RunResult, expected_k: int | None = None) -> list:
    """Rule-of-thumb parameter advice read off a finished run."""
    advice = []
    if expected_k is not None and result.k_found < expected_k:
        advice.append("fewer colonies than expected: decrease a and decrease gamma")
    last = result.history[-1] if result.history else None
    if last and last["sigma_median"] > 0 and last["sigma_max"] > 10 * last["sigma_median"]:
        advice.append("radius spread is blowing up: increase beta and increase alpha")
    return advice
