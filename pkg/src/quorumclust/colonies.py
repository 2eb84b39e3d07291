"""Colony lifecycle: spawning, competition, merging, split detection.

A colony is a column of the claim matrix C.  It is born as the indicator
vector of a single high-density, unclaimed "core" cell and then grows or
shrinks under saturated competitive dynamics: colonies expand through
their own influence and inhibit each other through the shared sum of all
claims.  With the competition parameter gamma at 1 the dynamics are an
exact tug of war (claim gained by one colony is claim lost by another),
which hardens every contested cell to a single owner.

Merging is decided by the ratio of a colony's outward connection mass to
its internal connection mass; splitting is detected by a shadow matrix S
that periodically regrows every colony's claims from a single core cell
and is compared against C at its equilibrium.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateColonyError, NumericBlowupError
from .medium import InfluenceMatrix

OUTLIER = -1


@dataclass
class Colony:
    colony_id: int
    core_cell: int
    birth_step: int
    alive: bool = True


@dataclass
class ColonyState:
    """Claim matrix C, its shadow S, and the colony registry."""

    n: int
    gamma: float = 1.0
    b: float = 3.0                      # spawn threshold on local density
    claims: np.ndarray = None           # (n, k)
    shadow: np.ndarray = None           # (n, k), same dynamics as claims
    registry: list = field(default_factory=list)
    column_ids: list = field(default_factory=list)  # colony id per column
    next_colony_id: int = 0
    steps_since_shadow_restart: int = 0
    last_claim_change: float = 0.0      # max |effective dC/dt| of last step
    last_shadow_change: float = 0.0

    def __post_init__(self):
        if self.claims is None:
            self.claims = np.zeros((self.n, 0))
        if self.shadow is None:
            self.shadow = np.zeros((self.n, 0))

    @property
    def k(self):
        return self.claims.shape[1]

    def alive_colonies(self):
        return [c for c in self.registry if c.alive]

    def column_of(self, colony_id):
        return self.column_ids.index(colony_id)


@dataclass
class Assignment:
    labels: np.ndarray                  # colony id per cell, OUTLIER for none
    colony_sizes: dict

    @property
    def n(self):
        return len(self.labels)

    @property
    def k_found(self):
        return len(self.colony_sizes)

    @property
    def outlier_count(self):
        return int(np.sum(self.labels == OUTLIER))


def spawn_colonies(d, recognized, state: ColonyState, step: int = 0) -> ColonyState:
    """Seed a colony at every unrecognized cell whose density exceeds b.

    Cells are processed in ascending index; each new colony is the
    indicator vector of its core cell, which is marked recognized on the
    spot (so one cell seeds at most one colony per call).
    """
    d = np.asarray(d, dtype=float)
    cores = np.where((d > state.b) & ~recognized)[0]
    if cores.size == 0:
        return state
    new_cols = np.zeros((state.n, cores.size))
    for col, i in enumerate(cores):
        cid = state.next_colony_id
        state.next_colony_id += 1
        new_cols[i, col] = 1.0
        state.registry.append(Colony(colony_id=cid, core_cell=int(i), birth_step=step))
        state.column_ids.append(cid)
        recognized[i] = True
    state.claims = np.hstack([state.claims, new_cols])
    state.shadow = np.hstack([state.shadow, new_cols])
    return state


def colony_rate(m: InfluenceMatrix, state: ColonyState, claims=None) -> np.ndarray:
    """Rate of the claim matrix: self-expansion minus mutual inhibition.

    dC/dt = -(M + M^T) C_e + (gamma + 1) (M + M^T) C, where every column
    of C_e is the sum of all colony columns.
    """
    c = state.claims if claims is None else claims
    if c.shape[1] == 0:
        return np.zeros_like(c)
    a = m.symmetrized()
    c_e = c.sum(axis=1)
    return a @ ((state.gamma + 1.0) * c - c_e[:, None])


def step_colonies(m: InfluenceMatrix, state: ColonyState, dt: float) -> ColonyState:
    """One saturated Euler step of both C and S.

    Entries are clamped to [0, 1]; the recorded change norms are the
    effective (post-clamp) rates, which is what equilibrium detection
    must look at, since saturated entries keep a nonzero raw rate.
    """
    if state.k == 0:
        state.last_claim_change = 0.0
        state.last_shadow_change = 0.0
        return state
    for attr, record in (("claims", "last_claim_change"), ("shadow", "last_shadow_change")):
        cur = getattr(state, attr)
        rate = colony_rate(m, state, claims=cur)
        if not np.all(np.isfinite(rate)):
            raise NumericBlowupError("non-finite colony rate; decrease dt")
        new = np.clip(cur + dt * rate, 0.0, 1.0)
        setattr(state, record, float(np.abs(new - cur).max()) / dt)
        setattr(state, attr, new)
    state.steps_since_shadow_restart += 1
    return state


def v_colony(m: InfluenceMatrix, state: ColonyState) -> float:
    """Competition cost: cross-colony connection mass minus weighted self mass."""
    c = state.claims
    if c.shape[1] == 0:
        return 0.0
    a = m.symmetrized()
    ac = a @ c
    self_mass = float(np.einsum("ij,ij->", c, ac))
    c_e = c.sum(axis=1)
    total = float(c_e @ (a @ c_e))
    cross = total - self_mass
    return cross - 0.5 * state.gamma * self_mass


def merge_ratio(m: InfluenceMatrix, c_i, c_j) -> float:
    """Connection mass from colony i to colony j relative to i's own mass."""
    a = m.symmetrized()
    intra = float(c_i @ (a @ c_i))
    if intra <= 0.0:
        raise DegenerateColonyError("colony has zero intra-connection mass")
    return float(c_i @ (a @ c_j)) / intra


@dataclass
class MergeOutcome:
    merged: list = field(default_factory=list)      # (source_id, target_id)
    dissolved: list = field(default_factory=list)   # colony ids

    @property
    def changed(self):
        return bool(self.merged or self.dissolved)


def apply_merges(m: InfluenceMatrix, state: ColonyState, threshold: float = 0.2,
                 claim_floor: float = 0.5) -> MergeOutcome:
    """Merge colonies whose outward/inward connection ratio exceeds threshold.

    Ratios are processed in descending order and each colony takes part
    in at most one merge per invocation, which makes the outcome
    deterministic and lets a freshly spawned colony be absorbed by its
    strongest neighbor rather than an arbitrary one.  A colony with zero
    intra-connection mass but positive outward connections (typically a
    one-cell colony just born: the kernel diagonal is zero, so it has no
    self mass) counts as infinitely mergeable and is absorbed ahead of
    every finite ratio.

    Colonies that no longer hold any cell at claim_floor strength are
    dissolved instead of merged.  The ratio scales as 1/c for a claim
    column decaying toward zero, so a colony losing its territory would
    otherwise always cross the threshold eventually and hand its residue
    to wildly wrong neighbors across near-zero links; dissolving releases
    its cells to whoever actually claims them.
    """
    outcome = MergeOutcome()
    if state.k < 1:
        return outcome
    c = state.claims
    gram = c.T @ (m.symmetrized() @ c)
    intra = np.diag(gram).copy()
    inter = gram.copy()
    np.fill_diagonal(inter, 0.0)

    no_intra = intra <= 0.0
    faded = c.max(axis=0, initial=0.0) < claim_floor
    isolated = no_intra & (inter.max(axis=1, initial=0.0) <= 0.0)
    dead = faded | isolated
    degenerate = np.flatnonzero(dead).tolist()

    # newborn singletons first, strongest outward connection deciding
    pairs = []
    live_weight = inter.copy()
    live_weight[:, dead] = 0.0
    for i in np.flatnonzero(no_intra & ~dead):
        j = int(np.argmax(live_weight[i]))
        if live_weight[i, j] > 0.0:
            pairs.append((np.inf, float(live_weight[i, j]), int(i), j))

    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = inter / intra[:, None]
    ratio[no_intra | dead, :] = 0.0
    ratio[:, dead] = 0.0
    cand_i, cand_j = np.nonzero(ratio > threshold)
    pairs.extend(
        (float(ratio[i, j]), float(inter[i, j]), int(i), int(j))
        for i, j in zip(cand_i, cand_j))
    pairs.sort(key=lambda t: (-t[0], -t[1], t[2], t[3]))

    used = set()
    merges = []
    for _r, _w, i, j in pairs:
        if i in used or j in used:
            continue
        merges.append((i, j))
        used.add(i)
        used.add(j)

    if not merges and not degenerate:
        return outcome

    drop = set(degenerate)
    for i, j in merges:
        state.claims[:, j] = np.clip(state.claims[:, j] + state.claims[:, i], 0.0, 1.0)
        state.shadow[:, j] = np.clip(state.shadow[:, j] + state.shadow[:, i], 0.0, 1.0)
        drop.add(i)
        outcome.merged.append((state.column_ids[i], state.column_ids[j]))
    for col in degenerate:
        outcome.dissolved.append(state.column_ids[col])

    keep = [col for col in range(state.k) if col not in drop]
    dead_ids = {state.column_ids[col] for col in drop}
    for colony in state.registry:
        if colony.colony_id in dead_ids:
            colony.alive = False
    state.claims = state.claims[:, keep]
    state.shadow = state.shadow[:, keep]
    state.column_ids = [state.column_ids[col] for col in keep]
    return outcome


def harden(matrix, column_ids, claim_floor: float) -> np.ndarray:
    """Row-argmax labels with the outlier rule; ties go to the lowest colony id."""
    n = matrix.shape[0]
    labels = np.full(n, OUTLIER, dtype=int)
    if matrix.shape[1] == 0:
        return labels
    best = np.argmax(matrix, axis=1)      # first max = lowest column = lowest id
    vals = matrix[np.arange(n), best]
    ids = np.asarray(column_ids, dtype=int)
    mask = vals >= claim_floor
    labels[mask] = ids[best[mask]]
    return labels


@dataclass
class SplitOutcome:
    checked: bool = False
    accepted: bool = False
    pruned: list = field(default_factory=list)   # colony ids emptied by the rematch

    @property
    def changed(self):
        return self.accepted


def split_detection(m: InfluenceMatrix, state: ColonyState, dt: float,
                    equilibrium_tol: float, claim_floor: float = 0.5,
                    min_steps: int = 50) -> SplitOutcome:
    """Compare the shadow regrowth against the claims once it has settled.

    The shadow S regrows every colony from a single core cell.  When its
    effective rate drops below equilibrium_tol (and it has matured for
    at least min_steps, so a transiently frozen shadow cannot wipe the
    claims), its hardened partition is compared with the hardened C.  On
    disagreement S becomes the new C: colonies whose rematch claims
    vanished are pruned, and cells no colony claims any more fall back
    to unrecognized through the engine's recognition refresh.  S then
    restarts from the current best cell of each surviving colony.
    """
    outcome = SplitOutcome()
    if state.k == 0 or state.steps_since_shadow_restart < min_steps:
        return outcome
    if state.last_shadow_change >= equilibrium_tol:
        return outcome
    outcome.checked = True
    c_labels = harden(state.claims, state.column_ids, claim_floor)
    s_labels = harden(state.shadow, state.column_ids, claim_floor)
    if np.array_equal(c_labels, s_labels):
        _restart_shadow(state)
        return outcome

    outcome.accepted = True
    state.claims = state.shadow.copy()
    empty = [col for col in range(state.k)
             if state.claims[:, col].max() < claim_floor]
    if empty:
        dead_ids = {state.column_ids[col] for col in empty}
        outcome.pruned.extend(sorted(dead_ids))
        for colony in state.registry:
            if colony.colony_id in dead_ids:
                colony.alive = False
        keep = [col for col in range(state.k) if col not in empty]
        state.claims = state.claims[:, keep]
        state.shadow = state.shadow[:, keep]
        state.column_ids = [state.column_ids[col] for col in keep]
    _restart_shadow(state)
    return outcome


def _restart_shadow(state: ColonyState):
    """Reset S to one indicator per colony at its current highest-claim cell."""
    fresh = np.zeros_like(state.claims)
    for col in range(state.k):
        fresh[int(np.argmax(state.claims[:, col])), col] = 1.0
    state.shadow = fresh
    state.steps_since_shadow_restart = 0


def extract_assignment(state: ColonyState, claim_floor: float = 0.5) -> Assignment:
    """Final per-cell labels from the row maxima of the claim matrix."""
    labels = harden(state.claims, state.column_ids, claim_floor)
    sizes = {}
    for cid in state.column_ids:
        count = int(np.sum(labels == cid))
        if count:
            sizes[cid] = count
    return Assignment(labels=labels, colony_sizes=sizes)
