"""Fast/conservative switching, abort rules and the synchronization-phase log merge."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .forensics import median
from .messages import DecisionProof, StableCheckpoint
from .quorum import WeightConfig, compute_weight_config

TIMER_EXPIRED = "timer_expired"
VALID_POC = "valid_poc"
LATENCY = "latency_disappointment"
JOIN = "join"
ABORT_REASONS = (TIMER_EXPIRED, VALID_POC, LATENCY)

# timeline event names
MODE_SWITCH = "mode_switch"
ABORT = "abort"
SYNC_START = "sync_start"
SYNC_END = "sync_end"
RECONFIGURE = "reconfigure"
ROLLBACK = "rollback"
OPTIMIZE = "optimize"


def leader_of(regency: int, members) -> int:
    """Round-robin leader for a regency installed by the synchronization phase."""
    members = sorted(members)
    return members[regency % len(members)]


class LatencyWatchdog:
    """Median of the last ``window`` fast-mode consensus latencies vs an expectation."""

    def __init__(self, window: int = 32):
        self.window = window
        self.samples = deque(maxlen=window)

    def observe(self, latency_ms: float) -> None:
        self.samples.append(latency_ms)

    def reset(self) -> None:
        self.samples.clear()

    def disappointed(self, expectation_ms: float) -> bool:
        if expectation_ms is None or len(self.samples) < self.window:
            return False
        return median(self.samples) > expectation_ms


def latency_watchdog(observed_ms: float, expectation_ms: float) -> bool:
    """True when an observation (or window median) should trigger an abort; strict comparison."""
    return observed_ms > expectation_ms


@dataclass
class ModeState:
    theta: int
    fast: bool = False
    consecutive_ok: int = 0
    regency: int = 0
    stop_votes: dict = field(default_factory=dict)  # target regency -> {replica: Stop}
    enabled: bool = True  # False for the conservative-only baseline

    def on_decided(self, instance: int) -> bool:
        """Count a decision; True when this decision flips the replica into fast mode."""
        self.consecutive_ok += 1
        if self.enabled and not self.fast and self.consecutive_ok >= self.theta:
            self.fast = True
            return True
        return False

    def may_abort(self, reason: str, poc_verified: bool = True) -> bool:
        if not self.fast or reason not in ABORT_REASONS:
            return False
        if reason == VALID_POC and not poc_verified:
            return False
        return True

    def enter_regency(self, regency: int) -> bool:
        """Reset for a new regency; returns whether the aborted regency ran fast."""
        was_fast = self.fast
        self.regency = regency
        self.fast = False
        self.consecutive_ok = 0
        for r in [r for r in self.stop_votes if r <= regency]:
            if r < regency:
                del self.stop_votes[r]
        return was_fast

    def record_stop(self, stop) -> int:
        votes = self.stop_votes.setdefault(stop.regency, {})
        votes.setdefault(stop.replica, stop)
        return len(votes)


def needs_forensics(stops, aborted_fast: bool) -> bool:
    """Forensics run when a fast regency aborted for anything but latency alone."""
    if not aborted_fast:
        return False
    reasons = {s.reason for s in stops}
    return not reasons <= {LATENCY, JOIN}


def shrink_membership(members, culprits):
    """Remaining membership after expulsion with recomputed thresholds."""
    remaining = tuple(sorted(set(members) - set(culprits)))
    t = (len(remaining) - 1) // 3
    t_fast = -(-t // 2)
    return remaining, t, t_fast


@dataclass(frozen=True)
class MergedHistory:
    base: StableCheckpoint
    decisions: tuple  # LogEntry, contiguous from base.instance + 1
    prepared: object  # PreparedCert to re-propose first, or None

    @property
    def upto(self) -> int:
        return self.base.instance + len(self.decisions)


def merge_history(stopdatas, culprits, verifier, members, t: int) -> MergedHistory:
    """Fix a single decision history from collected logs.

    Logs of known culprits are discarded.  The base is the highest verified
    stable checkpoint; after it, each instance takes the value reported by
    the most logs (ties to the smallest digest) until no log has a decision.
    """
    culprits = set(culprits)
    usable = sorted((sd for sd in stopdatas if sd.replica not in culprits), key=lambda sd: sd.replica)
    threshold = len(members) - t
    base = None
    for sd in usable:
        st = sd.stable
        if st.verify(verifier, set(members), threshold) and (base is None or st.instance > base.instance):
            base = st
    if base is None:
        base = usable[0].stable if usable else None
    decisions = []
    inst = base.instance + 1
    checked = {}
    while True:
        tally = {}
        for sd in usable:
            e = sd.log.entry(inst)
            if e is None:
                continue
            key = (sd.replica, inst)
            ok = checked.get(key)
            if ok is None:
                ok = e.proof.instance == inst and e.proof.value_digest == e.batch.digest and e.proof.verify(verifier)
                checked[key] = ok
            if ok:
                tally.setdefault(e.batch.digest, []).append(e)
        if not tally:
            break
        best = min(tally, key=lambda d: (-len(tally[d]), d))
        decisions.append(tally[best][0])
        inst += 1
    prepared = None
    for sd in usable:
        p = sd.prepared
        if p is None or p.instance != inst:
            continue
        if prepared is None or (p.regency, p.batch.digest) > (prepared.regency, prepared.batch.digest):
            prepared = p
    return MergedHistory(base, tuple(decisions), prepared)


def reranked(ranking, members):
    """Keep the relative order of surviving replicas from an old ranking."""
    keep = [r for r in ranking if r in set(members)]
    return keep + [m for m in sorted(members) if m not in set(keep)]


def config_for(members, t_eff: int, ranking) -> WeightConfig:
    return compute_weight_config(len(members), t_eff, reranked(ranking, members), members=members)
