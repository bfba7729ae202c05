"""ROVER: fuse several systems' CTM output through a word transition network.

Systems are merged one at a time into the network by dynamic-programming
alignment, then every correspondence set votes for a single word (or for
nothing).  Merge order matters and follows the order of the input list.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from rtvekit import ValidationError
from rtvekit.align import SCLITE_COSTS, Costs
from rtvekit.formats import CtmFile, WordToken

log = logging.getLogger(__name__)

DEFAULT_MAX_TIME_GAP = 2.0


@dataclass(frozen=True)
class WtnArc:
    word: Optional[str]  # None is the NULL arc
    confidence: float
    system_id: int
    start: float
    duration: float

    @property
    def midpoint(self) -> float:
        return self.start + 0.5 * self.duration


@dataclass
class Wtn:
    sets: list = field(default_factory=list)
    n_systems: int = 0
    system_ids: list = field(default_factory=list)

    def set_time(self, idx: int) -> float:
        """Mean midpoint of the non-NULL arcs of correspondence set ``idx``."""
        return _set_time(self.sets[idx])


def _set_time(arcs) -> float:
    mids = [a.midpoint for a in arcs if a.word is not None]
    if not mids:
        mids = [a.midpoint for a in arcs]
    return sum(mids) / len(mids)


@dataclass(frozen=True)
class VoteConfig:
    alpha: float = 1.0
    null_confidence: float = 0.7
    # system ids, highest priority first; None means input order
    tie_break: Optional[tuple] = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha {self.alpha} outside [0, 1]")
        if not 0.0 <= self.null_confidence <= 1.0:
            raise ValidationError(f"null confidence {self.null_confidence} outside [0, 1]")


def _arc(tok: WordToken, system_id: int) -> WtnArc:
    return WtnArc(tok.word, tok.conf, system_id, tok.start, tok.duration)


def wtn_from_ctm(tokens: Sequence[WordToken], system_id: int = 0) -> Wtn:
    return Wtn([[_arc(t, system_id)] for t in tokens], 1, [system_id])


def merge_alignment(base: Wtn, hyp: Sequence[WordToken], costs: Costs = SCLITE_COSTS,
                    max_time_gap: float = DEFAULT_MAX_TIME_GAP):
    """Align ``hyp`` tokens to the correspondence sets of ``base``.

    Returns ``(steps, cost)`` where each step is ``("M", set_idx, tok_idx)``,
    ``("D", set_idx, None)`` (set gets a NULL from the new system) or
    ``("I", None, tok_idx)`` (new set).  Arcs may only be matched when their
    midpoints differ by less than ``max_time_gap`` seconds.
    """
    sets = base.sets
    n, m = len(sets), len(hyp)
    inf = math.inf
    mids = [t.midpoint for t in hyp]
    cost = [[inf] * (m + 1) for _ in range(n + 1)]
    cost[0][0] = 0.0
    for i in range(1, n + 1):
        cost[i][0] = cost[i - 1][0] + costs.del_
    for j in range(1, m + 1):
        cost[0][j] = cost[0][j - 1] + costs.ins
    mids_arr = np.asarray(mids, dtype=np.float64)
    hyp_words = [t.word for t in hyp]
    sub = []
    for i in range(n):
        t_set = _set_time(sets[i])
        words = {a.word for a in sets[i]}
        srow = [inf] * m
        # only arcs within the time window can be matched
        for j in np.flatnonzero(np.abs(t_set - mids_arr) < max_time_gap).tolist():
            srow[j] = 0.0 if hyp_words[j] in words else costs.sub
        sub.append(srow)
    c_del, c_ins = costs.del_, costs.ins
    for i in range(1, n + 1):
        row, prev, srow = cost[i], cost[i - 1], sub[i - 1]
        left = row[0]
        for j in range(1, m + 1):
            best = prev[j - 1] + srow[j - 1]
            up = prev[j] + c_del
            if up < best:
                best = up
            left += c_ins
            if left < best:
                best = left
            row[j] = left = best

    steps = []
    i, j = n, m
    while i > 0 or j > 0:
        here = cost[i][j]
        if i > 0 and j > 0 and here == cost[i - 1][j - 1] + sub[i - 1][j - 1]:
            steps.append(("M", i - 1, j - 1))
            i, j = i - 1, j - 1
            continue
        can_del = i > 0 and here == cost[i - 1][j] + costs.del_
        can_ins = j > 0 and here == cost[i][j - 1] + costs.ins
        if can_del and can_ins:
            # emitted back to front: the later of the two goes first
            can_del = _set_time(sets[i - 1]) >= mids[j - 1]
            can_ins = not can_del
        if can_del:
            steps.append(("D", i - 1, None))
            i -= 1
        else:
            steps.append(("I", None, j - 1))
            j -= 1
    steps.reverse()
    return steps, cost[n][m]


def wtn_merge(base: Wtn, hyp: Sequence[WordToken], system_id: int,
              config: Optional[VoteConfig] = None, costs: Costs = SCLITE_COSTS,
              max_time_gap: float = DEFAULT_MAX_TIME_GAP) -> Wtn:
    """Fold one more system into ``base``; every set ends with one arc per system."""
    null_conf = (config or VoteConfig()).null_confidence
    steps, _ = merge_alignment(base, hyp, costs, max_time_gap)
    new_sets = []
    for kind, i, j in steps:
        if kind == "M":
            new_sets.append(base.sets[i] + [_arc(hyp[j], system_id)])
        elif kind == "D":
            arcs = base.sets[i]
            t = _set_time(arcs)
            new_sets.append(arcs + [WtnArc(None, null_conf, system_id, t, 0.0)])
        else:
            tok = hyp[j]
            nulls = [WtnArc(None, null_conf, s, tok.midpoint, 0.0) for s in base.system_ids]
            new_sets.append(nulls + [_arc(tok, system_id)])
    return Wtn(new_sets, base.n_systems + 1, base.system_ids + [system_id])


def vote_set(arcs, n_systems: int, config: VoteConfig, priority: dict):
    """Score every distinct word of one correspondence set.

    Returns ``(winner, tallies)`` where tallies maps word -> (count, maxconf,
    score).
    """
    tallies: dict = {}
    for a in arcs:
        conf = config.null_confidence if a.word is None else a.confidence
        count, best, rank = tallies.get(a.word, (0, -1.0, math.inf))
        tallies[a.word] = (count + 1, max(best, conf), min(rank, priority.get(a.system_id, math.inf)))
    scored = {}
    for word, (count, best, rank) in tallies.items():
        score = config.alpha * count / n_systems + (1.0 - config.alpha) * best
        scored[word] = (count, best, score, rank)
    top = max(v[2] for v in scored.values())
    tied = [w for w, v in scored.items() if math.isclose(v[2], top, rel_tol=0.0, abs_tol=1e-12)]
    winner = min(tied, key=lambda w: scored[w][3])
    return winner, {w: v[:3] for w, v in scored.items()}


def vote(wtn: Wtn, config: VoteConfig = VoteConfig(), recording_id: str = "",
         channel: str = "1") -> CtmFile:
    """Pick one word per correspondence set; NULL winners emit nothing."""
    return CtmFile(tuple(_vote_tokens(wtn, config, recording_id, channel)))


def _priority(config: VoteConfig, wtn: Wtn) -> dict:
    order = config.tie_break if config.tie_break is not None else wtn.system_ids
    return {sys_id: rank for rank, sys_id in enumerate(order)}


def _vote_tokens(wtn, config, recording_id, channel, trace=None):
    priority = _priority(config, wtn)
    out = []
    for idx, arcs in enumerate(wtn.sets):
        winner, tallies = vote_set(arcs, wtn.n_systems, config, priority)
        if trace is not None:
            trace.append({"set": idx, "time": round(_set_time(arcs), 3),
                          "winner": winner,
                          "tallies": [{"word": w, "count": c, "maxconf": mc, "score": s}
                                      for w, (c, mc, s) in tallies.items()]})
        if winner is None:
            continue
        win_arcs = [a for a in arcs if a.word == winner]
        out.append(WordToken(recording_id, channel,
                             min(a.start for a in win_arcs),
                             max(a.duration for a in win_arcs),
                             winner, tallies[winner][1]))
    return out


@dataclass
class RoverTrace:
    system_order: list
    warnings: list = field(default_factory=list)
    sets: dict = field(default_factory=dict)  # recording -> per-set tallies


def rover_fuse(ctms: Sequence[CtmFile], config: VoteConfig = VoteConfig(),
               costs: Costs = SCLITE_COSTS, max_time_gap: float = DEFAULT_MAX_TIME_GAP,
               trace: Optional[RoverTrace] = None) -> CtmFile:
    """Fuse ``ctms`` recording by recording, merging systems in list order.

    Recordings missing from a system make it vote NULL throughout and log a
    warning.  Pass a :class:`RoverTrace` to collect per-set vote tallies.
    """
    if len(ctms) < 2:
        raise ValidationError(f"ROVER needs at least 2 systems, got {len(ctms)}")
    per_system = [c.by_recording() for c in ctms]
    recordings = sorted(set().union(*per_system))
    fused = []
    for rec in recordings:
        missing = [k for k, sysrec in enumerate(per_system) if rec not in sysrec]
        if missing:
            msg = f"recording {rec} missing from systems {missing}; they vote NULL"
            log.warning(msg)
            if trace is not None:
                trace.warnings.append(msg)
        channel = next(sysrec[rec][0].channel for sysrec in per_system if rec in sysrec)
        wtn = wtn_from_ctm(per_system[0].get(rec, []), 0)
        for k in range(1, len(ctms)):
            wtn = wtn_merge(wtn, per_system[k].get(rec, []), k, config, costs, max_time_gap)
        sets_trace = [] if trace is not None else None
        fused.extend(_vote_tokens(wtn, config, rec, channel, sets_trace))
        if trace is not None:
            trace.sets[rec] = sets_trace
    return CtmFile(tuple(fused))
