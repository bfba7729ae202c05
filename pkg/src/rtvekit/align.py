"""Word alignment, WER scoring and minimum-edit-cost path extraction."""

from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from rtvekit.formats import NONSCORED, CtmFile, NormalizationRules, DEFAULT_RULES, normalize_text


class OpKind(enum.Enum):
    CORRECT = "C"
    SUBSTITUTION = "S"
    INSERTION = "I"
    DELETION = "D"


@dataclass(frozen=True)
class AlignmentOp:
    kind: OpKind
    ref_word: Optional[str] = None
    hyp_word: Optional[str] = None


@dataclass(frozen=True)
class Costs:
    sub: float = 4.0
    ins: float = 3.0
    del_: float = 3.0


SCLITE_COSTS = Costs()
UNIT_COSTS = Costs(1.0, 1.0, 1.0)


def align_words(ref: Sequence[str], hyp: Sequence[str], costs: Costs = SCLITE_COSTS):
    """Minimum-cost alignment of ``hyp`` against ``ref``.

    Returns ``(ops, total_cost)``.  Among equal-cost alignments the traceback
    prefers, from the end backwards, CORRECT > SUBSTITUTION > DELETION >
    INSERTION, so the result is deterministic.
    """
    n, m = len(ref), len(hyp)
    # cost[i][j]: best cost aligning ref[:i] with hyp[:j]
    cost = [[0.0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        cost[i][0] = cost[i - 1][0] + costs.del_
    for j in range(1, m + 1):
        cost[0][j] = cost[0][j - 1] + costs.ins
    for i in range(1, n + 1):
        row, prev = cost[i], cost[i - 1]
        r = ref[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (0.0 if r == hyp[j - 1] else costs.sub)
            up = prev[j] + costs.del_
            left = row[j - 1] + costs.ins
            row[j] = min(diag, up, left)

    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        here = cost[i][j]
        if i > 0 and j > 0:
            same = ref[i - 1] == hyp[j - 1]
            if same and here == cost[i - 1][j - 1]:
                ops.append(AlignmentOp(OpKind.CORRECT, ref[i - 1], hyp[j - 1]))
                i, j = i - 1, j - 1
                continue
            if not same and here == cost[i - 1][j - 1] + costs.sub:
                ops.append(AlignmentOp(OpKind.SUBSTITUTION, ref[i - 1], hyp[j - 1]))
                i, j = i - 1, j - 1
                continue
        if i > 0 and here == cost[i - 1][j] + costs.del_:
            ops.append(AlignmentOp(OpKind.DELETION, ref[i - 1], None))
            i -= 1
        else:
            ops.append(AlignmentOp(OpKind.INSERTION, None, hyp[j - 1]))
            j -= 1
    ops.reverse()
    return ops, cost[n][m]


@dataclass
class WerReport:
    n_ref: int = 0
    n_sub: int = 0
    n_ins: int = 0
    n_del: int = 0
    n_cor: int = 0
    per_recording: dict = field(default_factory=dict)
    # hypothesis recordings with no reference at all
    unmatched_recordings: list = field(default_factory=list)

    @property
    def n_err(self) -> int:
        return self.n_sub + self.n_ins + self.n_del

    @property
    def wer(self) -> float:
        if self.n_ref == 0:
            return 0.0 if self.n_err == 0 else math.inf
        return 100.0 * self.n_err / self.n_ref

    def add_ops(self, ops) -> None:
        for op in ops:
            if op.kind is OpKind.CORRECT:
                self.n_cor += 1
            elif op.kind is OpKind.SUBSTITUTION:
                self.n_sub += 1
            elif op.kind is OpKind.DELETION:
                self.n_del += 1
            else:
                self.n_ins += 1
            if op.kind is not OpKind.INSERTION:
                self.n_ref += 1

    def merge(self, other: "WerReport") -> None:
        self.n_ref += other.n_ref
        self.n_sub += other.n_sub
        self.n_ins += other.n_ins
        self.n_del += other.n_del
        self.n_cor += other.n_cor

    def summary(self) -> dict:
        wer = self.wer
        return {"n_ref": self.n_ref, "n_cor": self.n_cor, "n_sub": self.n_sub,
                "n_ins": self.n_ins, "n_del": self.n_del,
                "wer": None if math.isinf(wer) else wer}


def round_half_away(value: float, digits: int = 2) -> float:
    """Display rounding: halves go away from zero (``12.345 -> 12.35``)."""
    from decimal import ROUND_HALF_UP, Decimal
    q = Decimal(1).scaleb(-digits)
    return float(Decimal(repr(value)).quantize(q, rounding=ROUND_HALF_UP))


def _scored(words):
    return [w for w in words if w != NONSCORED]


def score_wer(refs, hyp: CtmFile, rules: Optional[NormalizationRules] = DEFAULT_RULES,
              costs: Costs = SCLITE_COSTS) -> WerReport:
    """Score a CTM hypothesis against STM reference segments.

    Each hypothesis token goes to the reference segment of its recording that
    contains its midpoint.  Tokens outside every segment count as insertions
    against the nearest segment.  NONSCORED reference tokens can be matched
    or skipped at no cost; they never count as reference words.  Channels are
    ignored.
    """
    norm = (lambda ws: normalize_text(ws, rules)) if rules is not None else list

    segs_by_rec: dict = {}
    for seg in refs:
        segs_by_rec.setdefault(seg.recording_id, []).append(seg)
    hyp_by_rec = hyp.by_recording()

    report = WerReport()
    for rec in sorted(set(segs_by_rec) | set(hyp_by_rec)):
        rec_report = WerReport()
        segs = sorted(segs_by_rec.get(rec, []), key=lambda s: (s.start, s.end))
        tokens = hyp_by_rec.get(rec, [])
        if not segs:
            rec_report.n_ins = len(_scored(norm([t.word for t in tokens])))
            report.unmatched_recordings.append(rec)
        else:
            assigned = [[] for _ in segs]
            stray = [0] * len(segs)
            starts = [s.start for s in segs]
            for tok in tokens:
                idx = _containing_segment(segs, starts, tok.midpoint)
                if idx is not None:
                    assigned[idx].append(tok.word)
                else:
                    stray[_nearest_segment(segs, tok.midpoint)] += len(_scored(norm([tok.word])))
            for seg, words, n_stray in zip(segs, assigned, stray):
                ops, _ = align_words(_scored(norm(seg.text)), _scored(norm(words)), costs)
                rec_report.add_ops(ops)
                rec_report.n_ins += n_stray
        report.per_recording[rec] = rec_report
        report.merge(rec_report)
    return report


def _containing_segment(segs, starts, t):
    k = bisect.bisect_right(starts, t)
    # overlapping segments are allowed; take the earliest one that contains t
    for idx in range(k):
        if segs[idx].start <= t <= segs[idx].end:
            return idx
    return None


def _nearest_segment(segs, t):
    def gap(seg):
        return max(seg.start - t, t - seg.end, 0.0)
    return min(range(len(segs)), key=lambda i: (gap(segs[i]), i))


# --------------------------------------------------------------------------
# confusion networks

@dataclass(frozen=True)
class ConfusionNetwork:
    """Slots of competing ``(word, weight)`` pairs; ``None`` is epsilon."""

    slots: tuple

    def __post_init__(self):
        slots = tuple(tuple((w, float(p)) for w, p in slot) for slot in self.slots)
        for slot in slots:
            if not slot:
                raise ValueError("confusion network slot is empty")
            if any(p < 0 for _, p in slot):
                raise ValueError("negative arc weight")
        object.__setattr__(self, "slots", slots)

    def normalized(self) -> "ConfusionNetwork":
        out = []
        for slot in self.slots:
            total = sum(p for _, p in slot)
            out.append(tuple((w, p / total if total > 0 else 1.0 / len(slot)) for w, p in slot))
        return ConfusionNetwork(tuple(out))

    def paths(self):
        """Number of distinct slot-wise choices."""
        return math.prod(len(s) for s in self.slots)


def oracle_path(net: ConfusionNetwork, ref: Sequence[str], costs: Costs = UNIT_COSTS):
    """Path through ``net`` with minimum edit cost against ``ref``.

    Dynamic programme over (slot, reference position); epsilon arcs emit
    nothing.  Within a slot, heavier arcs win ties.  Returns
    ``(words, cost)``.
    """
    n_slots, n = len(net.slots), len(ref)
    inf = math.inf
    best = [[inf] * (n + 1) for _ in range(n_slots + 1)]
    back = [[None] * (n + 1) for _ in range(n_slots + 1)]
    best[0][0] = 0.0
    for i in range(n_slots + 1):
        row = best[i]
        # reference deletions within the same slot boundary
        for j in range(1, n + 1):
            cand = row[j - 1] + costs.del_
            if cand < row[j]:
                row[j] = cand
                back[i][j] = ("del", None)
        if i == n_slots:
            break
        alts = sorted(enumerate(net.slots[i]), key=lambda a: (-a[1][1], a[0]))
        nxt, nback = best[i + 1], back[i + 1]
        for j in range(n + 1):
            base = row[j]
            if base == inf:
                continue
            for _, (word, _) in alts:
                if word is None:
                    moves = ((j, 0.0),)
                else:
                    moves = []
                    if j < n:
                        moves.append((j + 1, 0.0 if word == ref[j] else costs.sub))
                    moves.append((j, costs.ins))
                for jj, c in moves:
                    if base + c < nxt[jj]:
                        nxt[jj] = base + c
                        nback[jj] = ("arc", word, j)

    words = []
    i, j = n_slots, n
    while i > 0 or j > 0:
        step = back[i][j]
        if step[0] == "del":
            j -= 1
        else:
            _, word, jprev = step
            if word is not None:
                words.append(word)
            i, j = i - 1, jprev
    words.reverse()
    return words, best[n_slots][n]
