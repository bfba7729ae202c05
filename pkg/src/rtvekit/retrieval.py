"""Lightly supervised transcript retrieval from subtitles.

For each recording the subtitle text is concatenated in time order and used
to train a small caption-biased n-gram model.  Recognizer n-best entries are
rescored with it, the entry closest to the captions (minimum edit cost) is
kept, and its word timings cut the recording into segments.  Segments whose
words disagree too much with the matched caption span are thrown away.

Hypotheses come in as n-best lists rather than lattices; n-best keeps the
minimum-edit-cost selection while staying small enough for desk-scale runs.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from rtvekit import ParseError, ValidationError
from rtvekit.align import SCLITE_COSTS, Costs, OpKind, WerReport, align_words
from rtvekit.formats import NONSCORED, StmSegment, WordToken
from rtvekit.ngram import NGramModel, train

log = logging.getLogger(__name__)

LN10 = math.log(10.0)


@dataclass(frozen=True)
class Caption:
    start: float  # nominal subtitle times, often shifted
    end: float
    words: tuple


@dataclass
class CaptionCorpus:
    recording_id: str
    captions: list

    def __post_init__(self):
        self.captions = sorted(self.captions, key=lambda c: (c.start, c.end))

    def words(self) -> list:
        return [w for c in self.captions for w in c.words if w != NONSCORED]

    def hours(self) -> float:
        """Total captioned time (union of caption intervals) in hours."""
        total = 0.0
        cur_s = cur_e = None
        for c in self.captions:
            if cur_e is None or c.start > cur_e:
                if cur_e is not None:
                    total += cur_e - cur_s
                cur_s, cur_e = c.start, c.end
            else:
                cur_e = max(cur_e, c.end)
        if cur_e is not None:
            total += cur_e - cur_s
        return total / 3600.0


@dataclass(frozen=True)
class NBestEntry:
    tokens: tuple
    score: float

    @property
    def words(self) -> list:
        return [t.word for t in self.tokens]


@dataclass
class NBestList:
    recording_id: str
    entries: list

    def __post_init__(self):
        self.entries = sorted(self.entries, key=lambda e: -e.score)


@dataclass(frozen=True)
class RetrievedSegment:
    recording_id: str
    start: float
    end: float
    text: tuple
    segment_wer: float
    pass_id: int = 1

    def to_stm(self, channel: str = "1", speaker: Optional[str] = None) -> StmSegment:
        return StmSegment(self.recording_id, channel, speaker or self.recording_id,
                          self.start, self.end, None, self.text)


@dataclass(frozen=True)
class RetrievalConfig:
    biased_lm_order: int = 7
    lm_weight: float = 10.0
    hyp_weight: float = 1.0
    max_segment_gap: float = 0.5
    max_segment_len: float = 15.0
    segment_wer_threshold: float = 10.0
    passes: int = 2

    def validate(self) -> "RetrievalConfig":
        """Check the pipeline invariants; rescoring alone accepts any weights."""
        if self.biased_lm_order < 1:
            raise ValidationError("biased_lm_order must be >= 1")
        if not 0 < self.hyp_weight < self.lm_weight:
            raise ValidationError(
                f"need 0 < hyp_weight < lm_weight, got {self.hyp_weight} / {self.lm_weight}")
        if self.max_segment_gap < 0 or self.max_segment_len <= 0:
            raise ValidationError("segment gap/length limits must be positive")
        if self.passes < 1:
            raise ValidationError("passes must be >= 1")
        return self


def build_biased_lm(corpus: CaptionCorpus, order: int = 7) -> NGramModel:
    """Witten-Bell model over this recording's captions, joined into one sentence."""
    words = corpus.words()
    if not words:
        raise ValidationError(f"recording {corpus.recording_id} has no caption text")
    return train([words], order=order, smoothing="wb")


def rescore_nbest(nbest: NBestList, lm: NGramModel, config: RetrievalConfig) -> NBestList:
    """Combine recognizer score and biased-LM log probability (natural log)."""
    entries = []
    for e in nbest.entries:
        lm_score = lm.score_sentence(e.words) * LN10
        entries.append(NBestEntry(e.tokens, config.hyp_weight * e.score + config.lm_weight * lm_score))
    # sort is stable, so equal scores keep their previous rank
    return NBestList(nbest.recording_id, entries)


def oracle_select(nbest: NBestList, captions: CaptionCorpus, costs: Costs = SCLITE_COSTS):
    """Entry with minimum edit cost against the caption text; rank breaks ties.

    Returns ``(tokens, cost)``.
    """
    if not nbest.entries:
        raise ValidationError(f"empty n-best list for {nbest.recording_id}")
    ref = captions.words()
    best_tokens, best_cost = None, math.inf
    for e in nbest.entries:
        _, cost = align_words(ref, e.words, costs)
        if cost < best_cost:
            best_tokens, best_cost = list(e.tokens), cost
    return best_tokens, best_cost


def _group_tokens(tokens: Sequence[WordToken], config: RetrievalConfig) -> list:
    groups = []
    for idx, tok in enumerate(tokens):
        if groups:
            prev = tokens[groups[-1][-1]]
            seg_start = tokens[groups[-1][0]].start
            if (tok.start - prev.end <= config.max_segment_gap
                    and tok.end - seg_start <= config.max_segment_len):
                groups[-1].append(idx)
                continue
        groups.append([idx])
    return groups


def _fit_span(window: Sequence[str], words: Sequence[str]):
    """Best-matching substring of ``window`` for ``words``.

    Edit alignment where caption words before and after the match are free.
    Errors are counted with unit costs so that a substitution at the edge is
    never traded for a cheaper free deletion plus insertion.  Returns
    ``(lo, hi)`` so that ``window[lo:hi]`` is the matched span; ties go to the
    longest span.
    """
    n, m = len(window), len(words)
    # cell = (cost, start); row i covers window[:i]
    prev = [(0, 0)]
    for j in range(1, m + 1):
        prev.append((prev[-1][0] + 1, 0))
    best = (prev[m][0], 0, 0)  # (errors, lo, -hi)
    for i in range(1, n + 1):
        r = window[i - 1]
        row = [(0, i)]
        for j in range(1, m + 1):
            d = prev[j - 1]
            cand = [(d[0] + (r != words[j - 1]), d[1]),
                    (prev[j][0] + 1, prev[j][1]),
                    (row[j - 1][0] + 1, row[j - 1][1])]
            row.append(min(cand))
        cost, lo = row[m]
        if (cost, lo, -i) < best:
            best = (cost, lo, -i)
        prev = row
    return best[1], -best[2]


def candidate_segments(chosen: Sequence[WordToken], captions: CaptionCorpus,
                       config: RetrievalConfig, pass_id: int = 1,
                       costs: Costs = SCLITE_COSTS) -> list:
    """All segments of ``chosen`` with their WER against the matched caption span.

    A global alignment of the whole recording anchors each segment to the
    caption words it matched or substituted.  The segment is then fitted to
    the best caption substring between its neighbours' anchors, so unspoken
    caption words at its edges do not count against it.
    """
    tokens = sorted(chosen, key=lambda t: t.start)
    if not tokens:
        return []
    ref = captions.words()
    ops, _ = align_words(ref, [t.word for t in tokens], costs)
    groups = _group_tokens(tokens, config)
    group_of = {}
    for g, members in enumerate(groups):
        for idx in members:
            group_of[idx] = g

    # first and last caption position anchored by each group
    first = [None] * len(groups)
    last = [None] * len(groups)
    ref_idx = hyp_idx = 0
    for op in ops:
        if op.kind is OpKind.INSERTION:
            hyp_idx += 1
            continue
        if op.kind is not OpKind.DELETION:
            g = group_of[hyp_idx]
            if first[g] is None:
                first[g] = ref_idx
            last[g] = ref_idx
            hyp_idx += 1
        ref_idx += 1

    out = []
    for g, members in enumerate(groups):
        lo = max((last[k] + 1 for k in range(g) if last[k] is not None), default=0)
        hi = min((first[k] for k in range(g + 1, len(groups)) if first[k] is not None),
                 default=len(ref))
        window = ref[lo:hi]
        words = [tokens[i].word for i in members]
        a, b = _fit_span(window, words)
        seg_ops, _ = align_words(window[a:b], words, costs)
        rep = WerReport()
        rep.add_ops(seg_ops)
        start = tokens[members[0]].start
        end = max(tokens[i].end for i in members)
        if end <= start:
            end = start + 0.001
        out.append(RetrievedSegment(captions.recording_id, start, end, tuple(words), rep.wer, pass_id))
    return out


def segment(chosen: Sequence[WordToken], captions: CaptionCorpus, config: RetrievalConfig,
            pass_id: int = 1) -> list:
    """Retained segments: split on pauses/length, keep those within the WER threshold."""
    return [s for s in candidate_segments(chosen, captions, config, pass_id)
            if s.segment_wer <= config.segment_wer_threshold]


@dataclass
class PassStats:
    pass_id: int
    original_hours: float = 0.0
    retained_hours: float = 0.0
    n_recordings: int = 0
    n_segments: int = 0
    n_discarded: int = 0
    skipped: list = field(default_factory=list)
    per_show: dict = field(default_factory=dict)

    @property
    def retained_fraction(self) -> float:
        return self.retained_hours / self.original_hours if self.original_hours > 0 else 0.0

    def to_json(self) -> dict:
        d = asdict(self)
        d["retained_fraction"] = self.retained_fraction
        return d


def _retrieve_recording(nbest: Optional[NBestList], captions: CaptionCorpus,
                        config: RetrievalConfig, pass_id: int):
    if nbest is None or not nbest.entries or not captions.words():
        return [], 0
    lm = build_biased_lm(captions, config.biased_lm_order)
    rescored = rescore_nbest(nbest, lm, config)
    chosen, _ = oracle_select(rescored, captions)
    cands = candidate_segments(chosen, captions, config, pass_id)
    kept = [s for s in cands if s.segment_wer <= config.segment_wer_threshold]
    return kept, len(cands) - len(kept)


def _retrieve_star(args):
    return _retrieve_recording(*args)


def run_pass(nbests: Iterable[NBestList], captions: Iterable[CaptionCorpus],
             config: RetrievalConfig = RetrievalConfig(), pass_id: int = 1,
             show_of: Optional[Callable[[str], str]] = None, workers: int = 1):
    """One retrieval pass over all recordings.

    Returns ``(segments, PassStats)``; segments are ordered by recording then
    start time whatever the worker count.
    """
    config.validate()
    show_of = show_of or (lambda rec: rec)
    by_rec = {n.recording_id: n for n in nbests}
    caps = {c.recording_id: c for c in captions}
    stats = PassStats(pass_id)
    for rec in sorted(set(by_rec) - set(caps)):
        log.warning("recording %s has hypotheses but no captions; skipped", rec)
        stats.skipped.append(rec)

    recs = sorted(caps)
    jobs = [(by_rec.get(rec), caps[rec], config, pass_id) for rec in recs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_retrieve_star, jobs))
    else:
        results = [_retrieve_recording(*job) for job in jobs]

    segments = []
    for rec, (kept, n_discarded) in zip(recs, results):
        orig = caps[rec].hours()
        kept_h = sum(s.end - s.start for s in kept) / 3600.0
        stats.n_recordings += 1
        stats.original_hours += orig
        stats.retained_hours += kept_h
        stats.n_segments += len(kept)
        stats.n_discarded += n_discarded
        show = stats.per_show.setdefault(show_of(rec), {"original_hours": 0.0, "retained_hours": 0.0})
        show["original_hours"] += orig
        show["retained_hours"] += kept_h
        segments.extend(sorted(kept, key=lambda s: s.start))
    return segments, stats


@dataclass
class MultiPassResult:
    segments: list  # output of the last pass
    passes: list  # PassStats per pass
    segments_per_pass: list

    def table(self) -> dict:
        """Hours in the layout {Original, 1-pass, 2-pass, ...}."""
        row = {"Original": self.passes[0].original_hours}
        for st in self.passes:
            row[f"{st.pass_id}-pass"] = st.retained_hours
        return row

    def to_json(self, split: str = "train") -> dict:
        last = self.passes[-1]
        return {"kind": "retrieval", "split": split,
                "original_hours": last.original_hours,
                "retained_hours": last.retained_hours,
                "retained_fraction": last.retained_fraction,
                "per_show": last.per_show,
                "table": self.table(),
                "passes": [p.to_json() for p in self.passes]}


def run_two_pass(pass1: Iterable[NBestList], pass2: Iterable[NBestList],
                 captions: Sequence[CaptionCorpus], config: RetrievalConfig = RetrievalConfig(),
                 *more_passes: Iterable[NBestList], show_of=None, workers: int = 1) -> MultiPassResult:
    """Run retrieval once per supplied pass of n-best lists.

    Later passes are expected to come from a recognizer retrained on the
    earlier output; that retraining happens outside this package.  A third
    pass is accepted but in practice adds little.
    """
    captions = list(captions)
    inputs = [pass1, pass2, *more_passes]
    if len(inputs) > 2:
        log.info("running %d passes; gains usually saturate after the second", len(inputs))
    all_segments, all_stats = [], []
    for k, nb in enumerate(inputs, start=1):
        segs, st = run_pass(nb, captions, config, pass_id=k, show_of=show_of, workers=workers)
        all_segments.append(segs)
        all_stats.append(st)
    return MultiPassResult(all_segments[-1], all_stats, all_segments)


# --------------------------------------------------------------------------
# file contracts

def read_nbest_jsonl(lines: Iterable[str], channel: str = "1") -> list:
    """Parse ``{recording_id, entries: [{score, words: [{w, start, dur}]}]}`` lines."""
    out = []
    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            rec = obj["recording_id"]
            entries = []
            for e in obj["entries"]:
                toks = tuple(WordToken(rec, channel, float(w["start"]), float(w["dur"]), w["w"])
                             for w in e["words"])
                entries.append(NBestEntry(tuple(sorted(toks, key=lambda t: t.start)), float(e["score"])))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad n-best record: {exc}", line_no) from None
        out.append(NBestList(rec, entries))
    return out


def write_nbest_jsonl(nbests: Iterable[NBestList]) -> str:
    lines = []
    for nb in nbests:
        lines.append(json.dumps({
            "recording_id": nb.recording_id,
            "entries": [{"score": e.score,
                         "words": [{"w": t.word, "start": t.start, "dur": t.duration} for t in e.tokens]}
                        for e in nb.entries]}, ensure_ascii=False))
    return "".join(line + "\n" for line in lines)


def captions_from_stm(segments: Iterable[StmSegment]) -> list:
    """Group subtitle lines (as STM segments) into per-recording corpora."""
    by_rec: dict = {}
    for s in segments:
        by_rec.setdefault(s.recording_id, []).append(Caption(s.start, s.end, tuple(s.text)))
    return [CaptionCorpus(rec, caps) for rec, caps in sorted(by_rec.items())]
