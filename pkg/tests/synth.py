"""Synthetic fixtures with planted truth."""

from dataclasses import dataclass, field

import numpy as np

from rtvekit.formats import CtmFile, WordToken
from rtvekit.retrieval import Caption, CaptionCorpus, NBestEntry, NBestList

VOCAB = [f"w{i:03d}" for i in range(300)]
# corrupting words never collide with real ones
FOREIGN = [f"x{i:04d}" for i in range(5000)]


# --------------------------------------------------------------------------
# ROVER

def truth_tokens(n_words=200, rec="rec", step=0.6, dur=0.4, rng=None):
    rng = rng or np.random.default_rng(0)
    words = rng.choice(VOCAB, size=n_words)
    return [WordToken(rec, "1", round(i * step, 3), dur, str(w)) for i, w in enumerate(words)]


def corrupt_system(truth, rng, p_sub=0.10, p_del=0.05, p_ins=0.05):
    """Independent recognizer errors at roughly p_sub + p_del + p_ins WER."""
    out = []
    for tok in truth:
        r = rng.random()
        if r < p_sub:
            out.append(WordToken(tok.recording_id, tok.channel, tok.start, tok.duration,
                                 str(rng.choice(VOCAB))))
        elif r >= p_sub + p_del:
            out.append(tok)
        if rng.random() < p_ins:
            out.append(WordToken(tok.recording_id, tok.channel, round(tok.end + 0.05, 3), 0.1,
                                 str(rng.choice(VOCAB))))
    return CtmFile(tuple(out))


# --------------------------------------------------------------------------
# transcript retrieval

@dataclass
class PlantedRecording:
    recording_id: str
    utterances: list  # list of list[WordToken], the spoken truth
    captions: CaptionCorpus
    interior_errors: list  # caption substitutions inside each utterance
    extra: list = field(default_factory=list)  # unspoken caption words after each utterance

    @property
    def truth(self):
        return [t for u in self.utterances for t in u]


def planted_recording(rng, rec, n_utts=12, shift=3.0, corruption=0.10,
                      max_interior_per_utt=1, interior_share=0.5):
    """Recording with pauses between utterances and subtitles shifted by ``shift``.

    ``corruption`` is the fraction of caption words that are wrong.  A share
    of it substitutes words inside utterances (at most
    ``max_interior_per_utt`` per utterance); the rest are unspoken caption
    words placed after an utterance ("partly said" subtitles).
    """
    t = 1.0
    utts = []
    for _ in range(n_utts):
        n = int(rng.integers(10, 17))
        toks = []
        for w in rng.choice(VOCAB, size=n):
            dur = round(float(rng.uniform(0.2, 0.4)), 3)
            toks.append(WordToken(rec, "1", round(t, 3), dur, str(w)))
            t = round(t + dur + float(rng.uniform(0.0, 0.15)), 3)
        utts.append(toks)
        t = round(t + float(rng.uniform(1.0, 2.0)), 3)

    n_words = sum(len(u) for u in utts)
    budget = int(round(corruption * n_words))
    n_interior = min(int(round(budget * interior_share)), max_interior_per_utt * n_utts)
    n_extra = budget - n_interior

    interior = [0] * n_utts
    slots = [u for u in range(n_utts) for _ in range(max_interior_per_utt)]
    for u in rng.choice(len(slots), size=n_interior, replace=False):
        interior[slots[u]] += 1
    extra = [0] * n_utts
    for u in rng.integers(0, n_utts, size=n_extra):
        extra[u] += 1

    foreign = iter(rng.permutation(FOREIGN))
    captions = []
    for k, toks in enumerate(utts):
        words = [t.word for t in toks]
        for pos in rng.choice(len(words), size=interior[k], replace=False):
            words[pos] = str(next(foreign))
        words += [str(next(foreign)) for _ in range(extra[k])]
        captions.append(Caption(round(toks[0].start + shift, 3), round(toks[-1].end + shift, 3),
                                tuple(words)))
    return PlantedRecording(rec, utts, CaptionCorpus(rec, captions), interior, extra)


def noisy_entry(truth, rng, rate):
    out = []
    for tok in truth:
        r = rng.random()
        if r < rate * 0.6:
            out.append(WordToken(tok.recording_id, tok.channel, tok.start, tok.duration,
                                 str(rng.choice(VOCAB))))
        elif r < rate * 0.8:
            continue
        else:
            out.append(tok)
        if rng.random() < rate * 0.2:
            out.append(WordToken(tok.recording_id, tok.channel, round(tok.end + 0.01, 3), 0.02,
                                 str(rng.choice(VOCAB))))
    return out


def planted_nbest(rec: PlantedRecording, rng, size=5, include_truth=True, noise=0.15):
    entries = []
    if include_truth:
        entries.append(NBestEntry(tuple(rec.truth), float(rng.normal(-100, 5))))
    while len(entries) < size:
        entries.append(NBestEntry(tuple(noisy_entry(rec.truth, rng, noise)), float(rng.normal(-100, 5))))
    return NBestList(rec.recording_id, entries)


def planted_corpus(seed=0, n_recordings=10, **kw):
    rng = np.random.default_rng(seed)
    return [planted_recording(rng, f"show{r % 3}_rec{r:02d}", **kw) for r in range(n_recordings)]


# --------------------------------------------------------------------------
# SNR

def speech_plus_noise(rng, snr_db, seconds=5.0, rate=16000, shape=0.4, peak=0.9):
    """Gamma-amplitude 'speech' plus Gaussian noise at an exact sample SNR."""
    n = int(seconds * rate)
    speech = rng.gamma(shape, 1.0, n) * rng.choice([-1.0, 1.0], n)
    noise = rng.standard_normal(n)
    speech *= np.sqrt(np.mean(noise**2) / np.mean(speech**2) * 10 ** (snr_db / 10))
    x = speech + noise
    return x / np.max(np.abs(x)) * peak
