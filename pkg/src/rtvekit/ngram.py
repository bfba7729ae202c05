"""Back-off n-gram language models.

Models are stored the ARPA way: a map from n-gram tuples to
``(log10 prob, log10 back-off or None)``.  Back-off weights are always
computed by closing the probability mass of each context, so every trained,
pruned or interpolated model is normalized by construction.
"""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Sequence, Union

import numpy as np

from rtvekit import ParseError, ValidationError

log = logging.getLogger(__name__)

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
LOG_ZERO = -99.0
UNK_FLOOR = 1e-7

Sentence = Union[str, Sequence[str]]


def _log10(p: float) -> float:
    return math.log10(p) if p > 0 else LOG_ZERO


def _words(sentence: Sentence) -> list:
    return sentence.split() if isinstance(sentence, str) else list(sentence)


@dataclass
class NGramModel:
    order: int
    entries: dict
    vocabulary: frozenset

    def __post_init__(self):
        if self.order < 1:
            raise ValidationError(f"order must be >= 1, got {self.order}")
        self.vocabulary = frozenset(self.vocabulary) | {BOS, EOS, UNK}
        self._children = None

    # -- queries ---------------------------------------------------------

    def map_word(self, word: str) -> str:
        return word if word in self.vocabulary else UNK

    def logprob(self, word: str, history: Sequence[str] = ()) -> float:
        """log10 p(word | history), backing off as needed."""
        word = self.map_word(word)
        h = tuple(self.map_word(w) for w in history[len(history) - self.order + 1:]) \
            if self.order > 1 else ()
        return self._logprob(word, h)

    def _logprob(self, word, h):
        entries = self.entries
        acc = 0.0
        while True:
            e = entries.get(h + (word,))
            if e is not None:
                return acc + e[0]
            if not h:
                return LOG_ZERO
            ctx = entries.get(h)
            if ctx is not None and ctx[1] is not None:
                acc += ctx[1]
            h = h[1:]

    def prob(self, word: str, history: Sequence[str] = ()) -> float:
        return 10.0 ** self.logprob(word, history)

    def predicted_vocabulary(self) -> list:
        """Everything that can follow a history (all words but ``<s>``)."""
        return sorted(self.vocabulary - {BOS})

    def score_sentence(self, sentence: Sentence) -> float:
        """log10 probability of one sentence including its end marker."""
        words = [self.map_word(w) for w in _words(sentence)]
        tokens = [BOS] + words + [EOS]
        n = self.order
        total = 0.0
        for i in range(1, len(tokens)):
            total += self._logprob(tokens[i], tuple(tokens[max(0, i - n + 1):i]))
        return total

    def counts(self) -> dict:
        c = Counter(len(k) for k in self.entries)
        return {n: c.get(n, 0) for n in range(1, self.order + 1)}

    def children(self) -> dict:
        if self._children is None:
            kids = defaultdict(list)
            for key in self.entries:
                kids[key[:-1]].append(key[-1])
            self._children = dict(kids)
        return self._children


@dataclass
class InterpolationWeights:
    weights: list
    # held-out log10 likelihood before the first and after every EM update
    history: list = field(default_factory=list)
    iterations: int = 0

    def __post_init__(self):
        if abs(sum(self.weights) - 1.0) > 1e-9 or any(w < 0 for w in self.weights):
            raise ValidationError(f"weights {self.weights} are not a convex combination")


# --------------------------------------------------------------------------
# back-off weights

def _set_backoffs(entries: dict, ctx_len: int, model: NGramModel) -> None:
    """Close the mass of every context of length ``ctx_len``."""
    kids = defaultdict(list)
    for key in entries:
        if len(key) == ctx_len + 1:
            kids[key[:-1]].append(key[-1])
    for key, (lp, _) in list(entries.items()):
        if len(key) != ctx_len:
            continue
        followers = kids.get(key, ())
        num = 1.0 - sum(10.0 ** entries[key + (w,)][0] for w in followers)
        den = 1.0 - sum(10.0 ** model._logprob(w, key[1:]) for w in followers)
        if num <= 1e-15:
            bow = LOG_ZERO if den > 1e-12 else 0.0
        elif den <= 1e-15:
            # lower order already spent everything on the same words
            bow = 0.0
        else:
            bow = math.log10(num / den)
        entries[key] = (lp, bow)


def _finish(model: NGramModel) -> NGramModel:
    for ctx_len in range(1, model.order):
        _set_backoffs(model.entries, ctx_len, model)
    for key, (lp, _) in model.entries.items():
        if len(key) == model.order:
            model.entries[key] = (lp, None)
    model._children = None
    return model


# --------------------------------------------------------------------------
# training

def _count(corpus: Iterable[Sentence], order: int):
    counts = [Counter() for _ in range(order + 1)]
    words_seen = set()
    n_sent = 0
    for sentence in corpus:
        words = _words(sentence)
        n_sent += 1
        words_seen.update(words)
        tokens = [BOS] + words + [EOS]
        for i in range(1, len(tokens)):
            for n in range(1, order + 1):
                if i - n + 1 < 0:
                    break
                counts[n][tuple(tokens[i - n + 1:i + 1])] += 1
    return counts, words_seen, n_sent


def train(corpus: Iterable[Sentence], order: int = 3, smoothing: str = "wb",
          k: float = 1.0, prune_singletons: bool = False) -> NGramModel:
    """Estimate a back-off model from sentences.

    ``smoothing`` is ``"wb"`` (interpolated Witten-Bell) or ``"add_k"``.  The
    unknown word gets its share of the unigram smoothing mass.  With
    ``prune_singletons`` n-grams above order 2 seen once are dropped.
    """
    if order < 1:
        raise ValidationError(f"order must be >= 1, got {order}")
    if smoothing not in ("wb", "add_k"):
        raise ValidationError(f"unknown smoothing {smoothing!r}")
    if smoothing == "add_k" and k < 0:
        raise ValidationError("k must be non-negative")
    counts, words_seen, n_sent = _count(corpus, order)
    if n_sent == 0:
        raise ValidationError("empty corpus")

    vocab = (words_seen | {EOS, UNK}) - {BOS}
    entries: dict = {}
    model = NGramModel(order, entries, vocab)

    uni = counts[1]
    total = sum(uni.values())
    n_types = len(uni)
    v = len(vocab)
    for w in sorted(vocab):
        c = uni.get((w,), 0)
        if smoothing == "wb":
            p = (c + n_types / v) / (total + n_types)
        else:
            p = (c + k) / (total + k * v) if total + k * v > 0 else 0.0
        entries[(w,)] = (_log10(p), None)
    entries[(BOS,)] = (LOG_ZERO, None)

    for n in range(2, order + 1):
        if n >= 3:
            _set_backoffs(entries, n - 2, model)
        ctx_total = Counter()
        ctx_types = Counter()
        for gram, c in counts[n].items():
            ctx_total[gram[:-1]] += c
            ctx_types[gram[:-1]] += 1
        for gram in sorted(counts[n]):
            c = counts[n][gram]
            h = gram[:-1]
            if smoothing == "wb":
                t = ctx_types[h]
                lower = 10.0 ** model._logprob(gram[-1], h[1:])
                p = (c + t * lower) / (ctx_total[h] + t)
            else:
                p = (c + k) / (ctx_total[h] + k * v)
            entries[gram] = (_log10(p), None)

    if prune_singletons:
        for n in range(3, order + 1):
            for gram, c in counts[n].items():
                if c == 1:
                    entries.pop(gram, None)
    return _finish(model)


def uniform_model(tokens: Sequence[str]) -> NGramModel:
    """Unigram model giving each of ``tokens`` probability 1/len(tokens).

    ``tokens`` should include ``</s>`` if sentence ends are to be scored;
    anything not listed (including ``<unk>``) gets probability zero.
    """
    tokens = list(dict.fromkeys(tokens))
    lp = -math.log10(len(tokens))
    entries = {(t,): (lp, None) for t in tokens}
    for t in (BOS, EOS, UNK):
        entries.setdefault((t,), (LOG_ZERO, None))
    return NGramModel(1, entries, set(tokens))


# --------------------------------------------------------------------------
# evaluation

def evaluate(model: NGramModel, text: Iterable[Sentence]) -> dict:
    logprob = 0.0
    n_tokens = 0
    n_oov = 0
    n_sent = 0
    for sentence in text:
        words = _words(sentence)
        n_oov += sum(1 for w in words if w not in model.vocabulary)
        logprob += model.score_sentence(words)
        n_tokens += len(words) + 1
        n_sent += 1
    ppl = 10.0 ** (-logprob / n_tokens) if n_tokens else math.inf
    return {"logprob": logprob, "n_tokens": n_tokens, "n_sentences": n_sent,
            "n_oov": n_oov, "perplexity": ppl}


def perplexity(model: NGramModel, text: Iterable[Sentence]) -> float:
    """10 ** (-mean log10 p) over words plus sentence-end markers."""
    return evaluate(model, text)["perplexity"]


def context_masses(model: NGramModel):
    """Yield ``(context, total probability)`` for every context in the model.

    Contexts are the empty history and every stored n-gram shorter than the
    model order; mass is summed over the whole predicted vocabulary.
    """
    vocab = model.predicted_vocabulary()
    contexts = [()] + sorted(k for k in model.entries if len(k) < model.order)
    for h in contexts:
        yield h, sum(10.0 ** model._logprob(w, h) for w in vocab)


def max_mass_error(model: NGramModel) -> float:
    return max(abs(m - 1.0) for _, m in context_masses(model))


# --------------------------------------------------------------------------
# interpolation

def _component_prob(model: NGramModel, union_vocab, word, history):
    if word in union_vocab and word not in model.vocabulary:
        return 0.0
    return 10.0 ** model.logprob(word, history)


def em_weights(probs: np.ndarray, max_iter: int = 100, tol: float = 1e-6,
               init: Optional[Sequence[float]] = None) -> InterpolationWeights:
    """Mixture weights maximizing sum(log(probs @ weights)) by EM.

    ``probs`` has one row per held-out token and one column per component.
    """
    probs = np.asarray(probs, dtype=np.float64)
    n_comp = probs.shape[1]
    lam = np.full(n_comp, 1.0 / n_comp) if init is None else np.asarray(init, dtype=np.float64)
    probs = probs[probs.sum(axis=1) > 0]

    def loglik(weights):
        return float(np.sum(np.log10(np.maximum(probs @ weights, 1e-300))))

    history = [loglik(lam)]
    it = 0
    for it in range(1, max_iter + 1):
        mix = probs @ lam
        post = probs * lam / mix[:, None]
        new = post.mean(axis=0)
        new /= new.sum()
        delta = float(np.max(np.abs(new - lam)))
        lam = new
        history.append(loglik(lam))
        if delta < tol:
            break
    return InterpolationWeights([float(x) for x in lam], history, it)


def heldout_probs(models: Sequence[NGramModel], heldout: Iterable[Sentence]) -> np.ndarray:
    union = frozenset().union(*(m.vocabulary for m in models))
    rows = []
    order = models[0].order
    for sentence in heldout:
        tokens = [BOS] + _words(sentence) + [EOS]
        for i in range(1, len(tokens)):
            hist = tokens[max(0, i - order + 1):i]
            rows.append([_component_prob(m, union, tokens[i], hist) for m in models])
    return np.array(rows, dtype=np.float64).reshape(-1, len(models))


def mix_models(models: Sequence[NGramModel], weights: Sequence[float]) -> NGramModel:
    """Static linear interpolation into one standalone back-off model."""
    order = models[0].order
    union = frozenset().union(*(m.vocabulary for m in models))
    keys = set()
    for m in models:
        keys.update(m.entries)
    entries: dict = {}
    merged = NGramModel(order, entries, union)
    active = [(w, m) for w, m in zip(weights, models) if w > 0]

    def mixed(word, h):
        return sum(w * _component_prob(m, union, word, h) for w, m in active)

    vocab = sorted(union - {BOS})
    uni = {w: mixed(w, ()) for w in vocab}
    uni[UNK] = max(uni.get(UNK, 0.0), UNK_FLOOR)
    z = sum(uni.values())
    for w in vocab:
        entries[(w,)] = (_log10(uni[w] / z), None)
    entries[(BOS,)] = (LOG_ZERO, None)

    for n in range(2, order + 1):
        for key in sorted(k for k in keys if len(k) == n):
            entries[key] = (_log10(mixed(key[-1], key[:-1])), None)
    return _finish(merged)


def interpolate(models: Sequence[NGramModel], heldout: Iterable[Sentence],
                max_iter: int = 100, tol: float = 1e-6):
    """EM-tune mixture weights on held-out text and merge the components.

    Returns ``(merged_model, InterpolationWeights)``.
    """
    if len(models) < 2:
        raise ValidationError("interpolation needs at least 2 models")
    orders = {m.order for m in models}
    if len(orders) != 1:
        raise ValidationError(f"component orders differ: {sorted(orders)}")
    heldout = list(heldout)
    if not heldout:
        raise ValidationError("empty held-out text")
    weights = em_weights(heldout_probs(models, heldout), max_iter, tol)
    log.info("interpolation weights %s after %d iterations", weights.weights, weights.iterations)
    return mix_models(models, weights.weights), weights


# --------------------------------------------------------------------------
# ARPA

def write_arpa(model: NGramModel, sink: Optional[IO[str]] = None) -> str:
    by_order = defaultdict(list)
    for key in model.entries:
        by_order[len(key)].append(key)
    lines = ["", "\\data\\"]
    for n in range(1, model.order + 1):
        lines.append(f"ngram {n}={len(by_order[n])}")
    for n in range(1, model.order + 1):
        lines.append("")
        lines.append(f"\\{n}-grams:")
        for key in sorted(by_order[n]):
            lp, bow = model.entries[key]
            line = f"{max(lp, LOG_ZERO):.7f}\t{' '.join(key)}"
            if bow is not None:
                line += f"\t{max(bow, LOG_ZERO):.7f}"
            lines.append(line)
    lines.append("")
    lines.append("\\end\\")
    text = "\n".join(lines) + "\n"
    if sink is not None:
        sink.write(text)
    return text


def read_arpa(source) -> NGramModel:
    lines = source.splitlines() if isinstance(source, str) else source
    header: dict = {}
    entries: dict = {}
    found = Counter()
    state = "pre"
    n = 0
    ended = False
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line == "\\data\\":
            state = "header"
            continue
        if line == "\\end\\":
            ended = True
            break
        if line.startswith("\\") and line.endswith("-grams:"):
            try:
                n = int(line[1:-len("-grams:")])
            except ValueError:
                raise ParseError(f"bad section header {line!r}", line_no) from None
            if n not in header:
                raise ParseError(f"section {n}-grams not declared in header", line_no)
            state = "grams"
            continue
        if state == "header":
            if not line.startswith("ngram "):
                raise ParseError(f"unexpected header line {line!r}", line_no)
            order_s, _, count_s = line[6:].partition("=")
            try:
                header[int(order_s)] = int(count_s)
            except ValueError:
                raise ParseError(f"bad count line {line!r}", line_no) from None
        elif state == "grams":
            fields = line.split()
            if len(fields) not in (n + 1, n + 2):
                raise ParseError(f"expected {n + 1} or {n + 2} fields", line_no)
            try:
                lp = float(fields[0])
                bow = float(fields[n + 1]) if len(fields) == n + 2 else None
            except ValueError:
                raise ParseError("bad number", line_no) from None
            entries[tuple(fields[1:n + 1])] = (lp, bow)
            found[n] += 1
        # text before \data\ is ignored, as in most toolkits
    if not header:
        raise ParseError("missing \\data\\ header")
    if not ended:
        raise ParseError("missing \\end\\ marker")
    for order_n, declared in header.items():
        if found[order_n] != declared:
            raise ParseError(f"header declares {declared} {order_n}-grams, found {found[order_n]}")
    order = max(header)
    vocab = {k[0] for k in entries if len(k) == 1}
    return NGramModel(order, entries, vocab)
