"""Acceptance suite: one test per criterion, summarized as PASS/FAIL lines.

Run alone with ``pytest -m acceptance -s``.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from oracles import brute_alignment_cost, brute_edit_cost
from synth import (corrupt_system, planted_corpus, planted_nbest, speech_plus_noise,
                   truth_tokens)

from rtvekit.align import SCLITE_COSTS, UNIT_COSTS, WerReport, align_words, score_wer
from rtvekit.formats import (AudioBuffer, CtmFile, StmSegment, WordToken, parse_ctm, parse_stm,
                             write_audio, write_ctm, write_stm)
from rtvekit.ngram import (em_weights, heldout_probs, interpolate, max_mass_error, perplexity,
                           read_arpa, train, uniform_model, write_arpa)
from rtvekit.retrieval import RetrievalConfig, run_two_pass
from rtvekit.rover import VoteConfig, merge_alignment, rover_fuse, wtn_from_ctm, wtn_merge
from rtvekit.snrgate import GateRange, enhance_dispatch, wada_snr

pytestmark = pytest.mark.acceptance
DATA = Path(__file__).parent / "data"


def criterion(label):
    def deco(fn):
        fn.criterion_label = label
        return fn
    return deco


def _fused_errors(hyp_words, truth_words):
    ops, _ = align_words(truth_words, hyp_words, UNIT_COSTS)
    rep = WerReport()
    rep.add_ops(ops)
    return rep.n_err


# --------------------------------------------------------------------------

@criterion("1. edit distance equals exhaustive enumeration")
def test_edit_distance_oracle(request):
    rng = np.random.default_rng(1)
    pairs = []
    for _ in range(1000):
        ref = list(rng.choice(list("abc"), size=int(rng.integers(0, 9))))
        hyp = list(rng.choice(list("abc"), size=int(rng.integers(0, 9))))
        pairs.append((ref, hyp))
    t0 = time.perf_counter()
    costs = [align_words(r, h, SCLITE_COSTS)[1] for r, h in pairs]
    elapsed = time.perf_counter() - t0
    mismatches = sum(c != brute_edit_cost(r, h) for c, (r, h) in zip(costs, pairs))
    request.node.criterion_detail = f"{mismatches} mismatches / 1000, {elapsed:.2f}s"
    assert mismatches == 0
    assert elapsed < 10.0


@criterion("2. planted WER fixture gives 12.00% and exact counts")
def test_wer_fixture(request):
    ref_words = [f"palabra{i:02d}" for i in range(50)]
    segs, hyp = [], []
    for s in range(5):
        words = ref_words[10 * s:10 * s + 10]
        segs.append(StmSegment("rec", "1", "spk", 10.0 * s, 10.0 * s + 9.0, None, words))
        for k, w in enumerate(words):
            hyp.append((10.0 * s + 0.5 + 0.8 * k, w))
    # 3 substitutions, 2 deletions, 1 insertion, all far apart
    plant = {5: "sub", 17: "sub", 33: "sub", 9: "del", 41: "del"}
    tokens = []
    for idx, (t, w) in enumerate(hyp):
        kind = plant.get(idx)
        if kind == "del":
            continue
        tokens.append(WordToken("rec", "1", round(t, 3), 0.3, "otra" if kind == "sub" else w))
    tokens.append(WordToken("rec", "1", 25.0, 0.2, "extra"))
    rep = score_wer(segs, CtmFile(tuple(tokens)))
    counts = (rep.n_ref, rep.n_cor, rep.n_sub, rep.n_ins, rep.n_del)
    request.node.criterion_detail = f"WER {rep.wer:.2f}% counts {counts}"
    assert counts == (50, 45, 3, 1, 2)
    assert rep.wer == 12.0


@criterion("3. ROVER unanimity and Monte-Carlo gain")
def test_rover_unanimity_and_gain(request):
    truth = truth_tokens(200, rng=np.random.default_rng(7))
    confident = CtmFile(tuple(WordToken(t.recording_id, t.channel, t.start, t.duration, t.word, 0.8)
                              for t in truth))
    for n in (2, 3, 5):
        assert rover_fuse([confident] * n, VoteConfig(alpha=1.0)).tokens == confident.tokens

    t0 = time.perf_counter()
    wins = 0
    truth_words = [t.word for t in truth]
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        systems = [corrupt_system(truth, rng) for _ in range(5)]
        best_single = min(_fused_errors([t.word for t in s], truth_words) for s in systems)
        fused = rover_fuse(systems, VoteConfig(alpha=1.0))
        wins += _fused_errors([t.word for t in fused], truth_words) < best_single
    elapsed = time.perf_counter() - t0
    request.node.criterion_detail = f"fusion wins {wins}/100 seeds, {elapsed:.1f}s"
    assert wins >= 90
    assert elapsed < 30.0


def _brute_merge(base, hyp):
    """Exhaustive merge cost with each set's time taken as its mean word midpoint."""
    sets = []
    for arcs in base.sets:
        words = {a.word for a in arcs if a.word is not None}
        mids = [a.midpoint for a in arcs if a.word is not None] or [a.midpoint for a in arcs]
        sets.append((words, sum(mids) / len(mids)))
    mids = [t.midpoint for t in hyp]

    def pair(i, j):
        words, t = sets[i]
        if abs(t - mids[j]) >= 2.0:
            return math.inf
        return 0.0 if hyp[j].word in words else 4.0

    return brute_alignment_cost(len(sets), len(hyp), pair, 3.0, 3.0)


def _random_system(rng, words="abcd"):
    n = int(rng.integers(0, 7))
    starts = np.sort(rng.uniform(0.0, 8.0, size=n))
    return [WordToken("r", "1", round(float(s), 3), round(float(rng.uniform(0.1, 0.6)), 3),
                      str(rng.choice(list(words)))) for s in starts]


@criterion("4. ROVER merge cost equals brute force")
def test_rover_merge_optimality(request):
    rng = np.random.default_rng(4)
    checked = mismatches = 0
    for _ in range(200):
        systems = [_random_system(rng) for _ in range(3)]
        wtn = wtn_from_ctm(systems[0], 0)
        for k in (1, 2):
            _, cost = merge_alignment(wtn, systems[k])
            checked += 1
            mismatches += cost != _brute_merge(wtn, systems[k])
            wtn = wtn_merge(wtn, systems[k], k)
            assert all(len(s) == k + 1 for s in wtn.sets)
    request.node.criterion_detail = f"{mismatches} mismatches / {checked} merges"
    assert mismatches == 0


def _random_corpus(rng):
    v = int(rng.integers(3, 12))
    vocab = [f"t{i}" for i in range(v)]
    return [list(rng.choice(vocab, size=int(rng.integers(1, 9)))) for _ in range(int(rng.integers(5, 25)))]


@criterion("5. LM mass sums to 1 within 1e-6")
def test_lm_normalization(request):
    rng = np.random.default_rng(5)
    worst = 0.0
    n_models = 0
    for c in range(21):
        order = c % 7 + 1
        corpus = _random_corpus(rng)
        held = _random_corpus(rng)
        models = []
        for smoothing in ("wb", "add_k"):
            m = train(corpus, order, smoothing, k=float(rng.uniform(0.1, 1.0)))
            models.append(m)
            rt = read_arpa(write_arpa(m))
            worst = max(worst, max_mass_error(m), max_mass_error(rt))
            n_models += 2
        other = train(_random_corpus(rng), order, "wb")
        merged, _ = interpolate([models[0], other], held)
        worst = max(worst, max_mass_error(merged), max_mass_error(read_arpa(write_arpa(merged))))
        n_models += 2
    request.node.criterion_detail = f"{n_models} models, worst |mass-1| = {worst:.2e}"
    assert worst <= 1e-6


@criterion("6. EM likelihood monotone and disjoint case converges")
def test_interpolation_em(request):
    rng = np.random.default_rng(6)
    worst_drop = 0.0
    for _ in range(30):
        a = train(_random_corpus(rng), 2, "wb")
        b = train(_random_corpus(rng), 2, "add_k", k=0.5)
        w = em_weights(heldout_probs([a, b], _random_corpus(rng)))
        steps = np.diff(w.history)
        worst_drop = min(worst_drop, float(steps.min()) if len(steps) else 0.0)
    assert worst_drop >= -1e-9

    m1 = train([["uno", "dos", "tres"], ["dos", "uno"]], 1, "wb")
    m2 = train([["cat", "dog"], ["dog", "bird"]], 1, "wb")
    _, weights = interpolate([m1, m2], [["uno", "dos"], ["tres", "tres", "uno"]])
    request.node.criterion_detail = (f"worst step {worst_drop:.1e}, "
                                     f"disjoint weight {weights.weights[0]:.6f}")
    assert weights.weights[0] >= 0.999


@criterion("7. uniform unigram perplexity equals V")
def test_uniform_perplexity(request):
    errs = []
    for v in (2, 10, 100):
        words = [f"u{i}" for i in range(v - 1)]
        model = uniform_model(words + ["</s>"])
        rng = np.random.default_rng(v)
        text = [list(rng.choice(words, size=5)) for _ in range(20)] if words else [[]]
        errs.append(abs(perplexity(model, text) - v))
    request.node.criterion_detail = f"max |ppl - V| = {max(errs):.1e}"
    assert max(errs) <= 1e-9


def _retention(segments, corpus, tol=0.1):
    found = 0
    by_rec = {}
    for s in segments:
        by_rec.setdefault(s.recording_id, []).append(s)
    total = 0
    for rec in corpus:
        for utt in rec.utterances:
            total += 1
            t0, t1 = utt[0].start, max(t.end for t in utt)
            found += any(abs(s.start - t0) <= tol and abs(s.end - t1) <= tol
                         for s in by_rec.get(rec.recording_id, []))
    return found / total


@criterion("8. transcript retrieval recovers planted segments")
def test_retrieval_recovery(request):
    t0 = time.perf_counter()
    corpus = planted_corpus(seed=8, n_recordings=10)
    rng = np.random.default_rng(80)
    # pass 1: a seed recognizer whose n-best lists miss the truth;
    # pass 2: an improved one whose lists contain it
    pass1 = [planted_nbest(r, rng, size=5, include_truth=False, noise=0.15) for r in corpus]
    pass2 = [planted_nbest(r, rng, size=5, include_truth=True, noise=0.10) for r in corpus]
    result = run_two_pass(pass1, pass2, [r.captions for r in corpus], RetrievalConfig())
    ret1 = _retention(result.segments_per_pass[0], corpus)
    ret2 = _retention(result.segments_per_pass[1], corpus)
    elapsed = time.perf_counter() - t0

    cfg = RetrievalConfig()
    assert all(s.segment_wer <= cfg.segment_wer_threshold for s in result.segments)
    truth_by_rec = {r.recording_id: {round(t.start, 3) for t in r.truth} for r in corpus}
    # boundaries come from hypothesis tokens, never from shifted caption times
    assert all(round(s.start, 3) in truth_by_rec[s.recording_id] for s in result.segments)
    h1, h2 = result.passes[0].retained_hours, result.passes[1].retained_hours
    request.node.criterion_detail = (f"pass 2 retained {ret2:.1%} of planted segments "
                                     f"(pass 1 {ret1:.1%}), hours {h1 * 3600:.0f}s -> "
                                     f"{h2 * 3600:.0f}s, {elapsed:.1f}s")
    assert ret2 >= 0.9
    assert h2 >= h1
    assert elapsed < 60.0


@criterion("9. WADA-SNR accuracy and scale invariance")
def test_wada_accuracy(request):
    rng = np.random.default_rng(9)
    maes = {}
    worst_scale = 0.0
    for snr in (-5, 0, 5, 10, 20):
        errs = []
        for _ in range(10):
            x = speech_plus_noise(rng, snr, seconds=5.0, rate=16000, peak=0.009)
            est = wada_snr(AudioBuffer(x, 16000)).snr_db
            errs.append(abs(est - snr))
            for gain in (0.01, 100.0):
                scaled = wada_snr(AudioBuffer(x * gain, 16000)).snr_db
                worst_scale = max(worst_scale, abs(scaled - est))
        maes[snr] = float(np.mean(errs))
    request.node.criterion_detail = (
        "MAE " + ", ".join(f"{k}dB:{v:.2f}" for k, v in maes.items())
        + f"; scale drift {worst_scale:.1e} dB")
    assert max(maes.values()) <= 2.5
    assert worst_scale <= 1e-6


@criterion("10. gating cleaned fraction matches known labels")
def test_gating_accounting(request, tmp_path):
    rng = np.random.default_rng(10)
    labels = []
    while len(labels) < 200:
        snr = float(rng.uniform(-15.0, 25.0))
        # estimates scatter by well under 3 dB at 2 s, so keep labels clear of the bounds
        if min(abs(snr + 5.0), abs(snr - 8.0)) > 3.0:
            labels.append(snr)
    src = tmp_path / "in"
    src.mkdir()
    files = []
    for k, snr in enumerate(labels):
        path = src / f"f{k:03d}.wav"
        with open(path, "wb") as fh:
            write_audio(speech_plus_noise(rng, snr, seconds=2.0), 16000, fh)
        files.append(path)
    true_frac = 100.0 * sum(-5.0 < s < 8.0 for s in labels) / len(labels)
    rep = enhance_dispatch(files, GateRange(-5.0, 8.0), "cp {in} {out}", tmp_path / "a", workers=4)
    rep_all = enhance_dispatch(files, GateRange(), "cp {in} {out}", tmp_path / "b", workers=4)
    request.node.criterion_detail = (f"(-5, 8): {rep.cleaned_fraction:.1f}% vs true {true_frac:.1f}%; "
                                     f"(-inf, inf): {rep_all.cleaned_fraction:.1f}%")
    assert rep.cleaned_fraction == true_frac
    assert rep_all.cleaned_fraction == 100.0
    assert all(f.status in ("enhanced", "passthrough") for f in rep.files)


@criterion("11. CTM, STM and ARPA round-trips")
def test_round_trips(request):
    ctm_fixtures = [DATA / "sample.ctm"]
    stm_fixtures = [DATA / "sample.stm"]
    rng = np.random.default_rng(11)
    generated = CtmFile(tuple(
        WordToken(f"rec{k % 3}", "1", round(float(rng.uniform(0, 300)), 3),
                  round(float(rng.uniform(0.01, 1.0)), 3), f"w{k}",
                  None if k % 4 == 0 else round(float(rng.uniform(0, 1)), 4))
        for k in range(100)))
    ctms = [parse_ctm(p.read_text(encoding="utf-8")) for p in ctm_fixtures] + [generated]
    for ctm in ctms:
        again = parse_ctm(write_ctm(ctm))
        assert len(again) == len(ctm)
        for a, b in zip(ctm, again):
            assert (a.recording_id, a.channel, a.word, a.confidence) == \
                   (b.recording_id, b.channel, b.word, b.confidence)
            assert round(a.start, 3) == b.start and round(a.duration, 3) == b.duration

    for p in stm_fixtures:
        segs = parse_stm(p.read_text(encoding="utf-8"))
        assert parse_stm(write_stm(segs)) == segs

    arpa_models = [read_arpa((DATA / "sample.arpa").read_text(encoding="utf-8")),
                   train(_random_corpus(rng), 3, "wb"), train(_random_corpus(rng), 5, "add_k")]
    worst = 0.0
    for m in arpa_models:
        again = read_arpa(write_arpa(m))
        assert set(again.entries) == set(m.entries)
        for key, (lp, bow) in m.entries.items():
            lp2, bow2 = again.entries[key]
            worst = max(worst, abs(lp - lp2), abs((bow or 0.0) - (bow2 or 0.0)))
    request.node.criterion_detail = f"{len(ctms)} CTM, {len(stm_fixtures)} STM, " \
                                    f"{len(arpa_models)} ARPA; worst log-prob drift {worst:.1e}"
    assert worst <= 1e-4
