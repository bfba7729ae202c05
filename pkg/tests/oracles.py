"""Brute-force reference computations used to check the dynamic programmes.

Nothing here shares code with the package: an alignment is enumerated as a
set of increasing (ref, hyp) index pairs; everything left over is a deletion
or an insertion.
"""

import itertools
import math


def brute_alignment_cost(n, m, pair_cost, del_cost, ins_cost):
    """Minimum over all edit scripts, enumerated as chains of aligned pairs."""
    best = math.inf
    for k in range(min(n, m) + 1):
        rest = del_cost * (n - k) + ins_cost * (m - k)
        if rest >= best:
            continue
        for rows in itertools.combinations(range(n), k):
            for cols in itertools.combinations(range(m), k):
                c = rest
                for i, j in zip(rows, cols):
                    c += pair_cost(i, j)
                    if c >= best:
                        break
                if c < best:
                    best = c
    return best


def brute_edit_cost(ref, hyp, sub=4.0, ins=3.0, dele=3.0):
    return brute_alignment_cost(len(ref), len(hyp),
                                lambda i, j: 0.0 if ref[i] == hyp[j] else sub, dele, ins)


def levenshtein(a, b):
    """Textbook unit-cost edit distance (recursive, memoized)."""
    from functools import lru_cache

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def all_paths(slots):
    """Every word sequence a confusion network can emit (epsilon = None)."""
    for choice in itertools.product(*[[w for w, _ in slot] for slot in slots]):
        yield [w for w in choice if w is not None]


def brute_merge_cost(sets, hyp, sub=4.0, ins=3.0, dele=3.0, max_gap=2.0):
    """ROVER merge cost of ``hyp`` (list of (word, midpoint)) into ``sets``.

    ``sets`` is a list of (words_in_set, representative_time).
    """
    def pair(i, j):
        words, t = sets[i]
        w, mid = hyp[j]
        if abs(t - mid) >= max_gap:
            return math.inf
        return 0.0 if w in words else sub

    return brute_alignment_cost(len(sets), len(hyp), pair, dele, ins)


def unit_wer_counts(ref, hyp):
    """(errors, n_ref) under unit costs, via Levenshtein."""
    return levenshtein(tuple(ref), tuple(hyp)), len(ref)
