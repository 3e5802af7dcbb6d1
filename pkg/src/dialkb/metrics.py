"""Detection, selection and generation metrics, plus a paired t-test.

Generation metrics share one tokenization: lowercase, punctuation split off
as separate tokens, whitespace separated. METEOR here is exact-match only
(no stemming or synonyms) and is reported as ``meteor_lite``.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import stdtr

from .errors import AlignmentError

_TOKEN = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def _check_aligned(a, b, what="inputs"):
    if len(a) != len(b):
        raise AlignmentError(f"{what} have different lengths: {len(a)} vs {len(b)}")


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class DetectionReport:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    precision_defined: bool = True
    recall_defined: bool = True

    def to_json(self) -> dict:
        return asdict(self)


def detection_metrics(preds: Sequence[bool], golds: Sequence[bool]) -> DetectionReport:
    """P/R/F1 on the positive class; an undefined P or R is reported as 0 and flagged."""
    _check_aligned(preds, golds, "predictions and golds")
    if not len(preds):
        raise ValueError("need at least one sample")
    p = np.asarray(preds, dtype=bool)
    g = np.asarray(golds, dtype=bool)
    tp = int(np.sum(p & g))
    fp = int(np.sum(p & ~g))
    fn = int(np.sum(~p & g))
    tn = int(np.sum(~p & ~g))
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    return DetectionReport(prec, rec, f1_score(prec, rec), tp, fp, fn, tn, tp + fp > 0, tp + fn > 0)


@dataclass(frozen=True)
class SelectionReport:
    mrr_at_5: float
    recall_at_1: float
    recall_at_5: float
    n: int

    def to_json(self) -> dict:
        return asdict(self)


def first_gold_rank(ranked: Sequence, golds) -> int | None:
    """1-based position of the first ranked ref found in ``golds``."""
    gold_set = set(golds)
    for pos, ref in enumerate(ranked, 1):
        if ref in gold_set:
            return pos
    return None


def _refs_of(ranked):
    refs = getattr(ranked, "refs", None)
    return refs if refs is not None else list(ranked)


def selection_metrics(ranked: Sequence, golds: Sequence[Sequence]) -> SelectionReport:
    """Any listed gold ref counts as correct; ranks beyond 5 score zero."""
    _check_aligned(ranked, golds, "rankings and golds")
    n = len(ranked)
    if n == 0:
        return SelectionReport(0.0, 0.0, 0.0, 0)
    mrr = r1 = r5 = 0.0
    for cands, gold in zip(ranked, golds):
        r = first_gold_rank(_refs_of(cands), gold)
        if r is None:
            continue
        if r <= 5:
            mrr += 1.0 / r
            r5 += 1.0
        if r == 1:
            r1 += 1.0
    return SelectionReport(mrr / n, r1 / n, r5 / n, n)


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def sentence_bleu(hyp: str, refs: Sequence[str], max_n: int = 4) -> list[float]:
    """Cumulative BLEU-1..max_n for one hypothesis.

    Clipped n-gram precision; for n >= 2 a zero match count becomes
    1/(total+1). Brevity penalty uses the closest reference length, the
    shorter one on ties.
    """
    if isinstance(refs, str):
        refs = [refs]
    h = tokenize(hyp)
    rs = [tokenize(r) for r in refs]
    if not h or not rs:
        return [0.0] * max_n
    log_p = []
    for n in range(1, max_n + 1):
        counts = _ngrams(h, n)
        max_ref: Counter = Counter()
        for r in rs:
            for g, c in _ngrams(r, n).items():
                if c > max_ref[g]:
                    max_ref[g] = c
        matched = sum(min(c, max_ref[g]) for g, c in counts.items())
        total = max(len(h) - n + 1, 0)
        if n >= 2 and matched == 0:
            p = 1.0 / (total + 1)
        else:
            p = matched / total if total else 0.0
        log_p.append(math.log(p) if p > 0 else -math.inf)
    c = len(h)
    r = min((len(x) for x in rs), key=lambda L: (abs(L - c), L))
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    out = []
    for k in range(1, max_n + 1):
        s = sum(log_p[:k]) / k
        out.append(bp * math.exp(s) if s > -math.inf else 0.0)
    return out


def bleu(hyps, refs, max_n: int = 4) -> list[float]:
    """Mean sentence BLEU over a corpus; accepts a single hyp/ref-list pair too."""
    if isinstance(hyps, str):
        return sentence_bleu(hyps, refs, max_n)
    _check_aligned(hyps, refs, "hypotheses and references")
    if not hyps:
        return [0.0] * max_n
    rows = [sentence_bleu(h, r, max_n) for h, r in zip(hyps, refs)]
    return [float(v) for v in np.mean(rows, axis=0)]


def lcs_length(a: Sequence, b: Sequence) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge(hyp: str, ref: str) -> tuple[float, float, float]:
    """(ROUGE-1, ROUGE-2, ROUGE-L) F1 scores."""
    h, r = tokenize(hyp), tokenize(ref)
    out = []
    for n in (1, 2):
        hc, rc = _ngrams(h, n), _ngrams(r, n)
        overlap = sum((hc & rc).values())
        nh, nr = sum(hc.values()), sum(rc.values())
        out.append(f1_score(overlap / nh, overlap / nr) if overlap else 0.0)
    lcs = lcs_length(h, r)
    out.append(f1_score(lcs / len(h), lcs / len(r)) if lcs else 0.0)
    return tuple(out)


def _min_chunk_alignment(h: Sequence[str], r: Sequence[str]) -> tuple[int, int]:
    """(matches, chunks) over one-to-one exact alignments.

    Among alignments with the maximum number of matches, picks the one with
    the fewest chunks (runs adjacent in both hypothesis and reference).
    """
    hc, rc = Counter(h), Counter(r)
    quota = {w: min(hc[w], rc[w]) for w in hc if w in rc}
    total = sum(quota.values())
    if total == 0:
        return 0, 0
    ref_pos = {w: [j for j, x in enumerate(r) if x == w] for w in quota}
    suffix = [Counter() for _ in range(len(h) + 1)]
    for i in range(len(h) - 1, -1, -1):
        suffix[i] = suffix[i + 1].copy()
        suffix[i][h[i]] += 1

    @lru_cache(maxsize=None)
    def best(i: int, prev: int, used: int) -> float:
        if i == len(h):
            return 0.0
        w = h[i]
        if w not in quota:
            return best(i + 1, -2, used)
        done = sum(1 for j in ref_pos[w] if used >> j & 1)
        need = quota[w] - done
        result = math.inf
        # leave h[i] unmatched only if later copies can still meet the quota
        if suffix[i + 1][w] >= need:
            result = best(i + 1, -2, used)
        if need > 0:
            for j in ref_pos[w]:
                if not used >> j & 1:
                    cost = 0 if prev >= 0 and j == prev + 1 else 1
                    result = min(result, cost + best(i + 1, j, used | (1 << j)))
        return result

    chunks = best(0, -2, 0)
    best.cache_clear()
    return total, int(chunks)


def meteor_lite(hyp: str, ref: str) -> float:
    h, r = tokenize(hyp), tokenize(ref)
    if not h or not r:
        return 0.0
    m, chunks = _min_chunk_alignment(h, r)
    if m == 0:
        return 0.0
    p, rec = m / len(h), m / len(r)
    fmean = 10 * p * rec / (rec + 9 * p)
    penalty = 0.5 * (chunks / m) ** 3
    return fmean * (1 - penalty)


@dataclass(frozen=True)
class GenerationReport:
    bleu_1: float
    bleu_2: float
    bleu_3: float
    bleu_4: float
    meteor: float
    rouge_1: float
    rouge_2: float
    rouge_l: float
    n: int = 0

    def to_json(self) -> dict:
        return asdict(self)


def generation_metrics(hyps: Sequence[str], refs: Sequence[str]) -> GenerationReport:
    _check_aligned(hyps, refs, "hypotheses and references")
    if not hyps:
        return GenerationReport(0, 0, 0, 0, 0, 0, 0, 0, 0)
    b = bleu(list(hyps), [[r] for r in refs], 4)
    rg = np.mean([rouge(h, r) for h, r in zip(hyps, refs)], axis=0)
    met = float(np.mean([meteor_lite(h, r) for h, r in zip(hyps, refs)]))
    return GenerationReport(*b, met, float(rg[0]), float(rg[1]), float(rg[2]), len(hyps))


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sided paired t-test on a - b.

    Zero-variance differences: mean 0 gives (0, 1); otherwise (+-inf, 0).
    """
    _check_aligned(a, b, "samples")
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    n = len(d)
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), 0.0
    t = mean / (sd / math.sqrt(n))
    p = float(2.0 * stdtr(n - 1, -abs(t)))
    return t, min(p, 1.0)


def format_report(report: dict) -> str:
    """Human-readable two-column table of a (possibly nested) report dict."""
    lines = []

    def walk(prefix, obj):
        if isinstance(obj, dict):
            for k, v in obj.items():
                walk(f"{prefix}.{k}" if prefix else str(k), v)
        elif isinstance(obj, float):
            lines.append(f"{prefix:<40}{obj:>12.4f}")
        else:
            lines.append(f"{prefix:<40}{str(obj):>12}")

    walk("", report)
    return "\n".join(lines) + "\n"
