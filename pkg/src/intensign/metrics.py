"""Text-generation metrics and significance statistics.

All scores live on a 0..100 scale. BLEU is corpus-level with clipped n-gram
precisions and the usual brevity penalty; ROUGE-L is the mean per-sentence
LCS F1. Kappa, bootstrap resampling and the paired permutation test cover
the agreement/significance side.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from intensign.autodiff import seeded_rng

Sentence = list


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses, references, max_n: int = 4, smooth: bool = False) -> dict[int, float]:
    """Corpus BLEU-1..max_n (cumulative, geometric mean over orders).

    With smoothing off (the default), a zero match count at any order zeroes
    that BLEU-n. `smooth` adds one to clipped counts and totals (Lin-Och).
    """
    hyp = [list(h) for h in hypotheses]
    ref = [list(r) for r in references]
    if not ref or not hyp:
        raise ValueError("bleu needs at least one hypothesis/reference pair")
    if len(hyp) != len(ref):
        raise ValueError(f"{len(hyp)} hypotheses vs {len(ref)} references")

    clipped = [0] * max_n
    totals = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for h, r in zip(hyp, ref):
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            counts = _ngrams(h, n)
            ref_counts = _ngrams(r, n)
            totals[n - 1] += max(len(h) - n + 1, 0)
            clipped[n - 1] += sum(min(c, ref_counts[g]) for g, c in counts.items())

    bp = 1.0 if hyp_len >= ref_len or hyp_len == 0 else math.exp(1.0 - ref_len / hyp_len)
    scores = {}
    for n in range(1, max_n + 1):
        log_sum = 0.0
        degenerate = False
        for k in range(n):
            c, t = clipped[k], totals[k]
            if smooth:
                c, t = c + 1, t + 1
            if c == 0 or t == 0:
                degenerate = True
                break
            log_sum += math.log(c / t)
        scores[n] = 0.0 if degenerate else 100.0 * bp * math.exp(log_sum / n)
    return scores


def _lcs_length(a, b) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        curr = [0]
        for j, y in enumerate(b, start=1):
            curr.append(prev[j - 1] + 1 if x == y else max(prev[j], curr[j - 1]))
        prev = curr
    return prev[-1]


def rouge_l(hypotheses, references) -> float:
    """Mean sentence-level LCS F1 (beta = 1), scaled to 0..100."""
    hyp = [list(h) for h in hypotheses]
    ref = [list(r) for r in references]
    if not ref or len(hyp) != len(ref):
        raise ValueError("rouge_l needs equal non-empty hypothesis/reference lists")
    f1s = []
    for h, r in zip(hyp, ref):
        if not h:
            warnings.warn("empty hypothesis sentence scores 0", stacklevel=2)
            f1s.append(0.0)
            continue
        lcs = _lcs_length(h, r)
        if lcs == 0:
            f1s.append(0.0)
            continue
        p = lcs / len(h)
        rr = lcs / len(r)
        f1s.append(2 * p * rr / (p + rr))
    return 100.0 * sum(f1s) / len(f1s)


def fleiss_kappa(ratings, chance: str = "uniform") -> float:
    """Chance-corrected multi-rater agreement from an item x category count matrix.

    Every row must sum to the same rater count n >= 2. `chance` picks the
    expected-agreement model: "uniform" treats all listed categories as
    equally likely (free-marginal kappa); "marginal" uses the observed
    category proportions (Fleiss' classic form). Returns kappa * 100; when
    every vote lands in a single category the statistic is undefined and NaN
    comes back with a warning.
    """
    m = np.asarray(ratings, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError("ratings must be a 2-D item x category matrix")
    n_raters = m[0].sum()
    if n_raters < 2:
        raise ValueError("need at least 2 raters per item")
    if not np.all(m.sum(axis=1) == n_raters):
        raise ValueError("every item must have the same number of ratings")

    p_obs = ((m * m).sum(axis=1) - n_raters) / (n_raters * (n_raters - 1))
    p_bar = p_obs.mean()
    column_mass = m.sum(axis=0)
    if np.count_nonzero(column_mass) <= 1:
        warnings.warn("all ratings fall in one category; kappa undefined", stacklevel=2)
        return float("nan")
    if chance == "uniform":
        p_e = 1.0 / m.shape[1]
    elif chance == "marginal":
        props = column_mass / column_mass.sum()
        p_e = float((props * props).sum())
    else:
        raise ValueError(f"unknown chance model {chance!r}")
    if p_e >= 1.0:
        warnings.warn("expected agreement is 1; kappa undefined", stacklevel=2)
        return float("nan")
    return 100.0 * (p_bar - p_e) / (1.0 - p_e)


def bootstrap_significance(hyp_baseline, hyp_system, references, metric=None,
                           resamples: int = 1000, seed: int = 0):
    """Paired bootstrap: p = fraction of resamples where the system fails to beat
    the baseline on the corpus metric. Returns (p, significant@90, significant@95).
    """
    if metric is None:
        metric = lambda h, r: bleu(h, r)[4]
    base = [list(h) for h in hyp_baseline]
    sys = [list(h) for h in hyp_system]
    refs = [list(r) for r in references]
    n = len(refs)
    if not (len(base) == len(sys) == n):
        raise ValueError("paired bootstrap needs aligned hypothesis/reference lists")
    if n < 2:
        raise ValueError("need at least 2 sentences to resample")
    rng = seeded_rng(seed, "bootstrap")
    failures = 0
    for _ in range(resamples):
        idx = rng.integers(0, n, size=n)
        score_base = metric([base[i] for i in idx], [refs[i] for i in idx])
        score_sys = metric([sys[i] for i in idx], [refs[i] for i in idx])
        if score_sys <= score_base:
            failures += 1
    p = failures / resamples
    return p, p < 0.10, p < 0.05


def permutation_test(pred_a, pred_b, gold, metric=None, permutations: int = 10000,
                     seed: int = 0) -> float:
    """Paired label-swap permutation test on the metric difference of two systems."""
    if metric is None:
        metric = lambda pred, ref: float(np.mean([p == g for p, g in zip(pred, ref)]))
    a = list(pred_a)
    b = list(pred_b)
    g = list(gold)
    if not (len(a) == len(b) == len(g)):
        raise ValueError("prediction lists must align with gold")
    observed = abs(metric(a, g) - metric(b, g))
    rng = seeded_rng(seed, "permutation")
    n = len(a)
    hits = 0
    for _ in range(permutations):
        flips = rng.random(n) < 0.5
        pa = [b[i] if flips[i] else a[i] for i in range(n)]
        pb = [a[i] if flips[i] else b[i] for i in range(n)]
        if abs(metric(pa, g) - metric(pb, g)) >= observed:
            hits += 1
    return (hits + 1) / (permutations + 1)


def modifier_density(pos_tagged_texts) -> float:
    """Mean adjectives+adverbs per sentence over POS-tagged token lists."""
    texts = list(pos_tagged_texts)
    if not texts:
        raise ValueError("no sentences given")
    counts = []
    for tags in texts:
        if tags is None:
            raise ValueError("every sentence needs POS tags")
        counts.append(sum(1 for t in tags if t.upper().startswith(("ADJ", "ADV"))))
    return float(np.mean(counts))


@dataclass
class ScoreRow:
    subset: str
    n_sentences: int
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge_l: float
    p_value: float | None = None
    significant_90: bool | None = None
    significant_95: bool | None = None


@dataclass
class ScoreReport:
    """Metric values per data subset with optional significance annotations."""

    rows: list[ScoreRow] = field(default_factory=list)

    def add(self, subset, hypotheses, references, baseline=None, seed=0, resamples=1000):
        b = bleu(hypotheses, references)
        row = ScoreRow(subset, len(list(references)), b[1], b[2], b[3], b[4],
                       rouge_l(hypotheses, references))
        if baseline is not None:
            row.p_value, row.significant_90, row.significant_95 = bootstrap_significance(
                baseline, hypotheses, references,
                metric=lambda h, r: bleu(h, r)[1], seed=seed, resamples=resamples)
        self.rows.append(row)
        return row

    def to_json(self) -> str:
        return json.dumps([vars(r) for r in self.rows], indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        fields = ["subset", "n_sentences", "bleu1", "bleu2", "bleu3", "bleu4",
                  "rouge_l", "p_value", "significant_90", "significant_95"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for r in self.rows:
                writer.writerow({k: vars(r)[k] for k in fields})

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")


def read_sentence_file(path) -> list[list[str]]:
    """One space-tokenized sentence per line."""
    with open(path, encoding="utf-8") as fh:
        return [line.split() for line in fh.read().splitlines()]


def write_sentence_file(path, sentences) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sentences:
            fh.write(" ".join(s) + "\n")
