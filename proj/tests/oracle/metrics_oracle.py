#!/usr/bin/env python3
"""Independent reference scorer for the metric cross-check fixtures.

BLEU follows Papineni et al. 2002: corpus-level clipped n-gram precision up
to 4-grams, geometric mean, brevity penalty, no smoothing (any zero n-gram
precision gives 0). Tokens are whitespace-delimited as given.

chrF++ follows Popovic 2017: character n-grams up to 6 on space-stripped
text plus word n-grams up to 2 (one leading/trailing punctuation mark split
per token), beta = 2. Corpus scores aggregate match/total counts per order;
precision and recall are averaged over all orders (an order whose denominator
is empty contributes 0) and combined in a single F-score.

Usage: metrics_oracle.py HYp_FILE REF_FILE  -> prints bleu / bleu_lc / chrfpp
"""
import math
import string
import sys
from collections import Counter


def ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hyps, refs, lowercase=False):
    assert len(hyps) == len(refs) and hyps
    match = [0] * 4
    total = [0] * 4
    hyp_len = ref_len = 0
    for h, r in zip(hyps, refs):
        if lowercase:
            h, r = h.lower(), r.lower()
        ht, rt = h.split(), r.split()
        hyp_len += len(ht)
        ref_len += len(rt)
        for n in range(1, 5):
            hc, rc = ngrams(ht, n), ngrams(rt, n)
            match[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            total[n - 1] += max(len(ht) - n + 1, 0)
    if any(m == 0 or t == 0 for m, t in zip(match, total)):
        return 0.0
    logp = sum(math.log(m / t) for m, t in zip(match, total)) / 4.0
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(logp)


def punct_split(line):
    out = []
    for w in line.split():
        if len(w) > 1 and w[-1] in string.punctuation:
            out += [w[:-1], w[-1]]
        elif len(w) > 1 and w[0] in string.punctuation:
            out += [w[0], w[1:]]
        else:
            out.append(w)
    return out


def chrf_pp(hyps, refs, beta=2.0):
    assert len(hyps) == len(refs) and hyps
    orders = [("char", n) for n in range(1, 7)] + [("word", n) for n in range(1, 3)]
    match = Counter()
    hyp_total = Counter()
    ref_total = Counter()
    for h, r in zip(hyps, refs):
        hc = [c for c in h if not c.isspace()]
        rc = [c for c in r if not c.isspace()]
        hw, rw = punct_split(h), punct_split(r)
        for kind, n in orders:
            hseq, rseq = (hc, rc) if kind == "char" else (hw, rw)
            hg, rg = ngrams(hseq, n), ngrams(rseq, n)
            match[(kind, n)] += sum(min(c, rg[g]) for g, c in hg.items())
            hyp_total[(kind, n)] += max(len(hseq) - n + 1, 0)
            ref_total[(kind, n)] += max(len(rseq) - n + 1, 0)
    prec = sum(match[o] / hyp_total[o] if hyp_total[o] else 0.0 for o in orders) / len(orders)
    rec = sum(match[o] / ref_total[o] if ref_total[o] else 0.0 for o in orders) / len(orders)
    denom = beta * beta * prec + rec
    if denom <= 0:
        return 0.0
    return 100.0 * (1 + beta * beta) * prec * rec / denom


def main():
    hyp_path, ref_path = sys.argv[1], sys.argv[2]
    with open(hyp_path) as f:
        hyps = [l.rstrip("\n") for l in f if l.strip()]
    with open(ref_path) as f:
        refs = [l.rstrip("\n") for l in f if l.strip()]
    print(f"bleu={bleu(hyps, refs):.6f}")
    print(f"bleu_lc={bleu(hyps, refs, lowercase=True):.6f}")
    print(f"chrfpp={chrf_pp(hyps, refs):.6f}")


if __name__ == "__main__":
    main()
