"""Brute-force reference scorers, written independently of the package.

Counts are recomputed with plain nested loops over lists (no set algebra) so
the fast implementations can be checked against them on randomized
instances. The final precision/recall/F1 arithmetic uses the same defining
formulas so exact float equality is meaningful.
"""

from __future__ import annotations


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def brute_force_sets(
    gold: list[tuple[str, list]], pred: list[tuple[str, list]]
) -> tuple[float, float, float, tuple[int, int, int]]:
    """Reference micro P/R/F1 over per-sentence item lists (terms or pairs)."""
    pred_by_id = {}
    for sid, items in pred:
        pred_by_id[sid] = list(items)
    tp = 0
    fp = 0
    fn = 0
    for sid, gold_items in gold:
        gold_items = list(gold_items)
        pred_items = pred_by_id[sid]
        for item in pred_items:
            found = False
            for g in gold_items:
                if item == g:
                    found = True
                    break
            if found:
                tp += 1
            else:
                fp += 1
        for g in gold_items:
            found = False
            for item in pred_items:
                if item == g:
                    found = True
                    break
            if not found:
                fn += 1
    precision, recall, f1 = _prf(tp, fp, fn)
    return precision, recall, f1, (tp, fp, fn)


def random_set_instance(rng, n_sentences: int = 8):
    """One randomized extraction instance: per-sentence gold/pred term lists."""
    alphabet = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta"]
    gold = []
    pred = []
    for i in range(n_sentences):
        sid = f"s{i}"
        gold_terms = rng.sample(alphabet, rng.randint(0, 5))
        pred_terms = rng.sample(alphabet, rng.randint(0, 5))
        gold.append((sid, gold_terms))
        pred.append((sid, pred_terms))
    return gold, pred


def random_pair_instance(rng, n_sentences: int = 8):
    alphabet = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta"]
    labels = ["positive", "negative", "neutral"]
    gold = []
    pred = []
    for i in range(n_sentences):
        sid = f"s{i}"
        gold_pairs = [(t, rng.choice(labels)) for t in rng.sample(alphabet, rng.randint(0, 5))]
        pred_pairs = [(t, rng.choice(labels)) for t in rng.sample(alphabet, rng.randint(0, 5))]
        gold.append((sid, gold_pairs))
        pred.append((sid, pred_pairs))
    return gold, pred


def random_label_instance(rng, n_samples: int = 12):
    labels = ["positive", "negative", "neutral"]
    gold = [rng.choice(labels) for _ in range(n_samples)]
    pred = [rng.choice(labels + ["invalid"]) for _ in range(n_samples)]
    return gold, pred


def brute_force_atsc(
    gold_labels: list[str], pred_labels: list[str]
) -> tuple[float, float, float, float]:
    """Reference accuracy plus macro P/R/F1 over the three polarity classes."""
    n = len(gold_labels)
    correct = 0
    for g, p in zip(gold_labels, pred_labels):
        if g == p:
            correct += 1
    accuracy = correct / n if n else 0.0

    classes = ["positive", "negative", "neutral"]
    precisions = []
    recalls = []
    f1s = []
    for cls in classes:
        tp = 0
        fp = 0
        fn = 0
        for g, p in zip(gold_labels, pred_labels):
            if g == cls and p == cls:
                tp += 1
            if g != cls and p == cls:
                fp += 1
            if g == cls and p != cls:
                fn += 1
        p_c, r_c, f_c = _prf(tp, fp, fn)
        precisions.append(p_c)
        recalls.append(r_c)
        f1s.append(f_c)
    return (
        accuracy,
        sum(precisions) / len(precisions),
        sum(recalls) / len(recalls),
        sum(f1s) / len(f1s),
    )
