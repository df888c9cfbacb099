"""Brute-force reference implementations of the contrastive losses.

Plain Python loops over anchors, positives and denominator terms. Nothing
here is shared with :mod:`cddg.losses`; the two routes exist to check
each other.
"""

import math


def _rows(z):
    if hasattr(z, "detach"):
        z = z.detach().cpu().double().tolist()
    elif hasattr(z, "tolist"):
        z = z.tolist()
    return [[float(v) for v in row] for row in z]


def _ints(labels):
    if hasattr(labels, "tolist"):
        labels = labels.tolist()
    return [int(v) for v in labels]


def _dot(a, b):
    total = 0.0
    for x, y in zip(a, b):
        total += x * y
    return total


def _anchor_term(rows, i, positives, denominator, temperature):
    sims = {a: _dot(rows[i], rows[a]) / temperature for a in denominator}
    top = max(sims.values())
    acc = 0.0
    for a in denominator:
        acc += math.exp(sims[a] - top)
    log_denom = top + math.log(acc)
    total = 0.0
    for p in positives:
        total += sims[p] - log_denom
    return -total / len(positives)


def _check(rows, labels, temperature, tol=1e-6):
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    if len(rows) != len(labels):
        raise ValueError("rows and labels differ in length")
    if len(rows) < 2:
        raise ValueError("need at least 2 rows")
    for row in rows:
        if abs(math.sqrt(_dot(row, row)) - 1.0) > tol:
            raise ValueError("rows must be unit-norm")


def oracle_scl(z, labels, temperature):
    rows, labels = _rows(z), _ints(labels)
    _check(rows, labels, temperature)
    terms = []
    for i in range(len(rows)):
        others = [a for a in range(len(rows)) if a != i]
        positives = [p for p in others if labels[p] == labels[i]]
        if positives:
            terms.append(_anchor_term(rows, i, positives, others, temperature))
    if not terms:
        return 0.0
    return sum(terms) / len(terms)


def oracle_dscl_comb(z_v, z_s, class_labels, domain_labels, num_classes, temperature):
    rows = _rows(z_v) + _rows(z_s)
    labels = _ints(class_labels) + [num_classes + d for d in _ints(domain_labels)]
    return oracle_scl(rows, labels, temperature)


def oracle_dscl_ind(z_v, z_s, class_labels, domain_labels, temperature):
    v_rows, s_rows = _rows(z_v), _rows(z_s)
    y, yd = _ints(class_labels), _ints(domain_labels)
    _check(v_rows, y, temperature)
    _check(s_rows, yd, temperature)
    n = len(s_rows)
    # indices 0..n-1 are S, n..2n-1 are V
    rows = s_rows + v_rows

    def part(own_offset, own_labels, other_offset):
        terms = []
        for k in range(n):
            i = own_offset + k
            denominator = [own_offset + j for j in range(n) if j != k]
            denominator += [other_offset + j for j in range(n)]
            positives = [own_offset + j for j in range(n) if j != k and own_labels[j] == own_labels[k]]
            if positives:
                terms.append(_anchor_term(rows, i, positives, denominator, temperature))
        return sum(terms) / len(terms) if terms else 0.0

    return part(0, yd, n) + part(n, y, 0)
