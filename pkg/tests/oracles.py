"""Slow, independent reference implementations used to freeze expected values.

Nothing here imports the package under test except plain data containers.
"""
from __future__ import annotations

import itertools
import math
from fractions import Fraction


def box_iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def greedy_hits(dets, gts, thr):
    """dets: list of (image, class, box, conf); gts: list of (image, class, box).

    Returns a hit flag per detection in the given order. Detections are
    visited by descending confidence (input order breaks ties); each takes the
    highest-IoU free GT of its image and class, the earliest GT on IoU ties.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][3], i))
    taken = set()
    hits = [False] * len(dets)
    for i in order:
        img, cls, box, _ = dets[i]
        best, best_v = None, None
        for j, (gimg, gcls, gbox) in enumerate(gts):
            if j in taken or gimg != img or gcls != cls:
                continue
            v = box_iou(box, gbox)
            if v >= thr and (best_v is None or v > best_v):
                best, best_v = j, v
        if best is not None:
            taken.add(best)
            hits[i] = True
    return hits


def brute_ap(dets, gts, cls, thr) -> float:
    """All-point interpolated AP from an explicit PR-point enumeration."""
    cd = [d for d in dets if d[1] == cls]
    cg = [g for g in gts if g[1] == cls]
    if not cd:
        return 0.0
    hits = greedy_hits(cd, cg, thr)
    order = sorted(range(len(cd)), key=lambda i: (-cd[i][3], i))
    points = []  # (recall, precision) after each cutoff
    for cut in range(1, len(order) + 1):
        tp = sum(1 for i in order[:cut] if hits[i])
        points.append((tp / len(cg), tp / cut))
    ap = 0.0
    prev_r = 0.0
    for r, _ in points:
        if r > prev_r:
            p_interp = max(p for rr, p in points if rr >= r)
            ap += (r - prev_r) * p_interp
            prev_r = r
    return ap


def brute_map(dets, gts, thresholds):
    classes = sorted({g[1] for g in gts})
    per = {c: sum(brute_ap(dets, gts, c, t) for t in thresholds) / len(thresholds) for c in classes}
    per50 = {c: brute_ap(dets, gts, c, 0.5) for c in classes}
    return sum(per.values()) / len(per), sum(per50.values()) / len(per50)


def pixel_miou(pairs, num_classes, ignore=None):
    """pairs: list of (pred, gt) nested lists. Exact Fraction result or None."""
    inter = [0] * num_classes
    union = [0] * num_classes
    present = [False] * num_classes
    for pred, gt in pairs:
        for prow, grow in zip(pred, gt):
            for p, g in zip(prow, grow):
                if ignore is not None and g == ignore:
                    continue
                for c in range(num_classes):
                    pc, gc = p == c, g == c
                    if pc and gc:
                        inter[c] += 1
                    if pc or gc:
                        union[c] += 1
                if g < num_classes:
                    present[g] = True
    cs = [c for c in range(num_classes) if present[c]]
    if not cs:
        return None
    return sum(Fraction(inter[c], union[c]) for c in cs) / len(cs)


def wilcoxon_enumerated(ranks):
    """Counts of 2*W+ over every sign assignment."""
    dist = {}
    for signs in itertools.product((0, 1), repeat=len(ranks)):
        w2 = int(round(2 * sum(r for r, s in zip(ranks, signs) if s)))
        dist[w2] = dist.get(w2, 0) + 1
    return dist


def fog_pixel(value_u8, airlight, beta, depth) -> float:
    """One channel in [0,1] before quantization, in double precision."""
    t = math.exp(-beta * depth)
    return value_u8 / 255.0 * t + airlight * (1.0 - t)
