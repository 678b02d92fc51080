"""Brute-force reference implementations used only by the tests.

Each oracle is written from the definitions directly, avoiding the package's
code paths: plain loops, math module calls, exhaustive enumeration.
"""

import itertools
import math


def polar_coords(k, r):
    """(y, x) sampled for angle row k and radius r of a 512x512 patch."""
    deg = k * 360.0 / 180.0
    return 256.0 + r * math.sin(math.radians(deg)), 256.0 + r * math.cos(math.radians(deg))


def bilinear(img, y, x):
    """Clamped bilinear sample of a 2-d list/array at (row y, col x)."""
    h, w = len(img), len(img[0])
    y = min(max(y, 0.0), h - 1.0)
    x = min(max(x, 0.0), w - 1.0)
    i, j = int(math.floor(y)), int(math.floor(x))
    i1, j1 = min(i + 1, h - 1), min(j + 1, w - 1)
    fy, fx = y - i, x - j
    return ((1 - fy) * ((1 - fx) * img[i][j] + fx * img[i][j1])
            + fy * ((1 - fx) * img[i1][j] + fx * img[i1][j1]))


def box_iou(a, b):
    """IoU of (x, y, w, h) tuples by explicit corner arithmetic."""
    ax1, ay1, ax2, ay2 = a[0], a[1], a[0] + a[2], a[1] + a[3]
    bx1, by1, bx2, by2 = b[0], b[1], b[0] + b[2], b[1] + b[3]
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union


def boxes_overlap(a, b):
    return (max(a[0], b[0]) < min(a[0] + a[2], b[0] + b[2])
            and max(a[1], b[1]) < min(a[1] + a[3], b[1] + b[3]))


# -- tracklet merging --------------------------------------------------------------
# A tracklet is a tuple of (slice, x, y, w, h, score, interpolated) records.

def _loss(a, b, weights):
    la, fb = a[-1], b[0]
    gap = fb[0] - la[0] - 1
    l2 = 1.0 - box_iou(la[1:5], fb[1:5])
    l3 = abs(math.log(fb[3] / la[3])) + abs(math.log(fb[4] / la[4]))
    return weights[0] * gap + weights[1] * l2 + weights[2] * l3, gap


def _fill(boxes):
    out = [boxes[0]]
    for lo, hi in zip(boxes, boxes[1:]):
        n = hi[0] - lo[0]
        for s in range(1, n):
            t = s / n
            cx = (lo[1] + lo[3] / 2) * (1 - t) + (hi[1] + hi[3] / 2) * t
            cy = (lo[2] + lo[4] / 2) * (1 - t) + (hi[2] + hi[4] / 2) * t
            w = lo[3] * (1 - t) + hi[3] * t
            h = lo[4] * (1 - t) + hi[4] * t
            out.append((lo[0] + s, cx - w / 2, cy - h / 2, w, h, 0.0, True))
        out.append(hi)
    return tuple(out)


def merge_oracle(tracklets, weights, max_gap, loss_max):
    """Repeat: enumerate every ordered pair, find each tracklet's cheapest
    successor and predecessor by exhaustive min, join all mutual pairs."""
    ts = [tuple(t) for t in tracklets]
    while True:
        cands = {}
        for i, j in itertools.permutations(range(len(ts)), 2):
            a, b = ts[i], ts[j]
            if a[-1][0] >= b[0][0]:
                continue
            total, gap = _loss(a, b, weights)
            if gap <= max_gap and total <= loss_max:
                cands[(i, j)] = (total, gap)
        if not cands:
            return ts
        succ, pred = {}, {}
        for i in range(len(ts)):
            opts = [(v[0], v[1], ts[j][0][0], j) for (ii, j), v in cands.items() if ii == i]
            if opts:
                succ[i] = min(opts)[3]
            opts = [(v[0], v[1], ts[ii][0][0], ii) for (ii, j), v in cands.items() if j == i]
            if opts:
                pred[i] = min(opts)[3]
        pairs = [(i, j) for i, j in succ.items() if pred.get(j) == i]
        if not pairs:
            return ts
        # glue pairs one at a time; order does not matter for chains
        groups = {i: [i] for i in range(len(ts))}
        owner = {i: i for i in range(len(ts))}
        for i, j in pairs:
            gi, gj = owner[i], owner[j]
            groups[gi] = groups[gi] + groups[gj]
            for m in groups[gj]:
                owner[m] = gi
            del groups[gj]
        merged = []
        for members in groups.values():
            boxes = sorted((bx for m in members for bx in ts[m]), key=lambda r: r[0])
            merged.append(_fill(boxes))
        ts = merged


# -- metrics -----------------------------------------------------------------------

def dice_oracle(a, b):
    inter = sa = sb = 0
    for x, y in zip(a.ravel().tolist(), b.ravel().tolist()):
        sa += bool(x)
        sb += bool(y)
        inter += bool(x) and bool(y)
    if sa + sb == 0:
        return 1.0
    return 2.0 * inter / (sa + sb)


def iou_mask_oracle(a, b):
    inter = union = 0
    for x, y in zip(a.ravel().tolist(), b.ravel().tolist()):
        inter += bool(x) and bool(y)
        union += bool(x) or bool(y)
    return inter / union if union else 1.0


def pearson_oracle(xs, ys):
    n = len(xs)
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    sxy = math.fsum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = math.fsum((x - mx) ** 2 for x in xs)
    syy = math.fsum((y - my) ** 2 for y in ys)
    return sxy / math.sqrt(sxx * syy)


def area_oracle(mask, dx, dy):
    return sum(1 for v in mask.ravel().tolist() if v) * dx * dy


def segconf_oracle(p, mask):
    num = 0.0
    n = 0
    for pv, mv in zip(p.ravel().tolist(), mask.ravel().tolist()):
        num += pv if mv else -pv
        n += bool(mv)
    return num / n


def circle_radii(a, b, R, degrees):
    """Distance from the origin to a circle of radius R centered at (a, b)
    along each direction (origin inside the circle)."""
    out = []
    for d in degrees:
        ux, uy = math.cos(math.radians(d)), math.sin(math.radians(d))
        proj = a * ux + b * uy
        out.append(proj + math.sqrt(proj * proj - (a * a + b * b - R * R)))
    return out
