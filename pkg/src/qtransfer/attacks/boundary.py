"""Decision-based boundary attack.

The search sees the model only through ``oracle(batch) -> labels``; no
gradients are available to it.
"""
from __future__ import annotations

import numpy as np

from ..nn import predict
from .base import assemble, prepare, sample_rng
from .params import AttackConfig, BaParams


def _adapt(step: float, rate: float, p: BaParams, cap: float = np.inf) -> float:
    if rate < p.low:
        step *= p.adapt_down
    elif rate > p.high:
        step *= p.adapt_up
    return min(step, cap)


def orthogonal_proposal(x, x0, step, rng):
    """Random step orthogonal to ``x0 - x``, rescaled back onto the sphere
    of radius ``|x - x0|`` around ``x0`` and clipped to the unit box.

    Clipping moves every coordinate towards ``x0``'s (which lies in the box),
    so the result is never farther from ``x0`` than ``x`` was.
    """
    diff = (x0 - x).ravel()
    d = np.linalg.norm(diff)
    eta = rng.standard_normal(diff.shape)
    eta *= step * d / np.linalg.norm(eta)
    u = diff / d
    eta -= (eta @ u) * u
    p = x.ravel() + eta - x0.ravel()
    p = x0.ravel() + p * (d / np.linalg.norm(p))
    return np.clip(p, 0.0, 1.0).reshape(x.shape)


def _dist(a, b) -> float:
    return float(np.linalg.norm(a.astype(np.float64).ravel() - b.astype(np.float64).ravel()))


def _initial(oracle, x0, y, p: BaParams, rng):
    """First uniform-noise image the oracle labels differently from ``y``, or None."""
    drawn = 0
    while drawn < p.init_trials:
        k = min(p.window, p.init_trials - drawn)
        noise = rng.uniform(0.0, 1.0, size=(k,) + x0.shape).astype(np.float32)
        drawn += k
        hits = np.flatnonzero(oracle(noise) != y)
        if hits.size:
            return noise[hits[0]]
    return None


def _blend(oracle, x0, start, y, tol):
    """Binary search on the segment from ``x0`` to ``start`` for the adversarial
    point closest to ``x0``."""
    lo, hi = 0.0, 1.0
    best = start
    while hi - lo > tol:
        mid = (lo + hi) / 2
        cand = ((1 - mid) * x0 + mid * start).astype(np.float32)
        if oracle(cand[None])[0] != y:
            hi, best = mid, cand
        else:
            lo = mid
    return best


def boundary_search(oracle, x0: np.ndarray, y: int, p: BaParams, rng):
    """Run the attack on one sample. Returns ``(x_adv, l2_history)`` or ``(None, [])``
    when no adversarial starting point was found."""
    x0 = x0.astype(np.float32)
    if oracle(x0[None])[0] != y:
        return x0.copy(), [0.0]
    x = _initial(oracle, x0, y, p, rng)
    if x is None:
        return None, []
    if p.init_blend:
        x = _blend(oracle, x0, x, y, p.blend_tol)
    d = _dist(x, x0)
    history = [d]
    orth, src = p.orth_step, p.src_step
    for _ in range(p.iters):
        used, cands = 0, None
        while used < p.queries - 1 and cands is None:
            k = min(p.window, p.queries - 1 - used)
            props = np.stack([orthogonal_proposal(x, x0, orth, rng) for _ in range(k)]).astype(np.float32)
            ok = oracle(props) != y
            used += k
            orth = _adapt(orth, float(ok.mean()), p)
            if ok.any():
                cands = props[ok]
        if cands is None:
            continue
        moved = False
        while used < p.queries:
            k = min(len(cands), p.queries - used)
            shrunk = (cands[:k] + np.float32(src) * (x0 - cands[:k])).astype(np.float32)
            ok = oracle(shrunk) != y
            used += k
            src = _adapt(src, float(ok.mean()), p, cap=0.5)
            if ok.any():
                new = shrunk[np.flatnonzero(ok)[0]]
                nd = _dist(new, x0)
                if nd <= d:
                    x, d, moved = new, nd, True
                break
        if not moved:
            # keep the orthogonal move on its own; it is no farther from x0
            nd = _dist(cands[0], x0)
            if nd <= d:
                x, d = cands[0], nd
        history.append(d)
    return x, history


def boundary_attack(model, x, labels, p: BaParams = BaParams(), indices=None, seed: int = 0):
    x, labels, indices = prepare(model, x, labels, indices)

    def oracle(batch):
        return predict(model, batch)

    keep, advs, histories, dropped = [], [], {}, []
    for i in range(len(x)):
        adv, hist = boundary_search(oracle, x[i], int(labels[i]), p, sample_rng(seed, indices[i]))
        if adv is None:
            dropped.append(int(indices[i]))
            continue
        keep.append(i)
        advs.append(adv)
        histories[int(indices[i])] = hist
    keep = np.asarray(keep, dtype=np.int64)
    adv = np.stack(advs) if advs else np.zeros((0,) + model.input_shape, dtype=np.float32)
    return assemble(model, x[keep], adv, labels[keep], indices[keep], AttackConfig("ba", p),
                    dropped=dropped, extras={"l2_history": histories})
