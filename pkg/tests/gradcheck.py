"""Central finite-difference checks shared by the unit and acceptance tests."""

import numpy as np

from borderconv.nn import backward, forward, loss_softmax_ce

EPS = 1e-5
REL_TOL = 1e-4
# denominators below this are treated as this, so entries whose true gradient
# is zero are judged by absolute error against round-off of the loss
DENOM_FLOOR = 1e-6


def rel_error(analytic, numeric):
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), DENOM_FLOOR)


def _state(model, x):
    logits, cache = forward(model, x)
    arg = None if cache.argmax is None else cache.argmax.copy()
    return arg, [None if p is None else p.copy() for p in cache.pre]


def network_gradcheck(model, x, labels, entries_per_tensor=None, seed=0):
    """Worst relative error over checked parameter and input entries.

    Entries whose perturbation flips a ReLU or moves a max-pool winner are
    not differentiable at that step size and are skipped; the number skipped
    is returned so callers can bound it.
    """
    rng = np.random.default_rng(seed)

    def loss_at():
        logits, _ = forward(model, x, keep_cache=False)
        return loss_softmax_ce(logits, labels)[0]

    logits, cache = forward(model, x)
    _, grad = loss_softmax_ce(logits, labels)
    gw, gb, gx = backward(model, cache, grad, need_input=True)
    ref_state = _state(model, x)

    targets = []
    for w, g in zip(model.weights, gw):
        targets.append((w, g))
    for b, g in zip(model.biases, gb):
        targets.append((b, g))
    targets.append((x, gx))

    worst, checked, skipped = 0.0, 0, 0
    for arr, g in targets:
        idxs = list(np.ndindex(arr.shape))
        if entries_per_tensor is not None and len(idxs) > entries_per_tensor:
            pick = rng.choice(len(idxs), entries_per_tensor, replace=False)
            idxs = [idxs[i] for i in pick]
        for idx in idxs:
            old = arr[idx]
            arr[idx] = old + EPS
            up, s_up = loss_at(), _state(model, x)
            arr[idx] = old - EPS
            down, s_down = loss_at(), _state(model, x)
            arr[idx] = old
            if not (_same(s_up, ref_state) and _same(s_down, ref_state)):
                skipped += 1
                continue
            num = (up - down) / (2 * EPS)
            worst = max(worst, float(rel_error(g[idx], num)))
            checked += 1
    return worst, checked, skipped


def _same(a, b):
    if (a[0] is None) != (b[0] is None) or (a[0] is not None and not np.array_equal(a[0], b[0])):
        return False
    return all((p is None and q is None) or np.array_equal(p, q) for p, q in zip(a[1], b[1]))
