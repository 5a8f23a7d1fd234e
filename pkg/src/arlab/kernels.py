"""Hot numeric kernels.

Every kernel exists twice: an explicit-loop version compiled with numba
(``*_loops``) and a vectorised numpy version (``*_numpy``). The public name
binds to one of them according to :mod:`arlab._accel`. Both versions share
the same tie-breaking rule (lowest index wins) so they agree up to float
rounding.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "backward_induction",
    "backward_induction_batch",
    "evaluate_policy",
    "sample_path",
    "linear_backward",
    "eluder_longest",
]


# ---------------------------------------------------------------------------
# finite-MDP dynamic programming
# ---------------------------------------------------------------------------


@njit
def backward_induction_loops(P, r, H):
    S, A = r.shape
    Q = np.zeros((H, S, A))
    V = np.zeros((H + 1, S))
    pi = np.zeros((H, S), dtype=np.int64)
    for h in range(H - 1, -1, -1):
        for s in range(S):
            best = -np.inf
            arg = 0
            for a in range(A):
                acc = 0.0
                for sp in range(S):
                    acc += P[s, a, sp] * V[h + 1, sp]
                q = r[s, a] + acc
                Q[h, s, a] = q
                if q > best:
                    best = q
                    arg = a
            V[h, s] = best
            pi[h, s] = arg
    return Q, V, pi


def backward_induction_numpy(P, r, H):
    S, A = r.shape
    Q = np.zeros((H, S, A))
    V = np.zeros((H + 1, S))
    pi = np.zeros((H, S), dtype=np.int64)
    for h in range(H - 1, -1, -1):
        Q[h] = r + P @ V[h + 1]
        pi[h] = np.argmax(Q[h], axis=1)
        V[h] = Q[h].max(axis=1)
    return Q, V, pi


@njit
def backward_induction_batch_loops(Ps, r, H):
    n = Ps.shape[0]
    S, A = r.shape
    Q = np.zeros((n, H, S, A))
    V = np.zeros((n, H + 1, S))
    pi = np.zeros((n, H, S), dtype=np.int64)
    for i in range(n):
        q, v, p = backward_induction_loops(Ps[i], r, H)
        Q[i] = q
        V[i] = v
        pi[i] = p
    return Q, V, pi


def backward_induction_batch_numpy(Ps, r, H):
    n = Ps.shape[0]
    S, A = r.shape
    Q = np.zeros((n, H, S, A))
    V = np.zeros((n, H + 1, S))
    pi = np.zeros((n, H, S), dtype=np.int64)
    for h in range(H - 1, -1, -1):
        Q[:, h] = r[None] + np.einsum("nsap,np->nsa", Ps, V[:, h + 1])
        pi[:, h] = np.argmax(Q[:, h], axis=2)
        V[:, h] = Q[:, h].max(axis=2)
    return Q, V, pi


@njit
def evaluate_policy_loops(P, r, pi):
    H, S = pi.shape
    V = np.zeros((H + 1, S))
    for h in range(H - 1, -1, -1):
        for s in range(S):
            a = pi[h, s]
            acc = 0.0
            for sp in range(S):
                acc += P[s, a, sp] * V[h + 1, sp]
            V[h, s] = r[s, a] + acc
    return V


def evaluate_policy_numpy(P, r, pi):
    H, S = pi.shape
    V = np.zeros((H + 1, S))
    idx = np.arange(S)
    for h in range(H - 1, -1, -1):
        a = pi[h]
        V[h] = r[idx, a] + P[idx, a] @ V[h + 1]
    return V


@njit
def sample_path_loops(cum, pi, s1, u):
    H = pi.shape[0]
    S = cum.shape[0]
    states = np.empty(H + 1, dtype=np.int64)
    actions = np.empty(H, dtype=np.int64)
    s = s1
    for h in range(H):
        a = pi[h, s]
        states[h] = s
        actions[h] = a
        j = 0
        while j < S - 1 and cum[s, a, j] <= u[h]:
            j += 1
        s = j
    states[H] = s
    return states, actions


def sample_path_numpy(cum, pi, s1, u):
    H = pi.shape[0]
    S = cum.shape[0]
    states = np.empty(H + 1, dtype=np.int64)
    actions = np.empty(H, dtype=np.int64)
    s = int(s1)
    for h in range(H):
        a = int(pi[h, s])
        states[h] = s
        actions[h] = a
        s = min(int(np.searchsorted(cum[s, a], u[h], side="right")), S - 1)
    states[H] = s
    return states, actions


# ---------------------------------------------------------------------------
# linear-kernel optimistic planning
# ---------------------------------------------------------------------------


@njit
def linear_backward_loops(phi, r, H, theta, sigma_inv, sqrt_beta):
    S, A, _, d = phi.shape
    Q = np.zeros((H, S, A))
    V = np.zeros((H + 1, S))
    pi = np.zeros((H, S), dtype=np.int64)
    phis = np.zeros((H, S, A, d))
    hmax = float(H)
    for h in range(H - 1, -1, -1):
        for s in range(S):
            best = -np.inf
            arg = 0
            for a in range(A):
                for j in range(d):
                    acc = 0.0
                    for sp in range(S):
                        acc += phi[s, a, sp, j] * V[h + 1, sp]
                    phis[h, s, a, j] = acc
                mean = 0.0
                for j in range(d):
                    mean += phis[h, s, a, j] * theta[j]
                quad = 0.0
                for j in range(d):
                    row = 0.0
                    for l in range(d):
                        row += sigma_inv[j, l] * phis[h, s, a, l]
                    quad += phis[h, s, a, j] * row
                if quad < 0.0:
                    quad = 0.0
                q = r[s, a] + mean + sqrt_beta * np.sqrt(quad)
                Q[h, s, a] = q
                if q > best:
                    best = q
                    arg = a
            pi[h, s] = arg
            v = best
            if v > hmax:
                v = hmax
            if v < 0.0:
                v = 0.0
            V[h, s] = v
    return Q, V, pi, phis


def linear_backward_numpy(phi, r, H, theta, sigma_inv, sqrt_beta):
    S, A, _, d = phi.shape
    Q = np.zeros((H, S, A))
    V = np.zeros((H + 1, S))
    pi = np.zeros((H, S), dtype=np.int64)
    phis = np.zeros((H, S, A, d))
    for h in range(H - 1, -1, -1):
        f = np.einsum("sapd,p->sad", phi, V[h + 1])
        phis[h] = f
        quad = np.einsum("sad,de,sae->sa", f, sigma_inv, f)
        Q[h] = r + f @ theta + sqrt_beta * np.sqrt(np.maximum(quad, 0.0))
        pi[h] = np.argmax(Q[h], axis=1)
        V[h] = np.clip(Q[h].max(axis=1), 0.0, float(H))
    return Q, V, pi, phis


# ---------------------------------------------------------------------------
# eluder-dimension subset search
# ---------------------------------------------------------------------------


@njit
def eluder_longest_loops(diff, levels, strict):
    """Longest independent sequence over all candidate levels.

    ``diff[p, x]`` is the gap of function pair ``p`` at input ``x``. A set of
    inputs is reachable when it can be ordered so that each input, at the
    moment it is added, has some pair whose accumulated squared gap on the
    earlier inputs stays within the level while its own gap exceeds it.
    Accumulated sums depend only on the set, so a subset DP is exact.
    """
    n_pairs, n = diff.shape
    n_sets = 1 << n
    sq = np.zeros((n_sets, n_pairs))
    for U in range(1, n_sets):
        low = 0
        while not (U >> low) & 1:
            low += 1
        prev = U & ~(1 << low)
        for p in range(n_pairs):
            sq[U, p] = sq[prev, p] + diff[p, low] * diff[p, low]
    best = 0
    reach = np.zeros(n_sets, dtype=np.bool_)
    for li in range(levels.shape[0]):
        t = levels[li]
        t2 = t * t
        reach[:] = False
        reach[0] = True
        for U in range(n_sets):
            if not reach[U]:
                continue
            size = 0
            for x in range(n):
                if (U >> x) & 1:
                    size += 1
            if size > best:
                best = size
            for x in range(n):
                if (U >> x) & 1:
                    continue
                nxt = U | (1 << x)
                if reach[nxt]:
                    continue
                for p in range(n_pairs):
                    g = abs(diff[p, x])
                    if strict:
                        ok = sq[U, p] < t2 and g >= t
                    else:
                        ok = sq[U, p] <= t2 and g >= t
                    if ok:
                        reach[nxt] = True
                        break
    return best


def eluder_longest_numpy(diff, levels, strict):
    n_pairs, n = diff.shape
    n_sets = 1 << n
    sq = np.zeros((n_sets, n_pairs))
    for U in range(1, n_sets):
        low = (U & -U).bit_length() - 1
        sq[U] = sq[U & ~(1 << low)] + diff[:, low] ** 2
    gaps = np.abs(diff)
    sizes = np.array([bin(U).count("1") for U in range(n_sets)])
    order = np.argsort(sizes, kind="stable")
    best = 0
    for t in levels:
        t2 = t * t
        within = sq < t2 if strict else sq <= t2
        reach = np.zeros(n_sets, dtype=bool)
        reach[0] = True
        for U in order:
            if not reach[U]:
                continue
            best = max(best, int(sizes[U]))
            free = [x for x in range(n) if not (U >> x) & 1]
            if not free:
                continue
            ok = (within[U][:, None] & (gaps[:, free] >= t)).any(axis=0)
            for x, good in zip(free, ok):
                if good:
                    reach[U | (1 << x)] = True
    return best


if USE_NUMBA:
    backward_induction = backward_induction_loops
    backward_induction_batch = backward_induction_batch_loops
    evaluate_policy = evaluate_policy_loops
    sample_path = sample_path_loops
    linear_backward = linear_backward_loops
    eluder_longest = eluder_longest_loops
else:
    backward_induction = backward_induction_numpy
    backward_induction_batch = backward_induction_batch_numpy
    evaluate_policy = evaluate_policy_numpy
    sample_path = sample_path_numpy
    linear_backward = linear_backward_numpy
    eluder_longest = eluder_longest_numpy
