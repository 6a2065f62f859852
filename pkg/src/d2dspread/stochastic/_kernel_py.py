"""Pure-Python tau-leap kernel.

This is the reference for ``_kernel.pyx``: both consume the same random stream
and perform the same floating-point operations in the same order, so given
equal inputs they produce identical states.

Random numbers
--------------
Every compartment draws from its own SplitMix64 stream keyed by
``(seed, attempt, compartment index)``, so results do not depend on the order
in which compartments are visited.  Poisson variates use inversion below a
mean of 10 and Hormann's PTRS transformed rejection above it, with a
Stirling-series log-factorial (exact table below 16).
"""
import math

MASK = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
INV_2_53 = 1.0 / 9007199254740992.0
HALF_LOG_2PI = 0.91893853320467274178
POISSON_INVERSION_MAX = 10.0
# below this expected event count a compartment draws one Poisson total and
# assigns each event to a channel; above it every channel draws separately
SPLIT_MAX = 1.0

_LOGFACT = [0.0] * 16
for _k in range(1, 16):
    _LOGFACT[_k] = _LOGFACT[_k - 1] + math.log(_k)


def mix64(z):
    z = (z + GOLDEN) & MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def stream_key(seed, attempt, flat):
    return mix64(mix64(mix64(seed & MASK) ^ (attempt & MASK)) ^ (flat & MASK))


class Stream:
    __slots__ = ("key", "d")

    def __init__(self, key):
        self.key = key
        self.d = 0

    def uniform(self):
        self.d += 1
        z = mix64((self.key + self.d * GOLDEN) & MASK)
        return ((z >> 11) + 0.5) * INV_2_53


def log_factorial(k):
    if k < 16:
        return _LOGFACT[k]
    x = k + 1.0
    return ((x - 0.5) * math.log(x) - x + HALF_LOG_2PI + 1.0 / (12.0 * x)
            - 1.0 / (360.0 * x * x * x) + 1.0 / (1260.0 * x * x * x * x * x))


def poisson(lam, st):
    if lam <= 0.0:
        return 0
    if lam < POISSON_INVERSION_MAX:
        u = st.uniform()
        if u <= 1.0 - lam:  # exp(-lam) >= 1 - lam
            return 0
        p = math.exp(-lam)
        F = p
        k = 0
        while u > F and k < 1000:
            k += 1
            p = p * lam / k
            F = F + p
        return k
    slam = math.sqrt(lam)
    loglam = math.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    while True:
        U = st.uniform() - 0.5
        V = st.uniform()
        us = 0.5 - math.fabs(U)
        k = math.floor((2.0 * a / us + b) * U + lam + 0.43)
        if us >= 0.07 and V <= vr:
            return k
        if k < 0 or (us < 0.013 and V > us):
            continue
        if (math.log(V) + math.log(invalpha) - math.log(a / (us * us) + b)) <= (-lam + k * loglam - log_factorial(k)):
            return k


# state -> (target of channel 1, target of channel 2); -1 means no channel
TARGETS = ((1, 3), (2, 4), (5, -1), (0, -1), (1, 2), (2, -1))


def _local_rates(s, j, force, itot, delta, mu, alpha, gamma):
    if s == 0:
        return force[j] * itot[j], mu[0, j]
    if s == 1:
        return delta[j], mu[1, j]
    if s == 2:
        return mu[2, j], 0.0
    if s == 3:
        return alpha[0, j], 0.0
    if s == 4:
        return alpha[1, j], gamma[j]
    return alpha[2, j], 0.0


def _pick(u, home, i, j, lo, hi, sigma, nu_idx, nu_val, leave, c1, c2, t1, t2):
    """Channel hit by ``u`` in ``[0, total rate)``: ``(plane or -1 for "stay in plane", location)``."""
    acc = 0.0
    last = None
    if home:
        for e in range(lo, hi):
            r = sigma[i] * nu_val[e]
            acc += r
            if r > 0.0:
                last = (-1, nu_idx[e])
                if u < acc:
                    return last
    else:
        r = leave[i, j]
        acc += r
        if r > 0.0:
            last = (-1, i)
            if u < acc:
                return last
    acc += c1
    if c1 > 0.0:
        last = (t1, j)
        if u < acc:
            return last
    acc += c2
    if c2 > 0.0:
        last = (t2, j)
    return last


def leap(X, tau, seed, attempt, sigma, nu_ptr, nu_idx, nu_val, leave, force, delta, mu, alpha, gamma):
    """One tau-leap applied to the int64 ``(6, C, C)`` array ``X`` in place.

    Every reaction channel of a compartment fires a Poisson number of times.
    Channels are ordered: departures by destination (or the return home), then
    the two local transitions.  Quiet compartments (expected events below
    ``SPLIT_MAX``) draw the total and pick a channel per event in proportion to
    its rate, which has the same distribution and is much cheaper.  Returns
    ``(status, n_events)``; ``status`` is 1 when some compartment would go
    negative, and then ``X`` is left untouched.  ``leave[i, j]`` is the rate at
    which an ``i``-resident visiting ``j`` returns home; its diagonal holds the
    total departure rate from home.
    """
    out = X.copy()
    status, n_events = _leap_into(X, out, tau, seed, attempt, sigma, nu_ptr, nu_idx, nu_val, leave,
                                  force, delta, mu, alpha, gamma)
    if status == 0:
        X[...] = out
    return status, n_events


def _leap_into(X_in, X_out, tau, seed, attempt, sigma, nu_ptr, nu_idx, nu_val, leave,
               force, delta, mu, alpha, gamma):
    C = X_in.shape[1]
    X_out[...] = X_in
    itot = [0.0] * C
    for q in range(C):
        row = X_in[1, q]
        for j in range(C):
            itot[j] += float(row[j])
    n_events = 0
    nz = X_in.nonzero()
    for s, i, j in zip(*(a.tolist() for a in nz)):
        x = int(X_in[s, i, j])
        xf = float(x)
        c1, c2 = _local_rates(s, j, force, itot, delta, mu, alpha, gamma)
        t1, t2 = TARGETS[s]
        if t2 < 0:
            c2 = 0.0
        st = Stream(stream_key(seed, attempt, (s * C + i) * C + j))
        home = i == j
        lo, hi = (nu_ptr[i], nu_ptr[i + 1]) if home else (0, 0)
        rt = 0.0
        rt += leave[i, j]
        rt += c1
        rt += c2
        total = 0
        if xf * rt * tau < SPLIT_MAX:
            K = poisson(xf * rt * tau, st)
            for _ in range(K):
                target, where = _pick(st.uniform() * rt, home, i, j, lo, hi, sigma, nu_idx, nu_val, leave, c1, c2,
                                      t1, t2)
                X_out[s if target < 0 else target, i, where] += 1
            total = K
        else:
            if home:
                for e in range(lo, hi):
                    K = poisson(xf * sigma[i] * nu_val[e] * tau, st)
                    if K:
                        X_out[s, i, nu_idx[e]] += K
                        total += K
            else:
                K = poisson(xf * leave[i, j] * tau, st)
                if K:
                    X_out[s, i, i] += K
                    total += K
            K = poisson(xf * c1 * tau, st)
            if K:
                X_out[t1, i, j] += K
                total += K
            if t2 >= 0:
                K = poisson(xf * c2 * tau, st)
                if K:
                    X_out[t2, i, j] += K
                    total += K
        if total > x:
            return 1, n_events
        X_out[s, i, j] -= total
        n_events += total
    return 0, n_events


def poisson_sample(lam, key):
    """Single Poisson draw from the stream ``key`` (testing hook)."""
    return poisson(lam, Stream(key))
