# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled tau-leap kernel; must stay operation-for-operation identical to ``_kernel_py``."""
from libc.math cimport exp, log, sqrt, fabs, floor
from libc.stdint cimport uint64_t, int64_t
from libc.stdlib cimport free, malloc, realloc

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double INV_2_53 = 1.0 / 9007199254740992.0
cdef double HALF_LOG_2PI = 0.91893853320467274178
cdef double POISSON_INVERSION_MAX = 10.0
cdef double SPLIT_MAX = 1.0
cdef double LOGFACT[16]

LOGFACT[0] = 0.0
for _k in range(1, 16):
    LOGFACT[_k] = LOGFACT[_k - 1] + log(<double>_k)


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = z + GOLDEN
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline uint64_t stream_key(uint64_t seed, uint64_t attempt, uint64_t flat) noexcept nogil:
    return mix64(mix64(mix64(seed) ^ attempt) ^ flat)


cdef inline double uniform(uint64_t key, uint64_t* d) noexcept nogil:
    d[0] += 1
    cdef uint64_t z = mix64(key + d[0] * GOLDEN)
    return (<double>(z >> 11) + 0.5) * INV_2_53


cdef inline double log_factorial(int64_t k) noexcept nogil:
    if k < 16:
        return LOGFACT[k]
    cdef double x = k + 1.0
    return ((x - 0.5) * log(x) - x + HALF_LOG_2PI + 1.0 / (12.0 * x)
            - 1.0 / (360.0 * x * x * x) + 1.0 / (1260.0 * x * x * x * x * x))


cdef int64_t poisson(double lam, uint64_t key, uint64_t* d) noexcept nogil:
    cdef double p, F, u, slam, loglam, a, b, invalpha, vr, U, V, us
    cdef int64_t k
    if lam <= 0.0:
        return 0
    if lam < POISSON_INVERSION_MAX:
        u = uniform(key, d)
        if u <= 1.0 - lam:  # exp(-lam) >= 1 - lam
            return 0
        p = exp(-lam)
        F = p
        k = 0
        while u > F and k < 1000:
            k += 1
            p = p * lam / k
            F = F + p
        return k
    slam = sqrt(lam)
    loglam = log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    while True:
        U = uniform(key, d) - 0.5
        V = uniform(key, d)
        us = 0.5 - fabs(U)
        k = <int64_t>floor((2.0 * a / us + b) * U + lam + 0.43)
        if us >= 0.07 and V <= vr:
            return k
        if k < 0 or (us < 0.013 and V > us):
            continue
        if (log(V) + log(invalpha) - log(a / (us * us) + b)) <= (-lam + k * loglam - log_factorial(k)):
            return k


def poisson_sample(double lam, uint64_t key):
    """Single Poisson draw from the stream ``key`` (testing hook)."""
    cdef uint64_t d = 0
    return poisson(lam, key, &d)


cdef struct ChangeLog:
    int64_t* idx
    int64_t* dv
    Py_ssize_t n
    Py_ssize_t cap


cdef inline int push(ChangeLog* lg, int64_t idx, int64_t dv) noexcept nogil:
    cdef int64_t* a
    cdef int64_t* b
    if lg.n == lg.cap:
        a = <int64_t*>realloc(lg.idx, 2 * lg.cap * sizeof(int64_t))
        if a == NULL:
            return 1
        lg.idx = a
        b = <int64_t*>realloc(lg.dv, 2 * lg.cap * sizeof(int64_t))
        if b == NULL:
            return 1
        lg.dv = b
        lg.cap *= 2
    lg.idx[lg.n] = idx
    lg.dv[lg.n] = dv
    lg.n += 1
    return 0


def leap(int64_t[:, :, ::1] X, double tau,
         uint64_t seed, uint64_t attempt,
         const double[::1] sigma, const int64_t[::1] nu_ptr, const int64_t[::1] nu_idx,
         const double[::1] nu_val, const double[:, ::1] leave,
         const double[::1] force, const double[::1] delta,
         const double[:, ::1] mu, const double[:, ::1] alpha, const double[::1] gamma):
    """One tau-leap applied to ``X`` in place; see ``_kernel_py.leap``."""
    cdef Py_ssize_t C = X.shape[1]
    cdef Py_ssize_t CC = C * C
    cdef Py_ssize_t NT = 6 * CC
    cdef Py_ssize_t f
    cdef Py_ssize_t s, i, j, q, e, t1, t2, tp, loc, lo, hi, n
    cdef int64_t x, K, ev, total, n_events = 0
    cdef double xf, c1, c2, rt, u, acc, r
    cdef bint home, found
    cdef uint64_t key, d
    cdef int status = 0
    cdef double[::1] itot
    cdef int64_t* flat = &X[0, 0, 0]
    cdef ChangeLog lg
    import numpy as np
    itot = np.zeros(C)
    cdef int64_t T1[6]
    cdef int64_t T2[6]
    T1[:] = [1, 2, 5, 0, 1, 2]
    T2[:] = [3, 4, -1, -1, 2, -1]
    lg.n = 0
    lg.cap = 4096
    lg.idx = <int64_t*>malloc(lg.cap * sizeof(int64_t))
    lg.dv = <int64_t*>malloc(lg.cap * sizeof(int64_t))
    if lg.idx == NULL or lg.dv == NULL:
        free(lg.idx)
        free(lg.dv)
        raise MemoryError()

    with nogil:
        for q in range(C):
            for j in range(C):
                itot[j] += <double>X[1, q, j]
        f = 0
        while f < NT:
            # most compartments are empty: skip zero runs eight at a time
            if f + 8 <= NT and (flat[f] | flat[f + 1] | flat[f + 2] | flat[f + 3]
                                | flat[f + 4] | flat[f + 5] | flat[f + 6] | flat[f + 7]) == 0:
                f += 8
                continue
            x = flat[f]
            s = f // CC
            i = (f // C) % C
            j = f % C
            f += 1
            if x <= 0:
                continue
            xf = <double>x
            if s == 0:
                c1 = force[j] * itot[j]
                c2 = mu[0, j]
            elif s == 1:
                c1 = delta[j]
                c2 = mu[1, j]
            elif s == 2:
                c1 = mu[2, j]
                c2 = 0.0
            elif s == 3:
                c1 = alpha[0, j]
                c2 = 0.0
            elif s == 4:
                c1 = alpha[1, j]
                c2 = gamma[j]
            else:
                c1 = alpha[2, j]
                c2 = 0.0
            t1 = T1[s]
            t2 = T2[s]
            if t2 < 0:
                c2 = 0.0
            key = stream_key(seed, attempt, <uint64_t>((s * C + i) * C + j))
            d = 0
            total = 0
            home = i == j
            if home:
                lo = nu_ptr[i]
                hi = nu_ptr[i + 1]
            else:
                lo = 0
                hi = 0
            rt = 0.0
            rt += leave[i, j]
            rt += c1
            rt += c2
            if xf * rt * tau < SPLIT_MAX:
                K = poisson(xf * rt * tau, key, &d)
                for ev in range(K):
                    u = uniform(key, &d) * rt
                    acc = 0.0
                    tp = -2
                    loc = 0
                    found = 0
                    if home:
                        for e in range(lo, hi):
                            r = sigma[i] * nu_val[e]
                            acc += r
                            if r > 0.0:
                                tp = s
                                loc = nu_idx[e]
                                if u < acc:
                                    found = 1
                                    break
                    else:
                        r = leave[i, j]
                        acc += r
                        if r > 0.0:
                            tp = s
                            loc = i
                            if u < acc:
                                found = 1
                    if not found:
                        acc += c1
                        if c1 > 0.0:
                            tp = t1
                            loc = j
                            if u < acc:
                                found = 1
                    if not found:
                        acc += c2
                        if c2 > 0.0:
                            tp = t2
                            loc = j
                    status |= push(&lg, tp * CC + i * C + loc, 1) * 2
                total = K
            else:
                if home:
                    for e in range(lo, hi):
                        K = poisson(xf * sigma[i] * nu_val[e] * tau, key, &d)
                        if K:
                            status |= push(&lg, s * CC + i * C + nu_idx[e], K) * 2
                            total += K
                else:
                    K = poisson(xf * leave[i, j] * tau, key, &d)
                    if K:
                        status |= push(&lg, s * CC + i * C + i, K) * 2
                        total += K
                K = poisson(xf * c1 * tau, key, &d)
                if K:
                    status |= push(&lg, t1 * CC + i * C + j, K) * 2
                    total += K
                if t2 >= 0:
                    K = poisson(xf * c2 * tau, key, &d)
                    if K:
                        status |= push(&lg, t2 * CC + i * C + j, K) * 2
                        total += K
            if status:
                break
            if total > x:
                status = 1
                break
            if total:
                status |= push(&lg, (s * C + i) * C + j, -total) * 2
                if status:
                    break
            n_events += total
        if status == 0:
            for n in range(lg.n):
                flat[lg.idx[n]] += lg.dv[n]
    free(lg.idx)
    free(lg.dv)
    if status == 2:
        raise MemoryError()
    return status, n_events
