"""Compiled inner loop for mixture fitting.

The kernel runs a whole EM restart: repeated E-steps (responsibilities,
log-likelihood) and M-steps (weighted moments with a trace-scaled ridge)
until the relative log-likelihood change drops below tolerance or the
iteration cap is hit. It performs the same updates as the public
``em_step``; tests hold the two paths together. A hand-unrolled variant
covers the d=3 case the study runs on; it stores densities and
responsibilities component-major so the hot passes stream contiguously.

Terms with ``log density - row max < -37`` skip the exp call: exp(-37)
is below the rounding unit of the softmax totals (which are >= 1), so
the shortcut does not change results.

Status codes: 0 converged or iteration cap reached, 1 a component weight
collapsed below K/(10n), 2 a covariance lost positive definiteness.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

OK, DEGENERATE_WEIGHT, NOT_POSITIVE_DEFINITE = 0, 1, 2

_LOG_2PI = math.log(2.0 * math.pi)
_EXP_CUTOFF = -37.0


def em_loop(X, weights, means, covs, ridge, max_iterations, rel_tolerance):
    if X.shape[1] == 3:
        return _em_loop_d3(X, weights, means, covs, ridge, max_iterations, rel_tolerance)
    return _em_loop_generic(X, weights, means, covs, ridge, max_iterations, rel_tolerance)


@njit(cache=True)
def _em_loop_generic(X, weights, means, covs, ridge, max_iterations, rel_tolerance):
    n, d = X.shape
    K = weights.shape[0]

    weights = weights.copy()
    means = means.copy()
    covs = covs.copy()
    L = np.empty((K, d, d))
    log_det = np.empty(K)
    log_w = np.empty(K)
    resp = np.empty((n, K))
    row = np.empty(K)
    y = np.empty(d)
    nk = np.empty(K)
    s1 = np.empty((K, d))
    s2 = np.empty((K, d, d))

    ll = 0.0
    ll_prev = 0.0
    have_prev = False
    worst_drop = 0.0
    n_steps = 0

    for iteration in range(max_iterations + 1):
        for k in range(K):
            log_w[k] = math.log(weights[k])
            for i in range(d):
                for j in range(i + 1):
                    s = covs[k, i, j]
                    for t in range(j):
                        s -= L[k, i, t] * L[k, j, t]
                    if i == j:
                        if s <= 0.0:
                            return (NOT_POSITIVE_DEFINITE, ll, n_steps, worst_drop,
                                    weights, means, covs, resp)
                        L[k, i, i] = math.sqrt(s)
                    else:
                        L[k, i, j] = s / L[k, j, j]
            acc = 0.0
            for i in range(d):
                acc += math.log(L[k, i, i])
            log_det[k] = 2.0 * acc

        # Fused E-step and moment accumulation; the accumulated moments are
        # only consumed if this iteration does not terminate the loop.
        for k in range(K):
            nk[k] = 0.0
            for a in range(d):
                s1[k, a] = 0.0
                for b in range(d):
                    s2[k, a, b] = 0.0

        ll = 0.0
        for i in range(n):
            mx = -1.0e300
            for k in range(K):
                quad = 0.0
                for a in range(d):
                    s = X[i, a] - means[k, a]
                    for b in range(a):
                        s -= L[k, a, b] * y[b]
                    y[a] = s / L[k, a, a]
                    quad += y[a] * y[a]
                v = log_w[k] - 0.5 * (d * _LOG_2PI + log_det[k] + quad)
                row[k] = v
                if v > mx:
                    mx = v
            total = 0.0
            for k in range(K):
                t = row[k] - mx
                e = math.exp(t) if t > _EXP_CUTOFF else 0.0
                row[k] = e
                total += e
            ll += mx + math.log(total)
            inv = 1.0 / total
            for k in range(K):
                r = row[k] * inv
                resp[i, k] = r
                if r != 0.0:
                    nk[k] += r
                    for a in range(d):
                        ra = r * X[i, a]
                        s1[k, a] += ra
                        for b in range(a + 1):
                            s2[k, a, b] += ra * X[i, b]

        if have_prev:
            drop = ll_prev - ll
            if drop > worst_drop:
                worst_drop = drop
            if abs(ll - ll_prev) < rel_tolerance * abs(ll_prev):
                return OK, ll, n_steps, worst_drop, weights, means, covs, resp
        ll_prev = ll
        have_prev = True
        if iteration == max_iterations:
            break

        floor = K / 10.0  # weight floor K/(10n) expressed on nk
        for k in range(K):
            if nk[k] < floor:
                return DEGENERATE_WEIGHT, ll, n_steps, worst_drop, weights, means, covs, resp
        for k in range(K):
            weights[k] = nk[k] / n
            for a in range(d):
                means[k, a] = s1[k, a] / nk[k]
            trace = 0.0
            for a in range(d):
                for b in range(a + 1):
                    c = s2[k, a, b] / nk[k] - means[k, a] * means[k, b]
                    covs[k, a, b] = c
                    covs[k, b, a] = c
                trace += covs[k, a, a]
            bump = ridge * trace / d
            for a in range(d):
                covs[k, a, a] += bump
        n_steps += 1

    return OK, ll, n_steps, worst_drop, weights, means, covs, resp


@njit(cache=True)
def _chol_pass_d3(covs, weights, L, log_det, log_w):
    K = covs.shape[0]
    for k in range(K):
        log_w[k] = math.log(weights[k])
        a00 = covs[k, 0, 0]
        if a00 <= 0.0:
            return False
        l00 = math.sqrt(a00)
        l10 = covs[k, 1, 0] / l00
        t = covs[k, 1, 1] - l10 * l10
        if t <= 0.0:
            return False
        l11 = math.sqrt(t)
        l20 = covs[k, 2, 0] / l00
        l21 = (covs[k, 2, 1] - l20 * l10) / l11
        t = covs[k, 2, 2] - l20 * l20 - l21 * l21
        if t <= 0.0:
            return False
        l22 = math.sqrt(t)
        L[k, 0, 0] = l00
        L[k, 1, 0] = l10
        L[k, 1, 1] = l11
        L[k, 2, 0] = l20
        L[k, 2, 1] = l21
        L[k, 2, 2] = l22
        log_det[k] = 2.0 * (math.log(l00) + math.log(l11) + math.log(l22))
    return True


@njit(cache=True, fastmath=True)
def _dens_pass_d3(X, means, L, log_det, log_w, dens):
    """dens[k, i] = log w_k + log N(x_i; mu_k, Sigma_k); contiguous per k."""
    n = X.shape[0]
    K = means.shape[0]
    for k in range(K):
        m0 = means[k, 0]
        m1 = means[k, 1]
        m2 = means[k, 2]
        il00 = 1.0 / L[k, 0, 0]
        l10 = L[k, 1, 0]
        il11 = 1.0 / L[k, 1, 1]
        l20 = L[k, 2, 0]
        l21 = L[k, 2, 1]
        il22 = 1.0 / L[k, 2, 2]
        base = log_w[k] - 0.5 * (3.0 * _LOG_2PI + log_det[k])
        for i in range(n):
            y0 = (X[i, 0] - m0) * il00
            y1 = (X[i, 1] - m1 - l10 * y0) * il11
            y2 = (X[i, 2] - m2 - l20 * y0 - l21 * y1) * il22
            dens[k, i] = base - 0.5 * (y0 * y0 + y1 * y1 + y2 * y2)


@njit(cache=True)
def _softmax_pass(dens, resp, row):
    """Row-wise softmax over components: resp[k, i], returns the total
    log-likelihood."""
    K, n = dens.shape
    ll = 0.0
    for i in range(n):
        mx = -1.0e300
        for k in range(K):
            v = dens[k, i]
            if v > mx:
                mx = v
        total = 0.0
        for k in range(K):
            t = dens[k, i] - mx
            e = math.exp(t) if t > _EXP_CUTOFF else 0.0
            row[k] = e
            total += e
        ll += mx + math.log(total)
        inv = 1.0 / total
        for k in range(K):
            resp[k, i] = row[k] * inv
    return ll


@njit(cache=True, fastmath=True)
def _moments_pass_d3(X, resp, nk, s1, s2):
    n = X.shape[0]
    K = resp.shape[0]
    for k in range(K):
        a_n = 0.0
        a0 = 0.0
        a1 = 0.0
        a2 = 0.0
        a00 = 0.0
        a10 = 0.0
        a11 = 0.0
        a20 = 0.0
        a21 = 0.0
        a22 = 0.0
        for i in range(n):
            r = resp[k, i]
            if r != 0.0:
                x0 = X[i, 0]
                x1 = X[i, 1]
                x2 = X[i, 2]
                a_n += r
                r0 = r * x0
                r1 = r * x1
                r2 = r * x2
                a0 += r0
                a1 += r1
                a2 += r2
                a00 += r0 * x0
                a10 += r1 * x0
                a11 += r1 * x1
                a20 += r2 * x0
                a21 += r2 * x1
                a22 += r2 * x2
        nk[k] = a_n
        s1[k, 0] = a0
        s1[k, 1] = a1
        s1[k, 2] = a2
        s2[k, 0, 0] = a00
        s2[k, 1, 0] = a10
        s2[k, 1, 1] = a11
        s2[k, 2, 0] = a20
        s2[k, 2, 1] = a21
        s2[k, 2, 2] = a22


@njit(cache=True)
def _em_loop_d3(X, weights, means, covs, ridge, max_iterations, rel_tolerance):
    n = X.shape[0]
    K = weights.shape[0]

    weights = weights.copy()
    means = means.copy()
    covs = covs.copy()
    L = np.empty((K, 3, 3))
    log_det = np.empty(K)
    log_w = np.empty(K)
    dens = np.empty((K, n))
    resp_km = np.empty((K, n))
    row = np.empty(K)
    nk = np.empty(K)
    s1 = np.empty((K, 3))
    s2 = np.empty((K, 3, 3))

    ll = 0.0
    ll_prev = 0.0
    have_prev = False
    worst_drop = 0.0
    n_steps = 0
    status = OK

    for iteration in range(max_iterations + 1):
        if not _chol_pass_d3(covs, weights, L, log_det, log_w):
            status = NOT_POSITIVE_DEFINITE
            break
        _dens_pass_d3(X, means, L, log_det, log_w, dens)
        ll = _softmax_pass(dens, resp_km, row)

        if have_prev:
            drop = ll_prev - ll
            if drop > worst_drop:
                worst_drop = drop
            if abs(ll - ll_prev) < rel_tolerance * abs(ll_prev):
                break
        ll_prev = ll
        have_prev = True
        if iteration == max_iterations:
            break

        _moments_pass_d3(X, resp_km, nk, s1, s2)
        floor = K / 10.0  # weight floor K/(10n) expressed on nk
        degenerate = False
        for k in range(K):
            if nk[k] < floor:
                degenerate = True
        if degenerate:
            status = DEGENERATE_WEIGHT
            break
        for k in range(K):
            weights[k] = nk[k] / n
            m0 = s1[k, 0] / nk[k]
            m1 = s1[k, 1] / nk[k]
            m2 = s1[k, 2] / nk[k]
            means[k, 0] = m0
            means[k, 1] = m1
            means[k, 2] = m2
            c00 = s2[k, 0, 0] / nk[k] - m0 * m0
            c10 = s2[k, 1, 0] / nk[k] - m1 * m0
            c11 = s2[k, 1, 1] / nk[k] - m1 * m1
            c20 = s2[k, 2, 0] / nk[k] - m2 * m0
            c21 = s2[k, 2, 1] / nk[k] - m2 * m1
            c22 = s2[k, 2, 2] / nk[k] - m2 * m2
            bump = ridge * (c00 + c11 + c22) / 3.0
            covs[k, 0, 0] = c00 + bump
            covs[k, 0, 1] = c10
            covs[k, 0, 2] = c20
            covs[k, 1, 0] = c10
            covs[k, 1, 1] = c11 + bump
            covs[k, 1, 2] = c21
            covs[k, 2, 0] = c20
            covs[k, 2, 1] = c21
            covs[k, 2, 2] = c22 + bump
        n_steps += 1

    resp = np.empty((n, K))
    for i in range(n):
        for k in range(K):
            resp[i, k] = resp_km[k, i]
    return status, ll, n_steps, worst_drop, weights, means, covs, resp
