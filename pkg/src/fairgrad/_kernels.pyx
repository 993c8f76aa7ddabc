# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled FairGrad epoch for the linear softmax model.

Mirrors ``trainer._Loop.run_python`` step for step; arrays are updated in place.
"""
from libc.math cimport exp, log, sqrt, isfinite
from libc.stdlib cimport malloc, free


def linear_epoch(const double[:, ::1] X, const long[::1] y, const long[::1] groups,
                 const long[::1] order, Py_ssize_t batch_size,
                 double[:, ::1] W, double[::1] b,
                 const double[:, ::1] C, const double[::1] priors,
                 double[::1] lam, double[::1] delta,
                 double[::1] rates, unsigned char[::1] seen, double[::1] weights,
                 int mode, double eps, double eta_theta, double eta_lambda,
                 double clip_norm, int clip_nonneg,
                 double[:, ::1] tr_w, double[:, ::1] tr_lam, double[:, ::1] tr_delta,
                 double[:, ::1] tr_f):
    """Run one epoch over ``order``; ``mode`` is 0 unconstrained, 1 exact, 2 epsilon.

    Returns -1 on success or the index of the batch whose loss was non-finite.
    """
    cdef Py_ssize_t n = order.shape[0], d = X.shape[1], c = W.shape[1], K = C.shape[0]
    cdef bint trace = tr_w.shape[0] > 0
    cdef Py_ssize_t start, stop, bi = 0, i, j, k, kk, row, m, argmax
    cdef double mx, ssum, loss, norm2, scale, v, coef
    cdef double *logits = <double *> malloc(c * sizeof(double))
    cdef double *gW = <double *> malloc(d * c * sizeof(double))
    cdef double *gb = <double *> malloc(c * sizeof(double))
    cdef double *F = <double *> malloc(K * sizeof(double))
    cdef double *wrong = <double *> malloc(K * sizeof(double))
    cdef long *cnt = <long *> malloc(K * sizeof(long))
    cdef double *probs
    cdef double *logp_y
    cdef long *pred
    if batch_size > n:
        batch_size = n
    probs = <double *> malloc(batch_size * c * sizeof(double))
    pred = <long *> malloc(batch_size * sizeof(long))
    logp_y = <double *> malloc(batch_size * sizeof(double))
    try:
        start = 0
        while start < n:
            stop = start + batch_size
            if stop > n:
                stop = n
            m = stop - start
            # forward: softmax probabilities and argmax (first maximum wins)
            for i in range(m):
                row = order[start + i]
                for j in range(c):
                    v = b[j]
                    for k in range(d):
                        v += X[row, k] * W[k, j]
                    logits[j] = v
                mx = logits[0]
                argmax = 0
                for j in range(1, c):
                    if logits[j] > mx:
                        mx = logits[j]
                        argmax = j
                pred[i] = argmax
                ssum = 0.0
                for j in range(c):
                    probs[i * c + j] = exp(logits[j] - mx)
                    ssum += probs[i * c + j]
                for j in range(c):
                    probs[i * c + j] /= ssum
                # log-softmax of the true class, finite even when its probability underflows
                logp_y[i] = logits[y[row]] - mx - log(ssum)

            for k in range(K):
                cnt[k] = 0
                wrong[k] = 0.0
                F[k] = 0.0
            for i in range(m):
                row = order[start + i]
                cnt[groups[row]] += 1
                if pred[i] != y[row]:
                    wrong[groups[row]] += 1.0

            if mode != 0:
                for k in range(K):
                    if cnt[k] > 0:
                        rates[k] = wrong[k] / cnt[k]
                        seen[k] = 1
                for k in range(K):
                    v = 0.0
                    for kk in range(K):
                        v += C[k, kk] * rates[kk]
                    F[k] = v
                for k in range(K):
                    if mode == 1:
                        lam[k] = lam[k] + eta_lambda * F[k]
                    else:
                        v = lam[k] + eta_lambda * (F[k] - eps)
                        lam[k] = v if v > 0.0 else 0.0
                        v = delta[k] - eta_lambda * (F[k] + eps)
                        delta[k] = v if v > 0.0 else 0.0
                for k in range(K):
                    v = priors[k]
                    for kk in range(K):
                        v += C[kk, k] * (lam[kk] - delta[kk])
                    weights[k] = v
            else:
                for k in range(K):
                    weights[k] = priors[k]
            if clip_nonneg:
                for k in range(K):
                    if weights[k] < 0.0:
                        weights[k] = 0.0

            # weighted group-mean cross-entropy and its gradient
            for j in range(d * c):
                gW[j] = 0.0
            for j in range(c):
                gb[j] = 0.0
            loss = 0.0
            for i in range(m):
                row = order[start + i]
                k = groups[row]
                coef = weights[k] / cnt[k]
                loss -= coef * logp_y[i]
                for j in range(c):
                    v = probs[i * c + j]
                    if j == y[row]:
                        v -= 1.0
                    v *= coef
                    gb[j] += v
                    for kk in range(d):
                        gW[kk * c + j] += X[row, kk] * v
            norm2 = 0.0
            for j in range(d * c):
                norm2 += gW[j] * gW[j]
            for j in range(c):
                norm2 += gb[j] * gb[j]
            if not (isfinite(loss) and isfinite(norm2)):
                return bi
            scale = eta_theta
            if sqrt(norm2) > clip_norm:
                scale = eta_theta * (clip_norm / sqrt(norm2))
            for kk in range(d):
                for j in range(c):
                    W[kk, j] -= scale * gW[kk * c + j]
            for j in range(c):
                b[j] -= scale * gb[j]

            if trace:
                for k in range(K):
                    tr_w[bi, k] = weights[k]
                    tr_lam[bi, k] = lam[k]
                    tr_delta[bi, k] = delta[k]
                    tr_f[bi, k] = F[k]
            bi += 1
            start = stop
        return -1
    finally:
        free(logits); free(gW); free(gb); free(F); free(wrong); free(cnt); free(probs); free(pred); free(logp_y)
