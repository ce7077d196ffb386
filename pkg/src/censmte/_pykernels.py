"""Pure-numpy versions of the compiled kernels in ``_ckernels.pyx``."""

import math

import numpy as np
from scipy.special import expit


def _index(theta, dense, xcode):
    q = dense.shape[1]
    eta = dense @ theta[:q]
    if theta.shape[0] > q:
        eta = eta + np.concatenate(([0.0], theta[q:]))[xcode]
    return eta


def logit_loglik(theta, dense, xcode, b, w):
    eta = _index(theta, dense, xcode)
    return math.fsum(w * (b * eta - np.logaddexp(0.0, eta))) / dense.shape[0]


def logit_derivs(theta, dense, xcode, b, w):
    n, q = dense.shape
    p = theta.shape[0]
    eta = _index(theta, dense, xcode)
    mu = expit(eta)
    ll = math.fsum(w * (b * eta - np.logaddexp(0.0, eta))) / n
    r = w * (b - mu)
    s = w * mu * (1.0 - mu)
    grad = np.empty(p)
    hess = np.zeros((p, p))
    grad[:q] = dense.T @ r
    hess[:q, :q] = -(dense * s[:, None]).T @ dense
    nx = p - q + 1
    if nx > 1:
        grad[q:] = np.bincount(xcode, weights=r, minlength=nx)[1:]
        hess[q:, q:] = np.diag(-np.bincount(xcode, weights=s, minlength=nx)[1:])
        for j in range(q):
            cross = -np.bincount(xcode, weights=s * dense[:, j], minlength=nx)[1:]
            hess[q:, j] = cross
            hess[j, q:] = cross
    return ll, grad / n, hess / n


def dmtr_mean(offsets, sv, dv, w=None):
    if offsets.shape[0] == 0:
        return np.full(sv.shape[0], np.nan)
    t = np.abs(offsets[None, :] + sv[:, None])
    e = np.exp(-t)
    dens = e / (1.0 + e) ** 2
    if w is None:
        return dv * np.mean(dens, axis=1)
    return dv * (dens @ w) / np.sum(w)
