"""Diagonal-covariance GMM-UBM baseline: EM training, means-only MAP adaptation, LLR scoring."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from sklearn.cluster import kmeans_plusplus

from .errors import TooFewFrames, VeridError

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-4
MIN_WEIGHT = 1e-8
GMM_MAGIC = b"SVGM1\n"


@dataclass
class DiagGmm:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    variances: np.ndarray  # (K, D)
    trace: list = field(default_factory=list)

    @property
    def n_components(self):
        return len(self.weights)

    @property
    def dim(self):
        return self.means.shape[1]

    def copy(self):
        return DiagGmm(self.weights.copy(), self.means.copy(), self.variances.copy(), list(self.trace))


def component_logpdf(gmm, frames):
    """log(w_k N(x_t; mu_k, diag var_k)) for every frame and component, shape (T, K)."""
    x = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    inv_var = 1.0 / gmm.variances
    const = -0.5 * (gmm.dim * math.log(2 * math.pi) + np.log(gmm.variances).sum(axis=1))
    # sum_d (x - mu)^2 / var, expanded to stay (T, K)
    quad = (x * x) @ inv_var.T - 2.0 * x @ (gmm.means * inv_var).T + (gmm.means ** 2 * inv_var).sum(axis=1)
    with np.errstate(divide="ignore"):
        return np.log(gmm.weights) + const - 0.5 * quad


def frame_logliks(gmm, frames):
    return logsumexp(component_logpdf(gmm, frames), axis=1)


def gmm_loglik(gmm, frame):
    return float(frame_logliks(gmm, np.asarray(frame, dtype=np.float64).reshape(1, -1))[0])


def _total(values):
    return math.fsum(values.tolist())


def train_ubm(frames, n_components=64, n_iters=20, seed=0, max_init_frames=20000):
    """Fit a diagonal GMM by EM from a seeded k-means++ start.

    ``trace`` on the returned model holds the total log-likelihood of the
    data after each EM iteration.
    """
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n, dim = x.shape
    if n < 10 * n_components:
        raise TooFewFrames(f"{n} frames for {n_components} components; need at least {10 * n_components}")
    rng = np.random.default_rng(seed)
    sample = x if n <= max_init_frames else x[np.sort(rng.choice(n, max_init_frames, replace=False))]
    centers, _ = kmeans_plusplus(sample, n_components, random_state=int(rng.integers(2**31 - 1)))
    global_var = np.maximum(x.var(axis=0), VAR_FLOOR)
    gmm = DiagGmm(
        np.full(n_components, 1.0 / n_components),
        centers.astype(np.float64),
        np.tile(global_var, (n_components, 1)),
    )

    trace = []
    logp = component_logpdf(gmm, x)
    for it in range(n_iters):
        norm = logsumexp(logp, axis=1, keepdims=True)
        resp = np.exp(logp - norm)
        nk = resp.sum(axis=0)
        weights = nk / n
        safe_nk = np.maximum(nk, np.finfo(float).tiny)
        means = (resp.T @ x) / safe_nk[:, None]
        variances = (resp.T @ (x * x)) / safe_nk[:, None] - means ** 2
        variances = np.maximum(variances, VAR_FLOOR)
        for k in np.flatnonzero(weights < MIN_WEIGHT):
            log.warning("EM iteration %d: component %d degenerate (weight %.3g), reseeding", it + 1, k, weights[k])
            means[k] = x[rng.integers(n)]
            variances[k] = global_var
            weights[k] = 1.0 / n_components
        gmm = DiagGmm(weights / weights.sum(), means, variances)
        logp = component_logpdf(gmm, x)
        trace.append(_total(logsumexp(logp, axis=1)))
    gmm.trace = trace
    return gmm


def map_adapt(ubm, frames, relevance=16.0):
    """Means-only MAP adaptation of ``ubm`` towards ``frames``."""
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    logp = component_logpdf(ubm, x)
    resp = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
    nk = resp.sum(axis=0)
    first = resp.T @ x
    expected = np.divide(first, nk[:, None], out=np.zeros_like(first), where=nk[:, None] > 0)
    denom = nk + relevance
    alpha = np.divide(nk, denom, out=np.zeros_like(nk), where=denom > 0)
    means = alpha[:, None] * expected + (1.0 - alpha[:, None]) * ubm.means
    return DiagGmm(ubm.weights.copy(), means, ubm.variances.copy())


def llr_score(speaker, ubm, frames):
    """Average per-frame log-likelihood ratio of the speaker model against the UBM."""
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return float(np.mean(frame_logliks(speaker, x) - frame_logliks(ubm, x)))


def save_gmm(path, gmm):
    header = f"K {gmm.n_components} dim {gmm.dim}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(GMM_MAGIC + header)
        for arr in (gmm.weights, gmm.means, gmm.variances):
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_gmm(path):
    with open(path, "rb") as fh:
        if fh.readline() != GMM_MAGIC:
            raise VeridError(f"{path}: not a GMM file (bad magic)")
        fields = fh.readline().decode("ascii").split()
        if len(fields) != 4 or fields[0] != "K" or fields[2] != "dim":
            raise VeridError(f"{path}: bad GMM header")
        k, dim = int(fields[1]), int(fields[3])
        blob = fh.read()
    if len(blob) != 4 * (k + 2 * k * dim):
        raise VeridError(f"{path}: payload size does not match K={k}, dim={dim}")
    flat = np.frombuffer(blob, dtype="<f4").astype(np.float64)
    weights = flat[:k]
    means = flat[k : k + k * dim].reshape(k, dim)
    variances = flat[k + k * dim :].reshape(k, dim)
    return DiagGmm(weights / weights.sum(), means, variances)
