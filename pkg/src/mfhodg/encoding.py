"""Diagonal GMM codebooks and first-order Fisher vector encoding."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .descriptors import CHANNELS
from .errors import DataError, NumericError

log = logging.getLogger(__name__)

CODEBOOK_FORMAT = "mfhodg-codebook"
PCA_FORMAT = "mfhodg-pca"
FORMAT_VERSION = 1
DEFAULT_K = 64
SUBSAMPLE_CAP = 200_000
RELATIVE_FLOOR = 1e-4
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GmmCodebook:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    variances: np.ndarray  # (K, D)
    seed: Optional[int] = None
    variance_floor: float = 0.0
    channel: Optional[str] = None
    ll_history: list = field(default_factory=list, repr=False, compare=False)

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def D(self) -> int:
        return self.means.shape[1]


@dataclass
class FisherVector:
    values: np.ndarray
    channel: Optional[str] = None
    normalized: bool = True


def _log_joint(cb: GmmCodebook, X: np.ndarray) -> np.ndarray:
    """log(weight_k) + log N(x_i; mean_k, diag(var_k)) for every (i, k)."""
    prec = 1.0 / cb.variances
    maha = ((X * X) @ prec.T
            - 2.0 * X @ (cb.means * prec).T
            + (cb.means * cb.means * prec).sum(axis=1))
    log_norm = -0.5 * (cb.D * _LOG_2PI + np.log(cb.variances).sum(axis=1))
    return np.log(cb.weights) + log_norm - 0.5 * maha


def _log_responsibilities(cb, X):
    lj = _log_joint(cb, X)
    top = lj.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(lj - top).sum(axis=1))
    return lj - lse[:, None], lse


def posteriors(cb: GmmCodebook, x) -> np.ndarray:
    """Soft assignments of one D-vector (returns K) or an (N, D) matrix (returns N x K)."""
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    lr, _ = _log_responsibilities(cb, np.atleast_2d(X))
    gamma = np.exp(lr)
    return gamma[0] if single else gamma


def log_likelihood(cb: GmmCodebook, X) -> float:
    _, lse = _log_responsibilities(cb, np.atleast_2d(np.asarray(X, dtype=np.float64)))
    return float(lse.sum())


def _kmeans_pp(X, K, rng):
    n = len(X)
    centers = np.empty((K, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for k in range(1, K):
        total = d2.sum()
        if total <= 0:
            centers[k] = X[rng.integers(n)]
        else:
            centers[k] = X[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((X - centers[k]) ** 2).sum(axis=1))
    return centers


def _assign(X, centers):
    d = (X * X).sum(1)[:, None] - 2 * X @ centers.T + (centers * centers).sum(1)[None, :]
    return np.argmin(d, axis=1)


def _init_from_kmeans(X, K, rng, floor, lloyd_iter=10):
    centers = _kmeans_pp(X, K, rng)
    labels = _assign(X, centers)
    for _ in range(lloyd_iter):
        for k in range(K):
            members = X[labels == k]
            if len(members):
                centers[k] = members.mean(axis=0)
        new = _assign(X, centers)
        if np.array_equal(new, labels):
            break
        labels = new
    counts = np.bincount(labels, minlength=K).astype(np.float64)
    global_var = X.var(axis=0)
    variances = np.empty_like(centers)
    for k in range(K):
        members = X[labels == k]
        variances[k] = members.var(axis=0) if len(members) > 1 else global_var
    weights = np.maximum(counts, 1.0)
    return weights / weights.sum(), centers, np.maximum(variances, floor)


def train_gmm(samples, K: int = DEFAULT_K, seed: int = 0, max_iter: int = 100,
              variance_floor: Optional[float] = None, tol: float = 1e-5,
              subsample: int = SUBSAMPLE_CAP, channel: Optional[str] = None) -> GmmCodebook:
    """Fit a diagonal-covariance GMM with k-means++ seeding and EM.

    EM stops after ``max_iter`` iterations or when the relative log-likelihood
    improvement drops below ``tol``. ``variance_floor`` defaults to 1e-4
    times the mean per-dimension variance of the data. The mean per-sample
    log-likelihood before EM and after every iteration is kept in
    ``ll_history``.
    """
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1:
        raise DataError(f"samples must be an N x D matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NumericError("samples contain non-finite values")
    if K < 1:
        raise ValueError("K must be >= 1")
    if len(X) < 10 * K:
        raise DataError(f"need at least {10 * K} samples for K={K}, got {len(X)}")
    if np.all(X == X[0]):
        raise NumericError("degenerate input: all samples are identical")

    rng = np.random.default_rng(seed)
    if len(X) > subsample:
        X = X[np.sort(rng.choice(len(X), subsample, replace=False))]
    if variance_floor is None:
        variance_floor = RELATIVE_FLOOR * float(X.var(axis=0).mean())
    if variance_floor <= 0:
        raise NumericError("variance floor must be positive")

    n = len(X)
    weights, means, variances = _init_from_kmeans(X, K, rng, variance_floor)
    cb = GmmCodebook(weights, means, variances, seed, variance_floor, channel)
    lr, lse = _log_responsibilities(cb, X)
    history = [float(lse.mean())]
    for it in range(max_iter):
        resp = np.exp(lr)
        nk = resp.sum(axis=0)
        alive = nk > 1e-10 * n
        new_means = cb.means.copy()
        new_vars = cb.variances.copy()
        new_means[alive] = (resp[:, alive].T @ X) / nk[alive, None]
        for k in np.nonzero(alive)[0]:
            diff = X - new_means[k]
            new_vars[k] = (resp[:, k] @ (diff * diff)) / nk[k]
        w = np.maximum(nk, 1e-10 * n)
        cb = GmmCodebook(w / w.sum(), new_means, np.maximum(new_vars, variance_floor),
                         seed, variance_floor, channel)
        lr, lse = _log_responsibilities(cb, X)
        ll = float(lse.mean())
        history.append(ll)
        if not np.isfinite(ll):
            raise NumericError(f"log-likelihood became non-finite at EM iteration {it}")
        if ll - history[-2] < tol * abs(history[-2]):
            break
    cb.ll_history = history
    log.debug("GMM K=%d trained in %d iterations, ll=%.6g", K, len(history) - 1, history[-1])
    return cb


def _signed_sqrt_l2(v):
    v = np.sign(v) * np.sqrt(np.abs(v))
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def fisher_encode(cb: GmmCodebook, descriptors, normalize: bool = True,
                  channel: Optional[str] = None) -> FisherVector:
    """First-order Fisher vector of a descriptor set.

    G[k, d] = 1 / (N sqrt(w_k)) * sum_i gamma_ik (x_id - mu_kd) / sigma_kd,
    flattened component-major, then (when ``normalize``) signed square root
    and global l2 normalization.
    """
    X = np.asarray(descriptors, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise DataError("cannot encode an empty descriptor set")
    if X.shape[1] != cb.D:
        raise DataError(f"descriptor dimension {X.shape[1]} != codebook dimension {cb.D}")
    gamma = posteriors(cb, X)
    first = np.empty((cb.K, cb.D))
    for k in range(cb.K):
        # centred per component: no gamma^T X - N_k mu cancellation
        first[k] = gamma[:, k] @ (X - cb.means[k])
    first /= np.sqrt(cb.variances)
    first /= len(X) * np.sqrt(cb.weights)[:, None]
    values = first.ravel()
    if normalize:
        values = _signed_sqrt_l2(values)
    return FisherVector(values, channel or cb.channel, normalize)


def concat_channels(fvs: Sequence[FisherVector]) -> np.ndarray:
    """Concatenate per-channel vectors in the fixed order hog, hof, mbhx, mbhy, hodg."""
    by_name = {}
    for fv in fvs:
        if fv.channel not in CHANNELS:
            raise ValueError(f"unknown channel {fv.channel!r}")
        if fv.channel in by_name:
            raise ValueError(f"duplicate channel {fv.channel!r}")
        by_name[fv.channel] = fv.values
    return np.concatenate([by_name[c] for c in CHANNELS if c in by_name])


# -- PCA (optional, off by default) --------------------------------------------

@dataclass
class PcaProjection:
    mean: np.ndarray
    components: np.ndarray  # (dim, D)
    seed: Optional[int] = None
    channel: Optional[str] = None

    def apply(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.components.T


def fit_pca(samples, dim: int, seed: int = 0, subsample: int = SUBSAMPLE_CAP,
            channel: Optional[str] = None) -> PcaProjection:
    X = np.asarray(samples, dtype=np.float64)
    if not 1 <= dim <= X.shape[1]:
        raise ValueError(f"PCA dimension {dim} outside [1, {X.shape[1]}]")
    if len(X) > subsample:
        rng = np.random.default_rng(seed)
        X = X[np.sort(rng.choice(len(X), subsample, replace=False))]
    mean = X.mean(axis=0)
    _, _, vt = np.linalg.svd(X - mean, full_matrices=False)
    comps = vt[:dim]
    # fix the sign so the largest-magnitude loading of each component is positive
    idx = np.argmax(np.abs(comps), axis=1)
    comps = comps * np.sign(comps[np.arange(dim), idx])[:, None]
    return PcaProjection(mean, comps, seed, channel)


# -- serialization ---------------------------------------------------------------

def _check_header(doc, fmt, path):
    if doc.get("format") != fmt:
        raise DataError(f"{path}: expected a {fmt} file, found {doc.get('format')!r}")
    if doc.get("version") != FORMAT_VERSION:
        raise DataError(
            f"{path}: unsupported {fmt} version {doc.get('version')!r} (expected {FORMAT_VERSION})"
        )


def codebook_to_dict(cb: GmmCodebook) -> dict:
    return {
        "format": CODEBOOK_FORMAT,
        "version": FORMAT_VERSION,
        "channel": cb.channel,
        "K": cb.K,
        "D": cb.D,
        "seed": cb.seed,
        "variance_floor": cb.variance_floor,
        "weights": cb.weights.tolist(),
        "means": cb.means.ravel().tolist(),
        "variances": cb.variances.ravel().tolist(),
    }


def save_codebook(path, cb: GmmCodebook) -> None:
    Path(path).write_text(json.dumps(codebook_to_dict(cb)))


def load_codebook(path) -> GmmCodebook:
    doc = json.loads(Path(path).read_text())
    _check_header(doc, CODEBOOK_FORMAT, path)
    K, D = doc["K"], doc["D"]
    return GmmCodebook(
        weights=np.array(doc["weights"], dtype=np.float64),
        means=np.array(doc["means"], dtype=np.float64).reshape(K, D),
        variances=np.array(doc["variances"], dtype=np.float64).reshape(K, D),
        seed=doc.get("seed"),
        variance_floor=doc.get("variance_floor", 0.0),
        channel=doc.get("channel"),
    )


def save_pca(path, pca: PcaProjection) -> None:
    doc = {
        "format": PCA_FORMAT,
        "version": FORMAT_VERSION,
        "channel": pca.channel,
        "seed": pca.seed,
        "D": int(pca.components.shape[1]),
        "dim": int(pca.components.shape[0]),
        "mean": pca.mean.tolist(),
        "components": pca.components.ravel().tolist(),
    }
    Path(path).write_text(json.dumps(doc))


def load_pca(path) -> PcaProjection:
    doc = json.loads(Path(path).read_text())
    _check_header(doc, PCA_FORMAT, path)
    comps = np.array(doc["components"], dtype=np.float64).reshape(doc["dim"], doc["D"])
    return PcaProjection(np.array(doc["mean"]), comps, doc.get("seed"), doc.get("channel"))


_FV_MAGIC = b"FVEC1"


def write_fv_dump(path, vectors, labels) -> None:
    """Little-endian: "FVEC1", u32 count, u32 dim, then per video u16 label + f32 values."""
    V = np.asarray(vectors, dtype=np.float64)
    n, dim = V.shape
    rec = np.zeros(n, dtype=np.dtype([("label", "<u2"), ("values", "<f4", (dim,))]))
    rec["label"] = labels
    rec["values"] = V
    with open(path, "wb") as fh:
        fh.write(_FV_MAGIC + struct.pack("<II", n, dim))
        fh.write(rec.tobytes())


def read_fv_dump(path) -> tuple[np.ndarray, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:5] != _FV_MAGIC:
        if blob[:4] == _FV_MAGIC[:4]:
            raise DataError(f"{path}: unsupported FV dump version {blob[4:5]!r}")
        raise DataError(f"{path}: not an FV dump")
    n, dim = struct.unpack_from("<II", blob, 5)
    rec = np.dtype([("label", "<u2"), ("values", "<f4", (dim,))])
    if len(blob) - 13 != n * rec.itemsize:
        raise DataError(f"{path}: payload size does not match {n} x {dim}")
    arr = np.frombuffer(blob, dtype=rec, count=n, offset=13)
    return arr["label"].astype(np.int64), arr["values"].astype(np.float64).reshape(n, dim)
