"""Adaptive random-walk Metropolis-within-Gibbs over parameter blocks.

The sweep loop is compiled with numba. The log target is a numba-compiled
function ``log_target(x, aux, params) -> float`` of one chain's state
``x`` (1-D), an integer auxiliary state ``aux`` (e.g. a mixture component)
and an arbitrary tuple ``params`` passed through untouched.

Each block proposes a Gaussian step ``scale * L z`` with ``L L^T`` the
block's proposal covariance. The covariance is the conditional covariance
of the block given all other coordinates (block of the precision matrix,
inverted), first from a user-supplied guess and during burn-in from the
chains' history. The scale follows a Robbins-Monro recursion toward the
target acceptance rate. Both are frozen after burn-in, so retained draws
come from a fixed reversible kernel. All random numbers are drawn up front
from the caller's numpy Generator, which keeps runs reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from numba import njit

TARGET_ACCEPT = 0.3
COV_UPDATE_EVERY = 100
COV_UPDATE_START = 200


@dataclass
class Block:
    name: str
    index: np.ndarray

    def __post_init__(self):
        self.index = np.asarray(self.index, dtype=np.int64).reshape(-1)


@dataclass
class ChainOutput:
    samples: np.ndarray  # (chains, n_keep, dim)
    aux: Optional[np.ndarray]  # (chains, n_keep) discrete state, if any
    acceptance: Dict[str, float]
    burn_acceptance: Dict[str, float]
    scales: Dict[str, float]
    proposal_cov: Dict[str, np.ndarray] = field(repr=False, default_factory=dict)


@njit(cache=True)
def _no_aux(x, aux, params, u):
    return aux


@njit(cache=True)
def _chol(cov):
    d = cov.shape[0]
    tr = 0.0
    for i in range(d):
        tr += cov[i, i]
    jitter = 1e-12 * max(tr / d, 1e-300)
    sym = 0.5 * (cov + cov.T)
    for _ in range(12):
        ok = True
        L = np.zeros((d, d))
        a = sym + jitter * np.eye(d)
        for i in range(d):
            for j in range(i + 1):
                s = a[i, j]
                for k in range(j):
                    s -= L[i, k] * L[j, k]
                if i == j:
                    if s <= 0.0:
                        ok = False
                        break
                    L[i, i] = np.sqrt(s)
                else:
                    L[i, j] = s / L[j, j]
            if not ok:
                break
        if ok:
            return L
        jitter *= 100.0
    L = np.zeros((d, d))
    for i in range(d):
        L[i, i] = np.sqrt(max(sym[i, i], 1e-12))
    return L


@njit(cache=True)
def _block_covs(full, blk_idx, blk_len, out_cov, out_chol):
    """Conditional covariance of each block given the rest of ``full``."""
    D = full.shape[0]
    prec = np.linalg.inv(full + 1e-12 * np.trace(full) / D * np.eye(D))
    for b in range(blk_len.shape[0]):
        d = blk_len[b]
        sub = np.empty((d, d))
        for i in range(d):
            for j in range(d):
                sub[i, j] = prec[blk_idx[b, i], blk_idx[b, j]]
        c = np.linalg.inv(0.5 * (sub + sub.T))
        out_cov[b, :d, :d] = c
        out_chol[b, :d, :d] = _chol(c)


@njit(cache=True)
def _window_cov(history, start, stop):
    n_chains = history.shape[1]
    D = history.shape[2]
    m = (stop - start) * n_chains
    mean = np.zeros(D)
    for t in range(start, stop):
        for c in range(n_chains):
            mean += history[t, c]
    mean /= m
    cov = np.zeros((D, D))
    for t in range(start, stop):
        for c in range(n_chains):
            r = history[t, c] - mean
            cov += np.outer(r, r)
    return cov / (m - 1)


@njit(cache=True)
def _run(log_target, aux_update, params, x0, aux0, has_aux, blk_idx, blk_len, blk_off, cov0,
         n_burn, n_keep, thin, target_accept, z, u_acc, u_aux):
    n_chains, D = x0.shape
    nb = blk_len.shape[0]
    maxd = blk_idx.shape[1]
    x = x0.copy()
    aux = aux0.copy()
    lp = np.empty(n_chains)
    for c in range(n_chains):
        lp[c] = log_target(x[c], aux[c], params)
    cov = np.zeros((nb, maxd, maxd))
    chol = np.zeros((nb, maxd, maxd))
    _block_covs(cov0, blk_idx, blk_len, cov, chol)
    log_scale = np.empty(nb)
    for b in range(nb):
        log_scale[b] = np.log(2.38 / np.sqrt(blk_len[b]))
    acc_burn = np.zeros(nb)
    acc_keep = np.zeros(nb)
    history = np.empty((max(n_burn, 1), n_chains, D))
    samples = np.empty((n_chains, n_keep, D))
    aux_out = np.zeros((n_chains, n_keep), dtype=np.int64)
    total = n_burn + n_keep * thin
    prop = np.empty(D)
    for t in range(total):
        burning = t < n_burn
        for b in range(nb):
            d = blk_len[b]
            s = np.exp(log_scale[b])
            n_acc = 0
            for c in range(n_chains):
                prop[:] = x[c]
                for i in range(d):
                    step = 0.0
                    for k in range(i + 1):
                        step += chol[b, i, k] * z[t, c, blk_off[b] + k]
                    prop[blk_idx[b, i]] += s * step
                lpp = log_target(prop, aux[c], params)
                if np.isfinite(lpp) and np.log(u_acc[t, c, b]) < lpp - lp[c]:
                    x[c] = prop
                    lp[c] = lpp
                    n_acc += 1
            rate = n_acc / n_chains
            if burning:
                acc_burn[b] += rate
                log_scale[b] += (rate - target_accept) / (t + 1) ** 0.6
            else:
                acc_keep[b] += rate
        if has_aux:
            for c in range(n_chains):
                aux[c] = aux_update(x[c], aux[c], params, u_aux[t, c])
                lp[c] = log_target(x[c], aux[c], params)
        if burning:
            history[t] = x
            if t + 1 >= 200 and (t + 1) % 100 == 0:
                full = _window_cov(history, (t + 1) // 2, t + 1)
                ok = True
                for i in range(D):
                    if not (full[i, i] > 0.0) or not np.isfinite(full[i, i]):
                        ok = False
                if ok:
                    _block_covs(full, blk_idx, blk_len, cov, chol)
        else:
            k = (t - n_burn) // thin
            if (t - n_burn) % thin == thin - 1:
                samples[:, k] = x
                aux_out[:, k] = aux
    return samples, aux_out, acc_keep, acc_burn, np.exp(log_scale), cov


def adaptive_mwg(
    log_target: Callable,
    params: tuple,
    x0: np.ndarray,
    blocks: Sequence[Block],
    init_cov: np.ndarray,
    n_burn: int,
    n_keep: int,
    rng: np.random.Generator,
    aux0: Optional[np.ndarray] = None,
    aux_update: Optional[Callable] = None,
    target_accept: float = TARGET_ACCEPT,
    thin: int = 1,
) -> ChainOutput:
    """Run ``x0.shape[0]`` chains for ``n_burn + n_keep * thin`` sweeps.

    ``log_target`` and ``aux_update(x, aux, params, u) -> int`` must be
    numba-compiled; ``aux_update`` receives one uniform variate and performs
    an exact Gibbs update of the discrete state once per sweep.
    ``init_cov`` is a guess at the joint posterior covariance of ``x``.
    """
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    n_chains, dim = x0.shape
    if n_keep < 1 or n_burn < 0 or thin < 1:
        raise ValueError("need n_keep >= 1, n_burn >= 0, thin >= 1")
    maxd = max(len(b.index) for b in blocks)
    blk_idx = np.zeros((len(blocks), maxd), dtype=np.int64)
    blk_len = np.array([len(b.index) for b in blocks], dtype=np.int64)
    blk_off = np.concatenate([[0], np.cumsum(blk_len)[:-1]]).astype(np.int64)
    for i, b in enumerate(blocks):
        blk_idx[i, :len(b.index)] = b.index
    cov0 = np.ascontiguousarray(init_cov, dtype=np.float64)
    if cov0.shape != (dim, dim):
        raise ValueError(f"init_cov shape {cov0.shape} != {(dim, dim)}")
    has_aux = aux0 is not None
    aux = np.zeros(n_chains, dtype=np.int64) if aux0 is None else np.asarray(aux0, dtype=np.int64)
    for c in range(n_chains):
        if not np.isfinite(log_target(x0[c], aux[c], params)):
            raise ValueError("initial state has zero posterior density")
    total = n_burn + n_keep * thin
    z = rng.standard_normal((total, n_chains, int(blk_len.sum())))
    u_acc = rng.random((total, n_chains, len(blocks)))
    u_aux = rng.random((total, n_chains)) if has_aux else np.zeros((total, n_chains))
    samples, aux_out, acc_keep, acc_burn, scales, cov = _run(
        log_target, aux_update if aux_update is not None else _no_aux, params, x0, aux, has_aux,
        blk_idx, blk_len, blk_off, cov0, n_burn, n_keep, thin, target_accept, z, u_acc, u_aux)
    names = [b.name for b in blocks]
    kept = max(total - n_burn, 1)
    return ChainOutput(
        samples=samples,
        aux=aux_out if has_aux else None,
        acceptance={nm: float(acc_keep[i] / kept) for i, nm in enumerate(names)},
        burn_acceptance={nm: float(acc_burn[i] / max(n_burn, 1)) for i, nm in enumerate(names)},
        scales={nm: float(scales[i]) for i, nm in enumerate(names)},
        proposal_cov={nm: cov[i, :blk_len[i], :blk_len[i]].copy() for i, nm in enumerate(names)},
    )


def split_rhat(draws: np.ndarray) -> float:
    """Split-chain potential scale reduction for draws of shape (chains, n)."""
    draws = np.asarray(draws, dtype=float)
    n = draws.shape[1] // 2
    if n < 2:
        return float("nan")
    halves = np.concatenate([draws[:, :n], draws[:, -n:]], axis=0)
    w = halves.var(axis=1, ddof=1).mean()
    b = n * halves.mean(axis=1).var(ddof=1)
    if w == 0:
        return 1.0 if b == 0 else float("inf")
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def _autocov(x: np.ndarray) -> np.ndarray:
    n = len(x)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x - x.mean(), size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def effective_sample_size(draws: np.ndarray) -> float:
    """Multi-chain ESS with Geyer's initial monotone sequence."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    m, n = draws.shape
    if n < 4:
        return float(m * n)
    acov = np.array([_autocov(c) for c in draws])
    chain_var = acov[:, 0] * n / (n - 1)
    w = chain_var.mean()
    var_plus = w * (n - 1) / n
    if m > 1:
        var_plus += draws.mean(axis=1).var(ddof=1)
    if var_plus <= 0:
        return float(m * n)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    pairs: List[float] = []
    t = 0
    while t + 1 < n:
        s = rho[t] + rho[t + 1]
        if s < 0:
            break
        pairs.append(s)
        t += 2
    pairs_arr = np.minimum.accumulate(np.array(pairs)) if pairs else np.array([1.0])
    tau = -1.0 + 2.0 * pairs_arr.sum()
    return float(m * n / max(tau, 1.0 / np.log10(m * n + 10)))
