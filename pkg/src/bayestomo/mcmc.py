"""Preconditioned Crank-Nicolson sampling with pluggable forward backends.

The proposal mixes the current latent state with a fresh prior draw,
``q* = sqrt(1 - 2*delta) q + sqrt(2*delta) Y``, and is accepted with
probability ``min(1, exp(L(q*) - L(q)))`` where L is the Gaussian
log-likelihood of the observed measurement.  Because the proposal is
reversible with respect to the prior, no prior-density ratio appears in the
acceptance rule.  The step size delta is adapted multiplicatively during
burn-in to hold the acceptance rate near the configured target and then
frozen.

The sampler never looks inside the forward model: exact finite element
solvers and trained surrogates are exchangeable behind the same interface,
and swapping one for the other with the same seed replays the identical
chain when their outputs agree.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .fem import Measurement
from .prior import GPPrior, sample_gp


class BackendError(RuntimeError):
    """A forward backend failed during sampling."""


class ForwardBackend:
    """Deterministic map from a latent vector to a measurement array.

    Subclasses implement :meth:`_evaluate`; the public :meth:`evaluate`
    counts invocations so experiments can audit solver cost.
    """

    kind = "fem"

    def __init__(self):
        self.eval_counter = 0

    def evaluate(self, q: np.ndarray) -> np.ndarray:
        self.eval_counter += 1
        return self._evaluate(q)

    def _evaluate(self, q: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class CallableBackend(ForwardBackend):
    """Wrap a plain function as a backend."""

    def __init__(self, fn, kind: str = "fem"):
        super().__init__()
        self.fn = fn
        self.kind = kind

    def _evaluate(self, q: np.ndarray) -> np.ndarray:
        return self.fn(q)


class LinearBackend(ForwardBackend):
    """G(q) = A q, the conjugate-Gaussian reference model."""

    def __init__(self, A: np.ndarray):
        super().__init__()
        self.A = np.asarray(A, dtype=float)

    def _evaluate(self, q: np.ndarray) -> np.ndarray:
        return self.A @ q


@dataclass
class PcnConfig:
    """Chain length, step-size adaptation and noise settings.

    ``delta`` must stay in (0, 1/2) so the autoregressive weight
    ``sqrt(1 - 2*delta)`` is real.  ``noise_sigma`` overrides the sigma
    recorded on the observed measurement when set.
    """

    delta: float = 0.1
    target_accept: float = 0.25
    adapt_window: int = 100
    burn_in: int = 1000
    samples: int = 1000
    seed: int = 0
    thin: int = 1
    noise_sigma: float | None = None
    flush_path: str | None = None

    def __post_init__(self):
        if not 0 < self.delta < 0.5:
            raise ValueError("delta must lie in (0, 1/2)")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.adapt_window < 1 or self.burn_in < 0 or self.samples < 0 or self.thin < 1:
            raise ValueError("invalid chain sizing")


@dataclass
class Chain:
    """Recorded pCN run: stored post-burn-in samples plus full traces."""

    samples: np.ndarray
    loglik_trace: np.ndarray
    accept_flags: np.ndarray
    delta_history: list
    wall_time: float
    burn_in: int
    thin: int = 1
    meta: dict = field(default_factory=dict)


def log_likelihood(y_obs: Measurement, backend: ForwardBackend, q: np.ndarray) -> float:
    """Gaussian log-likelihood -||y - G(q)||_F^2 / (2 sigma^2)."""
    sigma = y_obs.noise_sigma
    if sigma <= 0:
        raise ValueError("observed measurement must carry a positive noise_sigma")
    try:
        pred = backend.evaluate(q)
    except Exception as exc:
        raise BackendError(f"forward backend failed: {exc}") from exc
    resid = y_obs.data - pred
    return -float(np.sum(resid * resid)) / (2.0 * sigma * sigma)


def pcn_step(
    q: np.ndarray,
    prior: GPPrior,
    backend: ForwardBackend,
    y_obs: Measurement,
    delta: float,
    rng: np.random.Generator,
    current_loglik: float | None = None,
):
    """One proposal/accept step; returns (state, accepted, loglik).

    Passing ``current_loglik`` avoids re-evaluating the forward model for
    the retained state, which keeps the cost at exactly one evaluation per
    iteration.
    """
    if not 0 < delta < 0.5:
        raise ValueError("delta must lie in (0, 1/2)")
    if current_loglik is None:
        current_loglik = log_likelihood(y_obs, backend, q)
    proposal = np.sqrt(1.0 - 2.0 * delta) * q + np.sqrt(2.0 * delta) * sample_gp(prior, rng)
    prop_loglik = log_likelihood(y_obs, backend, proposal)
    if np.log(rng.uniform()) < prop_loglik - current_loglik:
        return proposal, True, prop_loglik
    return q, False, current_loglik


def adapt_delta(delta: float, recent_accept_rate: float, target: float, gain: float = 1.0) -> float:
    """Multiplicative step-size update toward the target acceptance rate."""
    new = delta * np.exp(gain * (recent_accept_rate - target))
    return float(np.clip(new, 1e-6, 0.5 - 1e-6))


def run_chain(
    cfg: PcnConfig,
    prior: GPPrior,
    backend: ForwardBackend,
    y_obs: Measurement,
    q0: np.ndarray,
) -> Chain:
    """Burn-in with step-size adaptation, then record ``cfg.samples`` states.

    Deterministic per seed.  If the backend fails mid-run the partial traces
    are flushed to ``cfg.flush_path`` (when set) before the error propagates.
    """
    q0 = np.asarray(q0, dtype=float)
    if q0.shape != (prior.dim,):
        raise ValueError(f"initial state has dimension {q0.shape}, prior has {prior.dim}")
    if cfg.noise_sigma is not None:
        y_obs = Measurement(y_obs.data, noise_sigma=cfg.noise_sigma, kind=y_obs.kind)
    rng = np.random.default_rng(cfg.seed)
    total = cfg.burn_in + cfg.samples
    accept_flags = np.zeros(total, dtype=bool)
    loglik_trace = np.zeros(total)
    stored = []
    delta = cfg.delta
    delta_history = [(0, delta)]
    window_accepts = 0
    t_start = time.perf_counter()
    q = q0
    loglik = log_likelihood(y_obs, backend, q0)
    try:
        for it in range(total):
            q, accepted, loglik = pcn_step(q, prior, backend, y_obs, delta, rng, loglik)
            accept_flags[it] = accepted
            loglik_trace[it] = loglik
            in_burn = it < cfg.burn_in
            if in_burn:
                window_accepts += int(accepted)
                if (it + 1) % cfg.adapt_window == 0:
                    delta = adapt_delta(delta, window_accepts / cfg.adapt_window, cfg.target_accept)
                    delta_history.append((it + 1, delta))
                    window_accepts = 0
            elif (it - cfg.burn_in) % cfg.thin == 0:
                stored.append(q.copy())
    except BackendError:
        if cfg.flush_path is not None:
            partial = Chain(
                samples=np.array(stored) if stored else np.empty((0, prior.dim)),
                loglik_trace=loglik_trace,
                accept_flags=accept_flags,
                delta_history=delta_history,
                wall_time=time.perf_counter() - t_start,
                burn_in=cfg.burn_in,
                thin=cfg.thin,
                meta={"aborted": True},
            )
            dump_chain(partial, cfg.flush_path)
        raise
    wall = time.perf_counter() - t_start
    samples = np.array(stored) if stored else np.empty((0, prior.dim))
    return Chain(
        samples=samples,
        loglik_trace=loglik_trace,
        accept_flags=accept_flags,
        delta_history=delta_history,
        wall_time=wall,
        burn_in=cfg.burn_in,
        thin=cfg.thin,
        meta={"backend": backend.kind, "seed": cfg.seed, "delta_final": delta},
    )


def posterior_mean(chain: Chain) -> np.ndarray:
    """Componentwise Monte Carlo average of the stored samples."""
    if chain.samples.shape[0] == 0:
        raise ValueError("chain holds no stored samples")
    return chain.samples.mean(axis=0)


def acceptance_rate(chain: Chain, post_burn_in: bool = True) -> float:
    flags = chain.accept_flags[chain.burn_in :] if post_burn_in else chain.accept_flags
    if flags.size == 0:
        raise ValueError("no iterations in the requested region")
    return float(flags.mean())


def dump_chain(chain: Chain, directory) -> None:
    """Write ``trace.csv`` plus the binary sample store ``samples.bin``.

    The sample store is a dim/count header of uint32 followed by the stored
    latent vectors as little-endian doubles.
    """
    import os
    import struct

    os.makedirs(directory, exist_ok=True)
    deltas = dict(chain.delta_history)
    current = chain.delta_history[0][1]
    with open(os.path.join(directory, "trace.csv"), "w") as fh:
        fh.write("iter,loglik,accepted,delta\n")
        for it in range(len(chain.accept_flags)):
            current = deltas.get(it, current)
            fh.write(
                f"{it},{float(chain.loglik_trace[it])!r},{int(chain.accept_flags[it])},{float(current)!r}\n"
            )
    dim = chain.samples.shape[1] if chain.samples.size else 0
    with open(os.path.join(directory, "samples.bin"), "wb") as fh:
        fh.write(struct.pack("<II", dim, chain.samples.shape[0]))
        fh.write(np.ascontiguousarray(chain.samples, dtype="<f8").tobytes())


def load_samples(path) -> np.ndarray:
    """Read the binary sample store written by :func:`dump_chain`."""
    import struct

    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) != 8:
            raise ValueError(f"sample store {path} truncated")
        dim, count = struct.unpack("<II", head)
        blob = fh.read()
    if len(blob) != 8 * dim * count:
        raise ValueError(f"sample store {path} truncated")
    return np.frombuffer(blob, dtype="<f8").reshape(count, dim).copy()
