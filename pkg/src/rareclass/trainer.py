"""Joint minimization of the correlation-penalized objective via Nesterov-accelerated
subgradient descent, full-batch or mini-batch."""

from __future__ import annotations

import sys
from dataclasses import dataclass

import numpy as np

from .objective import (
    BoundData, GramCache, Hyperparams, ModelParams, ObjectiveError,
    grad_bias, grad_w0, grad_wk, gram_squared, total_loss,
)


class DivergenceError(RuntimeError):
    """Loss exploded past the divergence guard."""


@dataclass(frozen=True)
class TrainConfig:
    max_iters: int = 500
    step_size: float | None = None   # None -> 1/(lambda0 + mu*max diag of G2)
    step_decay: str = "inv_sqrt"     # "fixed" | "inv_sqrt"
    momentum: float = 0.9
    tol: float = 1e-6
    batch: int | None = None         # None -> full batch; m -> minibatch size
    seed: int = 0
    log_every: int = 0               # 0 disables progress lines
    track_iterates: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.step_decay not in ("fixed", "inv_sqrt"):
            raise ValueError(f"unknown step_decay {self.step_decay!r}")


@dataclass
class TrainedModel:
    params: ModelParams
    hp: Hyperparams
    loss_trace: list[float]
    converged: bool
    iters_run: int
    gram: GramCache | None = None
    iterates: list[ModelParams] | None = None


def default_step_size(hp: Hyperparams, gram: GramCache) -> float:
    return 1.0 / (hp.lambda0 + hp.mu * float(np.max(np.diag(gram.g2))) + 1e-12)


def _joint_grad(params: ModelParams, data: BoundData, hp: Hyperparams,
                gram: GramCache) -> ModelParams:
    gw0 = grad_w0(params, data, hp, gram)
    gb0 = grad_bias(0, params, data)
    gW = np.empty_like(params.W)
    gb = np.empty(data.K)
    for k in range(1, data.K + 1):
        gW[k - 1] = grad_wk(k, params, data, hp, gram)
        gb[k - 1] = grad_bias(k, params, data)
    return ModelParams(w0=gw0, b0=gb0, W=gW, b=gb)


def _batch_view(data: BoundData, rng: np.random.Generator, m: int):
    """Sample a size-m batch; return (X_b, y_b, gc_scale, R_b, Yk_b, sc_scale)."""
    idx = np.sort(rng.choice(data.n, size=m, replace=False))
    rare = idx[data.y_all[idx] > 0]
    # map full-data rare indices into rare-row positions
    rare_pos = np.cumsum(data.y_all > 0) - 1
    rpos = rare_pos[rare].astype(int)
    gc_scale = data.n / m
    sc_scale = data.n0 / len(rpos) if len(rpos) else 0.0
    return (data.X[idx], data.y_all[idx], gc_scale,
            data.R[rpos], data.Yk[:, rpos], sc_scale)


def _batch_grad(params: ModelParams, data: BoundData, hp: Hyperparams,
                gram: GramCache, rng: np.random.Generator, m: int) -> ModelParams:
    # hinge terms estimated from the batch; penalty/ridge terms exact
    Xb, yb, gc_scale, Rb, Ykb, sc_scale = _batch_view(data, rng, m)
    a_sum = (params.W ** 2).sum(axis=0)
    active0 = (1.0 - yb * (Xb @ params.w0 + params.b0)) > 0.0
    gw0 = gc_scale * (Xb.T @ (-yb * active0))
    gw0 += params.w0 * (hp.lambda0 + hp.mu * (gram.g2 @ (a_sum + params.w0 ** 2)))
    gb0 = gc_scale * float(np.sum(-yb * active0))
    gW = np.empty_like(params.W)
    gb = np.empty(data.K)
    for k in range(data.K):
        yk = Ykb[k]
        active = (1.0 - yk * (Rb @ params.W[k] + params.b[k])) > 0.0
        gW[k] = sc_scale * (Rb.T @ (-yk * active))
        gW[k] += params.W[k] * (hp.lambdaK[k] + hp.mu * (gram.g2 @ (params.W[k] ** 2 + params.w0 ** 2)))
        gb[k] = sc_scale * float(np.sum(-yk * active))
    return ModelParams(w0=gw0, b0=gb0, W=gW, b=gb)


def fit(data: BoundData, hp: Hyperparams, cfg: TrainConfig = TrainConfig(),
        gram: GramCache | None = None) -> TrainedModel:
    """Nesterov-accelerated subgradient descent on the joint parameter block.

    The squared Gram is built once up front and reused every iteration. Returns
    the best-recorded iterate, since subgradient steps are not monotone. With
    cfg.batch set, hinge subgradients are estimated from seeded random batches
    (scaled back to full sums); the penalty terms stay exact.
    """
    if gram is None:
        gram = gram_squared(data.X)
    else:
        gram.check(data.X)
    step0 = cfg.step_size if cfg.step_size is not None else default_step_size(hp, gram)
    rng = np.random.default_rng(cfg.seed)
    m = cfg.batch
    if m is not None and not 1 <= m <= data.n:
        raise ValueError(f"batch size {m} outside 1..{data.n}")

    d, K = data.d, data.K
    theta = ModelParams.zeros(d, K).flat()
    velocity = np.zeros_like(theta)
    best_loss = np.inf
    best_theta = theta.copy()
    loss_trace: list[float] = []
    iterates: list[ModelParams] | None = [] if cfg.track_iterates else None
    initial_loss = None
    converged = False
    iters_run = 0

    for it in range(cfg.max_iters):
        eta = step0 if cfg.step_decay == "fixed" else step0 / np.sqrt(1.0 + it)
        lookahead = ModelParams.from_flat(theta + cfg.momentum * velocity, d, K)
        if m is None:
            g = _joint_grad(lookahead, data, hp, gram)
        else:
            g = _batch_grad(lookahead, data, hp, gram, rng, m)
        velocity = cfg.momentum * velocity - eta * g.flat()
        theta = theta + velocity
        iters_run = it + 1

        params = ModelParams.from_flat(theta, d, K)
        loss = total_loss(params, data, hp, gram)
        loss_trace.append(loss)
        if iterates is not None:
            iterates.append(params.copy())
        if initial_loss is None:
            initial_loss = max(loss, 1e-12)
        if loss > 1e6 * initial_loss:
            raise DivergenceError(
                f"loss {loss:.3e} exceeded 1e6x initial {initial_loss:.3e} at iter {it}")
        if loss < best_loss:
            best_loss = loss
            best_theta = theta.copy()
        if cfg.log_every and (it + 1) % cfg.log_every == 0:
            gnorm = float(np.linalg.norm(g.flat()))
            print(f"iter={it + 1} loss={loss:.6g} grad_norm={gnorm:.6g}", file=sys.stderr)
        if len(loss_trace) > 10:
            window = loss_trace[-11:]
            span = max(abs(window[0]), abs(window[-1]), 1e-12)
            if abs(window[0] - window[-1]) / span < cfg.tol:
                converged = True
                break

    return TrainedModel(params=ModelParams.from_flat(best_theta, d, K), hp=hp,
                        loss_trace=loss_trace, converged=converged,
                        iters_run=iters_run, gram=gram, iterates=iterates)


def fit_minibatch(data: BoundData, hp: Hyperparams, cfg: TrainConfig,
                  gram: GramCache | None = None) -> TrainedModel:
    """fit with cfg.batch required; kept as a named entry point."""
    if cfg.batch is None:
        raise ValueError("fit_minibatch requires cfg.batch")
    return fit(data, hp, cfg, gram=gram)
