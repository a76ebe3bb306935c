"""Learning algorithms for halfspaces and linear softmax models.

* ``max_margin_erm`` solves the bias-free hard-margin problem through
  its minimum-norm-point dual: the optimal direction is the shortest
  vector in the convex hull of the label-signed examples.  A Frank-
  Wolfe scheme with away steps and exact line search gives a duality
  gap certificate at every iteration.
* ``norm_constrained_margin_erm`` minimizes the hinge surrogate over a
  norm ball by projected subgradient descent and reports the exact 0-1
  margin loss of the best candidate; a scaling certificate derived from
  the hard-margin solution recovers exact zeros in the realizable case.
* ``robust_erm_halfspace`` runs subgradient descent on the worst-case
  hinge (margin shifted by radius times the dual norm) with seeded
  restarts and keeps the iterate with the smallest exact robust loss.
* ``pgd_attack`` / ``pgd_adversarial_training`` implement the standard
  l-infinity projected-gradient attack and the training loop that
  replaces every minibatch by its attacked version.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .core import (LabeledDataset, LinearHypothesis, NormKind,
                   PerturbationSet, robust_loss)
from .errors import ConfigError, EmptyDatasetError, NotSeparableError


# ---------------------------------------------------------------------------
# hard-margin ERM


def _min_norm_point(Z: np.ndarray, tol: float, max_iter: int):
    """Shortest vector in conv(rows of Z) via away-step Frank-Wolfe.

    Returns (p, lower, upper) where lower = min_i <p/|p|, z_i> and
    upper = |p| sandwich the optimal margin.  Raises NotSeparableError
    when the hull contains the origin (upper collapses to ~0).
    """
    n = Z.shape[0]
    norms = np.einsum("ij,ij->i", Z, Z)
    scale = float(np.sqrt(norms.max())) if n else 0.0
    if scale <= 0.0:
        raise NotSeparableError("all points are zero")
    start = int(np.argmin(norms))
    weights = {start: 1.0}
    p = Z[start].copy()
    for _ in range(max_iter):
        pp = float(p @ p)
        if pp <= (1e-12 * scale) ** 2:
            raise NotSeparableError("origin lies in the hull of signed examples")
        scores = Z @ p
        i_fw = int(np.argmin(scores))
        upper = np.sqrt(pp)
        lower = float(scores[i_fw]) / upper
        if upper - lower <= tol * upper:
            return p, lower, upper
        active = list(weights)
        i_aw = max(active, key=lambda i: scores[i])
        gain_fw = pp - float(scores[i_fw])          # -<grad, d_fw>
        gain_aw = float(scores[i_aw]) - pp          # -<grad, d_aw>
        if gain_fw >= gain_aw:
            d = Z[i_fw] - p
            dd = float(d @ d)
            if dd <= 0.0:
                return p, lower, upper
            gamma = min(1.0, max(0.0, gain_fw / dd))
            for i in active:
                weights[i] *= 1.0 - gamma
            weights[i_fw] = weights.get(i_fw, 0.0) + gamma
            p = p + gamma * d
        else:
            lam = weights[i_aw]
            if lam >= 1.0:
                return p, lower, upper
            d = p - Z[i_aw]
            dd = float(d @ d)
            if dd <= 0.0:
                return p, lower, upper
            gamma_max = lam / (1.0 - lam)
            gamma = min(gamma_max, max(0.0, gain_aw / dd))
            for i in active:
                weights[i] *= 1.0 + gamma
            weights[i_aw] -= gamma
            p = p + gamma * d
        weights = {i: v for i, v in weights.items() if v > 1e-14}
    pp = float(p @ p)
    if pp <= (1e-9 * scale) ** 2:
        raise NotSeparableError("origin lies in the hull of signed examples")
    upper = np.sqrt(pp)
    lower = float(np.min(Z @ p)) / upper
    return p, lower, upper


def max_margin_erm(S: LabeledDataset, tol: float = 1e-4,
                   max_iter: int = 50_000) -> LinearHypothesis:
    """Zero-error separator maximizing the geometric margin.

    The returned weight vector has unit norm.  Raises NotSeparableError
    when no positive-margin separator exists.
    """
    if len(S) == 0:
        raise EmptyDatasetError("cannot train on an empty dataset")
    Z = S.y[:, None] * S.X
    p, lower, _ = _min_norm_point(Z, tol, max_iter)
    if lower <= 0.0:
        raise NotSeparableError("no positive-margin separator found within budget")
    return LinearHypothesis(p / np.linalg.norm(p))


def geometric_margin(h: LinearHypothesis, S: LabeledDataset) -> float:
    """min_i y_i <w, x_i> / |w| for the given hypothesis."""
    w = h.w
    return float(np.min(S.y * (S.X @ w)) / np.linalg.norm(w))


# ---------------------------------------------------------------------------
# norm-constrained margin ERM (scale-aware detection)


def _margin01(margins: np.ndarray) -> float:
    return float(np.mean(margins < 1.0))


def norm_constrained_margin_erm(S: LabeledDataset, gamma_inv: float,
                                iters: int = 3000,
                                seed: int = 0) -> tuple[LinearHypothesis, float]:
    """Minimize the fraction of examples with y<w,x> < 1 subject to |w| <= gamma_inv.

    Runs projected subgradient descent on the hinge surrogate and keeps
    the candidate with the smallest exact 0-1 margin loss.  When the
    hard-margin separator scaled to the norm bound satisfies every
    margin constraint, it certifies a zero and is returned directly, so
    realizable instances report exactly 0.
    """
    if gamma_inv <= 0:
        raise ConfigError("gamma_inv must be positive")
    if len(S) == 0:
        raise EmptyDatasetError("cannot train on an empty dataset")
    B = float(gamma_inv)
    X, y = S.X, S.y

    best_w = np.zeros(S.d)
    best_loss = 1.0

    def consider(w: np.ndarray):
        nonlocal best_w, best_loss
        norm = np.linalg.norm(w)
        if norm <= 0.0:
            return
        wb = w * (B / norm)  # scaling up to the boundary never hurts the 0-1 margin loss
        loss = _margin01(y * (X @ wb))
        if loss < best_loss:
            best_loss, best_w = loss, wb

    try:
        hm = max_margin_erm(S)
        if B * geometric_margin(hm, S) >= 1.0 + 1e-9:
            w_cert = hm.w * B
            return LinearHypothesis(w_cert), _margin01(y * (X @ w_cert))
        consider(hm.w)
    except NotSeparableError:
        pass

    row_scale = float(np.sqrt(np.max(np.einsum("ij,ij->i", X, X)))) or 1.0
    inits = [np.zeros(S.d),
             rng.generator(seed, 31).standard_normal(S.d) * (B / np.sqrt(S.d))]
    for w in inits:
        for t in range(iters):
            margins = y * (X @ w)
            consider(w)
            active = margins < 1.0
            if not np.any(active):
                break
            grad = -(y[active, None] * X[active]).sum(axis=0) / len(y)
            step = B / (row_scale * np.sqrt(t + 1.0))
            w = w - step * grad
            norm = np.linalg.norm(w)
            if norm > B:
                w *= B / norm
        consider(w)
    return LinearHypothesis(best_w), best_loss


# ---------------------------------------------------------------------------
# robust ERM for halfspaces


def robust_erm_halfspace(S: LabeledDataset, P: PerturbationSet,
                         iters: int = 2000, seed: int = 0,
                         restarts: int = 3) -> LinearHypothesis:
    """Minimize the exact robust loss through its hinge surrogate.

    Subgradient descent on mean(max(0, 1 - (y<w,x> - radius*dual(w))))
    from several seeded starts; every iterate is scored with the exact
    robust loss and the best one wins.  The hard-margin direction (when
    it exists) joins the candidate pool first, which pins the zero-loss
    answer on robustly realizable data.
    """
    if len(S) == 0:
        raise EmptyDatasetError("cannot train on an empty dataset")
    X, y = S.X, S.y
    n, d = X.shape
    r = P.radius

    def exact(w: np.ndarray) -> float:
        return robust_loss(LinearHypothesis(w), S, P)

    best_w = np.zeros(d)
    best_loss = exact(best_w)

    def consider(w: np.ndarray):
        nonlocal best_w, best_loss
        loss = exact(w)
        if loss < best_loss:
            best_loss, best_w = loss, w.copy()

    try:
        consider(max_margin_erm(S, tol=1e-2, max_iter=2000).w)
    except NotSeparableError:
        pass
    if best_loss == 0.0:
        return LinearHypothesis(best_w)

    if n <= 64:
        # small sets: score directions spanned by one or two signed examples,
        # which covers the data-aligned corners of the 0-1 landscape
        Z = y[:, None] * X
        for i in range(n):
            if np.linalg.norm(Z[i]) > 1e-12:
                consider(Z[i])
            for j in range(i + 1, n):
                for cand in (Z[i] + Z[j], Z[i] - Z[j]):
                    if np.linalg.norm(cand) > 1e-12:
                        consider(cand)
        if best_loss == 0.0:
            return LinearHypothesis(best_w)

    row_scale = float(np.sqrt(np.max(np.einsum("ij,ij->i", X, X)))) or 1.0
    mean_dir = (y[:, None] * X).mean(axis=0)
    for restart in range(max(1, restarts)):
        if restart == 0:
            w = mean_dir.copy()
        else:
            w = rng.generator(seed, 41, restart).standard_normal(d) / np.sqrt(d)
        for t in range(iters):
            scores = X @ w
            if P.norm_kind is NormKind.L2:
                norm = np.linalg.norm(w)
                dual = norm
                dual_grad = w / norm if norm > 0 else np.zeros(d)
            else:
                dual = float(np.abs(w).sum())
                dual_grad = np.sign(w)
            raw = y * scores
            # exact robust loss of the current iterate, from the same scores
            loss = float(np.mean(raw <= r * dual))
            if loss < best_loss:
                best_loss, best_w = loss, w.copy()
            margins = raw - r * dual
            active = margins < 1.0
            frac = float(active.mean())
            if frac == 0.0:
                break
            grad = -(y[active, None] * X[active]).sum(axis=0) / n + frac * r * dual_grad
            step = 1.0 / (row_scale * np.sqrt(t + 1.0))
            w = w - step * grad
        consider(w)
        if best_loss == 0.0:
            break
    return LinearHypothesis(best_w)


# ---------------------------------------------------------------------------
# linear softmax models and PGD


@dataclass(frozen=True)
class PgdConfig:
    epsilon: float
    step_size: float
    iterations: int
    restarts: int

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigError("pgd epsilon must be nonnegative")
        if self.step_size <= 0:
            raise ConfigError("pgd step size must be positive")
        if self.iterations < 0 or self.restarts < 1:
            raise ConfigError("pgd needs iterations >= 0 and restarts >= 1")

    def to_json(self) -> dict:
        return {"epsilon": self.epsilon, "stepSize": self.step_size,
                "iterations": self.iterations, "restarts": self.restarts}

    @classmethod
    def from_json(cls, obj: dict) -> "PgdConfig":
        return cls(epsilon=float(obj["epsilon"]), step_size=float(obj["stepSize"]),
                   iterations=int(obj["iterations"]), restarts=int(obj["restarts"]))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    step_size: float
    seed: int
    pgd: PgdConfig

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.step_size <= 0:
            raise ConfigError("epochs, batch size, and step size must be positive")

    def to_json(self) -> dict:
        return {"epochs": self.epochs, "batchSize": self.batch_size,
                "stepSize": self.step_size, "seed": self.seed,
                "pgd": self.pgd.to_json()}

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        return cls(epochs=int(obj["epochs"]), batch_size=int(obj["batchSize"]),
                   step_size=float(obj["stepSize"]), seed=int(obj["seed"]),
                   pgd=PgdConfig.from_json(obj["pgd"]))


class SoftmaxModel:
    """Linear softmax classifier: scores = W x + b, prediction = argmax.

    Ties resolve to the lowest class index.
    """

    def __init__(self, W: np.ndarray, b: np.ndarray):
        W = np.asarray(W, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if W.ndim != 2 or b.shape != (W.shape[0],):
            raise ConfigError("W must be (classes, d) and b (classes,)")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ValueError("model parameters must be finite")
        self.W = W
        self.b = b

    @classmethod
    def zeros(cls, num_classes: int, d: int) -> "SoftmaxModel":
        return cls(np.zeros((num_classes, d)), np.zeros(num_classes))

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    def logits(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.W.T + self.b

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(X), axis=1)

    def zero_one_loss(self, X: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean(self.predict(X) != np.asarray(y)))

    def _probs(self, X: np.ndarray) -> np.ndarray:
        Z = self.logits(X)
        Z -= Z.max(axis=1, keepdims=True)
        E = np.exp(Z)
        return E / E.sum(axis=1, keepdims=True)

    def ce_per_example(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        P = self._probs(X)
        picked = P[np.arange(len(P)), np.asarray(y)]
        return -np.log(np.maximum(picked, 1e-300))

    def cross_entropy(self, X: np.ndarray, y: np.ndarray) -> float:
        return float(self.ce_per_example(X, y).mean())

    def loss_and_grad(self, X: np.ndarray, y: np.ndarray):
        """Mean cross-entropy with analytic gradients for W and b."""
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        n = X.shape[0]
        P = self._probs(X)
        loss = float(np.mean(-np.log(np.maximum(P[np.arange(n), y], 1e-300))))
        G = P.copy()
        G[np.arange(n), y] -= 1.0
        G /= n
        return loss, G.T @ X, G.sum(axis=0)

    def input_grad(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Per-row gradient of the cross-entropy with respect to the input."""
        P = self._probs(X)
        P[np.arange(len(P)), np.asarray(y)] -= 1.0
        return P @ self.W

    def to_json(self) -> dict:
        return {"W": self.W.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "SoftmaxModel":
        return cls(np.asarray(obj["W"], dtype=np.float64),
                   np.asarray(obj["b"], dtype=np.float64))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "SoftmaxModel":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


_PGD_MAX_ROWS = 32_768


def pgd_attack_batch(model: SoftmaxModel, X: np.ndarray, y: np.ndarray,
                     cfg: PgdConfig, seed: int) -> np.ndarray:
    """l-infinity PGD on every row of X, staying inside [0,1]^d.

    Restart 0 starts at the clean input, the remaining restarts at
    uniform points of the ball; random draws for row i come from the
    stream (seed, i) so results do not depend on how the batch is
    split.  All restarts advance as one stacked matrix.  The clean
    input itself stays in the candidate pool, and the candidate with
    the largest cross-entropy wins per row (earlier restart on ties).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    n, d = X.shape
    R = cfg.restarts
    chunk = max(1, _PGD_MAX_ROWS // max(R, 1))
    if n > chunk:
        parts = []
        for start in range(0, n, chunk):
            sl = slice(start, min(start + chunk, n))
            parts.append(_pgd_chunk(model, X[sl], y[sl], cfg, seed, start))
        return np.vstack(parts)
    return _pgd_chunk(model, X, y, cfg, seed, 0)


def _pgd_chunk(model: SoftmaxModel, X: np.ndarray, y: np.ndarray,
               cfg: PgdConfig, seed: int, index_base: int) -> np.ndarray:
    n, d = X.shape
    R = cfg.restarts
    eps = cfg.epsilon
    lo = np.maximum(X - eps, 0.0)
    hi = np.minimum(X + eps, 1.0)
    starts = np.empty((R, n, d))
    starts[0] = X
    if R > 1:
        if eps > 0:
            noise = np.stack(
                [rng.generator(seed, index_base + i).uniform(-eps, eps, (R - 1, d))
                 for i in range(n)], axis=1)
            starts[1:] = np.clip(X[None, :, :] + noise, lo[None], hi[None])
        else:
            starts[1:] = X[None, :, :]
    xa = starts.reshape(R * n, d)
    y_all = np.tile(y, R)
    lo_all = np.tile(lo, (R, 1))
    hi_all = np.tile(hi, (R, 1))
    for _ in range(cfg.iterations):
        g = model.input_grad(xa, y_all)
        xa = np.clip(xa + cfg.step_size * np.sign(g), lo_all, hi_all)
    losses = model.ce_per_example(xa, y_all).reshape(R, n)
    xa = xa.reshape(R, n, d)
    pick = np.argmax(losses, axis=0)
    rows = np.arange(n)
    cand_x = xa[pick, rows]
    cand_loss = losses[pick, rows]
    clean_loss = model.ce_per_example(X, y)
    out = X.copy()
    better = cand_loss > clean_loss
    out[better] = cand_x[better]
    return out


def pgd_attack(model: SoftmaxModel, x: np.ndarray, y: int,
               cfg: PgdConfig, seed: int) -> np.ndarray:
    """Single-example convenience wrapper around pgd_attack_batch."""
    return pgd_attack_batch(model, np.asarray(x, dtype=np.float64)[None, :],
                            np.array([y]), cfg, seed)[0]


def _random_restart_seed(base: int, epoch: int, batch: int) -> int:
    return (base * 1_000_003 + epoch * 131 + batch) & ((1 << 63) - 1)


def pgd_adversarial_training(S: LabeledDataset, cfg: TrainConfig,
                             log_sink: list | None = None) -> SoftmaxModel:
    """Minibatch SGD on cross-entropy where each batch is replaced by
    its PGD-attacked version.  With epsilon = 0 the attack is the
    identity and the trajectory coincides with vanilla training for the
    same seed.  Deterministic given cfg.seed.
    """
    if S.num_classes is None:
        raise ConfigError("adversarial training expects a multiclass dataset")
    X, y = S.X, S.y
    if len(S) == 0:
        raise EmptyDatasetError("cannot train on an empty dataset")
    if X.min() < -1e-12 or X.max() > 1.0 + 1e-12:
        raise ConfigError("pixel features must lie in [0, 1]")
    model = SoftmaxModel.zeros(S.num_classes, S.d)
    n = len(S)
    for epoch in range(cfg.epochs):
        order = rng.generator(cfg.seed, 11, epoch).permutation(n)
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            Xb, yb = X[idx], y[idx]
            if cfg.pgd.epsilon > 0 and cfg.pgd.iterations >= 0:
                Xb = pgd_attack_batch(model, Xb, yb, cfg.pgd,
                                      _random_restart_seed(cfg.seed, epoch, b))
            loss, gW, gb = model.loss_and_grad(Xb, yb)
            model.W -= cfg.step_size * gW
            model.b -= cfg.step_size * gb
            if log_sink is not None:
                log_sink.append((epoch, b, loss))
    return model


def vanilla_training(S: LabeledDataset, cfg: TrainConfig,
                     log_sink: list | None = None) -> SoftmaxModel:
    """Plain minibatch SGD; identical to adversarial training at epsilon 0."""
    zero_pgd = PgdConfig(epsilon=0.0, step_size=cfg.pgd.step_size,
                         iterations=cfg.pgd.iterations, restarts=cfg.pgd.restarts)
    quiet = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size,
                        step_size=cfg.step_size, seed=cfg.seed, pgd=zero_pgd)
    return pgd_adversarial_training(S, quiet, log_sink=log_sink)
