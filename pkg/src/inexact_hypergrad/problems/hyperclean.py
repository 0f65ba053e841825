"""Data hypercleaning on synthetic Gaussian-blob classification.

Lower level: weighted multinomial logistic regression

    g(X, theta) = 1/N sum_j sigmoid(theta_j) CE(X x_j, y_j) + C |X|_F^2

over X in R^{n_c x d_f} (flattened row-major).  Upper level: mean
cross-entropy on a clean validation set.  A fraction of training labels is
flipped to a different class chosen uniformly at random.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_softmax, softmax

from ..core import (BilevelTask, ContractViolation, CurvatureConstants,
                    LowerProblem, UpperObjective)
from .rng import rng_stream

log = logging.getLogger(__name__)

# Upper bound on the Lipschitz constant (in the logits) of the softmax
# cross-entropy Hessian; the exact supremum is below 1/sqrt(2).
SOFTMAX_HESS_LIP = 1.0


@dataclass(frozen=True)
class HypercleanInstance:
    x_train: np.ndarray
    y_train: np.ndarray  # observed, partly corrupted labels in 0..n_c-1
    x_val: np.ndarray
    y_val: np.ndarray
    corrupt_mask: np.ndarray
    y_train_clean: np.ndarray
    n_classes: int
    penalty_c: float = 1e-3
    seed: int = 0

    @property
    def dim_f(self) -> int:
        return self.x_train.shape[1]

    @property
    def dim_x(self) -> int:
        return self.n_classes * self.dim_f

    @property
    def n_train(self) -> int:
        return self.x_train.shape[0]


def _blobs(rng, means, labels, spread):
    d = means.shape[1]
    noise = rng.normal((labels.size, d)) * (spread / math.sqrt(d))
    return means[labels] + noise


def _draw(seed, n_train, n_val, n_classes, dim_f, penalty_c, corrupt_frac,
          separation, spread, append_bias):
    rng = rng_stream(seed)
    means = rng.normal((n_classes, dim_f)) * (separation / math.sqrt(dim_f))
    y_tr = (np.arange(n_train) % n_classes)[rng.permutation(n_train)]
    y_va = (np.arange(n_val) % n_classes)[rng.permutation(n_val)]
    x_tr = _blobs(rng, means, y_tr, spread)
    x_va = _blobs(rng, means, y_va, spread)
    if append_bias:
        x_tr = np.hstack([x_tr, np.ones((n_train, 1))])
        x_va = np.hstack([x_va, np.ones((n_val, 1))])
    n_bad = int(math.floor(corrupt_frac * n_train))
    bad = rng.permutation(n_train)[:n_bad]
    shift = 1 + rng.integers(n_classes - 1, n_bad)
    y_obs = y_tr.copy()
    y_obs[bad] = (y_tr[bad] + shift) % n_classes
    mask = np.zeros(n_train, dtype=bool)
    mask[bad] = True
    return HypercleanInstance(x_tr, y_obs, x_va, y_va, mask, y_tr, n_classes,
                              penalty_c, seed)


def _has_empty_class(inst):
    return any(np.bincount(y, minlength=inst.n_classes).min() == 0
               for y in (inst.y_train, inst.y_val))


def _cross_entropy(z, y):
    return -log_softmax(z, axis=1)[np.arange(y.size), y]


def hyperclean_problem(inst: HypercleanInstance) -> BilevelTask:
    xs, ys = np.asarray(inst.x_train, float), np.asarray(inst.y_train)
    xv, yv = np.asarray(inst.x_val, float), np.asarray(inst.y_val)
    nc, df = inst.n_classes, inst.dim_f
    n, nv = xs.shape[0], xv.shape[0]
    c_pen = float(inst.penalty_c)
    onehot = np.eye(nc)[ys]
    onehot_v = np.eye(nc)[yv]
    sq = np.einsum("ij,ij->i", xs, xs)
    sqv = np.einsum("ij,ij->i", xv, xv)

    def mat(x):
        return x.reshape(nc, df)

    def probs(x):
        return softmax(xs @ mat(x).T, axis=1)

    def g_value(x, theta):
        w = expit(theta) / n
        return float(w @ _cross_entropy(xs @ mat(x).T, ys) + c_pen * (x @ x))

    def grad_g(x, theta):
        w = expit(theta) / n
        resid = probs(x) - onehot
        return ((w[:, None] * resid).T @ xs).ravel() + 2 * c_pen * x

    def hvp(x, theta, v):
        w = expit(theta) / n
        p = probs(x)
        dz = xs @ mat(v).T
        dp = p * dz - p * np.sum(p * dz, axis=1, keepdims=True)
        return ((w[:, None] * dp).T @ xs).ravel() + 2 * c_pen * v

    def jtvp(x, theta, v):
        s = expit(theta)
        resid = probs(x) - onehot
        return s * (1 - s) / n * np.sum(resid * (xs @ mat(v).T), axis=1)

    def jvp_theta(x, theta, u):
        s = expit(theta)
        coef = s * (1 - s) / n * u
        resid = probs(x) - onehot
        return ((coef[:, None] * resid).T @ xs).ravel()

    def constants(theta):
        s = expit(theta)
        ds = s * (1 - s) / n
        return CurvatureConstants(
            mu=2 * c_pen,
            big_l=2 * c_pen + float(np.sum(s * 0.5 * sq)) / n,
            lip_a=SOFTMAX_HESS_LIP * float(np.sum(s * sq ** 1.5)) / n,
            lip_b=0.5 * float(np.sqrt(np.sum(ds ** 2 * sq ** 2))))

    lower = LowerProblem(dim_x=nc * df, dim_theta=n, grad_g=grad_g, hvp=hvp,
                         jtvp=jtvp, constants=constants, jvp_theta=jvp_theta,
                         value=g_value)

    def f(x):
        return float(np.mean(_cross_entropy(xv @ mat(x).T, yv)))

    def grad_f(x):
        resid = softmax(xv @ mat(x).T, axis=1) - onehot_v
        return (resid.T @ xv).ravel() / nv

    upper = UpperObjective(f=f, grad_f=grad_f, lip_grad_f=0.5 * float(np.mean(sqv)))
    return BilevelTask(lower=lower, upper=upper, index=0)


def gen_hyperclean(seed: int = 0, n_train: int = 2000, n_val: int = 500,
                   n_classes: int = 5, dim_f: int = 50, penalty_c: float = 1e-3,
                   corrupt_frac: float = 0.1, separation: float = 4.0,
                   spread: float = 4.0, append_bias: bool = False):
    """Seeded hypercleaning instance; returns ``(instance, [task])``.

    Class means are Gaussian with norm about ``separation``; samples add
    isotropic noise of norm about ``spread``.  Exactly
    ``floor(corrupt_frac * n_train)`` training labels are corrupted.
    """
    if n_classes < 2:
        raise ContractViolation("need at least two classes")
    if not 0 <= corrupt_frac < 1:
        raise ContractViolation("corrupt_frac must lie in [0, 1)")
    if not penalty_c > 0:
        raise ContractViolation("penalty_c must be positive")
    if n_train < 1 or n_val < 1 or dim_f < 1:
        raise ContractViolation("sizes must be positive")
    s = seed
    for _ in range(100):
        inst = _draw(s, n_train, n_val, n_classes, dim_f, penalty_c, corrupt_frac,
                     separation, spread, append_bias)
        if not _has_empty_class(inst):
            break
        log.warning("empty class for seed %d, regenerating with seed %d", s, s + 1)
        s += 1
    else:
        raise ContractViolation("could not draw an instance with all classes present")
    return inst, [hyperclean_problem(inst)]
