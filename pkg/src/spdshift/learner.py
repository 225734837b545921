"""Tangent-space softmax classifier, the information-maximization objective,
and manifold-constrained bias fitting for unlabeled target domains.

The SPD bias is optimized by plain Riemannian gradient descent under the
affine-invariant metric: the Euclidean gradient is computed analytically by
chaining through the matrix logarithm (divided-difference kernel on
eigenvalue pairs) and the matrix square root, converted to the Riemannian
gradient Phi G Phi, and retracted with the exponential map. Step halving on
loss increase keeps iterates monotone; the best-loss iterate is returned.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from spdshift import core
from spdshift.exceptions import DegenerateDataError, NumericalError

PROB_FLOOR = 1e-12


@dataclass
class SoftmaxClassifier:
    weights: np.ndarray      # (K, feature_dim)
    intercepts: np.ndarray   # (K,)
    classes: np.ndarray      # label values, ascending

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    def to_json(self) -> str:
        return json.dumps(
            {
                "weights": self.weights.tolist(),
                "intercepts": self.intercepts.tolist(),
                "classes": [int(c) for c in self.classes],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "SoftmaxClassifier":
        raw = json.loads(text)
        return cls(
            weights=np.array(raw["weights"], dtype=np.float64),
            intercepts=np.array(raw["intercepts"], dtype=np.float64),
            classes=np.array(raw["classes"]),
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 300
    l2_penalty: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass(frozen=True)
class IMConfig:
    temperature: float = 2.0
    epochs: int = 50
    learning_rate: float = 1.0
    mode: str = "spd_bias"  # or "geodesic_step"

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_loss_grad(weights, intercepts, x, y_idx, l2):
    """Cross-entropy with l2 weight penalty: loss and analytic gradients."""
    n, k = x.shape[0], weights.shape[0]
    probs = _softmax(x @ weights.T + intercepts)
    picked = probs[np.arange(n), y_idx]
    loss = -float(np.mean(np.log(np.maximum(picked, PROB_FLOOR))))
    loss += l2 * float(np.sum(weights * weights))
    delta = probs
    delta[np.arange(n), y_idx] -= 1.0
    grad_w = delta.T @ x / n + 2.0 * l2 * weights
    grad_b = delta.mean(axis=0)
    return loss, grad_w, grad_b


def train_softmax(features, labels, cfg: TrainConfig = TrainConfig()) -> SoftmaxClassifier:
    """Full-batch gradient descent on cross-entropy + l2, zero init.
    Step halving on loss increase keeps the training loss non-increasing."""
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise DegenerateDataError("training labels contain a single class")
    y_idx = np.searchsorted(classes, labels)
    k, f = len(classes), x.shape[1]
    weights = np.zeros((k, f))
    intercepts = np.zeros(k)
    lr = cfg.learning_rate
    loss, grad_w, grad_b = softmax_loss_grad(weights, intercepts, x, y_idx, cfg.l2_penalty)
    for _ in range(cfg.epochs):
        for _ in range(11):
            w_new = weights - lr * grad_w
            b_new = intercepts - lr * grad_b
            loss_new, gw_new, gb_new = softmax_loss_grad(
                w_new, b_new, x, y_idx, cfg.l2_penalty
            )
            if loss_new <= loss:
                break
            lr *= 0.5
        else:
            break
        weights, intercepts = w_new, b_new
        loss, grad_w, grad_b = loss_new, gw_new, gb_new
    return SoftmaxClassifier(weights=weights, intercepts=intercepts, classes=classes)


def predict_proba(clf: SoftmaxClassifier, features, temperature: float = 1.0) -> np.ndarray:
    """Rowwise softmax of logits / temperature."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    x = np.asarray(features, dtype=np.float64)
    logits = x @ clf.weights.T + clf.intercepts
    if not np.all(np.isfinite(logits)):
        raise NumericalError("non-finite logits")
    return _softmax(logits / temperature)


def predict(clf: SoftmaxClassifier, features, temperature: float = 1.0) -> np.ndarray:
    probs = predict_proba(clf, features, temperature)
    return clf.classes[np.argmax(probs, axis=1)]


def im_loss(probs) -> float:
    """Information-maximization objective: mean per-row entropy (certainty
    term) plus the negative marginal entropy (diversity term). Bounded by
    [-log K, log K]; minimized by confident, globally balanced predictions."""
    p = np.maximum(np.asarray(probs, dtype=np.float64), PROB_FLOOR)
    cem = -float(np.mean(np.sum(probs * np.log(p), axis=1)))
    marginal = np.asarray(probs).mean(axis=0)
    mem = float(np.sum(marginal * np.log(np.maximum(marginal, PROB_FLOOR))))
    return cem + mem


def _im_loss_grad_wrt_probs(probs):
    """d(im_loss)/d(probs): (1/N) (log p_hat_k - log p_ik)."""
    n = probs.shape[0]
    p = np.maximum(probs, PROB_FLOOR)
    marginal = np.maximum(probs.mean(axis=0), PROB_FLOOR)
    return (np.log(marginal)[None, :] - np.log(p)) / n


def _grad_logits_from_probs(probs, dl_dp, temperature):
    """Backprop through softmax(logits / T)."""
    inner = np.sum(probs * dl_dp, axis=1, keepdims=True)
    return probs * (dl_dp - inner) / temperature


def _divided_difference(values, fn, dfn):
    """Loewner kernel fn[lam_a, lam_b] with the confluent limit dfn(lam)."""
    lam = np.asarray(values)
    fa = fn(lam)
    num = fa[:, None] - fa[None, :]
    den = lam[:, None] - lam[None, :]
    scale = np.maximum(np.abs(lam[:, None]), np.abs(lam[None, :]))
    confluent = np.abs(den) <= 1e-12 * np.maximum(scale, 1e-300)
    out = np.where(confluent, dfn(0.5 * (lam[:, None] + lam[None, :])), num / np.where(confluent, 1.0, den))
    return out


def _log_derivative_adjoint(m, grad_out):
    """Adjoint of the Fréchet derivative of the matrix log at SPD m applied
    to symmetric grad_out (the map is self-adjoint)."""
    dec = core.sym_eig(m)
    kernel = _divided_difference(dec.values, np.log, lambda v: 1.0 / v)
    inner = dec.vectors.T @ grad_out @ dec.vectors
    return dec.vectors @ (kernel * inner) @ dec.vectors.T


def im_bias_loss_grad(whitened, phi, clf: SoftmaxClassifier, temperature: float):
    """IM loss and its Euclidean gradient with respect to the SPD bias.

    ``whitened`` is the stack mean^-1/2 C_i mean^-1/2. The chain runs through
    M_i = Phi^1/2 W_i Phi^1/2, the matrix log (divided-difference kernel),
    the norm-preserving vectorization, the linear head, and the tempered
    softmax into the IM objective.
    """
    whitened = np.asarray(whitened, dtype=np.float64)
    phi_dec = core.sym_eig(phi)
    if phi_dec.values[-1] <= core.EIG_FLOOR:
        raise NumericalError("bias iterate left the SPD cone")
    sqrt_vals = np.sqrt(phi_dec.values)
    root = (phi_dec.vectors * sqrt_vals) @ phi_dec.vectors.T
    ms = root @ whitened @ root
    vals, vecs = core.eig_batch(ms)
    core._check_floor(vals, "log")
    logs = np.einsum("nik,nk,njk->nij", vecs, np.log(vals), vecs)
    feats = core.upper_batch(logs)
    probs = predict_proba(clf, feats, temperature)
    loss = im_loss(probs)

    dl_dp = _im_loss_grad_wrt_probs(probs)
    g_logits = _grad_logits_from_probs(probs, dl_dp, temperature)
    g_feats = g_logits @ clf.weights                       # (n, F)
    g_sym = core.upper_inv_batch(g_feats)                  # grad wrt log(M_i)

    # through the matrix log at each M_i
    n, d = vals.shape
    kernels = np.empty((n, d, d))
    for i in range(n):
        kernels[i] = _divided_difference(vals[i], np.log, lambda v: 1.0 / v)
    inner = np.einsum("nki,nkl,nlj->nij", vecs, g_sym, vecs)
    g_m = np.einsum("nik,nkl,njl->nij", vecs, kernels * inner, vecs)

    # through M = R W R with shared R = Phi^1/2: G_R = sum_i (G_M R W + W R G_M)
    rw = root @ whitened                                   # (n, d, d) via broadcast
    g_root = np.einsum("nij,njk->ik", g_m, rw) + np.einsum(
        "nij,njk->ik", np.transpose(rw, (0, 2, 1)), g_m
    )

    # through R = Phi^1/2
    sqrt_kernel = 1.0 / (sqrt_vals[:, None] + sqrt_vals[None, :])
    inner_phi = phi_dec.vectors.T @ g_root @ phi_dec.vectors
    g_phi = phi_dec.vectors @ (sqrt_kernel * inner_phi) @ phi_dec.vectors.T
    g_phi = 0.5 * (g_phi + g_phi.T)
    if not np.all(np.isfinite(g_phi)):
        raise NumericalError("non-finite bias gradient")
    return loss, g_phi, probs


def fit_spdim_bias(covariances, mean, clf: SoftmaxClassifier, cfg: IMConfig) -> np.ndarray:
    """Fit the SPD bias on one unlabeled target domain by Riemannian gradient
    descent on the IM loss, starting from the identity. Returns the iterate
    with the lowest recorded loss (the identity if no step improves)."""
    if cfg.mode != "spd_bias":
        raise ValueError("cfg.mode must be 'spd_bias'")
    covariances = np.asarray(covariances, dtype=np.float64)
    dim = covariances.shape[-1]
    w = core.spd_inv_sqrt(mean)
    whitened = w @ covariances @ w
    phi = np.eye(dim)
    lr = cfg.learning_rate
    loss, g_e, _ = im_bias_loss_grad(whitened, phi, clf, cfg.temperature)
    best_loss, best_phi = loss, phi
    for epoch in range(cfg.epochs):
        g_r = phi @ g_e @ phi
        accepted = False
        for _ in range(11):
            candidate = core.exp_map(phi, -lr * g_r)
            candidate = 0.5 * (candidate + candidate.T)
            try:
                loss_new, g_new, _ = im_bias_loss_grad(
                    whitened, candidate, clf, cfg.temperature
                )
            except NumericalError as err:
                raise NumericalError(
                    f"bias fitting failed at epoch {epoch}: {err}", iterations=epoch
                ) from err
            if loss_new <= loss:
                accepted = True
                break
            lr *= 0.5
        if not accepted:
            break
        phi, loss, g_e = candidate, loss_new, g_new
        if loss < best_loss:
            best_loss, best_phi = loss, phi
    return best_phi


def geodesic_im_loss(whitened_logs_basis, step, clf, temperature):
    """IM loss of the geodesic-step transform, given the eigendecomposition
    (values, vectors) of the domain mean and the raw covariances."""
    vals, vecs, covs = whitened_logs_basis
    w = (vecs * np.power(vals, -0.5 * step)) @ vecs.T
    feats = core.upper_batch(core.spd_log_batch(w @ covs @ w))
    return im_loss(predict_proba(clf, feats, temperature))


def fit_spdim_geodesic(covariances, mean, clf: SoftmaxClassifier, cfg: IMConfig) -> float:
    """Fit the scalar geodesic step by one-dimensional gradient descent on
    the IM loss (central-difference derivative, h = 1e-4), starting at 1.
    Returns the best-loss iterate."""
    if cfg.mode != "geodesic_step":
        raise ValueError("cfg.mode must be 'geodesic_step'")
    covariances = np.asarray(covariances, dtype=np.float64)
    dec = core.sym_eig(mean)
    core._check_floor(dec.values, "inv_sqrt")
    state = (dec.values, dec.vectors, covariances)
    h = 1e-4
    step = 1.0
    lr = cfg.learning_rate
    loss = geodesic_im_loss(state, step, clf, cfg.temperature)
    best_loss, best_step = loss, step
    for _ in range(cfg.epochs):
        d = (
            geodesic_im_loss(state, step + h, clf, cfg.temperature)
            - geodesic_im_loss(state, step - h, clf, cfg.temperature)
        ) / (2 * h)
        accepted = False
        for _ in range(11):
            candidate = step - lr * d
            loss_new = geodesic_im_loss(state, candidate, clf, cfg.temperature)
            if loss_new <= loss:
                accepted = True
                break
            lr *= 0.5
        if not accepted:
            break
        step, loss = candidate, loss_new
        if loss < best_loss:
            best_loss, best_step = loss, step
    return best_step


def balanced_accuracy(y_true, y_pred) -> float:
    """Mean per-class recall over the classes present in y_true."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) == 0:
        raise ValueError("empty input")
    if len(y_true) != len(y_pred):
        raise ValueError("length mismatch")
    recalls = []
    for cls in np.unique(y_true):
        mask = y_true == cls
        recalls.append(float(np.mean(y_pred[mask] == cls)))
    return float(np.mean(recalls))
