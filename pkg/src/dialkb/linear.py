"""Hashed n-gram text features and a seeded minibatch trainer for linear models.

Both the knowledge-seeking detector (binary, sigmoid) and the domain
classifier (multiclass, softmax) are linear models over the same feature
space: word unigrams and bigrams plus character trigrams, hashed into
``n_features`` buckets and L2-normalized per document.
"""

from __future__ import annotations

import re

import numpy as np
from scipy import sparse
from sklearn.feature_extraction.text import HashingVectorizer

_WORD = re.compile(r"[a-z0-9]+(?:'[a-z]+)?")


def text_ngrams(text: str) -> list[str]:
    """Prefixed feature strings: ``w:`` word 1-2 grams, ``c:`` char trigrams."""
    lowered = text.lower()
    words = _WORD.findall(lowered)
    feats = [f"w:{w}" for w in words]
    feats.extend(f"w:{a} {b}" for a, b in zip(words, words[1:]))
    for w in words:
        padded = f" {w} "
        feats.extend(f"c:{padded[i:i + 3]}" for i in range(len(padded) - 2))
    return feats


def make_vectorizer(n_features: int) -> HashingVectorizer:
    return HashingVectorizer(
        analyzer=text_ngrams,
        n_features=n_features,
        alternate_sign=False,
        norm="l2",
    )


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predict_scores(X, coef: np.ndarray, intercept: np.ndarray) -> np.ndarray:
    """Probabilities: shape (n,) for a single-row model, (n, k) otherwise."""
    z = np.asarray(X @ coef.T) + intercept
    if coef.shape[0] == 1:
        return _sigmoid(z[:, 0])
    return _softmax(z)


def _loss(P, Y, coef, alpha, binary):
    eps = 1e-12
    if binary:
        p = P
        data = -np.mean(Y * np.log(p + eps) + (1 - Y) * np.log(1 - p + eps))
    else:
        data = -np.mean(np.log(P[np.arange(len(Y)), Y] + eps))
    return float(data + 0.5 * alpha * np.sum(coef * coef))


def train_linear(
    X: sparse.csr_matrix,
    y: np.ndarray,
    n_classes: int,
    *,
    epochs: int = 10,
    learning_rate: float = 0.05,
    alpha: float = 1e-6,
    batch_size: int = 32,
    seed: int = 0,
):
    """Minibatch Adam on the logistic (n_classes == 2) or softmax objective.

    Returns ``(coef, intercept, loss_curve)``; ``loss_curve`` holds the full
    training loss after each epoch. Identical inputs and seed give
    bit-identical weights.
    """
    X = sparse.csr_matrix(X, dtype=np.float64)
    y = np.asarray(y)
    n, d = X.shape
    binary = n_classes == 2
    k = 1 if binary else n_classes
    coef = np.zeros((k, d))
    intercept = np.zeros(k)
    if binary:
        Y = y.astype(np.float64)
    else:
        Y = np.zeros((n, k))
        Y[np.arange(n), y] = 1.0

    m_w, v_w = np.zeros_like(coef), np.zeros_like(coef)
    m_b, v_b = np.zeros_like(intercept), np.zeros_like(intercept)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    rng = np.random.default_rng(seed)
    step = 0
    curve = []
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            Xb = X[idx]
            P = predict_scores(Xb, coef, intercept)
            if binary:
                err = (P - Y[idx])[:, None]
            else:
                err = P - Y[idx]
            g_w = np.asarray((Xb.T @ err).T) / len(idx) + alpha * coef
            g_b = err.mean(axis=0)
            step += 1
            m_w = beta1 * m_w + (1 - beta1) * g_w
            v_w = beta2 * v_w + (1 - beta2) * g_w * g_w
            m_b = beta1 * m_b + (1 - beta1) * g_b
            v_b = beta2 * v_b + (1 - beta2) * g_b * g_b
            corr1 = 1 - beta1 ** step
            corr2 = 1 - beta2 ** step
            coef -= learning_rate * (m_w / corr1) / (np.sqrt(v_w / corr2) + eps)
            intercept -= learning_rate * (m_b / corr1) / (np.sqrt(v_b / corr2) + eps)
        P_all = predict_scores(X, coef, intercept)
        curve.append(_loss(P_all, y if not binary else Y, coef, alpha, binary))
    return coef, intercept, curve
