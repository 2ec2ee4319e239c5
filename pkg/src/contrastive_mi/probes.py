"""Frozen-representation quality probes: 1-NN matching and logistic regression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .optim import Adam


@dataclass
class ProbeResult:
    kind: str
    n_correct: int
    n_total: int

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n_total


def knn_probe(train_embeddings: np.ndarray, train_labels: np.ndarray,
              test_embeddings: np.ndarray, test_labels: np.ndarray,
              k: int = 1) -> ProbeResult:
    """Predict each test label from its k closest training embeddings.

    Distances are L2; exact ties resolve to the lowest training index. With
    k > 1 the majority label wins, ties by smallest label.
    """
    train = np.atleast_2d(np.asarray(train_embeddings, dtype=np.float64))
    test = np.atleast_2d(np.asarray(test_embeddings, dtype=np.float64))
    train_labels = np.asarray(train_labels)
    test_labels = np.asarray(test_labels)
    if train.shape[0] == 0:
        raise ValueError("knn probe needs a non-empty training set")
    d2 = (np.sum(test ** 2, axis=1)[:, None] - 2.0 * test @ train.T
          + np.sum(train ** 2, axis=1)[None, :])
    if k == 1:
        nearest = np.argmin(d2, axis=1)  # argmin returns the first (lowest) index on ties
        predictions = train_labels[nearest]
    else:
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        predictions = np.empty(test.shape[0], dtype=train_labels.dtype)
        for i, idx in enumerate(order):
            votes = np.bincount(train_labels[idx].astype(np.intp))
            predictions[i] = np.argmax(votes)
    n_correct = int(np.sum(predictions == test_labels))
    return ProbeResult(kind=f"{k}-nn", n_correct=n_correct, n_total=test.shape[0])


def logistic_probe(train_embeddings: np.ndarray, train_labels: np.ndarray,
                   test_embeddings: np.ndarray, test_labels: np.ndarray,
                   lr: float = 0.05, max_epochs: int = 2000,
                   tol: float = 1e-7) -> ProbeResult:
    """Multinomial logistic regression on frozen embeddings.

    Trains full-batch with the package's own Adam until the loss moves less
    than ``tol`` between epochs (or ``max_epochs``). Measures linear
    separability of the representation; no gradient reaches the encoder.
    """
    train = np.atleast_2d(np.asarray(train_embeddings, dtype=np.float64))
    test = np.atleast_2d(np.asarray(test_embeddings, dtype=np.float64))
    train_labels = np.asarray(train_labels, dtype=np.intp)
    test_labels = np.asarray(test_labels, dtype=np.intp)
    classes = np.unique(train_labels)
    if classes.size < 2:
        raise ValueError("logistic probe needs at least two classes")
    remap = {c: j for j, c in enumerate(classes.tolist())}
    y = np.array([remap[c] for c in train_labels.tolist()], dtype=np.intp)
    n_classes = classes.size
    d = train.shape[1]

    w = Tensor(np.zeros((d, n_classes)), requires_grad=True)
    b = Tensor(np.zeros(n_classes), requires_grad=True)
    x = Tensor(train)
    opt = Adam([w, b], lr=lr)
    previous = np.inf
    for _ in range(max_epochs):
        logits = ad.add(ad.matmul(x, w), b)
        nll = ad.mean_all(ad.logsumexp_rows(logits) - ad.gather_rows(logits, y))
        value = nll.item()
        opt.zero_grad()
        nll.backward()
        opt.step()
        if abs(previous - value) < tol:
            break
        previous = value

    test_logits = test @ w.data + b.data
    predicted = classes[np.argmax(test_logits, axis=1)]
    n_correct = int(np.sum(predicted == test_labels))
    return ProbeResult(kind="logistic", n_correct=n_correct, n_total=test.shape[0])
