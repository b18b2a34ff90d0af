"""Intensity tagger: (transcript, gloss token) -> label in {0, 1, 2}.

Two variants share the interface. "pooled" averages the transcript's word
embeddings and concatenates the gloss embedding before a linear head
(fastText-style). "bilstm" runs the transcript through a stacked
bidirectional LSTM and concatenates the final states with the gloss
embedding, through ReLU and a linear head. Both train with 3-way softmax
cross-entropy under Adam.
"""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from intensign import autodiff as ad
from intensign.autodiff import Adam, DivergenceError, Tensor, seeded_rng
from intensign.corpus import Corpus, Vocabulary
from intensign.transformer import ParameterStore, linear

N_CLASSES = 3


def _lstm_cell(store: ParameterStore, name: str, x: Tensor, h: Tensor, c: Tensor,
               in_dim: int, hidden: int):
    """One LSTM step; gates packed into a single (in+hidden, 4*hidden) weight."""
    w = store.weight(f"{name}.w", (in_dim + hidden, 4 * hidden))
    b = store.zeros(f"{name}.b", (4 * hidden,))
    z = ad.concat([x, h], axis=-1) @ w + b
    i = ad.sigmoid(z[:, 0 * hidden:1 * hidden])
    f = ad.sigmoid(z[:, 1 * hidden:2 * hidden])
    g = ad.tanh(z[:, 2 * hidden:3 * hidden])
    o = ad.sigmoid(z[:, 3 * hidden:4 * hidden])
    c_new = f * c + i * g
    h_new = o * ad.tanh(c_new)
    return h_new, c_new


def _lstm_direction(store, name, steps: list[Tensor], in_dim: int, hidden: int,
                    dtype) -> tuple[list[Tensor], Tensor]:
    h = Tensor(np.zeros((1, hidden), dtype=dtype))
    c = Tensor(np.zeros((1, hidden), dtype=dtype))
    outputs = []
    for x in steps:
        h, c = _lstm_cell(store, name, x, h, c, in_dim, hidden)
        outputs.append(h)
    return outputs, h


class IntensityTagger(ClassifierMixin, BaseEstimator):
    """Supervised text-pair classifier over (transcript tokens, gloss token)."""

    def __init__(self, variant="pooled", embed_dim=100, hidden_dim=300, lstm_layers=2,
                 dropout=0.3, epochs=10, learning_rate=1e-3, seed=0, dtype="float32"):
        self.variant = variant
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.lstm_layers = lstm_layers
        self.dropout = dropout
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.seed = seed
        self.dtype = dtype

    def _validate_config(self):
        if self.variant not in ("pooled", "bilstm"):
            raise ValueError(f"variant must be 'pooled' or 'bilstm', got {self.variant!r}")
        if self.embed_dim <= 0 or self.hidden_dim <= 0 or self.lstm_layers <= 0:
            raise ValueError("model sizes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def _check_fitted(self):
        if not hasattr(self, "text_vocab_"):
            raise NotFittedError("this tagger has not been fitted yet")

    # --- forward -------------------------------------------------------------------

    def _logits(self, text_ids: np.ndarray, gloss_id: int, *, train=False,
                rng=None) -> Tensor:
        store = self._store
        text_table = store.weight("text_embed", (len(self.text_vocab_), self.embed_dim))
        gloss_table = store.weight("gloss_embed", (len(self.gloss_vocab_), self.embed_dim))
        gloss_vec = ad.embedding(gloss_table, np.asarray([gloss_id]))

        if self.variant == "pooled":
            pooled = ad.mean(ad.embedding(text_table, text_ids), axis=0, keepdims=False)
            features = ad.concat([ad.reshape(pooled, (1, self.embed_dim)), gloss_vec], axis=-1)
            return ad.reshape(
                linear(store, "head", features, 2 * self.embed_dim, N_CLASSES), (N_CLASSES,))

        steps = [ad.embedding(text_table, np.asarray([t])) for t in text_ids]
        in_dim = self.embed_dim
        for layer in range(self.lstm_layers):
            fwd_steps, fwd_last = _lstm_direction(
                store, f"lstm.{layer}.fwd", steps, in_dim, self.hidden_dim, store.dtype)
            bwd_steps, bwd_last = _lstm_direction(
                store, f"lstm.{layer}.bwd", steps[::-1], in_dim, self.hidden_dim, store.dtype)
            steps = [ad.concat([f, b], axis=-1)
                     for f, b in zip(fwd_steps, bwd_steps[::-1])]
            if train and self.dropout > 0 and layer < self.lstm_layers - 1:
                steps = [ad.dropout(s, self.dropout, rng=rng) for s in steps]
            in_dim = 2 * self.hidden_dim
        summary = ad.concat([fwd_last, bwd_last], axis=-1)
        features = ad.relu(ad.concat([summary, gloss_vec], axis=-1))
        return ad.reshape(
            linear(store, "head", features, 2 * self.hidden_dim + self.embed_dim, N_CLASSES),
            (N_CLASSES,))

    def _encode_pair(self, text_tokens, gloss_token):
        text_ids = self.text_vocab_.encode([t.lower() for t in text_tokens])
        gloss_id = self.gloss_vocab_.index(gloss_token)
        return text_ids, gloss_id

    # --- estimator API ---------------------------------------------------------------

    def fit(self, X, y):
        """X: (text tokens, gloss token) pairs; y: labels in {0, 1, 2}."""
        self._validate_config()
        X = list(X)
        y = [int(l) for l in y]
        if not X or len(X) != len(y):
            raise ValueError("fit needs aligned, non-empty pairs and labels")
        if any(l not in (0, 1, 2) for l in y):
            raise ValueError("labels must be 0, 1 or 2")
        for text, _gloss in X:
            if not list(text):
                raise ValueError("empty transcript in a training pair")

        self.classes_ = np.array([0, 1, 2])
        self.text_vocab_ = Vocabulary.build([[t.lower() for t in text] for text, _ in X])
        self.gloss_vocab_ = Vocabulary.build([[g] for _, g in X])
        self._store = ParameterStore(self.seed, dtype=np.dtype(self.dtype))

        data = [(self._encode_pair(text, gloss), label) for (text, gloss), label in zip(X, y)]
        self._logits(*data[0][0])

        opt = Adam(self._store.params, lr=self.learning_rate)
        self.loss_curve_ = []
        for epoch in range(self.epochs):
            order = seeded_rng(self.seed, "order", epoch).permutation(len(data))
            rng = seeded_rng(self.seed, "dropout", epoch)
            total = 0.0
            for idx in order:
                (text_ids, gloss_id), label = data[idx]
                opt.zero_grad()
                logits = self._logits(text_ids, gloss_id, train=True, rng=rng)
                loss = ad.cross_entropy(ad.reshape(logits, (1, N_CLASSES)),
                                        np.asarray([label]))
                if not np.isfinite(loss.item()):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}")
                loss.backward()
                opt.step()
                total += loss.item()
            self.loss_curve_.append(total / len(data))
        return self

    def predict_proba_one(self, text_tokens, gloss_token) -> np.ndarray:
        self._check_fitted()
        text_ids, gloss_id = self._encode_pair(list(text_tokens), gloss_token)
        return ad.softmax(self._logits(text_ids, gloss_id), axis=-1).data

    def predict_one(self, text_tokens, gloss_token) -> int:
        return int(np.argmax(self.predict_proba_one(text_tokens, gloss_token)))

    def predict_proba(self, X) -> np.ndarray:
        return np.stack([self.predict_proba_one(text, gloss) for text, gloss in X])

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=-1)

    # --- evaluation --------------------------------------------------------------------

    def evaluate(self, X, y) -> tuple[float, float, float]:
        """Macro precision/recall/F1 over the 3 classes, each on a 0..100 scale."""
        return macro_scores(self.predict(X), np.asarray([int(l) for l in y]))

    # --- corpus labeling -----------------------------------------------------------------

    def label_corpus(self, corpus: Corpus, overrides: dict[str, dict[int, int]] | None = None
                     ) -> dict[str, dict[int, int]]:
        """Predict a label for every gloss token of every split.

        Returns {instance_id: {gloss_index: label}}; entries from `overrides`
        (externally produced labels) win over model predictions.
        """
        self._check_fitted()
        overrides = overrides or {}
        labels: dict[str, dict[int, int]] = {}
        for inst in corpus.all_instances():
            per = {}
            for i, gloss_token in enumerate(inst.gloss):
                if inst.id in overrides and i in overrides[inst.id]:
                    per[i] = int(overrides[inst.id][i])
                else:
                    per[i] = self.predict_one(inst.text, gloss_token)
            labels[inst.id] = per
        return labels

    # --- persistence -----------------------------------------------------------------------

    def _checkpoint_payload(self):
        self._check_fitted()
        return {
            "params": self.get_params(),
            "tensors": self._store.state_arrays(),
            "extra": {"text_vocab": self.text_vocab_.to_list(),
                      "gloss_vocab": self.gloss_vocab_.to_list(),
                      "loss_curve": self.loss_curve_},
            "norm_stats": None,
        }

    def _restore(self, extra, tensors, norm_stats):
        self._validate_config()
        self.classes_ = np.array([0, 1, 2])
        self.text_vocab_ = Vocabulary.from_list(extra["text_vocab"])
        self.gloss_vocab_ = Vocabulary.from_list(extra["gloss_vocab"])
        self.loss_curve_ = list(extra.get("loss_curve", []))
        self._store = ParameterStore(self.seed, dtype=np.dtype(self.dtype))
        self._logits(np.zeros(1, dtype=np.int64), 0)
        self._store.load_arrays(tensors)

    def save(self, path):
        from intensign.checkpoint import save_checkpoint
        save_checkpoint(self, path)


def macro_scores(predictions: np.ndarray, gold: np.ndarray) -> tuple[float, float, float]:
    """Macro-averaged precision, recall and mean-of-per-class F1, on 0..100.

    Averages run over classes present in predictions or gold; a class absent
    from both contributes nothing and triggers a warning.
    """
    predictions = np.asarray(predictions)
    gold = np.asarray(gold)
    if predictions.shape != gold.shape or predictions.size == 0:
        raise ValueError("need aligned, non-empty prediction and gold label arrays")
    precisions, recalls, f1s = [], [], []
    for cls in range(N_CLASSES):
        tp = int(np.sum((predictions == cls) & (gold == cls)))
        fp = int(np.sum((predictions == cls) & (gold != cls)))
        fn = int(np.sum((predictions != cls) & (gold == cls)))
        if tp + fp + fn == 0:
            warnings.warn(f"class {cls} absent from predictions and gold; skipped",
                          stacklevel=2)
            continue
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        precisions.append(p)
        recalls.append(r)
        f1s.append(f)
    return (100 * float(np.mean(precisions)), 100 * float(np.mean(recalls)),
            100 * float(np.mean(f1s)))
