"""scikit-learn style front end for training and applying the reply-to scorer."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .model import ModelConfig
from .pipeline import TrainConfig, cluster, parent_accuracy, predict, train
from .validation import check_dialogues, check_non_negative, check_positive_int, check_random_state


class Disentangler(BaseEstimator):
    """Predict reply-to links and threads in multi-party chat logs.

    Parameters
    ----------
    window : int, default=50
        Candidate window width ``C``, including the utterance itself.
    hidden_dim : int, default=64
        Pair encoding size; must be divisible by ``heads``.
    heads : int, default=4
    recurrent_dim : int, default=32
        Hidden size of each recurrent direction.
    hash_buckets : int, default=4096
    max_tokens : int, default=128
    speaker_mask : bool, default=True
        Restrict attention to same-speaker candidates.
    reference : bool, default=True
        Use the mention graph convolution.
    graph : {"query", "window"}, default="query"
        ``"query"`` links the query with the candidates it mentions, in both
        directions; ``"window"`` keeps every mention edge inside the window.
    dropout : float, default=0.0
        Dropout rate on the pair encodings and graph features while training.
    epochs : int, default=10
    batch_size : int, default=8
    learning_rate : float, default=1e-3
    weight_decay : float, default=0.01
    lr_decay : {"linear", "constant"}, default="linear"
    holdout_fraction : float, default=0.1
        Tail share of each training dialogue used for the accuracy trace.
    random_state : int, default=0

    Attributes
    ----------
    net_ : DisentanglementNet
    trace_ : list of EpochRecord
    """

    def __init__(
        self,
        window=50,
        hidden_dim=64,
        heads=4,
        recurrent_dim=32,
        hash_buckets=4096,
        max_tokens=128,
        speaker_mask=True,
        reference=True,
        graph="query",
        dropout=0.0,
        epochs=10,
        batch_size=8,
        learning_rate=1e-3,
        weight_decay=0.01,
        lr_decay="linear",
        holdout_fraction=0.1,
        random_state=0,
    ):
        self.window = window
        self.hidden_dim = hidden_dim
        self.heads = heads
        self.recurrent_dim = recurrent_dim
        self.hash_buckets = hash_buckets
        self.max_tokens = max_tokens
        self.speaker_mask = speaker_mask
        self.reference = reference
        self.graph = graph
        self.dropout = dropout
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.lr_decay = lr_decay
        self.holdout_fraction = holdout_fraction
        self.random_state = random_state

    def _configs(self):
        seed = check_random_state(self.random_state)
        window = check_positive_int(self.window, "window")
        model = ModelConfig(
            window=window,
            hidden_dim=check_positive_int(self.hidden_dim, "hidden_dim"),
            heads=check_positive_int(self.heads, "heads"),
            recurrent_dim=check_positive_int(self.recurrent_dim, "recurrent_dim"),
            hash_buckets=check_positive_int(self.hash_buckets, "hash_buckets"),
            max_tokens=check_positive_int(self.max_tokens, "max_tokens"),
            seed=seed,
            speaker_mask=bool(self.speaker_mask),
            reference=bool(self.reference),
            graph=self.graph,
            dropout=check_non_negative(self.dropout, "dropout"),
        )
        fit = TrainConfig(
            epochs=check_positive_int(self.epochs, "epochs"),
            batch_size=check_positive_int(self.batch_size, "batch_size"),
            learning_rate=check_non_negative(self.learning_rate, "learning_rate"),
            weight_decay=check_non_negative(self.weight_decay, "weight_decay"),
            lr_decay=self.lr_decay,
            seed=seed,
            window=window,
            holdout_fraction=check_non_negative(self.holdout_fraction, "holdout_fraction"),
        )
        return model.validate(), fit.validate()

    def fit(self, X, y=None):
        """Train on annotated dialogues; ``y`` is unused (links travel with ``X``)."""
        X = check_dialogues(X, require_links=True)
        model, fit = self._configs()
        result = train(X, fit, model_config=model)
        self.net_ = result.model
        self.trace_ = result.trace
        return self

    def predict(self, X):
        """One ``{child: parent}`` map per dialogue."""
        check_is_fitted(self, "net_")
        return [{p.child: p.parent for p in predict(d, self.net_)} for d in check_dialogues(X)]

    def predict_links(self, X):
        """One list of :class:`LinkPrediction` (with confidences) per dialogue."""
        check_is_fitted(self, "net_")
        return [predict(d, self.net_) for d in check_dialogues(X)]

    def predict_threads(self, X):
        """One :class:`Partition` of utterance ids per dialogue."""
        return [cluster(links) for links in self.predict(X)]

    def score(self, X, y=None):
        """Mean parent accuracy over annotated dialogues (self-loop rule applied)."""
        check_is_fitted(self, "net_")
        X = check_dialogues(X, require_links=True)
        accs = [parent_accuracy(predict(d, self.net_), d, self.net_.config.window) for d in X]
        return float(np.mean(accs))
