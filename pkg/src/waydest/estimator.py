"""Scikit-learn style front end for the WAY network.

``WayClassifier`` consumes nested grid sequences and emits one destination
distribution per grid element. Training, feature scaling and the ship-type
vocabulary are handled inside ``fit``; ``save``/``load`` round-trip all of
it through one checkpoint file.
"""

from __future__ import annotations

from collections import defaultdict
from collections.abc import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import __version__
from .metrics import overall_accuracy, records_from_logits
from .nn import load_checkpoint, save_checkpoint
from .nn.io import CheckpointError
from .represent import DEFAULT_POISSON_LAMBDA, FeatureScaler, NestedSequence
from .train import TrainConfig, TrainResult, evaluate, train
from .way import PRESETS, WayConfig, WayModel


def check_sequences(X, require_labels: bool = False, n_ports: int | None = None) -> list[NestedSequence]:
    """Validate a collection of nested sequences and return it as a list."""
    if isinstance(X, NestedSequence):
        raise TypeError("expected a sequence of NestedSequence objects, got a single one")
    seqs = list(X)
    if not seqs:
        raise ValueError("no sequences given")
    for i, s in enumerate(seqs):
        if not isinstance(s, NestedSequence):
            raise TypeError(f"item {i} is {type(s).__name__}, not NestedSequence")
        if len(s) == 0:
            raise ValueError(f"sequence {s.traj_id or i!r} has no grid elements")
        if require_labels and s.label is None:
            raise ValueError(f"sequence {s.traj_id or i!r} has no destination label")
        if n_ports is not None:
            for what, v in (("departure", s.departure), ("label", s.label)):
                if v is not None and not 0 <= v < n_ports:
                    raise ValueError(f"sequence {s.traj_id or i!r}: {what} {v} outside [0, {n_ports})")
    return seqs


def with_labels(seqs: list[NestedSequence], y) -> list[NestedSequence]:
    if y is None:
        return seqs
    y = np.asarray(y)
    if y.shape != (len(seqs),):
        raise ValueError(f"y must have one label per sequence, got shape {y.shape}")
    return [
        NestedSequence(s.elements, s.departure, s.ship_type, int(lab), s.traj_id, s.cell_size) for s, lab in zip(seqs, y)
    ]


def stratified_split(
    labels: Sequence[int], fractions: Sequence[float] = (0.7, 0.15, 0.15), seed: int = 0
) -> list[np.ndarray]:
    """Index arrays per part, splitting every label group in the given proportions.

    Each group is shuffled, then cut at rounded cumulative fractions, so the
    split is reproducible and every part keeps roughly the label mix.
    """
    fr = np.asarray(fractions, dtype=float)
    if (fr < 0).any() or not np.isclose(fr.sum(), 1.0):
        raise ValueError(f"fractions must be non-negative and sum to 1, got {list(fractions)}")
    rng = np.random.default_rng(seed)
    groups = defaultdict(list)
    for i, y in enumerate(labels):
        groups[int(y)].append(i)
    parts = [[] for _ in fr]
    cum = np.cumsum(fr)
    for y in sorted(groups):
        idx = np.array(groups[y])[rng.permutation(len(groups[y]))]
        cuts = np.rint(cum * len(idx)).astype(int)
        lo = 0
        for p, hi in enumerate(cuts):
            parts[p].extend(idx[lo:hi].tolist())
            lo = hi
    return [np.array(sorted(p), dtype=int) for p in parts]


class WayClassifier(ClassifierMixin, BaseEstimator):
    """Per-step destination classifier over nested grid sequences.

    Parameters
    ----------
    n_ports : int
        Size of the port vocabulary (the label space).
    preset : str
        Architecture preset, one of ``base``, ``small``, ``tiny``.
    epochs, batch_size, lr, dropout : training hyperparameters.
    gradient_dropout : bool
        Mask long trajectories' step losses during training.
    poisson_lambda : float
        Mean messages sampled per grid element.
    seed : int
        Seeds initialisation, shuffling, sampling and dropout.
    """

    def __init__(
        self,
        n_ports: int = 2,
        preset: str = "tiny",
        epochs: int = 30,
        batch_size: int = 32,
        lr: float = 1e-4,
        dropout: float = 0.3,
        gradient_dropout: bool = True,
        poisson_lambda: float = DEFAULT_POISSON_LAMBDA,
        seed: int = 0,
    ):
        self.n_ports = n_ports
        self.preset = preset
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.dropout = dropout
        self.gradient_dropout = gradient_dropout
        self.poisson_lambda = poisson_lambda
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs,
            lr=self.lr,
            dropout=self.dropout,
            gradient_dropout=self.gradient_dropout,
            seed=self.seed,
            poisson_lambda=self.poisson_lambda,
        )

    def fit(self, X, y=None, validation=None, on_epoch=None):
        """Train on sequences ``X`` (labels from ``y`` or the sequences themselves).

        ``validation`` is an optional labelled sequence list used to pick the
        best epoch.
        """
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        seqs = with_labels(check_sequences(X), y)
        seqs = check_sequences(seqs, require_labels=True, n_ports=self.n_ports)
        val = check_sequences(validation, True, self.n_ports) if validation else None
        ship_types = sorted({s.ship_type for s in seqs} | ({s.ship_type for s in val} if val else set()))
        self.ship_index_ = {t: i for i, t in enumerate(ship_types)}
        self.scaler_ = FeatureScaler().fit_sequences(seqs)
        self.config_ = WayConfig.preset(
            self.preset, n_ports=self.n_ports, n_ship_types=len(ship_types), dropout=self.dropout
        )
        self.model_ = WayModel(self.config_, np.random.default_rng(self.seed))
        result: TrainResult = train(
            self.model_, seqs, val, self.scaler_, self.ship_index_, self._train_config(), on_epoch
        )
        self.model_.load_state_dict(result.best_state)
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.classes_ = np.arange(self.n_ports)
        return self

    def _check_ships(self, seqs):
        unknown = sorted({s.ship_type for s in seqs} - set(self.ship_index_))
        if unknown:
            raise ValueError(f"ship types {unknown} were not seen in training; known {sorted(self.ship_index_)}")

    def decision_function(self, X, seed: int | None = None) -> list[np.ndarray]:
        """Per-step logits, one (N_i, n_ports) array per sequence."""
        check_is_fitted(self, "model_")
        seqs = check_sequences(X, n_ports=self.n_ports)
        self._check_ships(seqs)
        seed = self.seed + 1 if seed is None else seed
        outputs, _ = evaluate(self.model_, seqs, self.scaler_, self.ship_index_, seed, self.poisson_lambda)
        return outputs

    def predict_proba(self, X, seed: int | None = None) -> list[np.ndarray]:
        out = []
        for z in self.decision_function(X, seed):
            e = np.exp(z - z.max(axis=1, keepdims=True))
            out.append(e / e.sum(axis=1, keepdims=True))
        return out

    def predict(self, X, seed: int | None = None) -> list[np.ndarray]:
        """Per-step argmax destination for every sequence."""
        return [z.argmax(axis=1) for z in self.decision_function(X, seed)]

    def score(self, X, y=None, sample_weight=None) -> float:
        """Overall per-step accuracy."""
        seqs = with_labels(check_sequences(X), y)
        seqs = check_sequences(seqs, require_labels=True)
        logits = self.decision_function(seqs)
        return overall_accuracy(records_from_logits(logits, [s.label for s in seqs]))

    # -- persistence ---------------------------------------------------------

    def save(self, path, extra_meta: dict | None = None) -> None:
        check_is_fitted(self, "model_")
        meta = {
            "producer": f"waydest {__version__}",
            "params": self.get_params(),
            "config": self.config_.to_dict(),
            "ship_index": self.ship_index_,
            "scaler": self.scaler_.to_dict(),
            "best_epoch": self.best_epoch_,
            **(extra_meta or {}),
        }
        save_checkpoint(path, self.model_.state_dict(), meta)

    @classmethod
    def load(cls, path) -> WayClassifier:
        arrays, meta = load_checkpoint(path)
        try:
            obj = cls(**meta["params"])
            obj.config_ = WayConfig(**meta["config"])
            obj.ship_index_ = {k: int(v) for k, v in meta["ship_index"].items()}
            obj.scaler_ = FeatureScaler.from_dict(meta["scaler"])
            obj.model_ = WayModel(obj.config_, 0)
            obj.model_.load_state_dict(arrays)
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"{path}: inconsistent checkpoint ({exc})") from exc
        obj.best_epoch_ = meta.get("best_epoch", 0)
        obj.history_ = []
        obj.classes_ = np.arange(obj.n_ports)
        obj.meta_ = meta
        return obj
