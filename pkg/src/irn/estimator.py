"""Estimator-style front end: fit/predict over (clip, detections) samples.

`IRNClassifier` follows the scikit-learn parameter protocol (``get_params`` /
``set_params`` with double-underscore nesting, ``fit`` returning self) so the
model drops into pipelines, grid searches, and cross-validation harnesses.
Samples are (frames, detections) pairs: a (T, H, W, 3) uint8 array plus the
per-frame detection list.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from .config import ExperimentConfig, apply_overrides, desk_config, to_dict
from .detections import FrameDetections
from .interaction import build_model
from .train_eval import (ClipSample, evaluate, predict_logits, train,
                         load_checkpoint, save_checkpoint)


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "__"))
        else:
            out[key] = tuple(v) if isinstance(v, list) else v
    return out


def check_sample(sample) -> ClipSample:
    """Validate one (frames, detections) pair and normalise to a ClipSample."""
    if isinstance(sample, ClipSample):
        return sample
    frames, detections = sample
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise ValueError(f"frames must be (T, H, W, 3), got {frames.shape}")
    if frames.dtype != np.uint8:
        if np.issubdtype(frames.dtype, np.floating):
            if frames.min() < 0 or frames.max() > 1:
                raise ValueError("float frames must lie in [0, 1]")
            frames = np.round(frames * 255.0).astype(np.uint8)
        else:
            raise ValueError(f"frames must be uint8 or [0, 1] floats, got {frames.dtype}")
    if not all(isinstance(f, FrameDetections) for f in detections):
        raise ValueError("detections must be a sequence of FrameDetections")
    return ClipSample(frames=frames, detections=list(detections), label=-1,
                      clip_id="")


def _check_X_y(X, y=None) -> list[ClipSample]:
    samples = [check_sample(s) for s in X]
    if y is not None:
        y = np.asarray(y)
        if len(y) != len(samples):
            raise ValueError(f"X has {len(samples)} samples but y has {len(y)}")
        for s, label in zip(samples, y):
            s.label = int(label)
    return samples


class IRNClassifier:
    """Interaction-reasoning video classifier with a scikit-learn surface.

    Parameters mirror the experiment config; nested keys use the usual
    ``section__name`` convention, e.g. ``interaction__heads=4``.
    """

    def __init__(self, config: Optional[ExperimentConfig] = None, **params):
        self.config = config if config is not None else desk_config()
        if params:
            self.set_params(**params)
        self.model_ = None
        self.history_ = []

    # -- parameter protocol -------------------------------------------------

    def get_params(self, deep: bool = True) -> dict:
        params = _flatten(to_dict(self.config))
        return params if deep else {"config": self.config}

    def set_params(self, **params) -> "IRNClassifier":
        if "config" in params:
            self.config = params.pop("config")
        dotted = {k.replace("__", "."): v for k, v in params.items()}
        self.config = apply_overrides(self.config, dotted)
        return self

    # -- estimation ---------------------------------------------------------

    def fit(self, X, y, validation_data=None, out_dir=None,
            log=None) -> "IRNClassifier":
        samples = _check_X_y(X, y)
        if validation_data is not None:
            val = _check_X_y(*validation_data)
        else:
            val = samples
        self.model_ = build_model(self.config)
        self.history_ = train(self.model_, samples, val, self.config,
                              out_dir=out_dir, log=log)
        return self

    def _require_fitted(self):
        if self.model_ is None:
            raise RuntimeError("this IRNClassifier instance is not fitted yet")

    def decision_function(self, X) -> np.ndarray:
        self._require_fitted()
        samples = _check_X_y(X)
        return predict_logits(self.model_, samples, self.config)

    def predict_proba(self, X) -> np.ndarray:
        logits = self.decision_function(X)
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return self.decision_function(X).argmax(axis=1)

    def score(self, X, y) -> float:
        y = np.asarray(y)
        return float((self.predict(X) == y).mean())

    def evaluate(self, X, y, split: str = "val"):
        self._require_fitted()
        samples = _check_X_y(X, y)
        return evaluate(self.model_, samples, self.config, split=split)

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> "IRNClassifier":
        self._require_fitted()
        save_checkpoint(path, self.model_, self.config)
        return self

    @classmethod
    def load(cls, path) -> "IRNClassifier":
        model, config = load_checkpoint(path)
        est = cls(config=config)
        est.model_ = model
        return est
