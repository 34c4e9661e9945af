"""scikit-learn style front end for syntactic pattern classification.

Samples are mode sequences: either terminal strings (``"aaccc"`` or a list
of terminal ids) or arrays of shape ``(n_scans, 8)`` holding per-scan mode
probabilities in terminal order ``a..h``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .classifier import compiled_pattern, map_label, normalize_log_probs
from .earley import NEG_INF, SimilarityConfig, SoftTerminal, init_chart
from .patterns import PATTERN_NAMES, TERMINALS, pattern_family


def check_sequences(X) -> list[list[dict[str, float]]]:
    """Validate a batch of mode sequences and convert each scan to a terminal distribution."""
    if isinstance(X, (str, np.ndarray)) and (isinstance(X, str) or X.ndim < 2):
        raise ValueError("X must be a collection of sequences, got a single sequence")
    out = []
    for i, seq in enumerate(X):
        if isinstance(seq, str) or (isinstance(seq, (list, tuple)) and all(isinstance(s, str) for s in seq)):
            bad = set(seq) - set(TERMINALS)
            if bad:
                raise ValueError(f"sample {i}: unknown terminals {sorted(bad)}")
            dists = [{s: 1.0} for s in seq]
        else:
            arr = np.asarray(seq, dtype=float)
            if arr.ndim != 2 or arr.shape[1] != len(TERMINALS):
                raise ValueError(f"sample {i}: expected shape (n_scans, {len(TERMINALS)}), got {arr.shape}")
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValueError(f"sample {i}: probabilities must be finite and non-negative")
            sums = arr.sum(axis=1)
            if np.any(np.abs(sums - 1.0) > 1e-6):
                raise ValueError(f"sample {i}: rows must sum to one")
            dists = [{t: float(p) for t, p in zip(TERMINALS, row) if p > 0} for row in arr]
        if not dists:
            raise ValueError(f"sample {i} is empty")
        out.append(dists)
    if not out:
        raise ValueError("X is empty")
    return out


class SyntacticPatternClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Classify mode sequences as lines, arcs or m-rectangles by grammar likelihood.

    Parameters
    ----------
    patterns : sequence of str, optional
        Pattern grammars to score; all twelve built-ins by default.
    level : {"family", "pattern"}
        Whether labels are families (line / arc / m-rectangle) or pattern names.
    prune : float or None
        Relative log-probability pruning threshold per chart.
    """

    def __init__(self, patterns=None, level="family", prune=-20.0):
        self.patterns = patterns
        self.level = level
        self.prune = prune

    def _label(self, name: str) -> str:
        return pattern_family(name) if self.level == "family" else name

    def fit(self, X, y=None):
        if self.level not in ("family", "pattern"):
            raise ValueError(f"level must be 'family' or 'pattern', got {self.level!r}")
        patterns = tuple(PATTERN_NAMES if self.patterns is None else self.patterns)
        unknown = set(patterns) - set(PATTERN_NAMES)
        if unknown:
            raise ValueError(f"unknown patterns {sorted(unknown)}")
        self.patterns_ = patterns
        self.grammars_ = {name: compiled_pattern(name, 0.0) for name in patterns}
        labels = sorted({self._label(n) for n in patterns})
        if y is not None:
            X_ = check_sequences(X)
            y = np.asarray(y)
            if len(y) != len(X_):
                raise ValueError("X and y have different lengths")
            extra = set(y.tolist()) - set(labels)
            if extra:
                raise ValueError(f"labels {sorted(extra)} are not produced by the chosen patterns")
        self.classes_ = np.array(labels)
        self.n_features_out_ = len(patterns)
        return self

    def _score(self, dists) -> dict[str, float]:
        off = SimilarityConfig(enabled=False)
        out = {}
        for name, cg in self.grammars_.items():
            chart = init_chart(cg, None, off, self.prune)
            for k, d in enumerate(dists, start=1):
                chart.advance(SoftTerminal(d, None, k))
                if not chart.alive:
                    break
            out[name] = chart.log_prefix_probability() if chart.alive else NEG_INF
        return out

    def transform(self, X) -> np.ndarray:
        """Final log prefix probability of every pattern, shape ``(n_samples, n_patterns)``."""
        check_is_fitted(self, "grammars_")
        seqs = check_sequences(X)
        return np.array([[s[n] for n in self.patterns_] for s in map(self._score, seqs)])

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "grammars_")
        out = np.zeros((0, len(self.classes_)))
        rows = []
        index = {c: i for i, c in enumerate(self.classes_)}
        for scores in map(self._score, check_sequences(X)):
            post = normalize_log_probs(scores)
            row = np.zeros(len(self.classes_))
            for name, p in post.items():
                row[index[self._label(name)]] += p
            rows.append(row)
        return np.vstack(rows) if rows else out

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "grammars_")
        labels = []
        for scores in map(self._score, check_sequences(X)):
            best = map_label(scores)
            labels.append(best if best == "unclassified" else self._label(best))
        return np.array(labels, dtype=object)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "patterns_")
        return np.array([f"logp_{n}" for n in self.patterns_], dtype=object)

