"""Plug-in information theory over discretized features.

Entropies are maximum-likelihood ("plug-in") estimates in bits from sparse
contingency counts; no bias correction by default (Miller-Madow available via
``correction="miller_madow"``, at the cost of breaking the exact telescoping
identities that only hold for the raw plug-in estimator).

Joint conditioning states are held as integer codes of realized combinations
only, so memory tracks the number of distinct histories rather than bins**t.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFeatureWarning

__all__ = [
    "Quantizer",
    "quantize",
    "entropy",
    "conditional_entropy",
    "mutual_information",
    "TransferSeries",
    "information_transfer_series",
    "rank_features_by_residual_entropy",
    "write_transfer_csv",
]


@dataclass
class Quantizer:
    """Per-feature discretizer with an optional reserved bin for exact zeros.

    equal_frequency (default) places cut points at empirical quantiles — of
    the nonzero values when ``zero_bin`` is on, so zero-inflated count data
    keeps a dedicated zero state. Values equal to a cut point fall in the
    lower bin.
    """

    bins: int = 3
    strategy: str = "equal_frequency"
    zero_bin: bool = True
    cuts_: np.ndarray | None = field(default=None, repr=False)
    degenerate_: bool = False

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError("bins must be >= 2")
        if self.strategy not in ("equal_frequency", "equal_width"):
            raise ValueError(f"unknown strategy {self.strategy!r}")

    @property
    def fitted(self) -> bool:
        return self.cuts_ is not None or self.degenerate_

    def clone(self) -> "Quantizer":
        return Quantizer(bins=self.bins, strategy=self.strategy,
                         zero_bin=self.zero_bin)

    def fit(self, values) -> "Quantizer":
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            raise ValueError("cannot fit a quantizer on no data")
        if np.all(values == values[0]):
            self.degenerate_ = True
            self.cuts_ = np.zeros(0)
            warnings.warn(
                "constant feature: quantizer collapses to a single bin",
                DegenerateFeatureWarning,
                stacklevel=2,
            )
            return self
        pool = values[values != 0.0] if self.zero_bin else values
        inner_bins = self.bins - 1 if self.zero_bin else self.bins
        if pool.size == 0:
            # all-zero handled above; nonzero pool empty cannot happen here
            self.degenerate_ = True
            self.cuts_ = np.zeros(0)
            return self
        if self.strategy == "equal_frequency":
            qs = np.arange(1, inner_bins) / inner_bins
            cuts = np.quantile(pool, qs)
        else:
            lo, hi = float(pool.min()), float(pool.max())
            cuts = lo + (hi - lo) * np.arange(1, inner_bins) / inner_bins
        self.cuts_ = np.unique(cuts)
        return self

    def transform(self, values) -> np.ndarray:
        if not self.fitted:
            raise ValueError("quantizer is not fitted")
        values = np.asarray(values, dtype=np.float64)
        if self.degenerate_:
            return np.zeros(values.shape, dtype=np.int64)
        # 'left' => values equal to a cut point land in the lower bin
        binned = np.searchsorted(self.cuts_, values, side="left").astype(np.int64)
        if self.zero_bin:
            out = np.zeros(values.shape, dtype=np.int64)
            nz = values != 0.0
            out[nz] = 1 + binned[nz]
            return out
        return binned

    def fit_transform(self, values) -> np.ndarray:
        return self.fit(values).transform(values)


def quantize(values, quantizer: Quantizer) -> np.ndarray:
    """Bin-index vector for ``values``; fits the quantizer first if needed."""
    if not quantizer.fitted:
        quantizer.fit(values)
    return quantizer.transform(values)


def _codes(values):
    _, inverse = np.unique(np.asarray(values), return_inverse=True)
    return inverse.astype(np.int64)


def _entropy_from_counts(counts, n, correction=None):
    counts = counts[counts > 0]
    h = math.log2(n) - float(counts @ np.log2(counts)) / n
    if correction == "miller_madow":
        h += (len(counts) - 1) / (2.0 * n * math.log(2.0))
    elif correction is not None:
        raise ValueError(f"unknown correction {correction!r}")
    return h


def entropy(values, correction=None) -> float:
    """Plug-in Shannon entropy in bits (0·log 0 = 0)."""
    values = np.asarray(values)
    if values.size == 0:
        raise ValueError("entropy of an empty vector is undefined")
    _, counts = np.unique(values, return_counts=True)
    return _entropy_from_counts(counts, values.size, correction)


def _as_columns(xs):
    """Normalize a vector / list of vectors / (n, k) matrix to a column list."""
    if isinstance(xs, (list, tuple)):
        return [np.asarray(c) for c in xs]
    xs = np.asarray(xs)
    if xs.ndim == 1:
        return [xs]
    return [xs[:, j] for j in range(xs.shape[1])]


def _joint_codes(columns):
    codes = _codes(columns[0])
    for col in columns[1:]:
        nxt = _codes(col)
        combined = codes * (int(nxt.max()) + 1) + nxt
        _, codes = np.unique(combined, return_inverse=True)
        codes = codes.astype(np.int64)
    return codes


def conditional_entropy(y, xs, correction=None) -> float:
    """H(Y | X₁..X_k) in bits over the realized joint states of the Xs."""
    y_codes = _codes(y)
    n = y_codes.size
    x_codes = _joint_codes(_as_columns(xs))
    n_y = int(y_codes.max()) + 1
    h_x = _entropy_from_counts(np.bincount(x_codes), n, correction)
    h_xy = _entropy_from_counts(
        np.bincount(x_codes * n_y + y_codes), n, correction
    )
    return h_xy - h_x


def mutual_information(y, x, correction=None) -> float:
    """I(Y; X) = H(Y) - H(Y|X) in bits (plug-in; nonnegative up to rounding)."""
    return entropy(y, correction) - conditional_entropy(y, x, correction)


@dataclass
class TransferSeries:
    """Per-frame information transfer I(Y; X_t | history) for one feature.

    ``frames`` are 1-based frame numbers. transfer[0] equals I(Y; X₁);
    cond_entropy traces H(Y | X₁..X_t) and is non-increasing for the default
    full-history, plug-in estimator.
    """

    feature: str
    frames: np.ndarray
    transfer: np.ndarray
    cond_entropy: np.ndarray
    instantaneous_mi: np.ndarray
    n_effective: int
    base_entropy: float


def information_transfer_series(y, frames, quantizer=None, history_window=None,
                                correction=None, feature="") -> TransferSeries:
    """Quantize each frame's feature vector and trace the transfer series.

    ``frames`` is an (n, T) matrix or a list of T aligned vectors over one
    fixed user population (users inactive at a frame contribute their encoded
    zero counts). Each frame is quantized by a fresh clone of ``quantizer``
    fitted on that frame's values. ``history_window`` truncates the
    conditioning history to the last k frames (sensitivity analysis only: the
    telescoping and monotonicity identities hold for the default full
    history).
    """
    quantizer = quantizer or Quantizer()
    cols = _as_columns(frames)
    y_codes = _codes(y)
    n = y_codes.size
    n_y = int(y_codes.max()) + 1
    h_y = _entropy_from_counts(np.bincount(y_codes), n, correction)

    def cond_h(state_codes):
        h_s = _entropy_from_counts(np.bincount(state_codes), n, correction)
        h_sy = _entropy_from_counts(
            np.bincount(state_codes * n_y + y_codes), n, correction
        )
        return h_sy - h_s

    transfer, cond, inst = [], [], []
    binned_frames = []
    hist_codes = np.zeros(n, dtype=np.int64)  # single empty-history state
    ce_prev = h_y
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateFeatureWarning)
        for t, col in enumerate(cols):
            bins_t = quantizer.clone().fit_transform(col)
            binned_frames.append(bins_t)
            inst.append(h_y - cond_h(_codes(bins_t)))
            if history_window is None:
                combined = hist_codes * (int(bins_t.max()) + 1) + bins_t
                _, hist_codes = np.unique(combined, return_inverse=True)
                hist_codes = hist_codes.astype(np.int64)
                ce_t = cond_h(hist_codes)
            else:
                lo = max(0, t + 1 - history_window)
                ce_t = cond_h(_joint_codes(binned_frames[lo:t + 1]))
                lo_prev = max(0, t - history_window)
                ce_prev = (
                    cond_h(_joint_codes(binned_frames[lo_prev:t])) if t else h_y
                )
            transfer.append(ce_prev - ce_t)
            cond.append(ce_t)
            ce_prev = ce_t
    return TransferSeries(
        feature=feature,
        frames=np.arange(1, len(cols) + 1, dtype=np.int64),
        transfer=np.asarray(transfer),
        cond_entropy=np.asarray(cond),
        instantaneous_mi=np.asarray(inst),
        n_effective=n,
        base_entropy=h_y,
    )


def rank_features_by_residual_entropy(y, features, quantizer=None,
                                      horizon=None):
    """Order features by H(Y | X₁..X_T), ascending (lower = more disclosing).

    ``features`` maps name -> (n, T) per-frame value matrix. Ties break by
    feature name. Returns a list of (name, residual_entropy_bits).
    """
    quantizer = quantizer or Quantizer()
    results = []
    for name in features:
        cols = _as_columns(features[name])
        if horizon is not None:
            cols = cols[:horizon]
        series = information_transfer_series(y, cols, quantizer, feature=name)
        results.append((name, float(series.cond_entropy[-1])))
    results.sort(key=lambda item: (item[1], item[0]))
    return results


def write_transfer_csv(series_by_feature, dest):
    """Delimited export: feature,frame,transfer_bits,cond_entropy_bits,instantaneous_mi_bits,n."""
    own = not hasattr(dest, "write")
    stream = open(dest, "w", encoding="utf-8", newline="") if own else dest
    try:
        stream.write(
            "feature,frame,transfer_bits,cond_entropy_bits,"
            "instantaneous_mi_bits,n\n"
        )
        for name in series_by_feature:
            s = series_by_feature[name]
            for i, frame in enumerate(s.frames):
                stream.write(
                    f"{name},{int(frame)},{float(s.transfer[i])!r},"
                    f"{float(s.cond_entropy[i])!r},"
                    f"{float(s.instantaneous_mi[i])!r},{s.n_effective}\n"
                )
    finally:
        if own:
            stream.close()
