"""Sliding-window VAE anomaly scoring over proprioceptive episode logs.

Signals are per-joint estimated interaction torque plus per-joint gait
phase, min-max normalized per channel and cut into overlapping windows.
A variational autoencoder learns the normal-regime window distribution;
the anomaly score of a window is the mean squared reconstruction error
through the deterministic mean latent (sampling happens only during
training), so the same window always maps to the same score.  ROC/AUC
evaluation is hand-rolled trapezoidal integration over all thresholds;
labels come from conflict-event overlap.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import nets

_MAGIC = b"VAEA"
_VERSION = 1

# window geometry at the 100 Hz log stride: 0.5 s of context, 0.1 s hop
WINDOW_LENGTH = 50
WINDOW_STRIDE = 10
# fraction of a window that must lie inside a conflict to label it anomalous
LABEL_OVERLAP = 0.5


@dataclass(frozen=True)
class WindowSpec:
    """Segmentation geometry plus per-channel min-max normalization.

    channels documents the ordered signal layout (the torque block then
    the phase block); lo/hi are the normalization anchors learned from
    the training series.  Windows are flattened channel-major, so one
    window is [ch0 samples..., ch1 samples..., ...] of width
    length * n_channels.
    """

    length: int
    stride: int
    channels: tuple
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=np.float64))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=np.float64))
        object.__setattr__(self, "channels", tuple(self.channels))
        if self.length < 2 * self.stride:
            raise ValueError("window length must be >= 2 * stride")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if not (len(self.channels) == self.lo.size == self.hi.size):
            raise ValueError("channels, lo, hi must agree in length")
        if not np.all(self.lo < self.hi):
            raise ValueError("each channel needs min < max")

    @property
    def n_channels(self):
        return len(self.channels)

    @property
    def window_dim(self):
        return self.length * self.n_channels

    def normalize(self, series):
        """Affine map sending [lo, hi] to [0, 1] per channel.

        Training-range data lands in [0, 1]; out-of-range values pass
        through linearly, which is what makes them score as anomalous.
        """
        series = np.asarray(series, dtype=np.float64)
        return (series - self.lo) / (self.hi - self.lo)

    def denormalize(self, series):
        return np.asarray(series, dtype=np.float64) * (self.hi - self.lo) \
            + self.lo


def channel_names(n_joints):
    return tuple([f"tau_e_hat{i}" for i in range(n_joints)]
                 + [f"cos_phase{i}" for i in range(n_joints)]
                 + [f"sin_phase{i}" for i in range(n_joints)])


def expand_phase(torque_phase):
    """[tau..., phase...] columns -> [tau..., cos phase..., sin phase...].

    Gait phase is circular; feeding the raw wrapped angle to the VAE
    floors its reconstruction error at the sawtooth discontinuity (the
    decoder cannot place the 2*pi drop exactly), which buries conflict
    deviations.  The cosine/sine pair is smooth and wrap-free.
    """
    arr = np.asarray(torque_phase, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] % 2:
        raise ValueError("expected (T, 2n) [torque..., phase...] columns")
    n = arr.shape[1] // 2
    tau, ph = arr[:, :n], arr[:, n:]
    return np.concatenate([tau, np.cos(ph), np.sin(ph)], axis=1)


def log_channels(log):
    """(T, 3n) detector input [tau_e_hat..., cos phase..., sin phase...]."""
    return expand_phase(np.concatenate([log.tau_e_hat, log.phase], axis=1))


def spec_from_series(series_list, length=WINDOW_LENGTH, stride=WINDOW_STRIDE,
                     channels=None, margin=0.05):
    """Fit normalization anchors to training series (list of (T, C)).

    margin widens each channel's observed range symmetrically so edge
    values of the training data do not pin to exactly 0/1; constant
    channels get a unit-width band around their value.
    """
    stacked = np.concatenate([np.asarray(s, dtype=np.float64)
                              for s in series_list], axis=0)
    if stacked.ndim != 2:
        raise ValueError("series must be (T, n_channels) arrays")
    lo = stacked.min(axis=0)
    hi = stacked.max(axis=0)
    width = hi - lo
    flat = width <= 0
    pad = np.where(flat, 0.5, margin * width)
    if channels is None:
        channels = tuple(f"ch{i}" for i in range(stacked.shape[1]))
    return WindowSpec(length=length, stride=stride, channels=channels,
                      lo=lo - pad, hi=hi + pad)


def segment(signals, spec):
    """Cut a (T, C) series into normalized, channel-major flat windows.

    Returns (n_windows, length * C) with starts at 0, stride, 2*stride...
    """
    signals = np.asarray(signals, dtype=np.float64)
    if signals.ndim != 2 or signals.shape[1] != spec.n_channels:
        raise ValueError("signals must be (T, %d)" % spec.n_channels)
    T = signals.shape[0]
    if T < spec.length:
        raise ValueError("series shorter than one window")
    normed = spec.normalize(signals)
    n_win = 1 + (T - spec.length) // spec.stride
    out = np.empty((n_win, spec.window_dim))
    for j in range(n_win):
        start = j * spec.stride
        out[j] = normed[start:start + spec.length].T.ravel()
    return out


def window_spans(t, spec):
    """(n_windows, 2) start/end times matching segment() on the same t."""
    t = np.asarray(t, dtype=np.float64)
    if t.size < spec.length:
        raise ValueError("series shorter than one window")
    n_win = 1 + (t.size - spec.length) // spec.stride
    starts = np.array([t[j * spec.stride] for j in range(n_win)])
    ends = np.array([t[j * spec.stride + spec.length - 1]
                     for j in range(n_win)])
    return np.column_stack([starts, ends])


def label_windows(spans, events, overlap=LABEL_OVERLAP):
    """Anomalous iff >= overlap fraction of the span lies in any event."""
    spans = np.asarray(spans, dtype=np.float64)
    if isinstance(events, (list, tuple)):
        evs = list(events)
    else:
        evs = [events] if events is not None else []
    labels = np.zeros(spans.shape[0], dtype=bool)
    for j, (a, b) in enumerate(spans):
        width = b - a
        covered = 0.0
        for ev in evs:
            lo = max(a, ev.onset)
            hi = min(b, ev.onset + ev.duration)
            covered += max(0.0, hi - lo)
        labels[j] = width > 0 and covered >= overlap * width
    return labels


class VaeAnomalyDetector(BaseEstimator):
    """VAE over normalized windows; score = mean squared reconstruction
    error through the mean latent.

    fit(X) trains encoder/decoder on normal-regime windows (rows of X);
    score_samples(X) returns one nonnegative score per row and is a
    deterministic pure function of the window.
    """

    def __init__(self, latent_dim=8, hidden=(64, 64), epochs=150,
                 step_size=1e-3, batch_size=32, seed=0):
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.epochs = epochs
        self.step_size = step_size
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("X must be (n_windows, window_dim)")
        if X.shape[0] < 100:
            raise ValueError("need at least 100 normal windows to train")
        d = X.shape[1]
        hidden = list(self.hidden)
        acts = ["tanh"] * len(hidden) + ["identity"]
        self.encoder_ = nets.DenseNet([d] + hidden + [2 * self.latent_dim],
                                      acts, seed=self.seed)
        self.decoder_ = nets.DenseNet([self.latent_dim] + hidden[::-1] + [d],
                                      acts, seed=self.seed + 1)
        cfg = nets.TrainConfig(step_size=self.step_size,
                               batch_size=self.batch_size,
                               epochs=self.epochs, seed=self.seed)
        self.loss_curve_ = nets.train_vae(self.encoder_, self.decoder_, X,
                                          cfg)
        self.n_features_in_ = d
        return self

    def _check_input(self, X):
        if not hasattr(self, "encoder_"):
            raise ValueError("detector is not fitted")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features_in_:
            raise ValueError("window dim %d does not match trained %d"
                             % (X.shape[1], self.n_features_in_))
        return X

    def latent_mean(self, X):
        X = self._check_input(X)
        return self.encoder_.forward(X)[:, :self.latent_dim]

    def reconstruct(self, X):
        return self.decoder_.forward(self.latent_mean(X))

    def score_samples(self, X):
        X = self._check_input(X)
        resid = X - self.reconstruct(X)
        return np.mean(resid * resid, axis=1)


def train_vae(windows, latent_dim=8, cfg=None, **kwargs):
    """Functional front door: fit a VaeAnomalyDetector on normal windows.

    cfg may be a nets.TrainConfig (epochs/step/batch/seed are lifted from
    it); extra keyword arguments go to the detector constructor.
    """
    if cfg is not None:
        kwargs.setdefault("epochs", cfg.epochs)
        kwargs.setdefault("step_size", cfg.step_size)
        kwargs.setdefault("batch_size", cfg.batch_size)
        kwargs.setdefault("seed", cfg.seed)
    return VaeAnomalyDetector(latent_dim=latent_dim, **kwargs).fit(windows)


def score(model, window):
    """Anomaly score of one flat window (nonnegative float)."""
    return float(model.score_samples(np.atleast_2d(window))[0])


def roc_curve(scores, labels):
    """ROC points (fpr, tpr) over all distinct score thresholds.

    Ties are grouped so the curve is the exact step function; endpoints
    (0,0) and (1,1) are always present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be matching 1-D arrays")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need both classes to build a ROC curve")
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    l_sorted = labels[order]
    tp = np.cumsum(l_sorted)
    fp = np.cumsum(~l_sorted)
    distinct = np.nonzero(np.diff(s_sorted))[0]
    idx = np.concatenate([distinct, [scores.size - 1]])
    tpr = np.concatenate([[0.0], tp[idx] / n_pos])
    fpr = np.concatenate([[0.0], fp[idx] / n_neg])
    return np.column_stack([fpr, tpr])


def auc_from_scores(scores, labels):
    pts = roc_curve(scores, labels)
    return float(np.trapezoid(pts[:, 1], pts[:, 0]))


def evaluate_auc(model, windows, labels):
    """Score labeled windows and integrate the ROC; returns (points, auc)."""
    s = model.score_samples(windows)
    pts = roc_curve(s, np.asarray(labels, dtype=bool))
    return pts, float(np.trapezoid(pts[:, 1], pts[:, 0]))


def save_detector(model, spec, fh):
    """Write detector + window spec as one binary file.

    Layout: magic b"VAEA", u32 version, u32 latent_dim, u32 length,
    u32 stride, u32 n_channels, per channel (u32 name byte count, utf-8
    name), float64 lo[n_channels], float64 hi[n_channels], then the
    encoder and decoder in the dense-net format.
    """
    if not hasattr(model, "encoder_"):
        raise ValueError("detector is not fitted")
    own = isinstance(fh, (str, bytes))
    f = open(fh, "wb") if own else fh
    try:
        f.write(_MAGIC)
        f.write(struct.pack("<5I", _VERSION, model.latent_dim, spec.length,
                            spec.stride, spec.n_channels))
        for name in spec.channels:
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
        f.write(np.ascontiguousarray(spec.lo, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(spec.hi, dtype="<f8").tobytes())
        nets.save_net(model.encoder_, f)
        nets.save_net(model.decoder_, f)
    finally:
        if own:
            f.close()


def load_detector(fh):
    """Inverse of save_detector; returns (detector, spec)."""
    own = isinstance(fh, (str, bytes))
    f = open(fh, "rb") if own else fh
    try:
        if f.read(4) != _MAGIC:
            raise ValueError("not a serialized anomaly detector (bad magic)")
        version, latent, length, stride, n_ch = struct.unpack("<5I",
                                                              f.read(20))
        if version != _VERSION:
            raise ValueError("unsupported detector format version %d"
                             % version)
        names = []
        for _ in range(n_ch):
            (n,) = struct.unpack("<I", f.read(4))
            names.append(f.read(n).decode("utf-8"))
        lo = np.frombuffer(f.read(8 * n_ch), dtype="<f8").astype(np.float64)
        hi = np.frombuffer(f.read(8 * n_ch), dtype="<f8").astype(np.float64)
        if lo.size != n_ch or hi.size != n_ch:
            raise ValueError("truncated normalization block")
        spec = WindowSpec(length=length, stride=stride, channels=names,
                          lo=lo, hi=hi)
        encoder = nets.load_net(f)
        decoder = nets.load_net(f)
        model = VaeAnomalyDetector(
            latent_dim=latent, hidden=tuple(encoder.layer_sizes[1:-1]))
        model.encoder_ = encoder
        model.decoder_ = decoder
        model.n_features_in_ = encoder.layer_sizes[0]
        model.loss_curve_ = np.array([])
        return model, spec
    finally:
        if own:
            f.close()
