"""Cross-task trajectory translation between movement-primitive codes.

Each subject contributes a (walk, task) pair of primitives; translation
learns the map from the walk code to the task code so a new wearer only
has to demonstrate walking.  A small dense network is compared against a
closed-form ridge baseline by leave-one-out prediction of the held-out
subject's joint trajectory, scored as RMSE in degrees.  Codes are
self-contained: weights plus offset (plus goal and duration for discrete
primitives), so a predicted code reconstructs a complete, integrable
primitive without reading anything from the held-out ground truth.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import dmp, nets, wearer

# one-cycle grid for rhythmic encodings; discrete demos sample their
# own duration
ENCODE_SAMPLES = 400
# normalized-time comparison grids for trajectory RMSE
EVAL_SAMPLES_RHYTHMIC = 200
EVAL_SAMPLES_DISCRETE = 400
# shortest duration a predicted discrete code may carry; regression output
# must never become a nonpositive time scale
MIN_DURATION = 0.05


@dataclass(frozen=True)
class TranslationDataset:
    """Per-subject (walk, target-task) primitive pairs for one task."""

    task: str
    subject_ids: tuple
    cadences_hz: tuple
    walk: tuple
    target: tuple

    def __post_init__(self):
        object.__setattr__(self, "subject_ids", tuple(self.subject_ids))
        object.__setattr__(self, "cadences_hz",
                           tuple(float(c) for c in self.cadences_hz))
        object.__setattr__(self, "walk", tuple(self.walk))
        object.__setattr__(self, "target", tuple(self.target))
        n = len(self.subject_ids)
        if not (n == len(self.cadences_hz) == len(self.walk)
                == len(self.target)):
            raise ValueError("per-subject fields must have equal length")
        if n == 0:
            raise ValueError("dataset needs at least one subject")
        if len(set(self.subject_ids)) != n:
            raise ValueError("subjects must be distinct")
        w0, t0 = self.walk[0], self.target[0]
        for w, t in zip(self.walk, self.target):
            if w.klass != dmp.RHYTHMIC:
                raise ValueError("walk primitives must be rhythmic")
            if w.weights.shape != w0.weights.shape \
                    or t.weights.shape != t0.weights.shape \
                    or t.klass != t0.klass:
                raise ValueError("primitive shapes differ across subjects")

    @property
    def n_subjects(self):
        return len(self.subject_ids)

    @property
    def target_klass(self):
        return self.target[0].klass


def model_code(model):
    """Flatten a primitive into a regression vector.

    Rhythmic: [vec(weights), offset].  Discrete appends goal and duration
    so the full generator round-trips through the regressor.
    """
    parts = [model.weights.ravel(), model.offset]
    if model.klass == dmp.DISCRETE:
        parts.append(model.goal)
        parts.append(np.array([model.duration]))
    return np.concatenate(parts)


def model_from_code(code, like):
    """Rebuild a primitive from a code vector.

    `like` supplies the static metadata (class, shapes, kernel width,
    gains) that translation does not touch.
    """
    code = np.asarray(code, dtype=np.float64).ravel()
    n_out, n_k = like.weights.shape
    expected = n_out * n_k + n_out
    if like.klass == dmp.DISCRETE:
        expected += n_out + 1
    if code.size != expected:
        raise ValueError("code length %d does not match layout %d"
                         % (code.size, expected))
    w = code[:n_out * n_k].reshape(n_out, n_k)
    offset = code[n_out * n_k:n_out * n_k + n_out]
    if like.klass == dmp.RHYTHMIC:
        return dmp.DmpModel(dmp.RHYTHMIC, w, offset, like.kernel_width,
                            like.alpha, like.beta)
    goal = code[n_out * n_k + n_out:n_out * n_k + 2 * n_out]
    duration = max(float(code[-1]), MIN_DURATION)
    return dmp.DmpModel(dmp.DISCRETE, w, offset, like.kernel_width,
                        like.alpha, like.beta, goal=goal, duration=duration)


def encode_subject(profile, task):
    """Encode one subject's intended movement for `task` as a primitive."""
    if task in wearer.RHYTHMIC_TASKS:
        period = 1.0 / profile.cadence_hz
        ts = np.arange(ENCODE_SAMPLES) / ENCODE_SAMPLES * period
        return dmp.encode(wearer.intended_trajectory(profile, task, ts),
                          dmp.RHYTHMIC)
    motion = profile.gaits[task]
    ts = np.linspace(0.0, motion.duration, ENCODE_SAMPLES)
    return dmp.encode(wearer.intended_trajectory(profile, task, ts),
                      dmp.DISCRETE, duration=motion.duration)


def build_translation_dataset(profiles, task):
    if task not in wearer.TASKS or task == "walk":
        raise ValueError("task must be one of %r" % (wearer.TASKS[1:],))
    return TranslationDataset(
        task=task,
        subject_ids=tuple(p.subject_id for p in profiles),
        cadences_hz=tuple(p.cadence_hz for p in profiles),
        walk=tuple(encode_subject(p, "walk") for p in profiles),
        target=tuple(encode_subject(p, task) for p in profiles),
    )


def dataset_codes(dataset):
    """(X, Y) code matrices in dataset subject order."""
    X = np.stack([model_code(m) for m in dataset.walk])
    Y = np.stack([model_code(m) for m in dataset.target])
    return X, Y


# ---------------------------------------------------------------------------
# regressors


def _center_scale(A):
    mean = A.mean(axis=0)
    scale = A.std(axis=0)
    # constant columns carry no signal; unit scale keeps them harmless
    scale = np.where(scale < 1e-12, 1.0, scale)
    return mean, scale


class TaskTranslator(BaseEstimator):
    """Dense network mapping walk codes to task codes.

    Both spaces are standardized per feature before training; the net is
    one tanh hidden layer trained full-batch, so the fit is invariant to
    the order of the training rows.
    """

    def __init__(self, hidden=32, epochs=3000, step_size=1e-2, seed=0):
        self.hidden = hidden
        self.epochs = epochs
        self.step_size = step_size
        self.seed = seed

    def fit(self, X, Y):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        if X.shape[0] != Y.shape[0]:
            raise ValueError("X and Y must pair rows")
        if X.shape[0] < 3:
            raise ValueError("need at least 3 training subjects")
        self.x_mean_, self.x_scale_ = _center_scale(X)
        self.y_mean_, self.y_scale_ = _center_scale(Y)
        xs = (X - self.x_mean_) / self.x_scale_
        ys = (Y - self.y_mean_) / self.y_scale_
        self.net_ = nets.DenseNet([X.shape[1], self.hidden, Y.shape[1]],
                                  ["tanh", "identity"], seed=self.seed)
        cfg = nets.TrainConfig(step_size=self.step_size,
                               batch_size=X.shape[0], epochs=self.epochs,
                               seed=self.seed)
        self.loss_curve_ = nets.train_mse(self.net_, xs, ys, cfg)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        if not hasattr(self, "net_"):
            raise ValueError("translator is not fitted")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features_in_:
            raise ValueError("feature count %d does not match trained %d"
                             % (X.shape[1], self.n_features_in_))
        xs = (X - self.x_mean_) / self.x_scale_
        return self.net_.forward(xs) * self.y_scale_ + self.y_mean_


class RidgeTranslator(BaseEstimator):
    """Closed-form regularized linear map on standardized codes.

    coef_ holds the standardized-space map; lam = 0 is allowed only when
    the training inputs actually span the feature space.
    """

    def __init__(self, lam=1e-2):
        self.lam = lam

    def fit(self, X, Y):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        if X.shape[0] != Y.shape[0]:
            raise ValueError("X and Y must pair rows")
        if X.shape[0] < 3:
            raise ValueError("need at least 3 training subjects")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        self.x_mean_, self.x_scale_ = _center_scale(X)
        self.y_mean_, self.y_scale_ = _center_scale(Y)
        xs = (X - self.x_mean_) / self.x_scale_
        ys = (Y - self.y_mean_) / self.y_scale_
        gram = xs.T @ xs
        d = gram.shape[0]
        if self.lam == 0.0 and np.linalg.matrix_rank(gram) < d:
            raise np.linalg.LinAlgError(
                "unregularized system is singular (collinear inputs)")
        gram[np.diag_indices_from(gram)] += self.lam
        self.coef_ = np.linalg.solve(gram, xs.T @ ys)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        if not hasattr(self, "coef_"):
            raise ValueError("translator is not fitted")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features_in_:
            raise ValueError("feature count %d does not match trained %d"
                             % (X.shape[1], self.n_features_in_))
        xs = (X - self.x_mean_) / self.x_scale_
        return (xs @ self.coef_) * self.y_scale_ + self.y_mean_


def _fold_rows(dataset, held_out):
    """Training row indices, canonically ordered by subject id.

    The canonical order makes every fold's arithmetic independent of how
    the dataset rows happened to be arranged.
    """
    order = sorted(range(dataset.n_subjects),
                   key=lambda i: dataset.subject_ids[i])
    return [i for i in order if dataset.subject_ids[i] != held_out]


def fit_nn(dataset, held_out=None, seed=0, **kwargs):
    """Train the network translator on the dataset minus one subject."""
    X, Y = dataset_codes(dataset)
    rows = _fold_rows(dataset, held_out)
    return TaskTranslator(seed=seed, **kwargs).fit(X[rows], Y[rows])


def fit_ridge(dataset, lam=1e-2, held_out=None):
    """Closed-form baseline on the dataset minus one subject."""
    X, Y = dataset_codes(dataset)
    rows = _fold_rows(dataset, held_out)
    return RidgeTranslator(lam=lam).fit(X[rows], Y[rows])


def predict_target(translator, dataset, subject_id):
    """Predict one subject's task primitive from their walk primitive."""
    idx = dataset.subject_ids.index(subject_id)
    code = translator.predict(model_code(dataset.walk[idx])[None])[0]
    return model_from_code(code, dataset.target[0])


# ---------------------------------------------------------------------------
# trajectory-space evaluation


def reference_trajectory(model, cadence_hz=None):
    """Joint trajectory used for RMSE scoring, in radians.

    Rhythmic primitives run two cycles at the subject cadence and return
    the second (the first absorbs the attractor transient); discrete
    primitives run over their own duration on a normalized-time grid, so
    predicted and true trajectories stay comparable pointwise even when
    the predicted duration differs.
    """
    if model.klass == dmp.RHYTHMIC:
        if cadence_hz is None or cadence_hz <= 0:
            raise ValueError("rhythmic evaluation needs cadence_hz > 0")
        period = 1.0 / cadence_hz
        dt = period / EVAL_SAMPLES_RHYTHMIC
        out = dmp.integrate_output(model, omega=2.0 * np.pi * cadence_hz,
                                   total_time=2.0 * period, dt=dt)
        return out.q[EVAL_SAMPLES_RHYTHMIC:2 * EVAL_SAMPLES_RHYTHMIC]
    dt = model.duration / EVAL_SAMPLES_DISCRETE
    out = dmp.integrate_output(model, total_time=model.duration, dt=dt)
    return out.q


def trajectory_rmse_deg(predicted, truth, cadence_hz=None):
    """Joint-space RMSE between two primitives' trajectories, in degrees."""
    qp = reference_trajectory(predicted, cadence_hz)
    qt = reference_trajectory(truth, cadence_hz)
    return float(np.degrees(np.sqrt(np.mean((qp - qt) ** 2))))


@dataclass(frozen=True)
class LoocvResult:
    task: str
    method: str
    subject_ids: tuple
    rmse_deg: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "subject_ids", tuple(self.subject_ids))
        object.__setattr__(self, "rmse_deg",
                           np.asarray(self.rmse_deg, dtype=np.float64))

    @property
    def mean_rmse_deg(self):
        return float(np.mean(self.rmse_deg))


def _fold_seed(seed, subject_id):
    # keyed on the subject id, not the row position, so fold results do
    # not depend on dataset ordering
    return int(np.random.SeedSequence((seed, subject_id)).generate_state(1)[0]
               & 0x7FFFFFFF)


def loocv(dataset, method="nn", seed=0, lam=1e-2, **nn_kwargs):
    """Leave-one-out evaluation: per-subject trajectory RMSE in degrees."""
    if dataset.n_subjects < 4:
        raise ValueError("leave-one-out needs at least 4 subjects")
    if method not in ("nn", "ridge"):
        raise ValueError("method must be 'nn' or 'ridge'")
    errors = np.empty(dataset.n_subjects)
    for i, sid in enumerate(dataset.subject_ids):
        if method == "nn":
            tr = fit_nn(dataset, held_out=sid, seed=_fold_seed(seed, sid),
                        **nn_kwargs)
        else:
            tr = fit_ridge(dataset, lam=lam, held_out=sid)
        predicted = predict_target(tr, dataset, sid)
        errors[i] = trajectory_rmse_deg(predicted, dataset.target[i],
                                        dataset.cadences_hz[i])
    return LoocvResult(dataset.task, method, dataset.subject_ids, errors)


def results_to_csv(results, fh):
    """Write LOOCV results as subject_id,task,method,rmse_deg rows."""
    own = isinstance(fh, (str, bytes))
    f = open(fh, "w", newline="") if own else fh
    try:
        wr = csv.writer(f)
        wr.writerow(["subject_id", "task", "method", "rmse_deg"])
        for res in results:
            for sid, err in zip(res.subject_ids, res.rmse_deg):
                wr.writerow([sid, res.task, res.method, repr(float(err))])
    finally:
        if own:
            f.close()
