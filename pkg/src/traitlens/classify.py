"""One-vs-all trait prediction per timeframe.

L1-regularized logistic regression fit by a monotone proximal-gradient scheme
(FISTA with a non-increasing accepted-objective safeguard), regularization
strength chosen by stratified cross-validation on AUC, evaluated over repeated
stratified holdout splits with AUC and the equal-precision-recall point.

Features are standardized internally on training-split statistics only;
weights live in standardized-feature units.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import log, sqrt

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .errors import (
    DegeneratePrior,
    DegeneratePriorWarning,
    NoCrossingWarning,
    NonConvergenceWarning,
    UnknownClass,
    UnknownFeature,
)
from .trace import TRAIT_VOCABULARY

__all__ = [
    "TrainSpec",
    "FittedModel",
    "EvalSeries",
    "binarize",
    "stratified_split",
    "fit_l1_logreg",
    "cross_validate_lambda",
    "lambda_upper_bound",
    "auc",
    "epr",
    "repeated_eval",
    "coefficient_trajectories",
    "TrajectoryTable",
    "logistic_loss_grad",
]


@dataclass(frozen=True)
class TrainSpec:
    """Hyperparameters for fitting and repeated evaluation."""

    lambda_grid: tuple | None = None
    lambda_points: int = 30
    lambda_decades: float = 4.0
    cv_folds: int = 5
    max_iters: int = 1000
    tolerance: float = 1e-8
    n_repeats: int = 10
    train_fraction: float = 2.0 / 3.0
    seed: int = 0
    penalty: str = "l1"
    workers: int = 1

    def __post_init__(self):
        if not (0.0 < self.train_fraction < 1.0):
            raise ValueError("train_fraction must be in (0, 1)")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")
        if self.max_iters < 1 or self.tolerance <= 0 or self.n_repeats < 1:
            raise ValueError("max_iters, tolerance, n_repeats must be positive")
        if self.penalty not in ("l1", "l2"):
            raise ValueError("penalty must be 'l1' or 'l2'")
        if self.lambda_grid is not None:
            grid = tuple(float(v) for v in self.lambda_grid)
            if any(v <= 0 for v in grid):
                raise ValueError("lambda grid values must be positive")
            object.__setattr__(self, "lambda_grid", grid)


@dataclass
class FittedModel:
    """A fitted sparse linear model plus its training standardization."""

    weights: np.ndarray
    intercept: float
    chosen_lambda: float
    mean: np.ndarray
    scale: np.ndarray
    zero_variance: np.ndarray
    feature_names: tuple | None = None
    converged: bool = True
    n_iters: int = 0
    objective_history: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def scores(self, X) -> np.ndarray:
        """Raw decision scores (log-odds) for rows of unstandardized X."""
        Xs = (np.asarray(X, dtype=np.float64) - self.mean) / self.scale
        return Xs @ self.weights + self.intercept

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.scores(X))

    @property
    def n_nonzero(self) -> int:
        return int(np.count_nonzero(self.weights))


def binarize(values, target_class, vocabulary=None) -> np.ndarray:
    """One-vs-all 0/1 target vector: 1 where value == target_class.

    ``vocabulary`` (when given) bounds the legal targets; a target outside it
    raises UnknownClass. A degenerate result (single-class) is returned with a
    DegeneratePriorWarning rather than raised, so callers can decide.
    """
    values = np.asarray(list(values), dtype=object)
    if vocabulary is not None and target_class not in tuple(vocabulary):
        raise UnknownClass(
            f"{target_class!r} not in declared vocabulary {tuple(vocabulary)}"
        )
    if any(v is None for v in values):
        raise ValueError("every user must carry a label for the trait")
    y = (values == target_class).astype(np.int64)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        warnings.warn(
            f"degenerate prior for target {target_class!r}: "
            f"{n_pos}/{len(y)} positives",
            DegeneratePriorWarning,
            stacklevel=2,
        )
    return y


def binarize_trait(values, trait, target_class) -> np.ndarray:
    """binarize() with the trait's declared vocabulary enforced."""
    return binarize(values, target_class, vocabulary=TRAIT_VOCABULARY.get(trait))


def stratified_split(y, train_fraction, seed):
    """Class-prior-preserving random split into (train_idx, test_idx).

    Per class, round(train_fraction * class_size) members go to train (clamped
    so both sides keep at least one member). Deterministic given ``seed``.
    """
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    train_parts, test_parts = [], []
    for value in np.unique(y):
        idx = np.flatnonzero(y == value)
        if len(idx) < 2:
            raise DegeneratePrior(
                f"class {value!r} has {len(idx)} member(s); need >= 2"
            )
        k = int(round(train_fraction * len(idx)))
        k = min(max(k, 1), len(idx) - 1)
        perm = rng.permutation(len(idx))
        train_parts.append(idx[perm[:k]])
        test_parts.append(idx[perm[k:]])
    train = np.sort(np.concatenate(train_parts))
    test = np.sort(np.concatenate(test_parts))
    return train, test


def logistic_loss_grad(X, y, w, b):
    """Mean logistic loss and its gradient (the smooth part of the objective)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    z = X @ w + b
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    r = (expit(z) - y) / len(y)
    return loss, X.T @ r, float(r.sum())


def _standardize(X):
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    zero_var = std == 0.0
    scale = np.where(zero_var, 1.0, std)
    return (X - mean) / scale, mean, scale, zero_var


def lambda_upper_bound(X, y) -> float:
    """Smallest penalty that provably kills every weight (null-gradient bound).

    Computed on internally standardized X: max_j |(1/n) X_jᵀ(y - ȳ)|.
    """
    Xs, _, _, _ = _standardize(X)
    y = np.asarray(y, dtype=np.float64)
    return float(np.max(np.abs(Xs.T @ (y - y.mean()))) / len(y))


def _lipschitz(Xs):
    # largest singular value squared / (4n) bounds the logistic Hessian
    n, d = Xs.shape
    v = np.ones(d) / sqrt(d)
    s = 1.0
    for _ in range(30):
        u = Xs @ v
        v = Xs.T @ u
        s = np.linalg.norm(v)
        if s == 0.0:
            return 1.0
        v /= s
    return max(s / (4.0 * n), 1e-12)


def _prox(u, tau, penalty):
    if penalty == "l1":
        return np.sign(u) * np.maximum(np.abs(u) - tau, 0.0)
    return u / (1.0 + tau)


def _solve(Xs, y, lam, spec, w0=None, b0=None, lipschitz=None):
    """Monotone FISTA on standardized data. Returns (w, b, history, converged)."""
    n, d = Xs.shape
    y = np.asarray(y, dtype=np.float64)
    ybar = y.mean()
    w = np.zeros(d) if w0 is None else w0.astype(np.float64).copy()
    b = float(log(ybar / (1.0 - ybar))) if b0 is None else float(b0)
    L = _lipschitz(Xs) if lipschitz is None else lipschitz
    step = 1.0 / L

    def smooth(w_, b_):
        z = Xs @ w_ + b_
        return float(np.mean(np.logaddexp(0.0, z) - y * z)), z

    def penalty_term(w_):
        if spec.penalty == "l1":
            return lam * float(np.abs(w_).sum())
        return 0.5 * lam * float(w_ @ w_)

    def backtracked_step(w_from, b_from, f_from, z_from):
        nonlocal step
        r = (expit(z_from) - y) / n
        g_w = Xs.T @ r
        g_b = float(r.sum())
        for _ in range(60):
            w_new = _prox(w_from - step * g_w, step * lam, spec.penalty)
            b_new = b_from - step * g_b
            f_new, z_new = smooth(w_new, b_new)
            dw = w_new - w_from
            db = b_new - b_from
            quad = f_from + g_w @ dw + g_b * db + (dw @ dw + db * db) / (2 * step)
            if f_new <= quad + 1e-12 * (1.0 + abs(f_from)):
                return w_new, b_new, f_new, z_new
            step *= 0.5
        return w_new, b_new, f_new, z_new

    f_x, z_x = smooth(w, b)
    F_x = f_x + penalty_term(w)
    history = [F_x]
    y_w, y_b = w.copy(), b
    f_y, z_y = f_x, z_x
    t = 1.0
    converged = False
    iters = 0
    for iters in range(1, spec.max_iters + 1):
        w_zn, b_zn, f_zn, z_zn = backtracked_step(y_w, y_b, f_y, z_y)
        F_z = f_zn + penalty_term(w_zn)
        w_prev, b_prev = w, b
        if F_z <= F_x:
            w, b, F_new = w_zn, b_zn, F_z
            f_x, z_x = f_zn, z_zn
        else:
            # momentum overshoot: plain proximal step from x keeps descent
            w_xn, b_xn, f_xn, z_xn = backtracked_step(w, b, f_x, z_x)
            F_ista = f_xn + penalty_term(w_xn)
            if F_ista <= F_x:
                w, b, F_new = w_xn, b_xn, F_ista
                f_x, z_x = f_xn, z_xn
            else:
                F_new = F_x  # reject: accepted sequence stays non-increasing
        t_new = 0.5 * (1.0 + sqrt(1.0 + 4.0 * t * t))
        y_w = w + (t / t_new) * (w_zn - w) + ((t - 1.0) / t_new) * (w - w_prev)
        y_b = b + (t / t_new) * (b_zn - b) + ((t - 1.0) / t_new) * (b - b_prev)
        t = t_new
        f_y, z_y = smooth(y_w, y_b)
        decrease = history[-1] - F_new
        history.append(F_new)
        F_x = F_new
        if decrease < spec.tolerance:
            converged = True
            break
    return w, b, np.asarray(history), converged, iters


def fit_l1_logreg(X, y, lam, spec=None, feature_names=None) -> FittedModel:
    """Fit penalized logistic regression at one fixed penalty strength.

    Minimizes (1/n)·logistic loss + lam·‖w‖₁ (intercept unpenalized) after
    standardizing columns on X itself. The accepted objective sequence is
    non-increasing; hitting max_iters raises a NonConvergenceWarning and
    returns the best iterate.
    """
    spec = spec or TrainSpec()
    y = np.asarray(y)
    if len(np.unique(y)) < 2:
        raise DegeneratePrior("both classes must be present to fit")
    Xs, mean, scale, zero_var = _standardize(X)
    w, b, history, converged, iters = _solve(Xs, y, float(lam), spec)
    if not converged:
        warnings.warn(
            f"solver hit max_iters={spec.max_iters} "
            f"(last decrease {history[-2] - history[-1]:.3g})",
            NonConvergenceWarning,
            stacklevel=2,
        )
    return FittedModel(
        weights=w,
        intercept=b,
        chosen_lambda=float(lam),
        mean=mean,
        scale=scale,
        zero_variance=zero_var,
        feature_names=tuple(feature_names) if feature_names is not None else None,
        converged=converged,
        n_iters=iters,
        objective_history=history,
    )


def _lambda_path(Xs, y, spec):
    """Descending penalty grid from the null-gradient bound of this data."""
    if spec.lambda_grid is not None:
        return np.sort(np.asarray(spec.lambda_grid, dtype=np.float64))[::-1]
    y = np.asarray(y, dtype=np.float64)
    lam_max = float(np.max(np.abs(Xs.T @ (y - y.mean()))) / len(y))
    if lam_max <= 0.0:
        lam_max = 1e-8
    return np.geomspace(lam_max, lam_max * 10.0 ** (-spec.lambda_decades),
                        spec.lambda_points)


def _fit_path(X, y, spec, lambdas=None):
    """Warm-started fits along a descending penalty path (standardize once)."""
    Xs, mean, scale, zero_var = _standardize(X)
    lambdas = _lambda_path(Xs, y, spec) if lambdas is None else lambdas
    L = _lipschitz(Xs)
    fits = []
    w0, b0 = None, None
    for lam in lambdas:
        w, b, history, converged, iters = _solve(
            Xs, y, float(lam), spec, w0=w0, b0=b0, lipschitz=L
        )
        fits.append((float(lam), w, b, history, converged, iters))
        w0, b0 = w, b
    return fits, mean, scale, zero_var


def _stratified_folds(y, n_folds, rng):
    """Round-robin stratified fold assignment; every fold sees both classes."""
    y = np.asarray(y)
    fold_of = np.zeros(len(y), dtype=np.int64)
    for value in np.unique(y):
        idx = np.flatnonzero(y == value)
        perm = rng.permutation(len(idx))
        fold_of[idx[perm]] = np.arange(len(idx)) % n_folds
    return fold_of


def cross_validate_lambda(X, y, spec=None, seed=None) -> float:
    """Pick the penalty maximizing mean validation AUC over stratified folds.

    Exact ties break toward the larger penalty (the sparser model). ``seed``
    defaults to spec.seed and only controls fold assignment.
    """
    spec = spec or TrainSpec()
    y = np.asarray(y)
    X = np.asarray(X, dtype=np.float64)
    counts = np.bincount(y.astype(np.int64), minlength=2)
    if counts.min() < 2:
        raise DegeneratePrior("both classes need >= 2 members for CV")
    n_folds = min(spec.cv_folds, int(counts.min()))
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    fold_of = _stratified_folds(y, n_folds, rng)

    Xs_all, _, _, _ = _standardize(X)
    lambdas = _lambda_path(Xs_all, y, spec)
    fold_auc = np.zeros((n_folds, len(lambdas)))
    for fold in range(n_folds):
        val = fold_of == fold
        fits, mean, scale, _ = _fit_path(X[~val], y[~val], spec, lambdas=lambdas)
        Xv = (X[val] - mean) / scale
        yv = y[val]
        for j, (_, w, b, _, _, _) in enumerate(fits):
            fold_auc[fold, j] = auc(Xv @ w + b, yv)
    mean_auc = fold_auc.mean(axis=0)
    best = 0
    for j in range(1, len(lambdas)):
        if mean_auc[j] > mean_auc[best]:
            best = j
    return float(lambdas[best])


def auc(scores, y) -> float:
    """Area under the ROC curve via midranks: P(s⁺ > s⁻) + ½·P(tie)."""
    y = np.asarray(y)
    scores = np.asarray(scores, dtype=np.float64)
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegeneratePrior("AUC needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _pr_points(scores, y):
    """Precision/recall at every distinct descending score threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y)
    order = np.argsort(-scores, kind="mergesort")
    ys = y[order]
    ss = scores[order]
    tp = np.cumsum(ys == 1)
    n_pred = np.arange(1, len(y) + 1)
    last_of_group = np.flatnonzero(np.r_[ss[1:] != ss[:-1], True])
    precision = tp[last_of_group] / n_pred[last_of_group]
    recall = tp[last_of_group] / tp[-1]
    return precision, recall


def epr(scores, y) -> float:
    """Equal-precision-recall point of the PR curve.

    Sweeps distinct thresholds descending; an exact precision == recall touch
    is returned directly, otherwise the first adjacent straddling pair is
    linearly interpolated. With no crossing at all, the point minimizing
    |precision - recall| is returned with a NoCrossingWarning.
    """
    y = np.asarray(y)
    n_pos = int((y == 1).sum())
    if n_pos == 0 or n_pos == len(y):
        raise DegeneratePrior("ePR needs both classes present")
    precision, recall = _pr_points(scores, y)
    diff = precision - recall
    if diff[0] == 0.0:
        return float(precision[0])
    for k in range(1, len(diff)):
        if diff[k] == 0.0:
            return float(precision[k])
        if (diff[k - 1] > 0.0) != (diff[k] > 0.0):
            t = diff[k - 1] / (diff[k - 1] - diff[k])
            return float(recall[k - 1] + t * (recall[k] - recall[k - 1]))
    j = int(np.argmin(np.abs(diff)))
    warnings.warn(
        "precision-recall curve never crosses the diagonal",
        NoCrossingWarning,
        stacklevel=2,
    )
    return float((precision[j] + recall[j]) / 2.0)


@dataclass
class EvalSeries:
    """Per-horizon evaluation aggregates; NaN rows mark absent (degenerate) frames."""

    frames: np.ndarray
    mean_auc: np.ndarray
    std_auc: np.ndarray
    mean_epr: np.ndarray
    std_epr: np.ndarray
    n_train: np.ndarray
    n_test: np.ndarray
    prior: np.ndarray
    n_repeats: int = 0

    def to_csv(self, dest):
        own = not hasattr(dest, "write")
        stream = open(dest, "w", encoding="utf-8", newline="") if own else dest
        try:
            stream.write(
                "frame,mean_auc,std_auc,mean_epr,std_epr,n_train,n_test,prior\n"
            )
            for i, frame in enumerate(self.frames):
                stream.write(
                    f"{int(frame)},{float(self.mean_auc[i])!r},"
                    f"{float(self.std_auc[i])!r},{float(self.mean_epr[i])!r},"
                    f"{float(self.std_epr[i])!r},{int(self.n_train[i])},"
                    f"{int(self.n_test[i])},{float(self.prior[i])!r}\n"
                )
        finally:
            if own:
                stream.close()


def _eval_one_split(X, y, spec, split_seed, cv_seed):
    train, test = stratified_split(y, spec.train_fraction, split_seed)
    lam = cross_validate_lambda(X[train], y[train], spec, seed=cv_seed)
    lambdas = _lambda_path(_standardize(X[train])[0], y[train], spec)
    path_lams = lambdas[lambdas >= lam - 1e-15]
    fits, mean, scale, zero_var = _fit_path(X[train], y[train], spec,
                                            lambdas=path_lams)
    lam_f, w, b, history, converged, iters = fits[-1]
    model = FittedModel(
        weights=w, intercept=b, chosen_lambda=lam_f, mean=mean, scale=scale,
        zero_variance=zero_var, converged=converged, n_iters=iters,
        objective_history=history,
    )
    scores = model.scores(X[test])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NoCrossingWarning)
        return auc(scores, y[test]), epr(scores, y[test]), model, len(train), len(test)


def repeated_eval(series, trait, target_class, spec=None, collect_models=False):
    """Repeated stratified holdout evaluation across a temporal dataset series.

    For each dataset: n_repeats independent splits (seeds derived from
    spec.seed and the horizon/repeat indices), penalty chosen by CV on the
    training split, AUC/ePR scored on the held-out third. Degenerate frames
    (a class with < 2 labeled users) are marked absent, not fatal.

    Returns EvalSeries, or (EvalSeries, models) with ``collect_models`` where
    ``models`` maps horizon -> the repeat-0 FittedModel (feature names attached).
    """
    spec = spec or TrainSpec()
    frames, m_auc, s_auc, m_epr, s_epr = [], [], [], [], []
    n_tr, n_te, priors = [], [], []
    models = {}
    def mark_absent():
        m_auc.append(np.nan)
        s_auc.append(np.nan)
        m_epr.append(np.nan)
        s_epr.append(np.nan)
        n_tr.append(0)
        n_te.append(0)
        priors.append(np.nan)

    for ds in series:
        frames.append(ds.horizon)
        values = ds.label_values(trait)
        mask = np.asarray([v is not None for v in values])
        if mask.sum() == 0:
            mark_absent()
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegeneratePriorWarning)
            y = binarize_trait(values[mask], trait, target_class)
        X = ds.X[mask]
        counts = np.bincount(y, minlength=2)
        if counts.min() < 2:
            mark_absent()
            continue

        def run(rep, h=ds.horizon, X=X, y=y):
            ss = np.random.SeedSequence(entropy=spec.seed, spawn_key=(h, rep))
            split_seed, cv_seed = ss.spawn(2)
            return _eval_one_split(X, y, spec, split_seed, cv_seed)

        if spec.workers > 1:
            with ThreadPoolExecutor(max_workers=spec.workers) as pool:
                results = list(pool.map(run, range(spec.n_repeats)))
        else:
            results = [run(rep) for rep in range(spec.n_repeats)]
        aucs = np.asarray([r[0] for r in results])
        eprs = np.asarray([r[1] for r in results])
        if collect_models:
            model = results[0][2]
            model.feature_names = tuple(ds.feature_names)
            models[ds.horizon] = model
        m_auc.append(aucs.mean())
        s_auc.append(aucs.std())
        m_epr.append(eprs.mean())
        s_epr.append(eprs.std())
        n_tr.append(results[0][3])
        n_te.append(results[0][4])
        priors.append(float(y.mean()))
    out = EvalSeries(
        frames=np.asarray(frames, dtype=np.int64),
        mean_auc=np.asarray(m_auc),
        std_auc=np.asarray(s_auc),
        mean_epr=np.asarray(m_epr),
        std_epr=np.asarray(s_epr),
        n_train=np.asarray(n_tr, dtype=np.int64),
        n_test=np.asarray(n_te, dtype=np.int64),
        prior=np.asarray(priors),
        n_repeats=spec.n_repeats,
    )
    if collect_models:
        return out, models
    return out


@dataclass
class TrajectoryTable:
    """Weights of selected feature columns across per-horizon models."""

    frames: np.ndarray
    features: tuple
    weights: np.ndarray  # (n_frames, n_features)
    absent: np.ndarray   # True where the column is missing or zero-variance

    def to_csv(self, dest):
        own = not hasattr(dest, "write")
        stream = open(dest, "w", encoding="utf-8", newline="") if own else dest
        try:
            stream.write("frame,feature,weight,absent\n")
            for i, frame in enumerate(self.frames):
                for j, name in enumerate(self.features):
                    stream.write(
                        f"{int(frame)},{name},{float(self.weights[i, j])!r},"
                        f"{int(self.absent[i, j])}\n"
                    )
        finally:
            if own:
                stream.close()


def coefficient_trajectories(models, features) -> TrajectoryTable:
    """Track requested columns' weights (standardized units) across frame models.

    ``models`` maps horizon -> FittedModel with feature_names attached. A
    column missing from a model (shorter horizon) or constant in its training
    split appears as weight 0 with the absent marker set. Unknown names (in no
    model at all) raise UnknownFeature.
    """
    features = tuple(features)
    frames = sorted(models)
    known = set()
    for h in frames:
        names = models[h].feature_names
        if names is None:
            raise ValueError(f"model at horizon {h} lacks feature names")
        known.update(names)
    for name in features:
        if name not in known:
            raise UnknownFeature(f"feature {name!r} appears in no model")
    weights = np.zeros((len(frames), len(features)))
    absent = np.ones((len(frames), len(features)), dtype=bool)
    for i, h in enumerate(frames):
        model = models[h]
        index = {name: j for j, name in enumerate(model.feature_names)}
        for j, name in enumerate(features):
            col = index.get(name)
            if col is None:
                continue
            if model.zero_variance[col]:
                continue
            weights[i, j] = model.weights[col]
            absent[i, j] = False
    return TrajectoryTable(
        frames=np.asarray(frames, dtype=np.int64),
        features=features,
        weights=weights,
        absent=absent,
    )
