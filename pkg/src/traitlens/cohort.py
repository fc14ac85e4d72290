"""Population scenarios: open entry, frame-1 fixed population, exited users.

The exited protocol mirrors the retirement analysis: train on the labeled
users who did NOT exit (so training spans both sides of the cutoff), test on
the exited cohort whose post-cutoff frame blocks are all zero counts with
join flags 0 - any accuracy gain after the cutoff is, by construction, not
driven by the exited users' own activity.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .classify import (
    EvalSeries,
    FittedModel,
    TrainSpec,
    auc,
    binarize_trait,
    cross_validate_lambda,
    epr,
    _fit_path,
    _lambda_path,
    _standardize,
    repeated_eval,
    stratified_split,
)
from .errors import (
    DegeneratePrior,
    DegeneratePriorWarning,
    EmptyCohort,
    NoCrossingWarning,
)
from .featurize import FeatureTable, build_feature_table, feature_names
from .infodynamics import Quantizer, information_transfer_series
from .trace import CategoryScheme, TimeGrid

__all__ = [
    "CohortSpec",
    "select_cohort",
    "compare_ne_fp",
    "NEFPResult",
    "exited_eval",
    "ExitedEvalResult",
    "write_cohort_csv",
]


@dataclass(frozen=True)
class CohortSpec:
    """Which population scenario to select; cutoff_frame only for 'exited'."""

    kind: str
    cutoff_frame: int | None = None

    def __post_init__(self):
        if self.kind not in ("new_entry", "fixed_population", "exited"):
            raise ValueError(f"unknown cohort kind {self.kind!r}")
        if self.kind == "exited" and self.cutoff_frame is None:
            raise ValueError("exited cohort needs a cutoff_frame")


def _as_table(events, grid, scheme=None, first_edit=None) -> FeatureTable:
    if isinstance(events, FeatureTable):
        return events
    scheme = scheme or CategoryScheme("basic")
    return build_feature_table(events, grid, scheme, first_edit=first_edit)


def select_cohort(events, grid: TimeGrid, spec: CohortSpec, scheme=None):
    """Reproducible user subset per the scenario definition (sorted array).

    new_entry: every user with an in-window revision. fixed_population: users
    active in frame 0. exited(c): users active in some frame < c and inactive
    in every frame >= c through the end of the grid.
    """
    table = _as_table(events, grid, scheme)
    active = table.active()
    if spec.kind == "new_entry":
        chosen = table.user_ids
    elif spec.kind == "fixed_population":
        chosen = table.user_ids[active[:, 0]]
    else:
        c = spec.cutoff_frame
        if not (0 < c < grid.frames):
            raise ValueError(f"cutoff_frame must be inside the grid, got {c}")
        before = active[:, :c].any(axis=1)
        after = active[:, c:].any(axis=1)
        chosen = table.user_ids[before & ~after]
    if len(chosen) == 0:
        raise EmptyCohort(f"{spec.kind} cohort is empty")
    return np.asarray(sorted(chosen), dtype=object)


@dataclass
class NEFPResult:
    """Paired open-entry vs fixed-population evaluation."""

    new_entry: EvalSeries
    fixed_population: EvalSeries
    relative_gain: np.ndarray
    auc_correlation: float

    def to_csv(self, dest):
        own = not hasattr(dest, "write")
        stream = open(dest, "w", encoding="utf-8", newline="") if own else dest
        try:
            stream.write(
                "frame,mean_auc_ne,std_auc_ne,mean_auc_fp,std_auc_fp,relative_gain\n"
            )
            ne, fp = self.new_entry, self.fixed_population
            for i, frame in enumerate(ne.frames):
                stream.write(
                    f"{int(frame)},{float(ne.mean_auc[i])!r},"
                    f"{float(ne.std_auc[i])!r},{float(fp.mean_auc[i])!r},"
                    f"{float(fp.std_auc[i])!r},{float(self.relative_gain[i])!r}\n"
                )
        finally:
            if own:
                stream.close()


def compare_ne_fp(series, trait, target_class, spec=None) -> NEFPResult:
    """Evaluate the open population against the frame-1 fixed population.

    Both cohorts share the same horizons and derived seeds, so when no user
    ever arrives after frame 0 the two series are identical and the gain is
    exactly zero. Also reports the Pearson correlation between the two mean
    AUC series over the horizons where both are defined.
    """
    spec = spec or TrainSpec()
    if len(series[0]) == 0:
        raise EmptyCohort("no users are active in the first frame")
    fp_users = series[0].user_ids
    ne = repeated_eval(series, trait, target_class, spec)
    fp_series = [ds.restrict(fp_users) for ds in series]
    fp = repeated_eval(fp_series, trait, target_class, spec)
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = (ne.mean_auc - fp.mean_auc) / fp.mean_auc
    both = np.isfinite(ne.mean_auc) & np.isfinite(fp.mean_auc)
    if both.sum() >= 2 and np.std(ne.mean_auc[both]) > 0 and np.std(fp.mean_auc[both]) > 0:
        corr = float(np.corrcoef(ne.mean_auc[both], fp.mean_auc[both])[0, 1])
    else:
        corr = float("nan")
    return NEFPResult(
        new_entry=ne,
        fixed_population=fp,
        relative_gain=gain,
        auc_correlation=corr,
    )


@dataclass
class ExitedEvalResult:
    """Exited-cohort evaluation: accuracy series, transfer series, frame models."""

    eval_series: EvalSeries
    transfer: dict
    models: dict
    exited_users: np.ndarray
    n_train_pool: int
    cutoff_frame: int


def exited_eval(events, grid: TimeGrid, labels, trait, target_class,
                cutoff_frame: int, spec=None, scheme=None, first_edit=None,
                quantizer=None) -> ExitedEvalResult:
    """Train on non-exited labeled users, test on the exited cohort.

    Evaluates every horizon h with cutoff <= h <= T (the first one covers
    exactly the exited users' pre-cutoff history). Repeats vary a stratified
    train_fraction subsample of the training pool; the test set is always the
    whole exited cohort. Per-horizon reference models (fit on the full pool)
    are returned for coefficient-trajectory analysis, and the exited cohort's
    per-category information-transfer series is computed over all frames - it
    is exactly zero from the cutoff on, because the cohort's features are
    constant there.
    """
    spec = spec or TrainSpec()
    scheme = scheme or CategoryScheme("basic")
    table = _as_table(events, grid, scheme, first_edit=first_edit)
    exited = select_cohort(table, grid, CohortSpec("exited", cutoff_frame))
    exited_set = set(exited)
    labeled = np.asarray(
        [u in labels and trait in labels[u] for u in table.user_ids]
    )
    exited_mask = np.asarray([u in exited_set for u in table.user_ids])
    test_rows_all = labeled & exited_mask
    if not test_rows_all.any():
        raise EmptyCohort("no labeled exited users")
    train_rows_all = labeled & ~exited_mask
    if not train_rows_all.any():
        raise EmptyCohort("no labeled non-exited users to train on")

    values = np.asarray(
        [labels.get(u, {}).get(trait) for u in table.user_ids], dtype=object
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegeneratePriorWarning)
        y_all = np.zeros(len(table), dtype=np.int64)
        lab_idx = np.flatnonzero(labeled)
        y_all[lab_idx] = binarize_trait(values[lab_idx], trait, target_class)
    y_test = y_all[test_rows_all]
    if np.bincount(y_test, minlength=2).min() == 0:
        raise DegeneratePrior("exited cohort is single-class for this target")

    frames, m_auc, s_auc, m_epr, s_epr, n_tr, n_te, priors = ([] for _ in range(8))
    models = {}
    eligible = table.first_inwindow_frame
    for h in range(cutoff_frame, grid.frames + 1):
        rows_eligible = eligible <= h - 1
        tr = np.flatnonzero(train_rows_all & rows_eligible)
        te = np.flatnonzero(test_rows_all & rows_eligible)
        X_h = _horizon_matrix(table, h)
        y_tr, y_te = y_all[tr], y_all[te]
        frames.append(h)
        aucs, eprs = [], []
        for rep in range(spec.n_repeats):
            ss = np.random.SeedSequence(entropy=spec.seed, spawn_key=(h, rep))
            sub_seed, cv_seed = ss.spawn(2)
            sub, _ = stratified_split(y_tr, spec.train_fraction, sub_seed)
            rows = tr[sub]
            lam = cross_validate_lambda(X_h[rows], y_all[rows], spec, seed=cv_seed)
            model = _final_fit(X_h[rows], y_all[rows], lam, spec)
            scores = model.scores(X_h[te])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", NoCrossingWarning)
                aucs.append(auc(scores, y_te))
                eprs.append(epr(scores, y_te))
        ref_seed = np.random.SeedSequence(
            entropy=spec.seed, spawn_key=(h, spec.n_repeats)
        )
        lam = cross_validate_lambda(X_h[tr], y_tr, spec, seed=ref_seed)
        ref = _final_fit(X_h[tr], y_tr, lam, spec)
        ref.feature_names = tuple(ds.feature_names)
        models[h] = ref
        aucs, eprs = np.asarray(aucs), np.asarray(eprs)
        m_auc.append(aucs.mean())
        s_auc.append(aucs.std())
        m_epr.append(eprs.mean())
        s_epr.append(eprs.std())
        n_tr.append(len(tr))
        n_te.append(len(te))
        priors.append(float(y_te.mean()))

    eval_series = EvalSeries(
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

    quantizer = quantizer or Quantizer()
    transfer = {}
    te_rows = np.flatnonzero(test_rows_all)
    for j, cat in enumerate(table.scheme.categories):
        matrix = table.counts[te_rows, :, j].astype(np.float64)
        transfer[cat] = information_transfer_series(
            y_all[te_rows], matrix, quantizer, feature=cat
        )
    return ExitedEvalResult(
        eval_series=eval_series,
        transfer=transfer,
        models=models,
        exited_users=exited,
        n_train_pool=int(train_rows_all.sum()),
        cutoff_frame=cutoff_frame,
    )


def _horizon_matrix(table: FeatureTable, horizon: int) -> np.ndarray:
    """Full-population design matrix at a horizon (no eligibility filtering)."""
    counts = table.counts[:, :horizon, :]
    flags = table.flags()[:, :horizon]
    n, _, C = counts.shape
    block = np.empty((n, horizon, 2 * C), dtype=np.float64)
    block[:, :, 0::2] = counts
    block[:, :, 1::2] = flags[:, :, None]
    return block.reshape(n, horizon * 2 * C)


def _final_fit(X, y, lam, spec) -> FittedModel:
    lambdas = _lambda_path(_standardize(X)[0], y, spec)
    path = lambdas[lambdas >= lam - 1e-15]
    fits, mean, scale, zero_var = _fit_path(X, y, spec, lambdas=path)
    lam_f, w, b, history, converged, iters = fits[-1]
    return FittedModel(
        weights=w, intercept=b, chosen_lambda=lam_f, mean=mean, scale=scale,
        zero_variance=zero_var, converged=converged, n_iters=iters,
        objective_history=history,
    )


def write_cohort_csv(assignments, dest):
    """Audit export: user_id,cohort rows (sorted)."""
    own = not hasattr(dest, "write")
    stream = open(dest, "w", encoding="utf-8", newline="") if own else dest
    try:
        stream.write("user_id,cohort\n")
        for user, cohort in sorted(assignments):
            stream.write(f"{user},{cohort}\n")
    finally:
        if own:
            stream.close()
