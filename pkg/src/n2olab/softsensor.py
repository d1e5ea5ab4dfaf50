"""Regression benchmark: model families, CV, tuning, feature importance.

Families: k-nearest-neighbour, random-forest and gradient-boosted-tree
regression (scikit-learn backbones, seeded and single-threaded so results
are reproducible at any outer parallelism), plus ordinary least squares,
a second-order polynomial-with-interactions expansion and backward
stepwise elimination implemented on our own linear algebra.

Cross-validation folds are contiguous time blocks by default (the data is
strongly autocorrelated); a shuffled mode exists and every report records
which one was used.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import joblib
import numpy as np
from scipy import stats
from sklearn.ensemble import GradientBoostingRegressor, RandomForestRegressor
from sklearn.neighbors import KNeighborsRegressor

from .errors import ConfigError, SchemaError
from .scenarios import TabularDataset

FAMILIES = ("knn", "random_forest", "gradient_boosting", "ols",
            "second_order", "stepwise_linear")
LINEAR_FAMILIES = ("ols", "second_order", "stepwise_linear")

DEFAULT_HYPERPARAMETERS = {
    "knn": {"n_neighbors": 8, "weights": "distance", "p": 2},
    "random_forest": {"n_estimators": 80, "max_depth": 16,
                      "min_samples_leaf": 2, "max_features": 0.6},
    "gradient_boosting": {"n_estimators": 120, "learning_rate": 0.10,
                          "max_depth": 3, "subsample": 0.6},
    "ols": {},
    "second_order": {},
    "stepwise_linear": {"alpha": 0.05, "order": 1},
}

SEARCH_SPACES = {
    "knn": {"n_neighbors": list(range(1, 21)), "weights": ["uniform", "distance"],
            "p": [1, 2]},
    "random_forest": {"n_estimators": [50, 80, 120], "max_depth": [8, 12, 16, 20],
                      "min_samples_leaf": [1, 2, 4], "max_features": [0.4, 0.6, 0.8]},
    "gradient_boosting": {"n_estimators": [100, 150, 200],
                          "learning_rate": [0.04, 0.08, 0.15], "max_depth": [2, 3, 4],
                          "subsample": [1.0, 0.8]},
}


# hard validity bounds per family (the tuning search spaces are narrower)
_VALID = {
    "knn": {"n_neighbors": (1, 10000), "p": (1, 10), "weights": ("uniform", "distance")},
    "random_forest": {"n_estimators": (1, 5000), "max_depth": (1, 200),
                      "min_samples_leaf": (1, 10000), "max_features": (0.01, 1.0)},
    "gradient_boosting": {"n_estimators": (1, 5000), "learning_rate": (1e-4, 1.0),
                          "max_depth": (1, 50), "subsample": (0.05, 1.0)},
    "stepwise_linear": {"alpha": (0.0, 1.0), "order": (1, 2)},
}


@dataclass(frozen=True)
class ModelSpec:
    family: str
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family: {self.family!r}")
        bounds = _VALID.get(self.family, {})
        for k, v in self.hyperparameters.items():
            rule = bounds.get(k)
            if rule is None or v is None:
                continue
            if isinstance(rule[0], str):
                if v not in rule:
                    raise ConfigError(f"{self.family}: {k}={v!r} not in {rule}")
            elif not (rule[0] <= v <= rule[1]):
                raise ConfigError(f"{self.family}: hyperparameter {k}={v!r} "
                                  f"outside valid range {rule}")

    def resolved(self) -> dict:
        hp = dict(DEFAULT_HYPERPARAMETERS[self.family])
        hp.update(self.hyperparameters)
        return hp


def r2_score(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, float)
    y_pred = np.asarray(y_pred, float)
    ss_res = float(((y_true - y_pred) ** 2).sum())
    ss_tot = float(((y_true - y_true.mean()) ** 2).sum())
    if ss_tot == 0.0:
        return float("nan")
    return 1.0 - ss_res / ss_tot


# ---------------------------------------------------------------------------
# Preprocessing


@dataclass
class TransformRecord:
    mean: np.ndarray
    scale: np.ndarray
    kept_columns: list
    dropped_columns: list

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, float)
        return (X[:, self.kept_columns] - self.mean) / self.scale

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist(),
                "kept_columns": list(self.kept_columns),
                "dropped_columns": list(self.dropped_columns)}

    @classmethod
    def from_dict(cls, d: dict) -> "TransformRecord":
        return cls(np.array(d["mean"]), np.array(d["scale"]),
                   list(d["kept_columns"]), list(d["dropped_columns"]))


def preprocess(X: np.ndarray, warn=None) -> tuple[np.ndarray, TransformRecord]:
    """Z-score standardisation fitted on (training) rows.

    Zero-variance columns are excluded and recorded; the record replays
    the exact transform on any compatible matrix.
    """
    X = np.asarray(X, float)
    if not np.all(np.isfinite(X)):
        raise SchemaError("missing values in feature matrix")
    std = X.std(axis=0)
    kept = [j for j in range(X.shape[1]) if std[j] > 0.0]
    dropped = [j for j in range(X.shape[1]) if std[j] == 0.0]
    if dropped and warn is not None:
        warn(f"dropping constant feature columns: {dropped}")
    record = TransformRecord(mean=X[:, kept].mean(axis=0), scale=std[kept],
                             kept_columns=kept, dropped_columns=dropped)
    return record.apply(X), record


def kfold_split(n: int, k: int = 5, mode: str = "blocked", seed: int = 0):
    """Fold index arrays partitioning range(n)."""
    if n < k:
        raise ConfigError(f"cannot split {n} rows into {k} folds")
    if mode == "blocked":
        order = np.arange(n)
    elif mode == "shuffled":
        order = np.random.default_rng(seed).permutation(n)
    else:
        raise ConfigError(f"unknown fold mode: {mode!r}")
    return [np.sort(part) for part in np.array_split(order, k)]


# ---------------------------------------------------------------------------
# Linear models (own implementation, with coefficient inference)


def second_order_design(X: np.ndarray) -> tuple[np.ndarray, list]:
    """[x_i] plus all squares and pairwise interactions."""
    X = np.asarray(X, float)
    n, p = X.shape
    cols = [X]
    names = [f"x{i}" for i in range(p)]
    for i in range(p):
        for j in range(i, p):
            cols.append((X[:, i] * X[:, j])[:, None])
            names.append(f"x{i}*x{j}" if i != j else f"x{i}^2")
    return np.hstack(cols), names


@dataclass
class LinearModel:
    coef: np.ndarray            # includes intercept as element 0
    term_names: list            # active slope terms, in coef order
    se: np.ndarray
    t_values: np.ndarray
    p_values: np.ndarray
    order: int = 1              # 1 = raw features, 2 = expanded design

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, float)
        if self.order == 2:
            X, names = second_order_design(X)
        else:
            names = [f"x{i}" for i in range(X.shape[1])]
        lookup = {nm: j for j, nm in enumerate(names)}
        cols = [lookup[nm] for nm in self.term_names]
        design = np.hstack([np.ones((X.shape[0], 1)), X[:, cols]])
        return design @ self.coef


def fit_ols(X: np.ndarray, y: np.ndarray, term_names=None, order: int = 1) -> LinearModel:
    """Least squares with coefficient standard errors and p-values."""
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    n, p = X.shape
    if term_names is None:
        term_names = [f"x{i}" for i in range(p)]
    design = np.hstack([np.ones((n, 1)), X])
    rank = np.linalg.matrix_rank(design)
    if rank < design.shape[1]:
        offending = _collinear_columns(design, term_names)
        raise ConfigError(f"singular design matrix; dependent columns: {offending}")
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    dof = n - design.shape[1]
    if dof <= 0:
        raise ConfigError("not enough rows for the number of terms")
    sigma2 = float(resid @ resid) / dof
    xtx_inv = np.linalg.inv(design.T @ design)
    se = np.sqrt(np.maximum(sigma2 * np.diag(xtx_inv), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_vals = np.where(se > 0, coef / se, np.inf)
    p_vals = 2.0 * stats.t.sf(np.abs(t_vals), dof)
    return LinearModel(coef=coef, term_names=list(term_names), se=se,
                       t_values=t_vals, p_values=p_vals, order=order)


def _collinear_columns(design: np.ndarray, term_names) -> list:
    from scipy.linalg import qr

    _, r, piv = qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(design.shape) * np.finfo(float).eps
    bad = [int(piv[i]) for i in range(len(diag)) if diag[i] < tol]
    names = ["intercept"] + list(term_names)
    return [names[i] for i in bad]


def adjusted_r2(r2: float, n: int, p: int) -> float:
    if n - p - 1 <= 0:
        return float("nan")
    return 1.0 - (1.0 - r2) * (n - 1) / (n - p - 1)


@dataclass
class StepwiseResult:
    model: LinearModel
    eliminated: list
    adjusted_r2_history: list
    intercept_only: bool = False


def stepwise_eliminate(X: np.ndarray, y: np.ndarray, alpha: float = 0.05,
                       order: int = 1, term_names=None) -> StepwiseResult:
    """Backward elimination of the least significant term until all pass."""
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    if order == 2:
        X, term_names = second_order_design(X)
    elif term_names is None:
        term_names = [f"x{i}" for i in range(X.shape[1])]
    active = list(range(X.shape[1]))
    eliminated = []
    history = []
    model = None
    while active:
        names = [term_names[i] for i in active]
        model = fit_ols(X[:, active], y, term_names=names, order=order)
        r2 = r2_score(y, np.hstack([np.ones((len(y), 1)), X[:, active]]) @ model.coef)
        history.append(adjusted_r2(r2, len(y), len(active)))
        p_slope = model.p_values[1:]
        worst = int(np.argmax(p_slope))
        if p_slope[worst] <= alpha or len(active) == 0:
            return StepwiseResult(model=model, eliminated=eliminated,
                                  adjusted_r2_history=history)
        eliminated.append(term_names[active[worst]])
        del active[worst]
    # every slope term removed
    coef = np.array([float(np.mean(y))])
    model = LinearModel(coef=coef, term_names=[], se=np.array([0.0]),
                        t_values=np.array([np.inf]), p_values=np.array([0.0]),
                        order=order)
    return StepwiseResult(model=model, eliminated=eliminated,
                          adjusted_r2_history=history, intercept_only=True)


# ---------------------------------------------------------------------------
# Model construction / training


class _SklearnModel:
    def __init__(self, estimator):
        self.estimator = estimator

    def predict(self, X):
        return self.estimator.predict(X)


def build_estimator(spec: ModelSpec):
    hp = spec.resolved()
    if spec.family == "knn":
        return KNeighborsRegressor(n_neighbors=hp["n_neighbors"],
                                   weights=hp["weights"], p=hp["p"], n_jobs=1)
    if spec.family == "random_forest":
        return RandomForestRegressor(
            n_estimators=hp["n_estimators"], max_depth=hp["max_depth"],
            min_samples_leaf=hp["min_samples_leaf"], max_features=hp["max_features"],
            min_samples_split=hp.get("min_samples_split", 2),
            bootstrap=hp.get("bootstrap", True), random_state=spec.seed, n_jobs=1)
    if spec.family == "gradient_boosting":
        return GradientBoostingRegressor(
            n_estimators=hp["n_estimators"], learning_rate=hp["learning_rate"],
            max_depth=hp["max_depth"], subsample=hp["subsample"], random_state=spec.seed)
    raise ConfigError(f"no estimator backbone for family {spec.family!r}")


def train(spec: ModelSpec, X: np.ndarray, y: np.ndarray):
    """Fit one model on (already preprocessed) features."""
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    if spec.family in ("knn", "random_forest", "gradient_boosting"):
        est = build_estimator(spec)
        est.fit(X, y)
        return _SklearnModel(est)
    if spec.family == "ols":
        return fit_ols(X, y)
    if spec.family == "second_order":
        X2, names = second_order_design(X)
        return fit_ols(X2, y, term_names=names, order=2)
    if spec.family == "stepwise_linear":
        hp = spec.resolved()
        return stepwise_eliminate(X, y, alpha=hp["alpha"], order=hp["order"]).model
    raise ConfigError(f"unknown model family: {spec.family!r}")


# ---------------------------------------------------------------------------
# Cross-validated evaluation


@dataclass
class EvaluationReport:
    family: str
    hyperparameters: dict
    seed: int
    fold_mode: str
    train_r2: list
    val_r2: list
    train_mse: list
    val_mse: list
    train_mae: list
    val_mae: list
    adjusted_r2: float | None
    residual_lag1_autocorr: float
    residual_time_slope: float
    dropped_features: list

    @property
    def mean_train_r2(self) -> float:
        return float(np.mean(self.train_r2))

    @property
    def mean_val_r2(self) -> float:
        return float(np.mean(self.val_r2))

    def to_dict(self) -> dict:
        return {
            "family": self.family, "hyperparameters": self.hyperparameters,
            "seed": self.seed, "fold_mode": self.fold_mode,
            "train_r2": self.train_r2, "val_r2": self.val_r2,
            "train_mse": self.train_mse, "val_mse": self.val_mse,
            "train_mae": self.train_mae, "val_mae": self.val_mae,
            "mean_train_r2": self.mean_train_r2, "mean_val_r2": self.mean_val_r2,
            "adjusted_r2": self.adjusted_r2,
            "residual_lag1_autocorr": self.residual_lag1_autocorr,
            "residual_time_slope": self.residual_time_slope,
            "dropped_features": self.dropped_features,
        }


def evaluate_cv(spec: ModelSpec, dataset: TabularDataset, k: int = 5,
                mode: str = "blocked", train_metric_rows: int = 8000) -> EvaluationReport:
    """K-fold evaluation with per-fold standardisation.

    Training-side metrics are computed on a deterministic subsample of at
    most ``train_metric_rows`` rows (prediction on the full training fold
    is the dominant cost for neighbour models); validation metrics always
    use every held-out row.
    """
    folds = kfold_split(dataset.n_rows, k=k, mode=mode, seed=spec.seed)
    all_idx = np.arange(dataset.n_rows)
    tr_r2, va_r2, tr_mse, va_mse, tr_mae, va_mae = [], [], [], [], [], []
    dropped: list = []
    resid = np.zeros(dataset.n_rows)
    for fold in folds:
        train_idx = np.setdiff1d(all_idx, fold)
        Z_train, record = preprocess(dataset.X[train_idx],
                                     warn=lambda m: dropped.append(m))
        Z_val = record.apply(dataset.X[fold])
        y_train, y_val = dataset.y[train_idx], dataset.y[fold]
        model = train(spec, Z_train, y_train)
        if len(train_idx) > train_metric_rows:
            sub = np.sort(np.random.default_rng(spec.seed).choice(
                len(train_idx), size=train_metric_rows, replace=False))
        else:
            sub = slice(None)
        pred_train = model.predict(Z_train[sub])
        y_train_m = y_train[sub]
        pred_val = model.predict(Z_val)
        tr_r2.append(r2_score(y_train_m, pred_train))
        va_r2.append(r2_score(y_val, pred_val))
        tr_mse.append(float(np.mean((y_train_m - pred_train) ** 2)))
        va_mse.append(float(np.mean((y_val - pred_val) ** 2)))
        tr_mae.append(float(np.mean(np.abs(y_train_m - pred_train))))
        va_mae.append(float(np.mean(np.abs(y_val - pred_val))))
        resid[fold] = y_val - pred_val

    adj = None
    if spec.family in LINEAR_FAMILIES:
        p_terms = dataset.n_features
        if spec.family == "second_order":
            p_terms = dataset.n_features + dataset.n_features * (dataset.n_features + 1) // 2
        adj = adjusted_r2(float(np.mean(va_r2)), dataset.n_rows // k, p_terms)

    lag1 = float(np.corrcoef(resid[:-1], resid[1:])[0, 1]) if len(resid) > 2 else float("nan")
    slope = float(np.polyfit(dataset.time, resid, 1)[0])
    return EvaluationReport(
        family=spec.family, hyperparameters=spec.resolved(), seed=spec.seed,
        fold_mode=mode, train_r2=tr_r2, val_r2=va_r2, train_mse=tr_mse,
        val_mse=va_mse, train_mae=tr_mae, val_mae=va_mae, adjusted_r2=adj,
        residual_lag1_autocorr=lag1, residual_time_slope=slope,
        dropped_features=sorted(set(dropped)),
    )


# ---------------------------------------------------------------------------
# Hyperparameter search (successive halving)


def sample_config(family: str, rng: np.random.Generator) -> dict:
    space = SEARCH_SPACES.get(family)
    if not space:
        return {}
    return {k: v[rng.integers(len(v))] for k, v in space.items()}


@dataclass
class TuneResult:
    family: str
    best: dict
    score: float
    log: list
    seed: int


def tune(family: str, dataset: TabularDataset, budget: int, seed: int = 0,
         val_fraction: float = 0.2) -> TuneResult:
    """Successive-halving random search over the declared space.

    ``budget`` counts initial random configurations; rungs train survivors
    on doubling data fractions and cull the bottom half by validation R2.
    """
    if budget < 1:
        raise ConfigError("tuning budget must allow at least one configuration")
    rng = np.random.default_rng(seed)
    configs = [sample_config(family, rng) for _ in range(budget)]

    n = dataset.n_rows
    idx = np.random.default_rng(seed + 1).permutation(n)
    n_val = max(int(val_fraction * n), 1)
    val_idx, train_idx = idx[:n_val], np.sort(idx[n_val:])
    Z_all, record = preprocess(dataset.X[train_idx])
    Z_val = record.apply(dataset.X[val_idx])
    y_train, y_val = dataset.y[train_idx], dataset.y[val_idx]

    n_rungs = max(int(np.ceil(np.log2(max(len(configs), 1)))), 1)
    frac = 1.0 / 2 ** (n_rungs - 1)
    log = []
    scores = []
    while True:
        m = max(int(frac * len(y_train)), min(50, len(y_train)))
        scores = []
        for cfg in configs:
            model = train(ModelSpec(family, cfg, seed=seed), Z_all[:m], y_train[:m])
            score = r2_score(y_val, model.predict(Z_val))
            scores.append(score)
            log.append({"config": cfg, "fraction": frac, "rows": m, "val_r2": score})
        if len(configs) == 1 or frac >= 1.0:
            break
        order = np.argsort(scores)[::-1]
        keep = order[: max(len(configs) // 2, 1)]
        configs = [configs[i] for i in keep]
        frac = min(1.0, 2.0 * frac)
    best_i = int(np.argmax(scores))
    return TuneResult(family=family, best=configs[best_i], score=float(scores[best_i]),
                      log=log, seed=seed)


# ---------------------------------------------------------------------------
# Permutation feature importance


@dataclass
class ImportanceReport:
    feature_tokens: list
    importances: np.ndarray       # mean R2 drop per feature
    ranks: np.ndarray             # 1 = most influential
    normalized_ranking: np.ndarray
    count_for_90pct: int
    base_r2: float
    repeats: int
    seed: int
    rows_used: int

    def to_dict(self) -> dict:
        return {
            "feature_tokens": list(self.feature_tokens),
            "importances": self.importances.tolist(),
            "ranks": self.ranks.tolist(),
            "normalized_ranking": self.normalized_ranking.tolist(),
            "count_for_90pct": self.count_for_90pct,
            "base_r2": self.base_r2, "repeats": self.repeats,
            "seed": self.seed, "rows_used": self.rows_used,
        }


def permutation_importance(model, X_eval: np.ndarray, y_eval: np.ndarray,
                           feature_tokens=None, repeats: int = 20, seed: int = 0,
                           max_rows: int = 2000) -> ImportanceReport:
    """Mean R2 drop when one feature column is shuffled, per feature.

    Evaluation rows are subsampled deterministically to ``max_rows`` to
    bound prediction cost; the 90 %-coverage count floors negative
    importances at zero for the cumulative curve only.
    """
    if repeats < 2:
        raise ConfigError("permutation importance needs at least 2 repeats")
    X_eval = np.asarray(X_eval, float)
    y_eval = np.asarray(y_eval, float)
    n, p = X_eval.shape
    if feature_tokens is None:
        feature_tokens = [f"x{i}" for i in range(p)]
    if n > max_rows:
        pick = np.sort(np.random.default_rng(seed).choice(n, size=max_rows, replace=False))
        X_eval, y_eval = X_eval[pick], y_eval[pick]
        n = max_rows

    base = r2_score(y_eval, model.predict(X_eval))
    seeds = np.random.SeedSequence(seed).spawn(p)
    importances = np.empty(p)
    for j in range(p):
        rng = np.random.default_rng(seeds[j])
        drops = np.empty(repeats)
        Xp = X_eval.copy()
        for r in range(repeats):
            Xp[:, j] = X_eval[rng.permutation(n), j]
            drops[r] = base - r2_score(y_eval, model.predict(Xp))
        importances[j] = drops.mean()

    order = np.argsort(-importances, kind="stable")
    ranks = np.empty(p, dtype=int)
    ranks[order] = np.arange(1, p + 1)
    positive = np.maximum(importances, 0.0)
    total = positive.sum()
    if total > 0:
        cum = np.cumsum(positive[order]) / total
        count90 = int(np.searchsorted(cum, 0.9) + 1)
    else:
        count90 = p
    normalized = (p - ranks) / (p - 1) if p > 1 else np.ones(1)
    return ImportanceReport(
        feature_tokens=list(feature_tokens), importances=importances, ranks=ranks,
        normalized_ranking=normalized, count_for_90pct=count90, base_r2=base,
        repeats=repeats, seed=seed, rows_used=n,
    )


# ---------------------------------------------------------------------------
# Trained bundles, transfer evaluation, artifacts


@dataclass
class TrainedModel:
    """A fitted model plus everything needed to replay it elsewhere."""

    spec: ModelSpec
    model: object
    transform: TransformRecord
    feature_tokens: list
    target_token: str
    validation_r2: float
    fold_mode: str

    def predict_dataset(self, dataset: TabularDataset) -> np.ndarray:
        if list(dataset.feature_tokens) != list(self.feature_tokens):
            missing = set(self.feature_tokens) - set(dataset.feature_tokens)
            extra = set(dataset.feature_tokens) - set(self.feature_tokens)
            raise SchemaError(
                f"feature schema mismatch; missing={sorted(missing)} extra={sorted(extra)}")
        return self.model.predict(self.transform.apply(dataset.X))


def fit_bundle(spec: ModelSpec, dataset: TabularDataset, k: int = 5,
               mode: str = "blocked") -> tuple[TrainedModel, EvaluationReport]:
    """CV report plus a final model fitted on the full dataset."""
    report = evaluate_cv(spec, dataset, k=k, mode=mode)
    Z, record = preprocess(dataset.X)
    model = train(spec, Z, dataset.y)
    bundle = TrainedModel(
        spec=spec, model=model, transform=record,
        feature_tokens=list(dataset.feature_tokens),
        target_token=dataset.target_token,
        validation_r2=report.mean_val_r2, fold_mode=mode,
    )
    return bundle, report


@dataclass
class TransferReport:
    family: str
    source: str
    target: str
    source_val_r2: float
    transfer_r2: float

    @property
    def drop(self) -> float:
        return self.source_val_r2 - self.transfer_r2

    def to_dict(self) -> dict:
        return {"family": self.family, "source": self.source, "target": self.target,
                "source_val_r2": self.source_val_r2, "transfer_r2": self.transfer_r2,
                "drop": self.drop}


def cross_scenario_evaluate(bundle: TrainedModel, dataset: TabularDataset,
                            source_id: str = "", target_id: str = "") -> TransferReport:
    """Evaluate a trained model on another scenario's dataset as-is."""
    pred = bundle.predict_dataset(dataset)
    return TransferReport(
        family=bundle.spec.family, source=source_id, target=target_id,
        source_val_r2=bundle.validation_r2,
        transfer_r2=r2_score(dataset.y, pred),
    )


def save_bundle(bundle: TrainedModel, path) -> None:
    """Self-describing artifact: JSON manifest, payload for tree models."""
    path = str(path)
    manifest = {
        "family": bundle.spec.family,
        "hyperparameters": bundle.spec.resolved(),
        "seed": bundle.spec.seed,
        "transform": bundle.transform.to_dict(),
        "feature_tokens": bundle.feature_tokens,
        "target_token": bundle.target_token,
        "validation_r2": bundle.validation_r2,
        "fold_mode": bundle.fold_mode,
    }
    if isinstance(bundle.model, LinearModel):
        manifest["coefficients"] = {
            "coef": bundle.model.coef.tolist(),
            "term_names": bundle.model.term_names,
            "order": bundle.model.order,
        }
    else:
        manifest["payload"] = path + ".payload.joblib"
        joblib.dump(bundle.model, manifest["payload"])
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def load_bundle(path) -> TrainedModel:
    with open(path) as fh:
        manifest = json.load(fh)
    spec = ModelSpec(manifest["family"], manifest["hyperparameters"], manifest["seed"])
    if "coefficients" in manifest:
        c = manifest["coefficients"]
        coef = np.array(c["coef"])
        k = len(coef)
        model = LinearModel(coef=coef, term_names=c["term_names"], se=np.zeros(k),
                            t_values=np.zeros(k), p_values=np.zeros(k), order=c["order"])
    else:
        model = joblib.load(manifest["payload"])
    return TrainedModel(
        spec=spec, model=model,
        transform=TransformRecord.from_dict(manifest["transform"]),
        feature_tokens=manifest["feature_tokens"],
        target_token=manifest["target_token"],
        validation_r2=manifest["validation_r2"],
        fold_mode=manifest["fold_mode"],
    )
