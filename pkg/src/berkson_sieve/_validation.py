"""Input checks for the estimator classes."""
import numpy as np
from sklearn.utils.validation import check_array

from .likelihood import Dataset


def check_covariate(X) -> np.ndarray:
    """Accept a 1-d array or a single-column 2-d array; return it flattened."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 2 and X.shape[1] != 1:
        raise ValueError(f"expected a single covariate column, got shape {X.shape}")
    return check_array(X.reshape(-1, 1), ensure_all_finite=True).ravel()


def as_dataset(X, y) -> Dataset:
    """Bundle ``X`` (observed covariate) and ``y`` (outcome, instrument) columns."""
    x = check_covariate(X)
    y = check_array(y, ensure_2d=True, ensure_all_finite=True)
    if y.shape[1] != 2:
        raise ValueError(f"y must have two columns (outcome, instrument), got shape {y.shape}")
    if y.shape[0] != x.size:
        raise ValueError(f"X has {x.size} rows but y has {y.shape[0]}")
    return Dataset(x, y[:, 0], y[:, 1])
