from __future__ import annotations

import numpy as np


def cov_z_scores(samples_u: np.ndarray, samples_v: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Standardized errors of empirical covariances of mean-zero data.

    ``samples_u`` and ``samples_v`` have shape (reps, m); entry i compares
    mean(u_i v_i) to target[i] using the sample standard error of u_i v_i.
    """
    prod = samples_u * samples_v
    n = prod.shape[0]
    se = prod.std(axis=0, ddof=1) / np.sqrt(n)
    return (prod.mean(axis=0) - target) / se


# criterion number -> (passed, detail); printed by the terminal summary hook
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} | {detail}")
