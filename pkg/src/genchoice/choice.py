"""Entropy-corrected conditional logit.

V_j = nu_j + H_j with nu_j = (beta_j + d)'x + c_j and H_j the softplus
entropy correction; P(y_j | x) = softmax(V)_j. With H = 0 this is plain MNL.
"""
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .energy import entropy_terms, logsumexp


@dataclass
class UtilityBreakdown:
    nu: np.ndarray
    entropy: np.ndarray
    V: np.ndarray
    probs: np.ndarray

    def to_frame(self, alternatives, ids=None):
        """Audit table with nu, entropy, V and probability columns per alternative."""
        nu, ent, V, P = (np.atleast_2d(a) for a in (self.nu, self.entropy, self.V, self.probs))
        cols = {}
        for j, alt in enumerate(alternatives):
            cols[f"nu[{alt}]"] = nu[:, j]
            cols[f"entropy[{alt}]"] = ent[:, j]
            cols[f"V[{alt}]"] = V[:, j]
            cols[f"prob[{alt}]"] = P[:, j]
        frame = pd.DataFrame(cols)
        if ids is not None:
            frame.insert(0, "id", ids)
        return frame


def utilities(x, params):
    """Observed utility nu (..., J); keeps the alternative-invariant d'x for audit."""
    x = np.asarray(x, dtype=float)
    return x @ params.beta + (x @ params.d)[..., None] + params.c


def choice_probabilities(x, params):
    """Utility breakdown and choice probabilities for one record or a batch."""
    nu = utilities(x, params)
    ent = entropy_terms(x, params)
    V = nu + ent
    probs = np.exp(V - logsumexp(V, axis=-1)[..., None])
    return UtilityBreakdown(nu, ent, V, probs)


def log_probabilities(X, params):
    V = utilities(X, params) + entropy_terms(X, params)
    return V - logsumexp(V, axis=-1)[..., None]


def predict(dataset, params):
    """Per-record probability matrix and the implied mode shares."""
    probs = choice_probabilities(dataset.X, params).probs
    return probs, probs.mean(axis=0)


def relative_beta(params, base=0):
    """beta with the base alternative's column subtracted (identified contrasts)."""
    return params.beta - params.beta[:, [base]]


def alternative_invariance_check(params, n_probes=32, rng=None, tol=1e-12):
    """Verify softmax shift invariance on random probes.

    Shifting all c_j by a constant, or adding a common vector to every column
    of beta, must leave probabilities unchanged; shifting a single c_j must
    not (negative control). Returns a dict of maximum deviations and flags.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    X = rng.standard_normal((n_probes, params.M))
    ref = choice_probabilities(X, params).probs
    shift_c = params.replace(c=params.c + 7.0)
    common = rng.standard_normal(params.M)
    shift_beta = params.replace(beta=params.beta + common[:, None])
    single = params.c.copy()
    single[0] += 1.0
    shift_one = params.replace(c=single)
    dev_c = float(np.max(np.abs(choice_probabilities(X, shift_c).probs - ref)))
    dev_beta = float(np.max(np.abs(choice_probabilities(X, shift_beta).probs - ref)))
    dev_one = float(np.max(np.abs(choice_probabilities(X, shift_one).probs - ref)))
    return {
        "max_dev_constant_shift": dev_c,
        "max_dev_beta_shift": dev_beta,
        "max_dev_single_shift": dev_one,
        "constant_shift_invariant": dev_c <= tol,
        "beta_shift_invariant": dev_beta <= tol,
        "single_shift_changes": dev_one > tol,
        "ok": dev_c <= tol and dev_beta <= tol and dev_one > tol,
    }
