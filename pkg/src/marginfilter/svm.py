"""Gaussian-kernel SVM on filtered samples.

Contains the kernel, a warm-startable SMO solver for the box-constrained
dual, the kernel decision function, Platt sigmoid calibration, and the
one-against-one / one-against-all multiclass banks used for online voting
and calibrated probabilities respectively.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

# Support vectors are the alphas above this fraction of the box bound.
SV_THRESHOLD_FRAC = 1e-8


@dataclass(frozen=True)
class KernelParams:
    """Gaussian kernel bandwidth."""

    sigma_k: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.sigma_k) and self.sigma_k > 0):
            raise ValueError(f"sigma_k must be finite and > 0, got {self.sigma_k}")


def kernel_matrix(A, B, params: KernelParams) -> np.ndarray:
    """Gaussian kernel matrix exp(-||a_i - b_j||^2 / (2 sigma_k^2)).

    A is (m, d), B is (p, d); returns (m, p).  Symmetric PSD when A is B.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"channel mismatch: {A.shape[1]} vs {B.shape[1]}")
    sq = cdist(A, B, metric="sqeuclidean")
    return np.exp(-sq / (2.0 * params.sigma_k**2))


@dataclass
class SvmModel:
    """Solution of the SVM dual plus everything needed to score new samples.

    ``alpha`` is the full dual vector (length n, one per training sample);
    the sv_* arrays retain only the support vectors (alpha above
    SV_THRESHOLD_FRAC * box).  ``objective`` is the dual optimum
    sum(alpha) - 0.5 alpha' Q alpha, which by strong duality equals the
    primal hinge-loss objective and is what the filter learner minimizes.
    """

    alpha: np.ndarray
    bias: float
    C: float
    box: float
    kernel: KernelParams
    objective: float
    sv_idx: np.ndarray
    sv_labels: np.ndarray
    sv_alpha: np.ndarray
    sv_rows: np.ndarray | None = None
    converged: bool = True
    n_iter: int = 0


def solve_svm_dual(K, y, C, *, rows=None, kernel: KernelParams | None = None,
                   tol: float = 1e-3, max_iter: int = 2_000_000,
                   warm_alpha=None) -> SvmModel:
    """Maximize the SVM dual with box bound C/n and sum(alpha*y)=0.

    Pairwise (SMO) ascent with second-order working-set selection; stops
    when the maximal KKT violation drops below ``tol``.  ``warm_alpha``
    restarts from a previous solution (any feasible point), which makes
    repeated solves under small kernel changes cheap.

    Args:
        K: (n, n) symmetric PSD kernel matrix of the training samples.
        y: length-n labels in {-1, +1}, both classes present.
        C: regularization constant (> 0); the per-sample box is C/n.
        rows: optional (n, d) training samples, retained for the support
            vectors so the model can score new data.
        kernel: bandwidth to use at prediction time (required with rows).
        tol: KKT stopping tolerance.
        max_iter: iteration cap; on hitting it the best iterate is
            returned with converged=False.
        warm_alpha: optional length-n feasible starting point.

    Returns:
        SvmModel.
    """
    K = np.asarray(K, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n = len(y)
    if K.shape != (n, n):
        raise ValueError(f"kernel matrix shape {K.shape} does not match n={n}")
    if not (np.all(np.abs(y) == 1.0)):
        raise ValueError("labels must be in {-1, +1}")
    if np.all(y > 0) or np.all(y < 0):
        raise ValueError("labels contain a single class; need both")
    if C <= 0:
        raise ValueError("C must be > 0")
    box = C / n

    if warm_alpha is None:
        alpha = np.zeros(n)
        u = np.zeros(n)  # u = K @ (alpha * y)
    else:
        alpha = np.clip(np.asarray(warm_alpha, dtype=np.float64).copy(), 0.0, box)
        # pair updates preserve sum(alpha*y), so an infeasible start would
        # converge to the wrong constraint value
        if abs(np.dot(alpha, y)) > 1e-8 * max(1.0, C):
            raise ValueError("warm_alpha violates the equality constraint")
        u = K @ (alpha * y)

    diag = np.diag(K).copy()
    pos = y > 0
    eps_b = 1e-12 * box

    it = 0
    converged = False
    m_val = M_val = 0.0
    while it < max_iter:
        # v_t = -y_t * grad_t; b estimates for free points
        v = y - u
        up = np.where(pos, alpha < box - eps_b, alpha > eps_b)
        low = np.where(pos, alpha > eps_b, alpha < box - eps_b)
        v_up = np.where(up, v, -np.inf)
        v_low = np.where(low, v, np.inf)
        i = int(np.argmax(v_up))
        m_val = v_up[i]
        M_val = float(np.min(v_low))
        if m_val - M_val <= tol:
            converged = True
            break

        # second-order choice of j: largest estimated objective gain
        quad = diag[i] + diag - 2.0 * K[i]
        np.maximum(quad, 1e-12, out=quad)
        b_gain = m_val - v
        eligible = low & (b_gain > 0)
        if not np.any(eligible):
            break
        gain = np.where(eligible, (b_gain * b_gain) / quad, -np.inf)
        j = int(np.argmax(gain))

        # two-variable update along alpha_i += y_i t, alpha_j -= y_j t
        t = (v[i] - v[j]) / quad[j]
        t_max = (box - alpha[i] if y[i] > 0 else alpha[i])
        t_max = min(t_max, alpha[j] if y[j] > 0 else box - alpha[j])
        t = min(t, t_max)
        if t <= 0:
            # numerically stuck below the boundary guard; stop with the
            # best iterate rather than spin
            break
        da_i = y[i] * t
        da_j = -y[j] * t
        alpha[i] += da_i
        alpha[j] += da_j
        u += K[i] * (da_i * y[i]) + K[j] * (da_j * y[j])
        it += 1

    # dual value: sum(alpha) - 0.5 * (alpha*y)' K (alpha*y)
    objective = float(alpha.sum() - 0.5 * np.dot(alpha * y, u))

    free = (alpha > SV_THRESHOLD_FRAC * box) & (alpha < (1.0 - SV_THRESHOLD_FRAC) * box)
    if np.any(free):
        bias = float(np.mean((y - u)[free]))
    else:
        bias = float(0.5 * (m_val + M_val))

    sv = alpha > SV_THRESHOLD_FRAC * box
    sv_idx = np.flatnonzero(sv)
    model = SvmModel(
        alpha=alpha,
        bias=bias,
        C=float(C),
        box=float(box),
        kernel=kernel if kernel is not None else KernelParams(),
        objective=objective,
        sv_idx=sv_idx,
        sv_labels=y[sv_idx].astype(np.int64),
        sv_alpha=alpha[sv_idx].copy(),
        sv_rows=None if rows is None else np.asarray(rows, dtype=np.float64)[sv_idx].copy(),
        converged=converged,
        n_iter=it,
    )
    return model


def kkt_violation(K, y, model: SvmModel) -> float:
    """Largest violation of the optimality conditions, given the bias."""
    y = np.asarray(y, dtype=np.float64).ravel()
    g = K @ (model.alpha * y) + model.bias
    yg = y * g
    at_zero = model.alpha <= SV_THRESHOLD_FRAC * model.box
    at_box = model.alpha >= (1.0 - SV_THRESHOLD_FRAC) * model.box
    viol = np.abs(yg - 1.0)
    viol[at_zero] = np.maximum(0.0, 1.0 - yg[at_zero])
    viol[at_box] = np.maximum(0.0, yg[at_box] - 1.0)
    return float(viol.max())


def decision_scores(model: SvmModel, Xte) -> np.ndarray:
    """Kernel decision function g(x) = sum_j alpha_j y_j k(x, x_j) + bias."""
    if model.sv_rows is None:
        raise ValueError("model was trained without sample rows; cannot score")
    Xte = np.atleast_2d(np.asarray(Xte, dtype=np.float64))
    if Xte.shape[1] != model.sv_rows.shape[1]:
        raise ValueError(
            f"channel mismatch: {Xte.shape[1]} vs model {model.sv_rows.shape[1]}")
    if len(model.sv_idx) == 0:
        return np.full(len(Xte), model.bias)
    Kte = kernel_matrix(Xte, model.sv_rows, model.kernel)
    return Kte @ (model.sv_alpha * model.sv_labels) + model.bias


@dataclass(frozen=True)
class PlattParams:
    """Sigmoid calibration P(class | score) = 1 / (1 + exp(A*score + B))."""

    A: float
    B: float

    def probability(self, scores) -> np.ndarray:
        z = self.A * np.asarray(scores, dtype=np.float64) + self.B
        out = np.empty_like(z)
        nonneg = z >= 0
        out[nonneg] = np.exp(-z[nonneg]) / (1.0 + np.exp(-z[nonneg]))
        out[~nonneg] = 1.0 / (1.0 + np.exp(z[~nonneg]))
        return out


def _platt_objective(scores, targets, A, B):
    z = A * scores + B
    # cross-entropy written to avoid overflow for either sign of z
    return float(np.sum(np.where(
        z >= 0,
        targets * z + np.log1p(np.exp(-z)),
        (targets - 1.0) * z + np.log1p(np.exp(z)),
    )))


def platt_fit(scores, labels) -> PlattParams:
    """Fit the sigmoid calibration by regularized maximum likelihood.

    Targets are smoothed to (N+ + 1)/(N+ + 2) and 1/(N- + 2), and the
    objective is minimized by a damped Newton iteration with backtracking,
    which converges for any input including degenerate constant scores.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if len(scores) != len(labels):
        raise ValueError("scores and labels must have equal length")
    positive = labels > 0
    n_pos = int(positive.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes must be present to calibrate")

    hi = (n_pos + 1.0) / (n_pos + 2.0)
    lo = 1.0 / (n_neg + 2.0)
    t = np.where(positive, hi, lo)

    sigma = 1e-12  # Hessian ridge; keeps the step defined for constant scores
    A, B = 0.0, np.log((n_neg + 1.0) / (n_pos + 1.0))
    fval = _platt_objective(scores, t, A, B)

    for _ in range(100):
        z = A * scores + B
        p = np.empty_like(z)
        q = np.empty_like(z)
        nonneg = z >= 0
        ez = np.exp(-z[nonneg])
        p[nonneg] = ez / (1.0 + ez)
        q[nonneg] = 1.0 / (1.0 + ez)
        ez = np.exp(z[~nonneg])
        p[~nonneg] = 1.0 / (1.0 + ez)
        q[~nonneg] = ez / (1.0 + ez)

        d2 = p * q
        h11 = sigma + np.sum(scores * scores * d2)
        h22 = sigma + np.sum(d2)
        h21 = np.sum(scores * d2)
        d1 = t - p
        g1 = np.sum(scores * d1)
        g2 = np.sum(d1)

        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break

        det = h11 * h22 - h21 * h21
        dA = -(h22 * g1 - h21 * g2) / det
        dB = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * dA + g2 * dB

        step = 1.0
        while step >= 1e-10:
            newA, newB = A + step * dA, B + step * dB
            newf = _platt_objective(scores, t, newA, newB)
            if newf < fval + 1e-4 * step * gd:
                A, B, fval = newA, newB, newf
                break
            step *= 0.5
        else:
            break

    return PlattParams(A=float(A), B=float(B))


@dataclass
class MulticlassModel:
    """One-against-one and one-against-all SVM banks over shared data.

    ``classes`` holds the original label values in ascending order; the
    pairwise dict is keyed by class-index pairs (a, b) with a < b, with
    the model's +1 side mapped to class a.  ``one_vs_all[k]`` scores
    class k against the rest.
    """

    classes: np.ndarray
    pairwise: dict[tuple[int, int], SvmModel]
    one_vs_all: list[SvmModel] = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return len(self.classes)


def train_multiclass(X, y, C, kernel: KernelParams, *, tol: float = 1e-3,
                     with_one_vs_all: bool = True,
                     K: np.ndarray | None = None) -> MulticlassModel:
    """Train the pairwise and one-vs-all banks on (already filtered) data.

    Args:
        X: (n, d) filtered samples.
        y: length-n labels (any integer values, >= 2 distinct).
        C: SVM constant; box per subproblem is C / n_sub.
        kernel: Gaussian bandwidth shared by all models.
        tol: solver tolerance.
        with_one_vs_all: also train the c one-vs-rest scorers (needed for
            calibrated probabilities; the voting bank alone suffices for
            online decoding).
        K: optional precomputed full kernel matrix of X.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).ravel()
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("need at least 2 classes")
    if K is None:
        K = kernel_matrix(X, X, kernel)

    pairwise = {}
    for a in range(len(classes)):
        for b in range(a + 1, len(classes)):
            mask = (y == classes[a]) | (y == classes[b])
            idx = np.flatnonzero(mask)
            y_pm = np.where(y[idx] == classes[a], 1.0, -1.0)
            model = solve_svm_dual(K[np.ix_(idx, idx)], y_pm, C,
                                   rows=X[idx], kernel=kernel, tol=tol)
            pairwise[(a, b)] = model

    one_vs_all = []
    if with_one_vs_all:
        for k in range(len(classes)):
            y_pm = np.where(y == classes[k], 1.0, -1.0)
            one_vs_all.append(
                solve_svm_dual(K, y_pm, C, rows=X, kernel=kernel, tol=tol))

    return MulticlassModel(classes=classes, pairwise=pairwise, one_vs_all=one_vs_all)


def oao_vote(mc: MulticlassModel, Xte) -> np.ndarray:
    """Label samples by pairwise voting.

    Each pairwise classifier votes by score sign; ties on vote count are
    broken by the largest summed |winning margin|, then the lowest class
    index.  Returns original class label values.
    """
    Xte = np.atleast_2d(np.asarray(Xte, dtype=np.float64))
    m = len(Xte)
    c = mc.n_classes
    votes = np.zeros((m, c), dtype=np.int64)
    margins = np.zeros((m, c))
    for (a, b), model in mc.pairwise.items():
        s = decision_scores(model, Xte)
        wins_a = s > 0
        votes[wins_a, a] += 1
        votes[~wins_a, b] += 1
        margins[wins_a, a] += np.abs(s[wins_a])
        margins[~wins_a, b] += np.abs(s[~wins_a])

    out = np.empty(m, dtype=mc.classes.dtype)
    best = votes.max(axis=1)
    for i in range(m):
        tied = np.flatnonzero(votes[i] == best[i])
        if len(tied) > 1:
            tied = tied[margins[i, tied] == margins[i, tied].max()]
        out[i] = mc.classes[tied[0]]
    return out


def class_probabilities(mc: MulticlassModel, platt: list[PlattParams], Xte) -> np.ndarray:
    """Calibrated per-class probabilities, renormalized to sum to 1.

    Applies each class's sigmoid to its one-vs-all score; returns (m, c)
    rows in (0, 1) summing to 1.
    """
    if not mc.one_vs_all:
        raise ValueError("model has no one-vs-all bank")
    if len(platt) != mc.n_classes:
        raise ValueError("need one calibration per class")
    Xte = np.atleast_2d(np.asarray(Xte, dtype=np.float64))
    raw = np.column_stack([
        platt[k].probability(decision_scores(mc.one_vs_all[k], Xte))
        for k in range(mc.n_classes)
    ])
    np.maximum(raw, np.finfo(np.float64).tiny, out=raw)
    return raw / raw.sum(axis=1, keepdims=True)
