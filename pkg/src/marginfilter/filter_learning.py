"""Joint learning of the per-channel FIR filters and the kernel SVM.

The training objective is the optimal value of the SVM problem on the
filtered samples, seen as a function of the filter coefficients, plus a
filter regularizer.  Because the SVM optimum is differentiable in the
filter (the optimal dual variables act as constants when differentiating),
the filter is learned by nonlinear conjugate gradient with Fletcher-Reeves
updates and a backtracking line search, re-solving the SVM (warm-started)
at every trial point.

Channel selection uses a sum-of-column-norms penalty, handled by
majorization-minimization: each outer step replaces the column norms by a
tight quadratic upper bound, which turns the subproblem back into a
weighted-Frobenius one that the conjugate-gradient solver handles.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .signals import FilterBank, apply_filter, as_labels, as_signal, make_average_filter
from .svm import (
    KernelParams,
    MulticlassModel,
    SvmModel,
    kernel_matrix,
    solve_svm_dual,
    train_multiclass,
)


@dataclass(frozen=True)
class RegularizerSpec:
    """Filter penalty: 'frobenius', 'weighted_frobenius' or 'mixed_norm'.

    weighted_frobenius scales each channel's squared column norm by its
    entry in ``weights``; mixed_norm is the sum of column norms (zeroes
    whole channels) and is only reachable through the MM solver.
    """

    kind: str = "frobenius"
    lam: float = 0.0
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("frobenius", "weighted_frobenius", "mixed_norm"):
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValueError("lambda must be finite and >= 0")
        if self.kind == "weighted_frobenius":
            if self.weights is None:
                raise ValueError("weighted_frobenius needs per-channel weights")
            w = np.asarray(self.weights, dtype=np.float64)
            if np.any(~np.isfinite(w)) or np.any(w <= 0):
                raise ValueError("weights must be finite and > 0")
            object.__setattr__(self, "weights", w)


def frobenius_reg(F: np.ndarray):
    """Sum of squared coefficients and its gradient 2F."""
    F = np.asarray(F, dtype=np.float64)
    return float(np.sum(F * F)), 2.0 * F


def weighted_frobenius_reg(F: np.ndarray, weights: np.ndarray):
    """Per-channel weighted filter energy sum_v w_v ||F_col_v||^2."""
    F = np.asarray(F, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    return float(np.sum(w * np.sum(F * F, axis=0))), 2.0 * F * w[None, :]


def mixed_norm(F: np.ndarray) -> float:
    """Sum of column norms sum_v ||F_col_v||_2 (group penalty over channels)."""
    F = np.asarray(F, dtype=np.float64)
    return float(np.sum(np.linalg.norm(F, axis=0)))


def regularizer_value(F: np.ndarray, reg: RegularizerSpec) -> float:
    """lambda-scaled penalty value (any kind)."""
    if reg.kind == "frobenius":
        return reg.lam * frobenius_reg(F)[0]
    if reg.kind == "weighted_frobenius":
        return reg.lam * weighted_frobenius_reg(F, reg.weights)[0]
    return reg.lam * mixed_norm(F)


def regularizer_value_grad(F: np.ndarray, reg: RegularizerSpec):
    """lambda-scaled penalty value and gradient for the differentiable kinds."""
    if reg.kind == "frobenius":
        val, grad = frobenius_reg(F)
    elif reg.kind == "weighted_frobenius":
        val, grad = weighted_frobenius_reg(F, reg.weights)
    else:
        raise ValueError("mixed_norm is not differentiable; solve it via learn_skf_svm")
    return reg.lam * val, reg.lam * grad


@dataclass(frozen=True)
class LearnerConfig:
    """Everything the filter learner needs besides the data.

    f and n0 fix the filter geometry; C and kernel parametrize the inner
    SVM; reg the filter penalty.  The remaining fields control the
    conjugate-gradient loop, the Armijo backtracking line search, the
    majorization-minimization outer loop, and the inner SVM solver.
    """

    C: float = 100.0
    kernel: KernelParams = KernelParams(1.0)
    reg: RegularizerSpec = RegularizerSpec("frobenius", 0.0)
    f: int = 1
    n0: int = 0
    max_cg_iters: int = 200
    tol_rel_J: float = 1e-5
    tol_dF: float = 1e-6
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    max_halvings: int = 30
    mm_max_outer: int = 20
    mm_eps: float = 1e-8
    svm_tol: float = 1e-3
    svm_max_iter: int = 2_000_000

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("C must be > 0")
        if self.f < 1 or not 0 <= self.n0 <= self.f - 1:
            raise ValueError("need f >= 1 and 0 <= n0 <= f-1")
        for name in ("tol_rel_J", "tol_dF", "armijo_c1", "mm_eps", "svm_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must be in (0, 1)")


@dataclass
class TrainedFilterModel:
    """Learned filter bank, the SVM trained on the filtered data, and the
    objective trajectory over accepted descent steps (outer MM iterations
    for the channel-selecting variant)."""

    filter: FilterBank
    svm: SvmModel | MulticlassModel
    history: list[float] = field(default_factory=list)
    filter_norms: list[float] = field(default_factory=list)
    converged: bool = True


# ---------------------------------------------------------------------------
# objective and gradient
# ---------------------------------------------------------------------------

def _binary_labels(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).ravel()
    vals = np.unique(y)
    if set(vals) == {-1.0, 1.0}:
        return y
    if len(vals) == 2:
        return np.where(y == vals[0], -1.0, 1.0)
    raise ValueError("binary labels required; use learn_multiclass_filter for c > 2")


def filter_objective(F, X, y, cfg: LearnerConfig, *, warm_alpha=None):
    """Penalized SVM optimum at filter F.

    Filters X, solves the dual (optionally warm-started), and returns
    (value, model) where value = dual optimum + lambda * penalty.
    """
    X = as_signal(X)
    y_pm = _binary_labels(y)
    if isinstance(F, FilterBank):
        if F.n0 != cfg.n0:
            raise ValueError(f"filter delay {F.n0} conflicts with config n0={cfg.n0}")
        bank = F
    else:
        bank = FilterBank(F, n0=cfg.n0)
    Xf = apply_filter(X, bank)
    K = kernel_matrix(Xf, Xf, cfg.kernel)
    model = solve_svm_dual(K, y_pm, cfg.C, rows=Xf, kernel=cfg.kernel,
                           tol=cfg.svm_tol, max_iter=cfg.svm_max_iter,
                           warm_alpha=warm_alpha)
    return model.objective + regularizer_value(bank.coeffs, cfg.reg), model


def _shifted_rows(X: np.ndarray, u: int, n0: int) -> np.ndarray:
    """Rows of X delayed by (u - n0) samples with zero fill: the data each
    filter tap u multiplies."""
    n = X.shape[0]
    k = u - n0
    out = np.zeros_like(X)
    if k == 0:
        out[:] = X
    elif k > 0:
        out[k:] = X[: n - k]
    elif -k < n:
        out[: n + k] = X[-k:]
    return out


def _inner_gradient(F: np.ndarray, X: np.ndarray, rows: np.ndarray,
                    y_pm: np.ndarray, alpha: np.ndarray,
                    cfg: LearnerConfig) -> np.ndarray:
    """Gradient of the SVM optimum wrt the filter, at fixed optimal alpha.

    The signal is filtered as a whole; ``rows`` selects the subproblem's
    samples within it.  Only support-vector pairs contribute.  Uses the
    Laplacian identity sum_ij w_ij (a_i - a_j)(b_i - b_j) =
    2 a' (diag(W 1) - W) b to avoid materializing pair differences.
    """
    f, d = F.shape
    bank = FilterBank(F, n0=cfg.n0)
    Xf = apply_filter(X, bank)

    sv = np.flatnonzero(alpha > 0)
    grad = np.zeros((f, d))
    if len(sv) == 0:
        return grad
    r = rows[sv]

    Xf_s = Xf[r]
    K_ss = kernel_matrix(Xf_s, Xf_s, cfg.kernel)
    ay = alpha[sv] * y_pm[sv]
    W = K_ss * np.outer(ay, ay)
    # T = (diag(row sums) - W) @ Xf_s, so grad[u, v] = T[:, v] . shifted_X[r, v]
    T = Xf_s * W.sum(axis=1)[:, None] - W @ Xf_s
    scale = 1.0 / cfg.kernel.sigma_k**2
    for u in range(f):
        Su = _shifted_rows(X, u, cfg.n0)
        grad[u] = scale * np.einsum("ij,ij->j", T, Su[r])
    return grad


def filter_objective_gradient(F, X, y, alpha, cfg: LearnerConfig) -> np.ndarray:
    """Gradient of the penalized objective at F, treating the supplied
    optimal dual variables as constants."""
    X = as_signal(X)
    y_pm = _binary_labels(y)
    F = np.asarray(F, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64).ravel()
    if len(alpha) != X.shape[0]:
        raise ValueError(f"alpha length {len(alpha)} does not match n={X.shape[0]}")
    grad = _inner_gradient(F, X, np.arange(X.shape[0]), y_pm, alpha, cfg)
    _, reg_grad = regularizer_value_grad(F, cfg.reg)
    return grad + reg_grad


# ---------------------------------------------------------------------------
# conjugate-gradient descent over the filter
# ---------------------------------------------------------------------------

class _Subproblem:
    """One binary SVM subproblem over a row subset of the training signal.

    Trial solves warm-start from the last committed solution; committing
    promotes the most recent trial to the warm-start state.
    """

    def __init__(self, rows: np.ndarray, y_pm: np.ndarray):
        self.rows = rows
        self.y_pm = y_pm
        self.alpha = None  # committed warm-start state
        self.model = None
        self._last = None

    def solve(self, Xf: np.ndarray, cfg: LearnerConfig,
              with_rows: bool = False) -> float:
        Xsub = Xf[self.rows]
        K = kernel_matrix(Xsub, Xsub, cfg.kernel)
        self._last = solve_svm_dual(
            K, self.y_pm, cfg.C,
            rows=Xsub if with_rows else None, kernel=cfg.kernel,
            tol=cfg.svm_tol, max_iter=cfg.svm_max_iter, warm_alpha=self.alpha)
        return self._last.objective

    def commit(self):
        self.model = self._last
        self.alpha = self._last.alpha


def _evaluate(problems, F, X, cfg, *, with_rows: bool = False) -> float:
    bank = FilterBank(F, n0=cfg.n0)
    Xf = apply_filter(X, bank)
    total = 0.0
    for p in problems:
        total += p.solve(Xf, cfg, with_rows=with_rows)
    reg_val, _ = regularizer_value_grad(F, cfg.reg)
    return total + reg_val


def _commit_all(problems):
    for p in problems:
        p.commit()


def _gradient(problems, F, X, cfg) -> np.ndarray:
    grad = np.zeros_like(F)
    for p in problems:
        grad += _inner_gradient(F, X, p.rows, p.y_pm, p.model.alpha, cfg)
    _, reg_grad = regularizer_value_grad(F, cfg.reg)
    return grad + reg_grad


def _cg_descent(problems, X, cfg: LearnerConfig, F0: np.ndarray):
    """Fletcher-Reeves conjugate gradient with Armijo backtracking.

    Every line-search evaluation re-solves each SVM subproblem warm-started
    from the last accepted solution.  The direction resets to steepest
    descent when it stops being a descent direction or every f*d steps.

    Returns (F, history, norms, converged).
    """
    F = F0.copy()
    J = _evaluate(problems, F, X, cfg)
    _commit_all(problems)
    history = [J]
    norms = [float(np.linalg.norm(F))]
    G_prev = None
    D = np.zeros_like(F)
    step = 1.0
    converged = False
    restart_every = max(F.size, 1)

    for it in range(cfg.max_cg_iters):
        G = _gradient(problems, F, X, cfg)
        gnorm2 = float(np.sum(G * G))
        if gnorm2 == 0.0:
            converged = True
            break
        if G_prev is None or it % restart_every == 0:
            beta = 0.0
        else:
            beta = gnorm2 / float(np.sum(G_prev * G_prev))
        D = -G + beta * D
        slope = float(np.sum(G * D))
        if slope >= 0.0:
            D = -G
            slope = -gnorm2
        G_prev = G

        # Armijo backtracking; the trial step carries over between
        # iterations (doubled) so the search adapts to the local scale
        t = min(step * 2.0, 1e6)
        accepted = False
        for _ in range(cfg.max_halvings):
            J_try = _evaluate(problems, F + t * D, X, cfg)
            if J_try <= J + cfg.armijo_c1 * t * slope:
                accepted = True
                break
            t *= cfg.backtrack
        if not accepted:
            converged = True  # no descent at line-search resolution
            break

        _commit_all(problems)  # promote the accepted trial's solutions
        F_new = F + t * D
        dF = float(np.linalg.norm(F_new - F))
        rel = abs(J - J_try) / max(abs(J), 1.0)
        F, J, step = F_new, J_try, t
        history.append(J)
        norms.append(float(np.linalg.norm(F)))
        if rel < cfg.tol_rel_J or dF < cfg.tol_dF:
            converged = True
            break

    return F, history, norms, converged


def mm_weight_update(F: np.ndarray, mm_eps: float) -> np.ndarray:
    """Per-channel majorization weights 1 / max(||column||, mm_eps).

    The clamp saturates the weight of a vanished column, freezing it at
    zero instead of dividing by zero.
    """
    return 1.0 / np.maximum(np.linalg.norm(np.asarray(F), axis=0), mm_eps)


def _mm_loop(problems, X: np.ndarray, cfg: LearnerConfig, F0: np.ndarray):
    """Majorization-minimization over the column-norm penalty.

    The bound ||col|| <= ||col_0||/2 + ||col||^2 / (2 ||col_0||) is tight
    at the previous iterate, so the inner weighted problem uses weight
    lambda * d_v / 2 per channel with d_v = 1 / max(||col_0||, mm_eps);
    warm-starting the inner solver at the previous filter makes the true
    mixed-norm objective non-increasing across outer iterations.

    Returns (F, history, norms, converged) with one history entry (the
    mixed-norm objective) per outer iteration.
    """
    d = F0.shape[1]
    weights = np.ones(d)
    F = F0.copy()
    history: list[float] = []
    norms: list[float] = []
    converged = False
    for _ in range(cfg.mm_max_outer):
        inner_reg = RegularizerSpec("weighted_frobenius", cfg.reg.lam,
                                    weights=0.5 * weights)
        inner_cfg = replace(cfg, reg=inner_reg)
        F_new, _, _, _ = _cg_descent(problems, X, inner_cfg, F)
        # track the true group-sparse objective at the accepted iterate
        inner_val = _evaluate(problems, F_new, X,
                              replace(cfg, reg=RegularizerSpec("frobenius", 0.0)))
        _commit_all(problems)
        history.append(inner_val + cfg.reg.lam * mixed_norm(F_new))
        norms.append(float(np.linalg.norm(F_new)))
        dF = float(np.linalg.norm(F_new - F))
        F = F_new
        weights = mm_weight_update(F, cfg.mm_eps)
        if dF < cfg.tol_dF:
            converged = True
            break
    return F, history, norms, converged


def _make_problems(X: np.ndarray, y: np.ndarray):
    """Pairwise one-against-one subproblems; a single one when c == 2."""
    classes = np.unique(y)
    problems = []
    for a in range(len(classes)):
        for b in range(a + 1, len(classes)):
            idx = np.flatnonzero((y == classes[a]) | (y == classes[b]))
            y_pm = np.where(y[idx] == classes[a], 1.0, -1.0)
            problems.append(_Subproblem(idx, y_pm))
    return classes, problems


@dataclass
class FilterFit:
    """Outcome of fitting a shared filter bank over pairwise subproblems."""

    bank: FilterBank
    history: list[float]
    filter_norms: list[float]
    converged: bool
    problems: list


def fit_shared_filter(X, y, cfg: LearnerConfig) -> FilterFit:
    """Learn one filter bank shared by all pairwise class subproblems.

    The objective is the sum of the pairwise SVM optima plus the penalty;
    gradients add over subproblems.  With two classes this is the plain
    joint filter/SVM problem.  The filter starts as the average filter.
    """
    X = as_signal(X)
    y = np.asarray(y).ravel()
    if len(np.unique(y)) < 2:
        raise ValueError("need at least 2 classes")
    _, problems = _make_problems(X, y)
    F0 = make_average_filter(cfg.f, cfg.n0, X.shape[1]).coeffs
    if cfg.reg.kind == "mixed_norm":
        F, history, norms, converged = _mm_loop(problems, X, cfg, F0)
    else:
        F, history, norms, converged = _cg_descent(problems, X, cfg, F0)
    return FilterFit(bank=FilterBank(F, n0=cfg.n0), history=history,
                     filter_norms=norms, converged=converged, problems=problems)


def _finalize_binary(fit: FilterFit, X: np.ndarray, cfg: LearnerConfig) -> TrainedFilterModel:
    Xf = apply_filter(X, fit.bank)
    fit.problems[0].solve(Xf, cfg, with_rows=True)
    fit.problems[0].commit()
    return TrainedFilterModel(filter=fit.bank, svm=fit.problems[0].model,
                              history=fit.history, filter_norms=fit.filter_norms,
                              converged=fit.converged)


def learn_kf_svm(X, y, cfg: LearnerConfig) -> TrainedFilterModel:
    """Jointly learn the filter bank and the SVM on binary data.

    The filter starts as the plain average filter, so with
    max_cg_iters=0 this reproduces the fixed-average-filter baseline
    exactly.
    """
    X = as_signal(X)
    y = np.asarray(y).ravel()
    if len(np.unique(y)) != 2:
        raise ValueError("learn_kf_svm expects binary labels")
    if cfg.reg.kind == "mixed_norm":
        raise ValueError("use learn_skf_svm for the mixed-norm penalty")
    fit = fit_shared_filter(X, y, cfg)
    return _finalize_binary(fit, X, cfg)


def learn_skf_svm(X, y, cfg: LearnerConfig) -> TrainedFilterModel:
    """Channel-selecting variant: mixed-norm penalty via the MM outer loop.

    Each outer iteration solves a weighted-Frobenius subproblem whose
    weights majorize the column norms at the previous iterate, then
    re-derives the weights; columns whose norm collapses get a saturated
    weight and stay at zero.  The history holds the mixed-norm objective
    per outer iteration.
    """
    X = as_signal(X)
    y = np.asarray(y).ravel()
    if cfg.reg.kind != "mixed_norm":
        raise ValueError("learn_skf_svm requires reg.kind == 'mixed_norm'")
    if len(np.unique(y)) != 2:
        raise ValueError("learn_skf_svm expects binary labels")
    fit = fit_shared_filter(X, y, cfg)
    return _finalize_binary(fit, X, cfg)


def learn_multiclass_filter(X, y, cfg: LearnerConfig):
    """Learn one shared filter bank for any number of classes.

    For two classes this is exactly the binary learner.  For more, the
    pairwise one-against-one SVM optima are summed into a single objective
    (their gradients add) and the same conjugate-gradient descent runs on
    the shared filter.  Afterwards both multiclass banks are trained on
    the final filtered data.

    Returns:
        (FilterBank, MulticlassModel)
    """
    X = as_signal(X)
    y = as_labels(y, X.shape[0])
    fit = fit_shared_filter(X, y, cfg)
    Xf = apply_filter(X, fit.bank)
    mc = train_multiclass(Xf, y, cfg.C, cfg.kernel, tol=cfg.svm_tol)
    return fit.bank, mc
