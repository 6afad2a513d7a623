"""
Intrinsic judging-error variability as a function of performance quality.

Judging errors (mark minus control score) are grouped by control score, the
standard deviation of each group is measured, and a weighted least-squares
curve sigma_hat(c) is fitted through the groups, weighted by group size.
"""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import ConvergenceError, FitError, InsufficientSupportError, SingularFitError
from .records import Dataset

logger = logging.getLogger(__name__)

DEFAULT_MIN_COUNT = 10
MAX_CONDITION = 1e12
WARN_CONDITION = 1e8
CURVE_SAMPLES = 200
SHAPE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class JudgingError:
    """Difference between one judge's mark and the performance's control score."""

    competition_id: str
    discipline_id: str
    performance_id: str
    judge_id: str
    control_score: Fraction
    error: Fraction
    judge_role: Optional[str] = None


def extract_errors(dataset: Dataset, discipline: str,
                   role: Optional[str] = None) -> List[JudgingError]:
    """
    List one judging error per (performance, judge) mark of a discipline.

    Args:
        dataset: Source dataset
        discipline: Discipline to extract
        role: Only keep marks from judges in this position, when given

    Returns:
        List[JudgingError]: Errors in dataset order

    Raises:
        UnknownDisciplineError: If the discipline is not in the dataset
    """
    errors = []
    for group in dataset.discipline(discipline):
        c = group.control_score
        for m in group.marks:
            if role is not None and m.judge_role != role:
                continue
            errors.append(JudgingError(
                competition_id=m.competition_id,
                discipline_id=group.discipline_id,
                performance_id=group.performance_id,
                judge_id=m.judge_id,
                control_score=c,
                error=m.mark - c,
                judge_role=m.judge_role,
            ))
    return errors


class Centering(str, Enum):
    MEAN = 'mean'
    ZERO = 'zero'


@dataclass(frozen=True)
class BinningPolicy:
    """How judging errors are grouped before measuring their spread.

    ``centering='mean'`` takes the sample standard deviation about each bin's
    own mean error (denominator count - 1); ``'zero'`` takes the root mean
    square about zero (denominator count).
    """

    min_count: int = DEFAULT_MIN_COUNT
    centering: Centering = Centering.MEAN

    def __post_init__(self):
        if self.min_count < 2:
            raise ValueError("binning min_count must be at least 2")
        object.__setattr__(self, 'centering', Centering(self.centering))


@dataclass(frozen=True)
class VarianceBin:
    center: float
    count: int
    sigma: float


@dataclass
class _Pool:
    center: Fraction
    errors: List[Fraction]

    @property
    def count(self) -> int:
        return len(self.errors)

    def merged_with(self, other: '_Pool') -> '_Pool':
        total = self.count + other.count
        center = (self.center * self.count + other.center * other.count) / total
        return _Pool(center, self.errors + other.errors)


def bin_errors(errors: Sequence[JudgingError],
               policy: BinningPolicy = BinningPolicy()) -> List[VarianceBin]:
    """
    Group judging errors by control score and measure each group's spread.

    One bin is opened per attainable control score. Bins holding fewer than
    ``policy.min_count`` errors are merged greedily into their nearest
    neighbour by center until every bin is large enough or one bin is left.

    Args:
        errors: Judging errors of one discipline
        policy: Binning policy

    Returns:
        List[VarianceBin]: Bins sorted by center, each with count >= 2
    """
    if not errors:
        raise ValueError("bin_errors needs at least one judging error")

    by_score: Dict[Fraction, List[Fraction]] = defaultdict(list)
    for e in errors:
        by_score[e.control_score].append(e.error)
    pools = [_Pool(c, errs) for c, errs in sorted(by_score.items())]
    opened = len(pools)
    pools = _merge_sparse(pools, policy.min_count)
    logger.debug("Binned %d errors: %d control scores, %d bins after merging",
                 len(errors), opened, len(pools))

    bins = []
    for pool in pools:
        if pool.count < 2:
            logger.debug("Dropping bin at %s with a single error", pool.center)
            continue
        bins.append(VarianceBin(float(pool.center), pool.count,
                                _spread(pool.errors, policy.centering)))
    return bins


def _merge_sparse(pools: List[_Pool], min_count: int) -> List[_Pool]:
    pools = list(pools)
    while len(pools) > 1:
        sparse = [i for i, p in enumerate(pools) if p.count < min_count]
        if not sparse:
            break
        i = min(sparse, key=lambda k: (pools[k].count, pools[k].center))
        neighbours = [j for j in (i - 1, i + 1) if 0 <= j < len(pools)]
        j = min(neighbours, key=lambda k: (abs(pools[k].center - pools[i].center),
                                           pools[k].count, k))
        lo, hi = sorted((i, j))
        pools[lo:hi + 1] = [pools[lo].merged_with(pools[hi])]
    return pools


def _spread(errors: Sequence[Fraction], centering: Centering) -> float:
    x = np.array([float(e) for e in errors], dtype=float)
    if centering is Centering.ZERO:
        return float(np.sqrt(np.mean(x ** 2)))
    return float(np.std(x, ddof=1))


class ModelKind(str, Enum):
    QUADRATIC = 'quadratic'
    EXPONENTIAL = 'exponential'


class Shape(str, Enum):
    CONCAVE = 'concave'
    CONVEX = 'convex'
    DEGENERATE = 'degenerate'


@dataclass(frozen=True)
class VarianceModel:
    """Fitted sigma_hat(c) for one discipline.

    Quadratic coefficients are (a0, a1, a2) for a0 + a1*c + a2*c**2;
    exponential coefficients are (alpha, beta) for alpha * exp(beta*c).
    """

    kind: ModelKind
    coefficients: Tuple[float, ...]
    domain: Tuple[float, float]
    floor: float
    r2_weighted: Optional[float] = None
    rmsd_weighted: float = 0.0
    shape: Shape = Shape.DEGENERATE
    discipline_id: Optional[str] = None
    bins: Tuple[VarianceBin, ...] = ()
    converged: bool = True
    condition_number: Optional[float] = None
    alternative: Optional['VarianceModel'] = field(default=None, compare=False)

    def raw(self, c: float) -> float:
        """Unclamped model value at control score c."""
        if self.kind is ModelKind.QUADRATIC:
            a0, a1, a2 = self.coefficients
            return a0 + a1 * c + a2 * c * c
        alpha, beta = self.coefficients
        return alpha * math.exp(min(beta * c, 700.0))

    def slope(self, c: float) -> float:
        if self.kind is ModelKind.QUADRATIC:
            _, a1, a2 = self.coefficients
            return a1 + 2 * a2 * c
        alpha, beta = self.coefficients
        return alpha * beta * math.exp(min(beta * c, 700.0))

    @property
    def vertex(self) -> Optional[float]:
        """Control score of the quadratic's extremum, if it lies inside the domain."""
        if self.kind is not ModelKind.QUADRATIC or self.shape is Shape.DEGENERATE:
            return None
        _, a1, a2 = self.coefficients
        c = -a1 / (2 * a2)
        lo, hi = self.domain
        return c if lo <= c <= hi else None


class SigmaEvaluation(NamedTuple):
    value: float
    clamped: bool
    extrapolated: bool


def evaluate_sigma_flagged(model: VarianceModel, c: float) -> SigmaEvaluation:
    """Evaluate sigma_hat(c), clamped below by the model floor, with flags."""
    c = float(c)
    raw = model.raw(c)
    clamped = not raw > model.floor
    lo, hi = model.domain
    extrapolated = c < lo or c > hi
    if clamped:
        logger.debug("sigma_hat(%r) = %r clamped to floor %r", c, raw, model.floor)
    return SigmaEvaluation(model.floor if clamped else raw, clamped, extrapolated)


def evaluate_sigma(model: VarianceModel, c: float) -> float:
    """Evaluate sigma_hat(c); strictly positive everywhere."""
    return evaluate_sigma_flagged(model, c).value


def classify_shape(kind: ModelKind, coefficients: Sequence[float]) -> Shape:
    if ModelKind(kind) is ModelKind.QUADRATIC:
        a2 = coefficients[2]
        if abs(a2) <= SHAPE_TOLERANCE:
            return Shape.DEGENERATE
        return Shape.CONCAVE if a2 < 0 else Shape.CONVEX
    alpha, beta = coefficients
    if alpha == 0 or abs(beta) <= SHAPE_TOLERANCE:
        return Shape.DEGENERATE
    return Shape.CONVEX if alpha > 0 else Shape.CONCAVE


def _arrays(bins: Sequence[VarianceBin]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    c = np.array([b.center for b in bins], dtype=float)
    s = np.array([b.sigma for b in bins], dtype=float)
    w = np.array([b.count for b in bins], dtype=float)
    return c, s, w


def diagnostics(bins: Sequence[VarianceBin],
                model: VarianceModel) -> Tuple[Optional[float], float]:
    """
    Weighted goodness of fit of a model on its bins.

    Returns:
        Tuple of weighted r^2 (None when every bin sigma is equal) and the
        weighted root-mean-square deviation in score units
    """
    c, s, w = _arrays(bins)
    fitted = np.array([evaluate_sigma(model, x) for x in c])
    ss_res = float(np.sum(w * (s - fitted) ** 2))
    rmsd = math.sqrt(ss_res / float(np.sum(w)))
    if np.ptp(s) == 0:
        return None, rmsd
    mean = np.average(s, weights=w)
    ss_tot = float(np.sum(w * (s - mean) ** 2))
    return 1.0 - ss_res / ss_tot, rmsd


def _finish(model: VarianceModel, bins: Sequence[VarianceBin]) -> VarianceModel:
    r2, rmsd = diagnostics(bins, model)
    return replace(model, r2_weighted=r2, rmsd_weighted=rmsd,
                   shape=classify_shape(model.kind, model.coefficients))


def fit_quadratic(bins: Sequence[VarianceBin], *, floor: float = 1e-6,
                  discipline_id: Optional[str] = None) -> VarianceModel:
    """
    Weighted least-squares quadratic fit of bin sigma against bin center.

    The 3x3 normal equations are formed in the standardized regressor
    u = (c - mean) / spread and solved by LU with partial pivoting; the
    solution is mapped back to coefficients in c.

    Raises:
        InsufficientSupportError: Fewer than 3 distinct centers
        SingularFitError: Normal equations with condition number above 1e12
    """
    c, s, w = _arrays(bins)
    distinct = len(np.unique(c))
    if distinct < 3:
        raise InsufficientSupportError(
            f"insufficient support: {distinct} distinct bin center(s), quadratic fit needs 3",
            discipline_id)

    mean = float(np.average(c, weights=w))
    spread = math.sqrt(float(np.average((c - mean) ** 2, weights=w)))
    u = (c - mean) / spread
    design = np.vander(u, 3, increasing=True)
    normal = design.T @ (w[:, None] * design)
    rhs = design.T @ (w * s)

    cond = float(np.linalg.cond(normal))
    logger.debug("Quadratic normal equations for %s: condition number %.3g",
                 discipline_id or 'bins', cond)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularFitError(f"singular normal equations (condition number {cond:.3g})",
                               discipline_id)
    if cond > WARN_CONDITION:
        logger.warning("Ill-conditioned quadratic fit for %s (condition number %.3g)",
                       discipline_id or 'bins', cond)
    try:
        b0, b1, b2 = np.linalg.solve(normal, rhs)
    except np.linalg.LinAlgError as e:
        raise SingularFitError(f"singular normal equations: {e}", discipline_id) from None

    a2 = b2 / spread ** 2
    a1 = b1 / spread - 2 * b2 * mean / spread ** 2
    a0 = b0 - b1 * mean / spread + b2 * mean ** 2 / spread ** 2
    model = VarianceModel(
        kind=ModelKind.QUADRATIC,
        coefficients=(float(a0), float(a1), float(a2)),
        domain=(float(c.min()), float(c.max())),
        floor=floor,
        discipline_id=discipline_id,
        bins=tuple(bins),
        condition_number=cond,
    )
    return _finish(model, bins)


def fit_exponential(bins: Sequence[VarianceBin], *, floor: float = 1e-6,
                    discipline_id: Optional[str] = None, max_iter: int = 100,
                    tol: float = 1e-10, gtol: float = 1e-6) -> VarianceModel:
    """
    Weighted least-squares fit of sigma_hat(c) = alpha * exp(beta * c).

    Starts from the weighted log-linear fit of log(sigma) on c and refines it
    with damped Gauss-Newton steps (Armijo backtracking). Bins with zero
    sigma take the floor value. A run whose line search stalls converges
    only if the residual is orthogonal to the Jacobian columns within
    ``gtol``.

    Raises:
        InsufficientSupportError: Fewer than 2 distinct centers
        ConvergenceError: Iteration cap reached or the search stalled away
            from a stationary point; carries the best iterate
    """
    c, s, w = _arrays(bins)
    distinct = len(np.unique(c))
    if distinct < 2:
        raise InsufficientSupportError(
            f"insufficient support: {distinct} distinct bin center(s), exponential fit needs 2",
            discipline_id)

    target = np.maximum(s, floor)
    root_w = np.sqrt(w)
    beta0, log_alpha0 = np.polyfit(c, np.log(target), 1, w=root_w)
    params = np.array([math.exp(log_alpha0), beta0])

    def residuals(p):
        return root_w * (p[0] * np.exp(p[1] * c) - target)

    def jacobian(p):
        e = np.exp(p[1] * c)
        return root_w[:, None] * np.column_stack([e, p[0] * c * e])

    loss = float(np.sum(residuals(params) ** 2))
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        r = residuals(params)
        J = jacobian(params)
        gradient = 2 * J.T @ r
        step = _gauss_newton_step(J, r)

        damping = 1.0
        stalled = False
        while True:
            trial = params + damping * step
            trial_loss = float(np.sum(residuals(trial) ** 2))
            if np.isfinite(trial_loss) and trial_loss <= loss + 1e-4 * damping * float(gradient @ step):
                break
            damping *= 0.5
            if damping < 1e-12:
                stalled = True
                break

        if stalled:
            # no descent left: only a stationary point counts as converged
            converged = _stationary(J, r, gtol, float(np.linalg.norm(root_w * target)))
            logger.debug("Exponential fit line search stalled at iteration %d (stationary: %s)",
                         iteration, converged)
            break

        moved = float(np.linalg.norm(trial - params))
        params, loss = trial, trial_loss
        logger.debug("Exponential fit iteration %d: loss %.6g, step %.3g", iteration, loss, moved)
        if moved <= tol * (float(np.linalg.norm(params)) + tol):
            converged = True
            break

    model = VarianceModel(
        kind=ModelKind.EXPONENTIAL,
        coefficients=(float(params[0]), float(params[1])),
        domain=(float(c.min()), float(c.max())),
        floor=floor,
        discipline_id=discipline_id,
        bins=tuple(bins),
        converged=converged,
    )
    model = _finish(model, bins)
    if not converged:
        logger.warning("Exponential fit for %s did not converge after %d iteration(s)",
                       discipline_id or 'bins', iteration)
        raise ConvergenceError(f"exponential fit did not converge after {iteration} iteration(s)",
                               discipline_id, best_model=model)
    return model


def _gauss_newton_step(J: np.ndarray, r: np.ndarray) -> np.ndarray:
    return np.linalg.lstsq(J, -r, rcond=None)[0]


def _stationary(J: np.ndarray, r: np.ndarray, gtol: float, size: float) -> bool:
    """
    Residual is negligible next to the targets, or its cosine with the
    Jacobian columns is below gtol.
    """
    r_norm = float(np.linalg.norm(r))
    if r_norm <= 1e-8 * size:
        return True
    return float(np.linalg.norm(J.T @ r)) <= gtol * float(np.linalg.norm(J)) * r_norm


def fit_model(bins: Sequence[VarianceBin], kind: ModelKind = ModelKind.QUADRATIC, *,
              floor: float = 1e-6, discipline_id: Optional[str] = None) -> VarianceModel:
    if ModelKind(kind) is ModelKind.QUADRATIC:
        return fit_quadratic(bins, floor=floor, discipline_id=discipline_id)
    return fit_exponential(bins, floor=floor, discipline_id=discipline_id)


def model_key(discipline_id: str, role: Optional[str] = None) -> str:
    return discipline_id if role is None else f"{discipline_id}@{role}"


def fit_discipline(dataset: Dataset, discipline: str,
                   kind: ModelKind = ModelKind.QUADRATIC,
                   policy: BinningPolicy = BinningPolicy(),
                   role: Optional[str] = None,
                   compare_kinds: bool = False) -> VarianceModel:
    """
    Extract, bin and fit one discipline (optionally one judging position).

    With ``compare_kinds`` the other model kind is fitted too and attached as
    ``alternative`` when it succeeds.
    """
    key = model_key(discipline, role)
    errors = extract_errors(dataset, discipline, role)
    if not errors:
        raise InsufficientSupportError("insufficient support: no judging errors", key)
    bins = bin_errors(errors, policy)
    floor = dataset.scale_of(discipline).floor
    model = fit_model(bins, kind, floor=floor, discipline_id=key)
    logger.info("Fitted %s model for %s: shape %s, r2 %s, RMSD %.4g",
                model.kind.value, key, model.shape.value,
                'n/a' if model.r2_weighted is None else f"{model.r2_weighted:.4f}",
                model.rmsd_weighted)
    if compare_kinds:
        other = (ModelKind.EXPONENTIAL if model.kind is ModelKind.QUADRATIC
                 else ModelKind.QUADRATIC)
        try:
            model = replace(model, alternative=fit_model(bins, other, floor=floor,
                                                         discipline_id=key))
        except FitError as e:
            logger.warning("Alternative %s fit for %s failed: %s", other.value, key, e)
    return model


def curve_samples(model: VarianceModel, n: int = CURVE_SAMPLES) -> List[Tuple[float, float]]:
    """Evenly spaced (c, sigma_hat(c)) samples across the model domain."""
    lo, hi = model.domain
    return [(float(x), evaluate_sigma(model, float(x))) for x in np.linspace(lo, hi, n)]


def model_to_document(model: VarianceModel) -> Dict[str, Any]:
    """Serializable description of a fitted model, bins included."""
    lo, hi = model.domain
    doc: Dict[str, Any] = {
        'discipline_id': model.discipline_id,
        'kind': model.kind.value,
        'coefficients': list(model.coefficients),
        'domain': [lo, hi],
        'floor': model.floor,
        'r2_weighted': model.r2_weighted,
        'rmsd_weighted': model.rmsd_weighted,
        'shape': model.shape.value,
        'converged': model.converged,
        'condition_number': model.condition_number,
        'vertex': model.vertex,
        'slope_low': model.slope(lo),
        'slope_high': model.slope(hi),
        'bins': [{'center': b.center, 'count': b.count, 'sigma': b.sigma} for b in model.bins],
    }
    if model.alternative is not None:
        alt = model.alternative
        doc['alternative'] = {
            'kind': alt.kind.value,
            'coefficients': list(alt.coefficients),
            'r2_weighted': alt.r2_weighted,
            'rmsd_weighted': alt.rmsd_weighted,
            'shape': alt.shape.value,
        }
    return doc


def model_from_document(doc: Dict[str, Any]) -> VarianceModel:
    """Rebuild a model from its document. Derived fields are not re-checked."""
    try:
        return VarianceModel(
            kind=ModelKind(doc['kind']),
            coefficients=tuple(float(x) for x in doc['coefficients']),
            domain=(float(doc['domain'][0]), float(doc['domain'][1])),
            floor=float(doc['floor']),
            r2_weighted=doc.get('r2_weighted'),
            rmsd_weighted=float(doc.get('rmsd_weighted', 0.0)),
            shape=Shape(doc.get('shape', Shape.DEGENERATE.value)),
            discipline_id=doc.get('discipline_id'),
            bins=tuple(VarianceBin(float(b['center']), int(b['count']), float(b['sigma']))
                       for b in doc.get('bins', [])),
            converged=bool(doc.get('converged', True)),
            condition_number=doc.get('condition_number'),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise FitError(f"malformed model document: {e}") from None
