"""Exact information quantities and identity checks over finite tables.

Everything here is computed by exhaustive summation over small probability
tables, with the standard conventions 0 log 0 := 0 and KL := +inf on support
mismatch.  The module serves as the ground-truth oracle for the identities
the continuous machinery relies on: the mutual-information chain rule, the
equivalence of the plain and class-conditional bottleneck objectives, the
decomposition of the surrogate KL into compression plus a residual, and the
optimality of per-class products of coordinate marginals (whose residual is
the class-conditional total correlation).

The latent alphabet is a product of per-coordinate alphabets; joint outcomes
are indexed in C order (last coordinate fastest), capped at 64 outcomes so
exhaustive sums stay sub-second.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "MAX_JOINT_OUTCOMES",
    "DiscreteJoint",
    "DiscreteEncoder",
    "InducedDistributions",
    "InfoReport",
    "ObjectiveValues",
    "EquivalenceScan",
    "ProductSurrogate",
    "DecompositionReport",
    "OptimalityReport",
    "entropy",
    "kl_discrete",
    "induced",
    "info_report",
    "objective_values",
    "equivalence_scan",
    "decomposition_check",
    "optimal_product_surrogate",
    "sample_kl_objective",
    "surrogate_optimality_check",
    "perturbed_product_surrogates",
]

MAX_JOINT_OUTCOMES = 64


def _xlogx(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p)
    mask = p > 0.0
    out[mask] = p[mask] * np.log(p[mask])
    return out


def entropy(p: np.ndarray) -> float:
    """Shannon entropy in nats with 0 log 0 := 0."""
    return float(-np.sum(_xlogx(np.asarray(p, dtype=np.float64))))


def kl_discrete(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) in nats; +inf where p puts mass outside q's support."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if p.shape != q.shape:
        raise ValueError(f"distributions have different sizes: {p.size} vs {q.size}")
    support = p > 0.0
    if np.any(q[support] == 0.0):
        return math.inf
    return float(np.sum(p[support] * (np.log(p[support]) - np.log(q[support]))))


@dataclass(frozen=True)
class DiscreteJoint:
    """Joint probability table p(x, y) over finite feature and class alphabets."""

    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=np.float64))
        if self.p.ndim != 2 or self.p.shape[0] < 1 or self.p.shape[1] < 1:
            raise ValueError("joint table must be a nonempty 2-D array")
        if np.any(self.p < 0.0):
            raise ValueError("joint probabilities must be nonnegative")
        if abs(float(self.p.sum()) - 1.0) > 1e-12:
            raise ValueError(f"joint table sums to {float(self.p.sum())}, not 1")

    @property
    def nx(self) -> int:
        return self.p.shape[0]

    @property
    def ny(self) -> int:
        return self.p.shape[1]


@dataclass(frozen=True)
class DiscreteEncoder:
    """Stochastic table q(t | x) over a product latent alphabet.

    ``arities`` lists the per-coordinate alphabet sizes; their product is the
    number of columns, and joint outcomes follow C order (last coordinate
    varies fastest).
    """

    q: np.ndarray
    arities: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=np.float64))
        object.__setattr__(self, "arities", tuple(int(a) for a in self.arities))
        if self.q.ndim != 2 or self.q.shape[0] < 1:
            raise ValueError("encoder table must be a nonempty 2-D array")
        if any(a < 1 for a in self.arities):
            raise ValueError("coordinate arities must be positive")
        nt = int(np.prod(self.arities))
        if nt != self.q.shape[1]:
            raise ValueError(f"arities {self.arities} imply {nt} outcomes, table has {self.q.shape[1]}")
        if nt > MAX_JOINT_OUTCOMES:
            raise ValueError(f"product alphabet has {nt} outcomes, cap is {MAX_JOINT_OUTCOMES}")
        if np.any(self.q < 0.0):
            raise ValueError("encoder probabilities must be nonnegative")
        rows = self.q.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > 1e-12):
            raise ValueError("each encoder row must sum to 1")

    @property
    def nx(self) -> int:
        return self.q.shape[0]

    @property
    def nt(self) -> int:
        return self.q.shape[1]


@dataclass(frozen=True)
class InducedDistributions:
    """Bayes-rule marginalizations of the encoder through the joint.

    Rows conditioned on an outcome of probability zero are undefined and
    filled with NaN rather than fabricated.
    """

    t_given_y: np.ndarray
    y_given_t: np.ndarray
    t_marginal: np.ndarray


def induced(joint: DiscreteJoint, enc: DiscreteEncoder) -> InducedDistributions:
    """Exact q(T|Y), q(Y|T) and q(T) induced by the encoder."""
    if enc.nx != joint.nx:
        raise ValueError(f"encoder covers {enc.nx} feature values, joint has {joint.nx}")
    p_y = joint.p.sum(axis=0)
    joint_yt = joint.p.T @ enc.q  # (ny, nt): q(y, t)
    q_t = joint_yt.sum(axis=0)

    t_given_y = np.full_like(joint_yt, np.nan)
    pos_y = p_y > 0.0
    t_given_y[pos_y] = joint_yt[pos_y] / p_y[pos_y, None]

    y_given_t = np.full((enc.nt, joint.ny), np.nan)
    pos_t = q_t > 0.0
    y_given_t[pos_t] = joint_yt.T[pos_t] / q_t[pos_t, None]
    return InducedDistributions(t_given_y=t_given_y, y_given_t=y_given_t, t_marginal=q_t)


@dataclass(frozen=True)
class InfoReport:
    """Entropies and mutual informations of one (joint, encoder) pair, in nats."""

    H_Y: float
    H_Y_given_T: float
    I_XT: float
    I_YT: float
    I_XT_given_Y: float
    I_XY_given_T: float
    TC_given_y: np.ndarray

    def chain_rule_gap(self) -> float:
        """I(X;T) - I(X;T|Y) - I(Y;T); exactly zero under the Markov chain."""
        return self.I_XT - self.I_XT_given_Y - self.I_YT


def info_report(joint: DiscreteJoint, enc: DiscreteEncoder) -> InfoReport:
    """All information quantities by exhaustive summation over (x, y, t)."""
    if enc.nx != joint.nx:
        raise ValueError(f"encoder covers {enc.nx} feature values, joint has {joint.nx}")
    p3 = joint.p[:, :, None] * enc.q[:, None, :]  # (nx, ny, nt)
    h_xyt = entropy(p3)
    h_xy = entropy(joint.p)
    h_x = entropy(joint.p.sum(axis=1))
    h_y = entropy(joint.p.sum(axis=0))
    p_xt = p3.sum(axis=1)
    p_yt = p3.sum(axis=0)
    h_xt = entropy(p_xt)
    h_yt = entropy(p_yt)
    h_t = entropy(p_yt.sum(axis=0))

    p_y = joint.p.sum(axis=0)
    tc = np.zeros(joint.ny)
    for y in range(joint.ny):
        if p_y[y] == 0.0:
            continue
        cond = (p_yt[y] / p_y[y]).reshape(enc.arities)
        h_joint = entropy(cond)
        h_marginals = 0.0
        for axis in range(cond.ndim):
            axes = tuple(a for a in range(cond.ndim) if a != axis)
            h_marginals += entropy(cond.sum(axis=axes))
        tc[y] = h_marginals - h_joint

    return InfoReport(
        H_Y=h_y,
        H_Y_given_T=h_yt - h_t,
        I_XT=h_x + h_t - h_xt,
        I_YT=h_y + h_t - h_yt,
        I_XT_given_Y=h_xy + h_yt - h_y - h_xyt,
        I_XY_given_T=h_xt + h_yt - h_t - h_xyt,
        TC_given_y=tc,
    )


@dataclass(frozen=True)
class ObjectiveValues:
    """The three bottleneck objectives evaluated on one InfoReport."""

    l_ib: float
    l_cib: float
    sufficiency_objective: float


def objective_values(report: InfoReport, beta: float, beta_prime: float) -> ObjectiveValues:
    """Plain bottleneck loss, class-conditional loss, and the sufficiency form.

    ``l_ib = H(Y|T) + beta I(X;T)``, ``l_cib = H(Y|T) + beta' I(X;T|Y)`` and
    the sufficiency form ``I(X;Y|T) + beta' I(X;T|Y)``, which differs from
    l_cib only by a constant independent of the encoder.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    if beta_prime < 0.0:
        raise ValueError(f"beta_prime must be nonnegative, got {beta_prime}")
    return ObjectiveValues(
        l_ib=report.H_Y_given_T + beta * report.I_XT,
        l_cib=report.H_Y_given_T + beta_prime * report.I_XT_given_Y,
        sufficiency_objective=report.I_XY_given_T + beta_prime * report.I_XT_given_Y,
    )


@dataclass(frozen=True)
class EquivalenceScan:
    """Argmin sets of the two objectives over one encoder family."""

    beta: float
    beta_prime: float
    argmin_ib: tuple[int, ...]
    argmin_cib: tuple[int, ...]
    l_ib: np.ndarray
    l_cib: np.ndarray

    @property
    def coincide(self) -> bool:
        return self.argmin_ib == self.argmin_cib


def equivalence_scan(
    joint: DiscreteJoint,
    encoders: Sequence[DiscreteEncoder],
    beta: float,
    tie_tol: float = 1e-10,
) -> EquivalenceScan:
    """Check that both objectives pick the same minimizers over a finite family.

    Ties are resolved as argmin *sets*: every encoder within ``tie_tol`` of
    the family minimum belongs to the set.
    """
    if not encoders:
        raise ValueError("encoder family must be non-empty")
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    beta_prime = beta / (1.0 - beta)
    l_ib = np.empty(len(encoders))
    l_cib = np.empty(len(encoders))
    for k, enc in enumerate(encoders):
        rep = info_report(joint, enc)
        vals = objective_values(rep, beta, beta_prime)
        l_ib[k] = vals.l_ib
        l_cib[k] = vals.l_cib
    argmin_ib = tuple(int(k) for k in np.flatnonzero(l_ib <= l_ib.min() + tie_tol))
    argmin_cib = tuple(int(k) for k in np.flatnonzero(l_cib <= l_cib.min() + tie_tol))
    return EquivalenceScan(
        beta=beta,
        beta_prime=beta_prime,
        argmin_ib=argmin_ib,
        argmin_cib=argmin_cib,
        l_ib=l_ib,
        l_cib=l_cib,
    )


@dataclass(frozen=True)
class ProductSurrogate:
    """Per-class product distribution over the latent coordinates.

    ``factors[y][j]`` is the class-y marginal over coordinate j's alphabet.
    ``expand(y)`` multiplies the factors out to a joint table in C order.
    """

    factors: tuple[tuple[np.ndarray, ...], ...]

    def __post_init__(self):
        frozen = tuple(
            tuple(np.asarray(f, dtype=np.float64) for f in class_factors)
            for class_factors in self.factors
        )
        object.__setattr__(self, "factors", frozen)
        if not self.factors:
            raise ValueError("need at least one class")
        arities = tuple(f.size for f in self.factors[0])
        for y, class_factors in enumerate(self.factors):
            if tuple(f.size for f in class_factors) != arities:
                raise ValueError("all classes must share the coordinate arities")
            for j, f in enumerate(class_factors):
                if np.any(f < 0.0) or abs(float(f.sum()) - 1.0) > 1e-12:
                    raise ValueError(f"factor (class {y}, coordinate {j}) is not a distribution")

    @property
    def class_count(self) -> int:
        return len(self.factors)

    @property
    def arities(self) -> tuple[int, ...]:
        return tuple(f.size for f in self.factors[0])

    def expand(self, y: int) -> np.ndarray:
        return reduce(np.multiply.outer, self.factors[y]).ravel()


@dataclass(frozen=True)
class DecompositionReport:
    """Both sides of the surrogate-KL decomposition.

    lhs = E_{XY} KL(q(T|X) || r(T|Y));  rhs = I(X;T|Y) + E_Y KL(q(T|Y) || r(T|Y)).
    """

    lhs: float
    i_xt_given_y: float
    kl_residual: float

    @property
    def rhs(self) -> float:
        return self.i_xt_given_y + self.kl_residual

    @property
    def gap(self) -> float:
        if math.isinf(self.lhs) and math.isinf(self.rhs):
            return 0.0
        return self.lhs - self.rhs


def decomposition_check(
    joint: DiscreteJoint, enc: DiscreteEncoder, surrogate: ProductSurrogate
) -> DecompositionReport:
    """Verify lhs = I(X;T|Y) + residual for a per-class product surrogate.

    A surrogate zero where the induced q(T|Y) has mass yields an infinite KL,
    reported as such on both sides.
    """
    if surrogate.class_count != joint.ny or surrogate.arities != enc.arities:
        raise ValueError("surrogate must cover the joint's classes and the encoder's alphabet")
    expanded = [surrogate.expand(y) for y in range(joint.ny)]
    lhs = 0.0
    for x in range(joint.nx):
        for y in range(joint.ny):
            if joint.p[x, y] > 0.0:
                lhs += joint.p[x, y] * kl_discrete(enc.q[x], expanded[y])
    ind = induced(joint, enc)
    p_y = joint.p.sum(axis=0)
    residual = 0.0
    for y in range(joint.ny):
        if p_y[y] > 0.0:
            residual += p_y[y] * kl_discrete(ind.t_given_y[y], expanded[y])
    rep = info_report(joint, enc)
    return DecompositionReport(lhs=lhs, i_xt_given_y=rep.I_XT_given_Y, kl_residual=residual)


def optimal_product_surrogate(t_given_y: np.ndarray, arities: Sequence[int]) -> ProductSurrogate:
    """Per-class product of coordinate marginals of q(T|Y).

    This is the product surrogate minimizing the average KL from q(T|Y); the
    attained value per class is exactly the conditional total correlation.
    """
    t_given_y = np.asarray(t_given_y, dtype=np.float64)
    arities = tuple(int(a) for a in arities)
    if t_given_y.ndim != 2 or int(np.prod(arities)) != t_given_y.shape[1]:
        raise ValueError("conditional table does not match the arities")
    factors = []
    for y in range(t_given_y.shape[0]):
        cond = t_given_y[y].reshape(arities)
        class_factors = []
        for axis in range(cond.ndim):
            axes = tuple(a for a in range(cond.ndim) if a != axis)
            class_factors.append(cond.sum(axis=axes))
        factors.append(tuple(class_factors))
    return ProductSurrogate(tuple(factors))


def _conditional_from_samples(
    samples: np.ndarray, enc: DiscreteEncoder, class_count: int
) -> tuple[np.ndarray, np.ndarray]:
    """Empirical q(T|Y) rows and class counts from (x_i, y_i) samples."""
    counts = np.zeros(class_count, dtype=np.int64)
    t_given_y = np.zeros((class_count, enc.nt))
    for x, y in samples:
        counts[y] += 1
        t_given_y[y] += enc.q[x]
    if np.any(counts == 0):
        missing = int(np.flatnonzero(counts == 0)[0])
        raise ValueError(f"class {missing} has no samples")
    return t_given_y / counts[:, None], counts


def sample_kl_objective(
    samples: Sequence[tuple[int, int]], enc: DiscreteEncoder, surrogate: ProductSurrogate
) -> float:
    """(1/N) sum_i KL(q(T|x_i) || r(T|y_i)) for a candidate product surrogate."""
    samples = np.asarray(samples, dtype=np.intp)
    expanded = [surrogate.expand(y) for y in range(surrogate.class_count)]
    return float(np.mean([kl_discrete(enc.q[x], expanded[y]) for x, y in samples]))


@dataclass(frozen=True)
class OptimalityReport:
    """Closed-form optimum vs the compression + total-correlation expression."""

    lhs_min: float
    rhs: float
    surrogate: ProductSurrogate

    @property
    def gap(self) -> float:
        return self.lhs_min - self.rhs


def surrogate_optimality_check(
    samples: Sequence[tuple[int, int]], enc: DiscreteEncoder
) -> OptimalityReport:
    """Check the closed-form optimal product surrogate against its value.

    The minimum over per-class product surrogates of the average sample KL
    is attained by the product of conditional coordinate marginals; its value
    equals the average of KL(q(T|x_i) || q(T|y_i)) plus the conditional total
    correlation TC(T|y_i).  Returns both sides.
    """
    samples = np.asarray(samples, dtype=np.intp)
    if samples.ndim != 2 or samples.shape[1] != 2 or samples.shape[0] < 1:
        raise ValueError("samples must be a nonempty sequence of (x, y) pairs")
    class_count = int(samples[:, 1].max()) + 1
    t_given_y, _ = _conditional_from_samples(samples, enc, class_count)
    best = optimal_product_surrogate(t_given_y, enc.arities)
    lhs_min = sample_kl_objective(samples, enc, best)
    tc = np.array([kl_discrete(t_given_y[y], best.expand(y)) for y in range(class_count)])
    rhs = float(
        np.mean([kl_discrete(enc.q[x], t_given_y[y]) + tc[y] for x, y in samples])
    )
    return OptimalityReport(lhs_min=lhs_min, rhs=rhs, surrogate=best)


def perturbed_product_surrogates(
    surrogate: ProductSurrogate, step: float = 0.01
) -> Iterator[ProductSurrogate]:
    """All single-factor mass moves of size ``step`` (clipped, renormalized).

    For every class, coordinate, and ordered symbol pair (a, b) with mass at
    a, moves min(step, mass_a) from a to b.  Serves as an independent
    line of evidence that no nearby product surrogate beats a claimed optimum.
    """
    if step <= 0.0:
        raise ValueError("step must be positive")
    for y, class_factors in enumerate(surrogate.factors):
        for j, factor in enumerate(class_factors):
            arity = factor.size
            for a in range(arity):
                if factor[a] <= 0.0:
                    continue
                delta = min(step, float(factor[a]))
                for bsym in range(arity):
                    if bsym == a:
                        continue
                    moved = factor.copy()
                    moved[a] -= delta
                    moved[bsym] += delta
                    moved /= moved.sum()
                    new_factors = [list(cf) for cf in surrogate.factors]
                    new_factors[y][j] = moved
                    yield ProductSurrogate(tuple(tuple(cf) for cf in new_factors))
