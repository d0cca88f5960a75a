"""Pairwise-mixture upper bounds on I(X;T) and I(X;T|Y) over embedded datasets.

Treating the embedded codes as the component means of a homoscedastic
Gaussian mixture gives a mutual-information upper bound built from pairwise
code distances.  Two formula variants ship because the compact published
form and its source disagree:

* ``as-printed``  - unsquared Euclidean distances, no normalization inside
  the logarithm.
* ``cited-source`` - squared distances with a 1/N factor inside the
  logarithm; this is the variant that provably upper-bounds the mutual
  information and is therefore the default.

The conditional variant restricts the bound to one class at a time; by
default each class is averaged over its own sample count and classes are
combined with relative frequencies, so the aggregate cannot scale with the
dataset size.  The printed alternatives (outer 1/N over the restricted sum;
absolute-count weights) are available behind flags.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

__all__ = [
    "MODE_AS_PRINTED",
    "MODE_CITED_SOURCE",
    "EmbeddedDataset",
    "BoundReport",
    "mixture_bound",
    "conditional_bound",
    "aggregate_conditional",
    "bound_report",
]

MODE_AS_PRINTED = "as-printed"
MODE_CITED_SOURCE = "cited-source"
_MODES = (MODE_AS_PRINTED, MODE_CITED_SOURCE)

_BLOCK = 1024  # row blocking keeps the N x N distance work in bounded memory


@dataclass(frozen=True)
class EmbeddedDataset:
    """Encoder codes with labels and the mixture's noise parameters.

    ``sigma2`` is the fixed per-component noise variance (> 0); ``eta2`` the
    learned additional noise variance (>= 0).  ``codes`` rows are the mean
    embeddings f(x_i).
    """

    codes: np.ndarray
    labels: np.ndarray
    sigma2: float
    eta2: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "codes", np.asarray(self.codes, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.intp))
        if self.codes.ndim != 2 or self.codes.shape[0] < 1:
            raise ValueError("codes must be a nonempty (N, d) matrix")
        if not np.all(np.isfinite(self.codes)):
            raise ValueError("codes must be finite")
        if self.labels.shape != (self.codes.shape[0],):
            raise ValueError("labels must align with code rows")
        if not self.sigma2 > 0.0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if self.eta2 < 0.0:
            raise ValueError(f"eta2 must be nonnegative, got {self.eta2}")

    @property
    def count(self) -> int:
        return self.codes.shape[0]

    @property
    def dim(self) -> int:
        return self.codes.shape[1]


@dataclass(frozen=True)
class BoundReport:
    """Unconditional and per-class bound values plus their aggregate."""

    mode: str
    unconditional: float
    aggregate: float
    per_class: Mapping[int, tuple[int, float]]

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "unconditional": self.unconditional,
            "aggregate": self.aggregate,
            "per_class": [
                {"label": int(y), "count": int(c), "value": float(v)}
                for y, (c, v) in sorted(self.per_class.items())
            ],
        }


def _check_mode(mode: str) -> None:
    if mode not in _MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {_MODES}")


def _bound_on_codes(codes: np.ndarray, dim: int, sigma2: float, eta2: float, mode: str) -> float:
    n = codes.shape[0]
    width = eta2 + sigma2
    inner_logs = np.empty(n)
    # direct pairwise differences (no dot-product expansion: the sqrt in
    # as-printed mode would amplify its cancellation error); row blocks keep
    # the (block, N, d) intermediate in bounded memory
    block_rows = max(1, min(_BLOCK, int(4e6 / max(1, n * codes.shape[1]))))
    for start in range(0, n, block_rows):
        stop = min(start + block_rows, n)
        diff = codes[start:stop, None, :] - codes[None, :, :]
        d2 = np.einsum("bnd,bnd->bn", diff, diff)
        if mode == MODE_AS_PRINTED:
            kernel = -0.5 * np.sqrt(d2) / width
            inner_logs[start:stop] = _logsumexp_rows(kernel)
        else:
            kernel = -0.5 * d2 / width
            inner_logs[start:stop] = _logsumexp_rows(kernel) - np.log(n)
    return float(-np.mean(inner_logs) - dim * np.log(sigma2 / width))


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    mx = a.max(axis=1)
    return mx + np.log(np.exp(a - mx[:, None]).sum(axis=1))


def mixture_bound(data: EmbeddedDataset, mode: str = MODE_CITED_SOURCE) -> float:
    """Pairwise-mixture upper bound on I(X;T) over the whole dataset."""
    _check_mode(mode)
    return _bound_on_codes(data.codes, data.dim, data.sigma2, data.eta2, mode)


def conditional_bound(
    data: EmbeddedDataset,
    y: int,
    mode: str = MODE_CITED_SOURCE,
    printed_outer_normalization: bool = False,
) -> float:
    """Mixture bound restricted to the samples of class ``y``.

    The outer average runs over the class's own samples (1/N_y).  With
    ``printed_outer_normalization`` the restricted sum is divided by the full
    dataset size instead, matching the compact published normalization.
    """
    _check_mode(mode)
    mask = data.labels == y
    n_y = int(mask.sum())
    if n_y == 0:
        raise ValueError(f"class {y} has no samples")
    value = _bound_on_codes(data.codes[mask], data.dim, data.sigma2, data.eta2, mode)
    if printed_outer_normalization:
        # -(1/N) sum_i log(...) = (N_y/N) * [per-class average of the logs],
        # but the distance-free term is not class-averaged, so rescale only
        # the log part: value = -mean(logs) - const  =>  printed = -(N_y/N) mean(logs) - const.
        width = data.eta2 + data.sigma2
        const = -data.dim * np.log(data.sigma2 / width)
        value = (value - const) * (n_y / data.count) + const
    return value


def aggregate_conditional(
    per_class: Mapping[int, tuple[int, float]] | list[tuple[int, int, float]],
    total: int,
    printed_count_weights: bool = False,
) -> float:
    """Combine per-class bounds into a bound on I(X;T|Y).

    ``per_class`` maps label -> (count, value) (or lists (label, count,
    value) triples).  The default weighting is by relative class frequency
    N_y / N; ``printed_count_weights`` switches to the absolute-count
    weighting of the compact published form (which scales with N).
    """
    if isinstance(per_class, Mapping):
        triples = [(y, c, v) for y, (c, v) in per_class.items()]
    else:
        triples = list(per_class)
    if not triples:
        raise ValueError("need at least one class")
    counts = np.array([c for _, c, _ in triples], dtype=np.int64)
    if np.any(counts <= 0):
        raise ValueError("class counts must be positive")
    if int(counts.sum()) != total:
        raise ValueError(f"class counts sum to {int(counts.sum())}, expected {total}")
    values = np.array([v for _, _, v in triples], dtype=np.float64)
    if printed_count_weights:
        return float(np.sum(counts * values))
    return float(np.sum((counts / total) * values))


def bound_report(
    data: EmbeddedDataset,
    mode: str = MODE_CITED_SOURCE,
    printed_outer_normalization: bool = False,
    printed_count_weights: bool = False,
) -> BoundReport:
    """Full report: unconditional bound, per-class bounds, and their aggregate."""
    _check_mode(mode)
    per_class: dict[int, tuple[int, float]] = {}
    for y in np.unique(data.labels):
        count = int(np.sum(data.labels == y))
        value = conditional_bound(data, int(y), mode, printed_outer_normalization)
        per_class[int(y)] = (count, value)
    return BoundReport(
        mode=mode,
        unconditional=mixture_bound(data, mode),
        aggregate=aggregate_conditional(per_class, data.count, printed_count_weights),
        per_class=per_class,
    )
