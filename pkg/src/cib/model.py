"""Stochastic encoder, decoder heads, training loop, and the beta' sweep driver.

The encoder is a small feed-forward net whose output is the mean of an
isotropic Gaussian over the bottleneck; its variance is either a fixed
sigma^2 or exp(log eta^2) + sigma^2 with a learned global log eta^2 (sigma^2
then acts as a floor).  Two decoder heads are available: a parametric
softmax readout, and a naive Bayes classifier fitted to the class surrogate
parameters, which owns no parameters of its own.  Training minimizes the
class-conditional bottleneck loss jointly over encoder weights and surrogate
parameters; every run is a deterministic function of its seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import data_io, estimators, objectives
from .data_io import Dataset, MetricsRow
from .diffcore import ParamStore, Tape
from .gaussians import ClassSurrogate, DiagGaussian, kl_to_surrogate
from .objectives import beta_to_beta_prime

__all__ = [
    "NonFiniteLossError",
    "EncoderModel",
    "DecoderHead",
    "ModelState",
    "EvalResult",
    "TrainResult",
    "TradeoffPoint",
    "EVAL_MC_SAMPLES",
    "EVAL_NOISE_SEED",
    "derive_seed",
    "decode_naive_bayes",
    "decode_softmax",
    "build_state",
    "make_loss_fn",
    "train",
    "evaluate",
    "sweep",
    "run_sweep_point",
]

EVAL_MC_SAMPLES = 16
# Evaluation noise comes from this fixed stream so evaluate() is a pure
# function of (parameters, dataset).
EVAL_NOISE_SEED = 202_408
_MASK64 = (1 << 64) - 1


class NonFiniteLossError(ArithmeticError):
    """Training produced a NaN/inf loss; carries the offending sample index."""

    def __init__(self, message: str, step: int | None = None, sample_index: int | None = None):
        super().__init__(message)
        self.step = step
        self.sample_index = sample_index


def derive_seed(base: int, index: int) -> int:
    """Stable 64-bit mix of a base seed and a stream/run index."""
    z = (int(base) + 0x9E3779B97F4A7C15 * (int(index) + 1)) & _MASK64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


_INIT_STREAM, _SHUFFLE_STREAM, _NOISE_STREAM = 0, 1, 2


def _act(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "softplus":
        return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    if kind == "tanh":
        return np.tanh(x)
    raise ValueError(f"unsupported activation: {kind!r}")


@dataclass
class EncoderModel:
    """Feed-forward encoder f(x) with an isotropic noise model on its output."""

    layer_dims: list[int]
    activation: str
    noise_mode: str
    sigma2: float
    store: ParamStore

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def bottleneck_dim(self) -> int:
        return self.layer_dims[-1]

    def weight_names(self) -> list[tuple[str, str]]:
        return [(f"enc.W{l}", f"enc.b{l}") for l in range(len(self.layer_dims) - 1)]

    def log_var(self) -> float:
        """Log of the isotropic bottleneck variance."""
        if self.noise_mode == "fixed_sigma":
            return math.log(self.sigma2)
        eta2 = math.exp(float(self.store.get("enc.log_eta2")))
        return math.log(eta2 + self.sigma2)

    def eta2(self) -> float:
        if self.noise_mode == "fixed_sigma":
            return 0.0
        return math.exp(float(self.store.get("enc.log_eta2")))

    def encode_batch(self, x: np.ndarray) -> np.ndarray:
        """Mean embeddings for a batch; returns the (N, d) matrix f(x)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"inputs must be (N, {self.in_dim}), got {x.shape}")
        h = x
        for l, (wn, bn) in enumerate(self.weight_names()):
            h = h @ self.store.get(wn).T + self.store.get(bn)
            if l < len(self.layer_dims) - 2:
                h = _act(h, self.activation)
        return h

    def encode(self, x: np.ndarray) -> DiagGaussian:
        """Encoder output distribution q(T | X = x) for a single input."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.in_dim,):
            raise ValueError(f"input must have dimension {self.in_dim}, got {x.shape}")
        mean = self.encode_batch(x[None, :])[0]
        return DiagGaussian(mean, np.full(self.bottleneck_dim, self.log_var()))

    def means_graph(self, tape: Tape, x: np.ndarray) -> int:
        """Tape node of the (N, d) mean embeddings, differentiable in the weights."""
        h = tape.const(np.asarray(x, dtype=np.float64))
        for l, (wn, bn) in enumerate(self.weight_names()):
            h = tape.affine(h, tape.param(wn), tape.param(bn), label=wn)
            if l < len(self.layer_dims) - 2:
                h = tape.activation(h, self.activation)
        return h

    def log_var_graph(self, tape: Tape) -> int:
        """Scalar tape node of the bottleneck log-variance."""
        if self.noise_mode == "fixed_sigma":
            return tape.const(math.log(self.sigma2))
        return tape.log(tape.add_const(tape.exp(tape.param("enc.log_eta2")), self.sigma2))


def decode_naive_bayes(s: ClassSurrogate, t: np.ndarray) -> np.ndarray:
    """Class posterior q(y | t) of the naive Bayes classifier fitted to ``s``.

    Scores are accumulated in log space and normalized with log-sum-exp, so
    far-from-mean points cannot underflow to an all-zero posterior.
    """
    t = np.asarray(t, dtype=np.float64)
    if t.shape != (s.dim,):
        raise ValueError(f"point must have dimension {s.dim}, got {t.shape}")
    return np.exp(_naive_bayes_log_probs(s, t[None, :])[0])


def _naive_bayes_log_probs(s: ClassSurrogate, t: np.ndarray) -> np.ndarray:
    d = s.dim
    log_var = 2.0 * s.class_log_sigma
    diff = t[:, None, :] - s.class_means[None, :, :]
    quad = np.einsum("nkd,nkd->nk", diff, diff) * (0.5 * np.exp(-log_var))[None, :]
    with np.errstate(divide="ignore"):
        log_priors = np.log(s.priors)
    scores = -quad + (log_priors - 0.5 * d * (math.log(2.0 * math.pi) + log_var))[None, :]
    return scores - _logsumexp_rows(scores)[:, None]


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    mx = a.max(axis=1)
    return mx + np.log(np.exp(a - mx[:, None]).sum(axis=1))


def decode_softmax(head: "DecoderHead", t: np.ndarray) -> np.ndarray:
    """Class probabilities softmax(W t + b) of the parametric readout."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 1:
        raise ValueError("decode_softmax expects a single bottleneck point")
    return np.exp(head.log_probs(t[None, :])[0])


@dataclass
class DecoderHead:
    """Decoder q(y | t): either a softmax readout or a fitted naive Bayes rule.

    The naive Bayes variant references the surrogate parameters and owns no
    trainable parameters of its own.
    """

    variant: str
    store: ParamStore
    priors: np.ndarray
    bottleneck_dim: int

    def owned_param_names(self) -> list[str]:
        return ["head.W", "head.b"] if self.variant == "softmax" else []

    def _surrogate(self) -> ClassSurrogate:
        mu = self.store.get("sur.mu")
        if "sur.log_sigma" in self.store.names():
            ls = self.store.get("sur.log_sigma")
        else:
            ls = np.zeros(mu.shape[0])
        return ClassSurrogate(mu, ls, self.priors)

    def log_probs(self, t: np.ndarray) -> np.ndarray:
        """Normalized class log-probabilities for a (N, d) batch of points."""
        t = np.asarray(t, dtype=np.float64)
        if t.ndim != 2 or t.shape[1] != self.bottleneck_dim:
            raise ValueError(f"points must be (N, {self.bottleneck_dim}), got {t.shape}")
        if self.variant == "naive_bayes":
            return _naive_bayes_log_probs(self._surrogate(), t)
        scores = t @ self.store.get("head.W").T + self.store.get("head.b")
        return scores - _logsumexp_rows(scores)[:, None]

    def __call__(self, t: np.ndarray) -> np.ndarray:
        return self.log_probs(t)

    def scores_graph(self, tape: Tape, t: int) -> int:
        """Unnormalized class-score node for a (N, d) bottleneck node."""
        if self.variant == "softmax":
            return tape.affine(t, tape.param("head.W"), tape.param("head.b"), label="head")
        d = self.bottleneck_dim
        mu = tape.param("sur.mu")
        if "sur.log_sigma" in self.store.names():
            log_var = tape.scale(tape.param("sur.log_sigma"), 2.0)
        else:
            log_var = tape.const(np.zeros(len(self.priors)))
        quad = tape.mul_rows(
            tape.pairwise_sqdist(t, mu),
            tape.scale(tape.exp(tape.neg(log_var)), 0.5),
        )
        with np.errstate(divide="ignore"):
            log_priors = np.log(self.priors)
        offset = tape.add(
            tape.scale(log_var, -0.5 * d),
            tape.const(log_priors - 0.5 * d * math.log(2.0 * math.pi)),
        )
        return tape.add_rows(tape.neg(quad), offset)


@dataclass
class ModelState:
    """Everything a run owns: parameters, encoder, decoder head, priors."""

    config: dict
    store: ParamStore
    encoder: EncoderModel
    head: DecoderHead
    priors: np.ndarray

    @property
    def class_count(self) -> int:
        return self.priors.shape[0]

    def surrogate(self) -> ClassSurrogate:
        return self.head._surrogate()

    def surrogate_param_names(self) -> list[str]:
        names = ["sur.mu"]
        if "sur.log_sigma" in self.store.names():
            names.append("sur.log_sigma")
        return names

    def loss_graph(
        self, tape: Tape, x: np.ndarray, labels: np.ndarray, beta_prime: float, noise: np.ndarray
    ) -> tuple[int, int, int]:
        means = self.encoder.means_graph(tape, x)
        log_var = self.encoder.log_var_graph(tape)
        mu = tape.param("sur.mu")
        if "sur.log_sigma" in self.store.names():
            log_sigma = tape.param("sur.log_sigma")
        else:
            log_sigma = tape.const(np.zeros(self.class_count))
        return objectives.cib_loss_graph(
            tape, means, log_var, labels, self.head.scores_graph, mu, log_sigma, beta_prime, noise
        )


def build_state(config: dict, priors: np.ndarray, rng: np.random.Generator | None = None) -> ModelState:
    """Construct the parameter store and model objects for a configuration.

    With ``rng`` the weights get a fan-balanced uniform initialization and
    everything else starts at zero; without it all slices start at zero
    (checkpoint loading overwrites them).
    """
    cfg = data_io.validate_config(config)
    enc_cfg = cfg["encoder"]
    dims = enc_cfg["layer_dims"]
    priors = np.asarray(priors, dtype=np.float64)
    k = priors.shape[0]
    d = dims[-1]

    def glorot(shape):
        if rng is None:
            return np.zeros(shape)
        bound = math.sqrt(6.0 / (shape[0] + shape[1]))
        return rng.uniform(-bound, bound, size=shape)

    slices: list[tuple[str, np.ndarray]] = []
    for l in range(len(dims) - 1):
        slices.append((f"enc.W{l}", glorot((dims[l + 1], dims[l]))))
        slices.append((f"enc.b{l}", np.zeros(dims[l + 1])))
    if enc_cfg["noise_mode"] == "learned_eta":
        slices.append(("enc.log_eta2", np.zeros(())))
    slices.append(("sur.mu", np.zeros((k, d))))
    if cfg["surrogate"]["learn_sigma"]:
        slices.append(("sur.log_sigma", np.zeros(k)))
    if cfg["decoder"]["variant"] == "softmax":
        slices.append(("head.W", glorot((k, d))))
        slices.append(("head.b", np.zeros(k)))

    store = ParamStore(slices)
    encoder = EncoderModel(
        layer_dims=list(dims),
        activation=enc_cfg["activation"],
        noise_mode=enc_cfg["noise_mode"],
        sigma2=float(enc_cfg["sigma2"]),
        store=store,
    )
    head = DecoderHead(
        variant=cfg["decoder"]["variant"], store=store, priors=priors, bottleneck_dim=d
    )
    return ModelState(config=cfg, store=store, encoder=encoder, head=head, priors=priors)


def make_loss_fn(
    state: ModelState, x: np.ndarray, labels: np.ndarray, beta_prime: float, noise: np.ndarray
):
    """Loss closure over frozen data and noise, in the grad_check contract."""

    def lossfn(store: ParamStore):
        tape = Tape(store)
        total, _, _ = state.loss_graph(tape, x, labels, beta_prime, noise)
        return tape, total

    return lossfn


def _resolve_beta_prime(loss_cfg: dict) -> float:
    if "beta_prime" in loss_cfg:
        return float(loss_cfg["beta_prime"])
    return beta_to_beta_prime(float(loss_cfg["beta"]))


def _empirical_priors(train_ds: Dataset, extra: Dataset | None = None) -> np.ndarray:
    """Class frequencies; every class must appear in the train split."""
    counts = np.bincount(train_ds.labels, minlength=train_ds.class_count).astype(np.float64)
    if np.any(counts == 0):
        missing = int(np.flatnonzero(counts == 0)[0])
        raise ValueError(f"class {missing} has no samples in the train split")
    if extra is not None:
        counts += np.bincount(extra.labels, minlength=train_ds.class_count)
    return counts / counts.sum()


class _Adam:
    """Adaptive-moment update over the flat parameter vector."""

    def __init__(self, size: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def update(self, values: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class _Sgd:
    def __init__(self, size: int, lr: float):
        self.lr = lr

    def update(self, values: np.ndarray, grad: np.ndarray) -> None:
        values -= self.lr * grad


@dataclass(frozen=True)
class EvalResult:
    """Deterministic metrics of one model on one dataset."""

    accuracy: float
    cross_entropy: float
    kl_term: float
    bounds: estimators.BoundReport


@dataclass
class TrainResult:
    state: ModelState
    metrics: list[MetricsRow]
    beta_prime: float


@dataclass(frozen=True)
class TradeoffPoint:
    """One sweep entry: loss terms, accuracy, and information-plane bounds."""

    beta_prime: float
    ce_train: float
    kl_train: float
    ce_test: float
    kl_test: float
    acc_test: float
    ixt: float
    ixt_given_y: float

    def __post_init__(self):
        if not 0.0 <= self.acc_test <= 1.0:
            raise ValueError(f"accuracy must lie in [0, 1], got {self.acc_test}")
        if not (np.isfinite(self.ixt) and np.isfinite(self.ixt_given_y)):
            raise ValueError("information-plane bounds must be finite")

    def to_json_dict(self) -> dict:
        return {
            "beta_prime": self.beta_prime,
            "ce_train": self.ce_train,
            "kl_train": self.kl_train,
            "ce_test": self.ce_test,
            "kl_test": self.kl_test,
            "acc_test": self.acc_test,
            "ixt": self.ixt,
            "ixt_given_y": self.ixt_given_y,
        }


def evaluate(state: ModelState, ds: Dataset, sample_predictions: bool = False) -> EvalResult:
    """Accuracy, Monte-Carlo cross-entropy, exact KL term, and bound report.

    Predictions are made from the encoder *mean* (no latent sampling) unless
    ``sample_predictions`` is set, in which case one reparameterized draw from
    the fixed evaluation stream is classified instead.  The cross-entropy uses
    EVAL_MC_SAMPLES frozen draws, so the whole result is deterministic.
    """
    encoder = state.encoder
    if ds.dim != encoder.in_dim:
        raise ValueError(f"dataset dimension {ds.dim} does not match encoder input {encoder.in_dim}")
    if int(ds.labels.max()) >= state.class_count:
        raise ValueError("dataset labels exceed the model's class count")
    means = encoder.encode_batch(ds.features)
    log_var = encoder.log_var()
    d = encoder.bottleneck_dim

    rng = np.random.default_rng(EVAL_NOISE_SEED)
    noise = rng.standard_normal((EVAL_MC_SAMPLES, ds.count, d))

    points = means if not sample_predictions else means + math.exp(0.5 * log_var) * noise[0]
    predictions = np.argmax(state.head.log_probs(points), axis=1)
    accuracy = float(np.mean(predictions == ds.labels))

    encodings = [DiagGaussian(means[i], np.full(d, log_var)) for i in range(ds.count)]
    breakdown = objectives.cib_loss(
        ds.labels, encodings, state.head.log_probs, state.surrogate(),
        beta_prime=0.0, mc_samples=EVAL_MC_SAMPLES, noise=noise,
    )
    kl = breakdown.kl_term
    embedded = estimators.EmbeddedDataset(
        codes=means,
        labels=ds.labels,
        sigma2=encoder.sigma2,
        eta2=encoder.eta2(),
    )
    report = estimators.bound_report(embedded, estimators.MODE_CITED_SOURCE)
    return EvalResult(
        accuracy=accuracy, cross_entropy=breakdown.cross_entropy, kl_term=kl, bounds=report
    )


def _metrics_row(state: ModelState, ds: Dataset, beta_prime: float, step: int) -> MetricsRow:
    ev = evaluate(state, ds)
    return MetricsRow(
        step=step,
        cross_entropy=ev.cross_entropy,
        kl_term=ev.kl_term,
        beta_prime=beta_prime,
        total=ev.cross_entropy + beta_prime * ev.kl_term,
        accuracy=ev.accuracy,
    )


@np.errstate(over="ignore", invalid="ignore")
def _diagnose_nonfinite(
    state: ModelState, x: np.ndarray, labels: np.ndarray, noise: np.ndarray, batch_idx: np.ndarray
) -> int:
    """Dataset index of the first sample with a non-finite loss contribution."""
    means = state.encoder.encode_batch(x)
    std = math.exp(0.5 * state.encoder.log_var())
    rows = np.arange(x.shape[0])
    bad = ~np.isfinite(np.sum(means, axis=1))
    for s in range(noise.shape[0]):
        lp = state.head.log_probs(means + std * noise[s])[rows, labels]
        bad |= ~np.isfinite(lp)
    sur = state.surrogate()
    kl_bad = ~np.isfinite(
        np.array(
            [
                kl_to_surrogate(
                    DiagGaussian(means[i], np.full(means.shape[1], state.encoder.log_var())),
                    sur,
                    int(labels[i]),
                )
                for i in rows
            ]
        )
    )
    bad |= kl_bad
    first = int(np.flatnonzero(bad)[0]) if np.any(bad) else 0
    return int(batch_idx[first])


def _alternating_moment_step(state: ModelState, train: Dataset) -> None:
    """M-step: set each class surrogate to the moments of its current codes."""
    means = state.encoder.encode_batch(train.features)
    var = math.exp(state.encoder.log_var())
    mu = state.store.get("sur.mu")
    d = means.shape[1]
    for y in range(state.class_count):
        rows = means[train.labels == y]
        mu[y] = rows.mean(axis=0)
        if "sur.log_sigma" in state.store.names():
            sigma2_y = float(np.mean((rows - mu[y]) ** 2)) + var
            state.store.get("sur.log_sigma")[y] = 0.5 * math.log(sigma2_y)


def train(
    config: dict,
    train_ds: Dataset,
    test_ds: Dataset | None = None,
    shuffle_seed: int | None = None,
) -> TrainResult:
    """Minimize the bottleneck loss by stochastic gradient; fully seeded.

    Batches are drawn from a per-epoch shuffled order but processed in sorted
    index order, so a full-batch run is independent of the shuffle stream.
    ``shuffle_seed`` overrides that stream (the run seed keeps driving
    initialization and noise), which is how order-invariance is exercised.
    Metrics rows are full train-split evaluations logged at step 0, every
    ``optim.log_every`` steps, and at the final step.
    """
    cfg = data_io.validate_config(config)
    if cfg["encoder"]["layer_dims"][0] != train_ds.dim:
        raise ValueError(
            f"encoder expects inputs of dimension {cfg['encoder']['layer_dims'][0]}, "
            f"dataset has {train_ds.dim}"
        )
    use_all = cfg["surrogate"]["priors"] == "all" and test_ds is not None
    priors = _empirical_priors(train_ds, test_ds if use_all else None)
    beta_prime = _resolve_beta_prime(cfg["loss"])
    seed = cfg["seed"]

    rng_init = np.random.default_rng(derive_seed(seed, _INIT_STREAM))
    rng_shuffle = np.random.default_rng(
        derive_seed(seed, _SHUFFLE_STREAM) if shuffle_seed is None else shuffle_seed
    )
    rng_noise = np.random.default_rng(derive_seed(seed, _NOISE_STREAM))

    state = build_state(cfg, priors, rng_init)
    opt_cfg = cfg["optim"]
    if opt_cfg["kind"] == "adam":
        opt = _Adam(state.store.size, float(opt_cfg["lr"]))
    else:
        opt = _Sgd(state.store.size, float(opt_cfg["lr"]))

    n = train_ds.count
    batch = min(int(opt_cfg["batch"]), n)
    steps = int(opt_cfg["steps"])
    log_every = int(opt_cfg["log_every"])
    mc_samples = int(cfg["loss"]["mc_samples"])
    alternating = cfg["surrogate"]["update"] == "alternating"
    d = state.encoder.bottleneck_dim

    if alternating:
        _alternating_moment_step(state, train_ds)

    sur_slices = [state.store.spec(name) for name in state.surrogate_param_names()]
    metrics: list[MetricsRow] = [_metrics_row(state, train_ds, beta_prime, 0)]
    order = np.empty(0, dtype=np.intp)
    pos = 0
    for step in range(1, steps + 1):
        if pos + batch > order.size:
            order = rng_shuffle.permutation(n)
            pos = 0
        idx = np.sort(order[pos : pos + batch])
        pos += batch
        noise = rng_noise.standard_normal((mc_samples, idx.size, d))

        tape = Tape(state.store)
        total, ce, kl = state.loss_graph(
            tape, train_ds.features[idx], train_ds.labels[idx], beta_prime, noise
        )
        if not np.isfinite(float(tape.val(total))):
            sample = _diagnose_nonfinite(
                state, train_ds.features[idx], train_ds.labels[idx], noise, idx
            )
            raise NonFiniteLossError(
                f"non-finite loss at step {step} (train sample {sample})",
                step=step,
                sample_index=sample,
            )
        grad = tape.backward(total)
        if alternating:
            for spec in sur_slices:
                grad[spec.offset : spec.offset + spec.size] = 0.0
        opt.update(state.store.values, grad)
        if alternating:
            _alternating_moment_step(state, train_ds)

        if step % log_every == 0 or step == steps:
            metrics.append(_metrics_row(state, train_ds, beta_prime, step))

    return TrainResult(state=state, metrics=metrics, beta_prime=beta_prime)


def sweep(config: dict, beta_primes: Sequence[float]) -> list[TradeoffPoint]:
    """Independent runs over the beta' grid; one TradeoffPoint per value.

    Each point derives its own run seed from (config seed, point index), so a
    grid entry is reproducible in isolation.
    """
    if len(beta_primes) == 0:
        raise ValueError("beta_prime list must be non-empty")
    return [run_sweep_point(config, i, bp)[0] for i, bp in enumerate(beta_primes)]


def run_sweep_point(config: dict, index: int, beta_prime: float) -> tuple[TradeoffPoint, TrainResult, Dataset]:
    """Train and evaluate one sweep entry; returns (point, run, test split)."""
    if beta_prime < 0.0:
        raise ValueError(f"beta_prime must be nonnegative, got {beta_prime}")
    cfg = data_io.validate_config(config)
    cfg["loss"] = {k: v for k, v in cfg["loss"].items() if k not in ("beta", "beta_prime")}
    cfg["loss"]["beta_prime"] = float(beta_prime)
    cfg["seed"] = derive_seed(int(config["seed"]), index)
    train_ds, test_ds = data_io.dataset_from_config(cfg["dataset"])
    run = train(cfg, train_ds, test_ds)
    ev_train = evaluate(run.state, train_ds)
    ev_test = evaluate(run.state, test_ds)
    point = TradeoffPoint(
        beta_prime=float(beta_prime),
        ce_train=ev_train.cross_entropy,
        kl_train=ev_train.kl_term,
        ce_test=ev_test.cross_entropy,
        kl_test=ev_test.kl_term,
        acc_test=ev_test.accuracy,
        ixt=ev_test.bounds.unconditional,
        ixt_given_y=ev_test.bounds.aggregate,
    )
    return point, run, test_ds
