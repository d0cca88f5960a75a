"""Batch command-line surface for experiments and verification runs.

Exit codes: 0 on success, 1 on validation errors (bad flags, missing or
malformed files), 2 on numerical failures (non-finite training loss, a
failed identity check, a failed gradient check).  With ``--json`` every
command prints exactly one JSON document on stdout and nothing else.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import data_io, discrete_oracle, estimators, model
from .data_io import ConfigError
from .diffcore import NonFiniteError, grad_check
from .model import NonFiniteLossError

__all__ = ["run", "main"]

REPORT_HEADER = "beta_prime,ce_test,kl_test,acc_test,ixt,ixt_given_y"


class _CliError(Exception):
    """Validation problem: bad usage, bad paths, malformed inputs."""


class _NumericalFailure(Exception):
    """The command ran, but a mathematical check failed."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _CliError(f"{self.prog}: {message}")


def _require_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise _CliError(f"no such file: {path}")
    return p


def _prepare_dir(path: str) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _emit(doc: dict, human_lines: list[str], json_mode: bool) -> None:
    if json_mode:
        print(json.dumps(doc, sort_keys=True, indent=1))
    else:
        for line in human_lines:
            print(line)


# ------------------------------------------------------------------ commands


def _cmd_gen_data(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    spec = data_io.GmmSpec(
        class_count=args.classes,
        dim=args.dim,
        sep=args.sep,
        per_class=args.per_class,
        seed=args.seed,
    )
    ds = data_io.gen_gmm(spec)
    data_io.save_dataset(ds, out)
    doc = {
        "out": str(out),
        "count": ds.count,
        "dim": ds.dim,
        "class_count": ds.class_count,
        "bayes_error": ds.provenance.get("bayes_error"),
    }
    _emit(doc, [f"wrote {ds.count} samples ({ds.class_count} classes, dim {ds.dim}) to {out}"], args.json)
    return 0


def _write_run_dir(out: Path, run: model.TrainResult, point: model.TradeoffPoint) -> None:
    data_io.save_checkpoint(
        run.state, run.state.surrogate(), run.state.head, run.state.config, out / "checkpoint.json"
    )
    data_io.write_metrics(run.metrics, out / "metrics.csv")
    (out / "point.json").write_text(
        json.dumps(point.to_json_dict(), sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )


def _point_from_run(run: model.TrainResult, train_ds, test_ds) -> model.TradeoffPoint:
    ev_train = model.evaluate(run.state, train_ds)
    ev_test = model.evaluate(run.state, test_ds)
    return model.TradeoffPoint(
        beta_prime=run.beta_prime,
        ce_train=ev_train.cross_entropy,
        kl_train=ev_train.kl_term,
        ce_test=ev_test.cross_entropy,
        kl_test=ev_test.kl_term,
        acc_test=ev_test.accuracy,
        ixt=ev_test.bounds.unconditional,
        ixt_given_y=ev_test.bounds.aggregate,
    )


def _cmd_train(args) -> int:
    cfg_path = _require_file(args.config)
    cfg = data_io.load_config(cfg_path)
    out = _prepare_dir(args.out)
    train_ds, test_ds = data_io.dataset_from_config(cfg["dataset"])
    run = model.train(cfg, train_ds, test_ds)
    point = _point_from_run(run, train_ds, test_ds)
    _write_run_dir(out, run, point)
    final = run.metrics[-1]
    doc = {"out": str(out), "final_step": final.step, "point": point.to_json_dict()}
    _emit(
        doc,
        [
            f"trained {final.step} steps -> {out}",
            f"test accuracy {point.acc_test:.4f}  ce {point.ce_test:.4f}  kl {point.kl_test:.4f}",
            f"I(X;T) <= {point.ixt:.4f}   I(X;T|Y) <= {point.ixt_given_y:.4f}",
        ],
        args.json,
    )
    return 0


def _sweep_worker(payload) -> dict:
    cfg, index, beta_prime, dir_str = payload
    point, run, _ = model.run_sweep_point(cfg, index, beta_prime)
    _write_run_dir(Path(dir_str), run, point)
    return point.to_json_dict()


def _write_report_csv(points: list[dict], path: Path) -> None:
    lines = [REPORT_HEADER]
    for p in sorted(points, key=lambda q: q["beta_prime"]):
        lines.append(
            ",".join(
                repr(float(p[k]))
                for k in ("beta_prime", "ce_test", "kl_test", "acc_test", "ixt", "ixt_given_y")
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cmd_sweep(args) -> int:
    cfg_path = _require_file(args.config)
    cfg = data_io.load_config(cfg_path)
    try:
        betas = [float(tok) for tok in args.betas.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise _CliError(f"--betas must be a comma-separated list of numbers: {exc}") from exc
    if not betas:
        raise _CliError("--betas must list at least one value")
    if any(b < 0.0 for b in betas):
        raise _CliError("beta' values must be nonnegative")
    if args.jobs < 1:
        raise _CliError("--jobs must be at least 1")
    out = _prepare_dir(args.out)
    dirs = [_prepare_dir(out / f"point_{i:03d}") for i in range(len(betas))]
    payloads = [(cfg, i, bp, str(dirs[i])) for i, bp in enumerate(betas)]
    if args.jobs == 1:
        points = [_sweep_worker(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            points = list(pool.map(_sweep_worker, payloads))
    _write_report_csv(points, out / "sweep.csv")
    doc = {"out": str(out), "points": points}
    lines = [f"swept {len(betas)} points -> {out}", REPORT_HEADER]
    for p in points:
        lines.append(
            f"{p['beta_prime']},{p['ce_test']:.6f},{p['kl_test']:.6f},"
            f"{p['acc_test']:.4f},{p['ixt']:.6f},{p['ixt_given_y']:.6f}"
        )
    _emit(doc, lines, args.json)
    return 0


def _cmd_estimate(args) -> int:
    ckpt_path = _require_file(args.checkpoint)
    data_path = _require_file(args.data)
    encoder, surrogate, head, config = data_io.load_checkpoint(ckpt_path)
    ds = data_io.load_dataset(data_path)
    codes = encoder.encode_batch(ds.features)
    embedded = estimators.EmbeddedDataset(
        codes=codes, labels=ds.labels, sigma2=encoder.sigma2, eta2=encoder.eta2()
    )
    report = estimators.bound_report(
        embedded,
        mode=args.mode,
        printed_outer_normalization=args.printed_normalization,
        printed_count_weights=args.printed_weights,
    )
    doc = report.to_json_dict()
    lines = [
        f"mode {report.mode}: I(X;T) <= {report.unconditional:.6f}, I(X;T|Y) <= {report.aggregate:.6f}",
        "label,count,value",
    ]
    for entry in doc["per_class"]:
        lines.append(f"{entry['label']},{entry['count']},{entry['value']:.6f}")
    _emit(doc, lines, args.json)
    return 0


def _cmd_gradcheck(args) -> int:
    try:
        dims = [int(tok) for tok in args.layers.split(",")]
    except ValueError as exc:
        raise _CliError(f"--layers must be a comma-separated list of ints: {exc}") from exc
    if len(dims) < 2:
        raise _CliError("--layers needs at least input and bottleneck sizes")
    heads = ["softmax", "naive_bayes"] if args.head == "both" else [args.head]
    rng = np.random.default_rng(args.seed)
    x = rng.uniform(-2.0, 2.0, size=(args.batch, dims[0]))
    labels = rng.integers(0, args.classes, size=args.batch)
    results = {}
    worst = 0.0
    for head in heads:
        cfg = {
            "dataset": {"kind": "gmm", "classes": args.classes, "dim": dims[0],
                        "per_class": 1, "sep": 1.0, "seed": 0},
            "encoder": {"layer_dims": dims, "activation": args.activation,
                        "noise_mode": args.noise_mode, "sigma2": args.sigma2},
            "decoder": {"variant": head},
            "loss": {"beta_prime": args.beta_prime, "mc_samples": args.mc_samples},
            "seed": args.seed,
        }
        priors = np.full(args.classes, 1.0 / args.classes)
        state = model.build_state(cfg, priors, rng)
        noise = rng.standard_normal((args.mc_samples, args.batch, dims[-1]))
        lossfn = model.make_loss_fn(state, x, labels, args.beta_prime, noise)
        report = grad_check(lossfn, state.store, eps=args.eps, tol=args.tol)
        results[head] = {
            "max_rel_error": report.max_rel_error,
            "worst_slice": report.worst_name,
            "passed": report.passed,
        }
        worst = max(worst, report.max_rel_error)
    all_passed = all(r["passed"] for r in results.values())
    doc = {"tol": args.tol, "eps": args.eps, "heads": results, "passed": all_passed}
    lines = [
        f"{head}: max rel error {r['max_rel_error']:.3e} (worst slice {r['worst_slice']}) "
        f"{'pass' if r['passed'] else 'FAIL'}"
        for head, r in results.items()
    ]
    _emit(doc, lines, args.json)
    if not all_passed:
        raise _NumericalFailure(f"gradient check failed: max rel error {worst:.3e} >= tol {args.tol}")
    return 0


def _cmd_oracle(args) -> int:
    inst_path = _require_file(args.instance)
    try:
        doc = json.loads(inst_path.read_text(encoding="utf-8"))
        joint = discrete_oracle.DiscreteJoint(np.asarray(doc["p"], dtype=np.float64))
        enc = discrete_oracle.DiscreteEncoder(
            np.asarray(doc["q"], dtype=np.float64), tuple(doc["arities"])
        )
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise _CliError(f"{inst_path}: bad oracle instance: {exc}") from exc

    rep = discrete_oracle.info_report(joint, enc)
    ind = discrete_oracle.induced(joint, enc)
    verdicts: dict[str, bool] = {}
    verdicts["chain_rule"] = abs(rep.chain_rule_gap()) < 1e-12
    quantities = [rep.H_Y, rep.H_Y_given_T, rep.I_XT, rep.I_YT, rep.I_XT_given_Y, rep.I_XY_given_T]
    verdicts["nonnegativity"] = all(q >= -1e-12 for q in quantities)

    p_y = joint.p.sum(axis=0)
    if np.any(p_y == 0.0):
        raise _CliError(f"{inst_path}: every class needs positive probability")
    best = discrete_oracle.optimal_product_surrogate(ind.t_given_y, enc.arities)
    decomp = discrete_oracle.decomposition_check(joint, enc, best)
    expected_residual = float(np.sum(p_y * rep.TC_given_y))
    verdicts["decomposition"] = (
        abs(decomp.gap) < 1e-12 and abs(decomp.kl_residual - expected_residual) < 1e-12
    )
    if "samples" in doc:
        samples = [(int(x), int(y)) for x, y in doc["samples"]]
        opt = discrete_oracle.surrogate_optimality_check(samples, enc)
        verdicts["surrogate_optimality"] = abs(opt.gap) < 1e-10

    out_doc = {
        "report": {
            "H_Y": rep.H_Y,
            "H_Y_given_T": rep.H_Y_given_T,
            "I_XT": rep.I_XT,
            "I_YT": rep.I_YT,
            "I_XT_given_Y": rep.I_XT_given_Y,
            "I_XY_given_T": rep.I_XY_given_T,
            "TC_given_y": rep.TC_given_y.tolist(),
        },
        "verdicts": {k: ("pass" if v else "fail") for k, v in verdicts.items()},
    }
    lines = [f"I(X;T)={rep.I_XT:.6f}  I(X;T|Y)={rep.I_XT_given_Y:.6f}  I(Y;T)={rep.I_YT:.6f}"]
    lines += [f"{name}: {'pass' if ok else 'fail'}" for name, ok in verdicts.items()]
    _emit(out_doc, lines, args.json)
    if not all(verdicts.values()):
        failed = [name for name, ok in verdicts.items() if not ok]
        raise _NumericalFailure(f"oracle checks failed: {', '.join(failed)}")
    return 0


def _cmd_report(args) -> int:
    missing: list[str] = []
    points: list[dict] = []
    for run_dir in args.runs:
        rd = Path(run_dir)
        absent = [
            name
            for name in ("checkpoint.json", "metrics.csv", "point.json")
            if not (rd / name).is_file()
        ]
        if absent:
            missing.append(f"{run_dir}: missing {', '.join(absent)}")
            continue
        points.append(json.loads((rd / "point.json").read_text(encoding="utf-8")))
    if missing:
        raise _CliError("incomplete run directories:\n  " + "\n  ".join(missing))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_report_csv(points, out)
    doc = {"out": str(out), "rows": len(points)}
    _emit(doc, [f"wrote {len(points)} rows to {out}"], args.json)
    return 0


# ------------------------------------------------------------------ parser


def _build_parser() -> _Parser:
    parser = _Parser(prog="cib", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="synthesize a dataset file")
    p.add_argument("--kind", choices=["gmm"], default="gmm")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--sep", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train one run from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sweep", help="independent runs over a beta' grid")
    p.add_argument("--config", required=True)
    p.add_argument("--betas", required=True, help="comma-separated beta' values")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("estimate", help="information bounds of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=[estimators.MODE_CITED_SOURCE, estimators.MODE_AS_PRINTED],
                   default=estimators.MODE_CITED_SOURCE)
    p.add_argument("--printed-normalization", action="store_true",
                   help="divide restricted sums by the full dataset size")
    p.add_argument("--printed-weights", action="store_true",
                   help="aggregate classes with absolute counts")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("gradcheck", help="central-difference check of the full loss gradient")
    p.add_argument("--layers", default="2,2,2")
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--head", choices=["softmax", "naive_bayes", "both"], default="both")
    p.add_argument("--activation", choices=["relu", "softplus", "tanh"], default="softplus")
    p.add_argument("--noise-mode", choices=["fixed_sigma", "learned_eta"], default="fixed_sigma")
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--beta-prime", type=float, default=1.0)
    p.add_argument("--mc-samples", type=int, default=1)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("oracle", help="exact identity checks on a discrete instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("report", help="aggregate run directories into a trade-off CSV")
    p.add_argument("--runs", nargs="*", default=[])
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_report)

    return parser


def run(argv: list[str]) -> int:
    """Parse and execute one command; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, data_io.IdxFormatError, data_io.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (_NumericalFailure, NonFiniteLossError, NonFiniteError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
