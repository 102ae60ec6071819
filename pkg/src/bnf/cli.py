"""Command-line entry point ``bnf``.

Exit status: 0 on success, 1 on invalid input or usage, 2 on numerical
failure (solver non-convergence, training divergence, isolated pixels) or a
failed benchmark check.
"""

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .affinity import AffinityConfig, build_graph
from .bench import BenchConfig, run_bench
from .boundary import (
    BoundaryWeights,
    TrainingDivergedError,
    balanced_sample,
    nms_thin,
    predict_boundary,
    train_boundary,
)
from .config import ConfigError, load_config, resolve
from .core import BoundaryMap, LabelMap, Tensor3, UnaryField, tensor_read, tensor_write
from .metrics import evaluate_corpus
from .solver import ConvergenceError, SolveConfig, ZeroDegreeError, closed_form_solve
from .synth import SceneSpec, generate_scene

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _emit(payload, path=None):
    text = json.dumps(payload, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


def _affinity_cfg(c, use_softmax=True):
    return AffinityConfig(
        sigma_sb=c["sigma_sb"],
        sigma_sm=c["sigma_sm"],
        radius=c["radius"],
        sample_fraction=c["fraction"],
        seed=c["seed"],
        use_softmax_term=use_softmax and c["softmax_term"],
    )


def _solve_cfg(c):
    return SolveConfig(
        mu=c["mu"],
        pcg_tol=c["pcg_tol"],
        pcg_max_iter=c["pcg_max_iter"] or None,
        ridge=c["ridge"],
        threads=c["threads"],
    )


# --- subcommands -----------------------------------------------------------


def cmd_synth(args, c):
    spec = SceneSpec(
        height=args.height, width=args.width, K=args.classes, shapes=args.shapes,
        noise_sigma=args.noise, blur_radius=args.blur, channels=args.channels, seed=c["seed"],
    )
    scene = generate_scene(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensor_write(scene.truth.to_tensor(), out / "truth.bnft")
    tensor_write(scene.boundary.to_tensor(), out / "boundary.bnft")
    tensor_write(scene.unary.to_tensor(), out / "unary.bnft")
    tensor_write(scene.stack, out / "stack.bnft")
    tensor_write(scene.planted_weights.to_tensor(), out / "weights.bnft")
    _emit({"out_dir": str(out), "height": spec.height, "width": spec.width, "classes": spec.K,
           "channels": spec.channels, "seed": spec.seed})


def cmd_train_boundary(args, c):
    stack = tensor_read(args.stack)
    truth = BoundaryMap.from_tensor(tensor_read(args.truth))
    samples = balanced_sample(truth, stack, c["samples"], seed=c["seed"])
    w = train_boundary(samples, epochs=c["epochs"], lr=c["lr"], batch=c["batch"], seed=c["seed"],
                       fit_bias=c["fit_bias"])
    tensor_write(w.to_tensor(), args.out)
    _emit({"weights": args.out, "initial_loss": w.loss_history[0], "final_loss": w.loss_history[-1],
           "epochs": c["epochs"], "samples": len(samples), "quartile_counts": list(samples.quartile_counts),
           "skipped_quartiles": samples.skipped_quartiles})


def cmd_predict_boundary(args, c):
    stack = tensor_read(args.stack)
    w = BoundaryWeights.from_tensor(tensor_read(args.weights))
    b = predict_boundary(stack, w, args.height or stack.height, args.width or stack.width)
    if args.nms:
        b = nms_thin(b)
    tensor_write(b.to_tensor(), args.out)
    _emit({"boundary": args.out, "height": b.height, "width": b.width, "thinned": b.thinned})


def cmd_nms(args, c):
    b = nms_thin(BoundaryMap.from_tensor(tensor_read(args.boundary)))
    tensor_write(b.to_tensor(), args.out)
    _emit({"boundary": args.out, "nonzero": int(np.count_nonzero(b.values))})


def _load_inputs(args):
    b = BoundaryMap.from_tensor(tensor_read(args.boundary))
    u = UnaryField.from_tensor(tensor_read(args.unary)) if getattr(args, "unary", None) else None
    return b, u


def cmd_affinity(args, c):
    b, u = _load_inputs(args)
    g = build_graph(b, u, _affinity_cfg(c))
    g.dump(args.out)
    if args.stats:
        _emit(g.stats())


def cmd_infer(args, c):
    t0 = time.perf_counter()
    b, u = _load_inputs(args)
    g = build_graph(b, u, _affinity_cfg(c))
    sol = closed_form_solve(g, u, _solve_cfg(c))
    tensor_write(sol.labels.to_tensor(), args.out_labels)
    if args.out_z:
        z = sol.Z.T.reshape(u.num_classes, u.height, u.width)
        tensor_write(Tensor3(z), args.out_z)
    report = {
        "iterations": list(sol.iterations),
        "residuals": list(sol.residuals),
        "energies": list(sol.energies),
        "graph": g.stats(),
        "wall_time": time.perf_counter() - t0,
    }
    if args.report:
        _emit(report, args.report)


def cmd_eval(args, c):
    pred_dir, truth_dir = Path(args.pred_dir), Path(args.truth_dir)
    names = sorted(p.name for p in truth_dir.glob("*.bnft"))
    missing = [n for n in names if not (pred_dir / n).exists()]
    if not names:
        raise ValueError(f"no .bnft files in {truth_dir}")
    if missing:
        raise ValueError(f"predictions missing for {missing}")
    pairs = [
        (LabelMap.from_tensor(tensor_read(pred_dir / n), args.classes),
         LabelMap.from_tensor(tensor_read(truth_dir / n), args.classes))
        for n in names
    ]
    _emit(evaluate_corpus(pairs, strict=args.strict).to_dict(), args.out)


def cmd_bench(args, c):
    cfg = BenchConfig(scenes=args.scenes, samples=min(c["samples"], args.train_samples), epochs=c["epochs"],
                      lr=c["lr"], batch=c["batch"], icm_sweeps=c["icm_sweeps"], seed=c["seed"])
    scene = SceneSpec(height=args.height, width=args.width, K=args.classes, shapes=args.shapes,
                      noise_sigma=args.noise, blur_radius=args.blur, channels=args.channels)
    report = run_bench(cfg, scene, replace(_affinity_cfg(c), seed=c["seed"]), _solve_cfg(c))
    pp = report["pp_iou"]
    report["bnf_beats_argmax"] = pp["bnf"] >= pp["argmax"]
    _emit(report, args.report)
    if args.report:
        print(json.dumps({"pp_iou": pp, "bnf_beats_argmax": report["bnf_beats_argmax"]}))
    return EXIT_OK if report["bnf_beats_argmax"] else EXIT_NUMERIC


# --- parser ----------------------------------------------------------------


def _add_common(p, *keys):
    flags = {
        "mu": dict(type=float, help="unary/pairwise balance (default 0.025)"),
        "sigma_sb": dict(type=float, help="boundary affinity scale"),
        "sigma_sm": dict(type=float, help="softmax affinity scale"),
        "radius": dict(type=int, help="neighbourhood radius in pixels"),
        "fraction": dict(type=float, help="fraction of the neighbourhood sampled per pixel"),
        "pcg_tol": dict(type=float, help="relative residual tolerance"),
        "pcg_max_iter": dict(type=int, help="PCG iteration cap (0: 10*sqrt(n))"),
        "ridge": dict(type=float, help="diagonal regularization"),
        "epochs": dict(type=int),
        "lr": dict(type=float),
        "batch": dict(type=int),
        "samples": dict(type=int, help="training points drawn from the truth map"),
        "icm_sweeps": dict(type=int),
        "seed": dict(type=int),
    }
    for key in keys:
        p.add_argument("--" + key.replace("_", "-"), dest=key, default=None, **flags[key])


def build_parser():
    parser = _Parser(prog="bnf", description="Boundary neural field segmentation toolkit")
    parser.add_argument("--version", action="version", version=f"bnf {__version__} (BNFT v1)")
    parser.add_argument("--config", help="flat key = value file; flags override it")
    parser.add_argument("--threads", type=int, default=None, help="worker cap for per-class solves (0: auto)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--shapes", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.25)
    p.add_argument("--blur", type=int, default=3)
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--out-dir", required=True)
    _add_common(p, "seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-boundary", help="fit boundary readout weights")
    p.add_argument("--stack", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-bias", dest="fit_bias", action="store_const", const=False, default=None)
    _add_common(p, "epochs", "lr", "batch", "samples", "seed")
    p.set_defaults(func=cmd_train_boundary)

    p = sub.add_parser("predict-boundary", help="apply boundary weights to a feature stack")
    p.add_argument("--stack", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--nms", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict_boundary)

    p = sub.add_parser("nms", help="thin a boundary map")
    p.add_argument("--boundary", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_nms)

    p = sub.add_parser("affinity", help="build and dump the affinity graph")
    p.add_argument("--boundary", required=True)
    p.add_argument("--unary")
    p.add_argument("--out", required=True)
    p.add_argument("--stats", action="store_true")
    p.add_argument("--no-softmax", dest="softmax_term", action="store_const", const=False, default=None)
    _add_common(p, "radius", "fraction", "sigma_sb", "sigma_sm", "seed")
    p.set_defaults(func=cmd_affinity)

    p = sub.add_parser("infer", help="global inference from unaries and boundaries")
    p.add_argument("--unary", required=True)
    p.add_argument("--boundary", required=True)
    p.add_argument("--out-labels", required=True)
    p.add_argument("--out-z")
    p.add_argument("--report")
    p.add_argument("--no-softmax", dest="softmax_term", action="store_const", const=False, default=None)
    _add_common(p, "mu", "sigma_sb", "sigma_sm", "radius", "fraction", "pcg_tol", "pcg_max_iter", "ridge", "seed")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="PP-IOU / PI-IOU over a directory of label maps")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--truth-dir", required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--out")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="argmax vs ICM vs BNF on a synthetic corpus")
    p.add_argument("--scenes", type=int, default=20)
    p.add_argument("--train-samples", type=int, default=8000)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--shapes", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.25)
    p.add_argument("--blur", type=int, default=3)
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--report")
    _add_common(p, "mu", "sigma_sb", "sigma_sm", "radius", "fraction", "pcg_tol", "epochs", "lr", "batch",
                "samples", "icm_sweeps", "seed")
    p.set_defaults(func=cmd_bench)
    return parser


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        file_values = load_config(args.config) if args.config else {}
        c = resolve(file_values, vars(args))
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, OSError) as exc:
        print(f"bnf: config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        code = args.func(args, c)
    except (ConvergenceError, TrainingDivergedError, ZeroDegreeError) as exc:
        print(f"bnf {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError, IndexError) as exc:
        print(f"bnf {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK if code is None else code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
