"""Synthetic benchmark: unary argmax vs ICM vs boundary-field inference.

A boundary readout is trained on held-out scenes, then every test scene is
labelled three ways from the same unaries and the same affinity graph.
"""

import time
from dataclasses import asdict, dataclass, replace

from .affinity import AffinityConfig, build_graph
from .boundary import balanced_sample, predict_boundary, train_boundary
from .metrics import evaluate_corpus
from .solver import SolveConfig, closed_form_solve, icm_baseline
from .synth import SceneSpec, generate_scene


@dataclass(frozen=True)
class BenchConfig:
    scenes: int = 20
    train_scenes: int = 2
    samples: int = 8000
    epochs: int = 50
    lr: float = 0.05
    batch: int = 256
    icm_sweeps: int = 10
    seed: int = 0


def run_bench(cfg=BenchConfig(), scene=SceneSpec(), affinity=AffinityConfig(), solve=SolveConfig()):
    t0 = time.perf_counter()
    base = cfg.seed * 1_000_003

    train = None
    for s in range(cfg.train_scenes):
        sc = generate_scene(replace(scene, seed=base + 500_000 + s))
        part = balanced_sample(sc.boundary, sc.stack, cfg.samples, seed=base + s)
        train = part if train is None else train.concat(part)
    weights = train_boundary(train, epochs=cfg.epochs, lr=cfg.lr, batch=cfg.batch, seed=cfg.seed)

    runs = {"argmax": [], "icm": [], "bnf": []}
    iterations = []
    for s in range(cfg.scenes):
        sc = generate_scene(replace(scene, seed=base + s))
        b = predict_boundary(sc.stack, weights, sc.truth.height, sc.truth.width)
        g = build_graph(b, sc.unary, replace(affinity, seed=affinity.seed + s))
        sol = closed_form_solve(g, sc.unary, solve)
        iterations.append(list(sol.iterations))
        runs["argmax"].append((sc.unary.argmax(), sc.truth))
        runs["icm"].append((icm_baseline(g, sc.unary, cfg.icm_sweeps), sc.truth))
        runs["bnf"].append((sol.labels, sc.truth))

    report = {name: evaluate_corpus(pairs).to_dict() for name, pairs in runs.items()}
    return {
        "config": asdict(cfg),
        "scene": asdict(scene),
        "affinity": asdict(affinity),
        "solve": asdict(solve),
        "methods": report,
        "pp_iou": {name: r["pp_iou"] for name, r in report.items()},
        "pi_iou": {name: r["pi_iou"] for name, r in report.items()},
        "pcg_iterations": iterations,
        "boundary_train_loss": [weights.loss_history[0], weights.loss_history[-1]],
        "seconds": time.perf_counter() - t0,
    }
