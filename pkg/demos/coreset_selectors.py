"""Run every selector on one warmed-up task and check greedy against brute force.

Run: python demos/coreset_selectors.py
"""

import numpy as np

from dietcl.commands import oracle_report, parse_instance, toy_instance_path
from dietcl.coreset import METHODS, CoresetSpec
from dietcl.learners import LearnerConfig, make_learner
from dietcl.protocol import DatasetConfig, ProtocolConfig, RunConfig, make_stream, run_task

cfg = RunConfig(learner=LearnerConfig(kind="er"), dataset=DatasetConfig(num_tasks=1, train_per_class=50),
                protocol=ProtocolConfig(e=20, alpha=0.5))
task = make_stream(cfg.dataset)[0]

for method in METHODS:
    run = RunConfig(learner=cfg.learner, dataset=cfg.dataset, protocol=cfg.protocol,
                    coreset=CoresetSpec(method=method, fraction=0.1))
    learner = make_learner(run.learner, task.train.x.shape[1], np.random.default_rng(0))
    learner.begin_task(task)
    chosen, stats = run_task(learner, task, run, np.random.default_rng(1))
    print(f"{method:12s} quotas {chosen.quotas}  ids {task.train.ids[list(chosen.indices)].tolist()}")

# warm-up statistics the selectors saw (from the last run)
print("forgetting history shape", stats.history.shape, "embedding dim", stats.embeddings.shape[1])

print()
print(oracle_report(parse_instance(toy_instance_path().read_text()))[0], end="")
