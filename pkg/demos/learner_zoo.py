"""The four learners on the same stream and coreset, with the per-task accuracy matrix.

Run: python demos/learner_zoo.py
"""

from dietcl.coreset import CoresetSpec
from dietcl.learners import KINDS, LearnerConfig
from dietcl.protocol import ProtocolConfig, RunConfig, make_stream, run_stream

for kind in KINDS:
    cfg = RunConfig(learner=LearnerConfig(kind=kind), protocol=ProtocolConfig(e=20),
                    coreset=CoresetSpec(method="herding", fraction=0.2))
    rec = run_stream(make_stream(cfg.dataset), cfg)
    print(f"== {kind}: ACC {rec.acc:.3f}  BWT {rec.bwt:+.3f}")
    for t, row in enumerate(rec.matrix.rows, start=1):
        print(f"   after task {t}: " + " ".join(f"{a:.2f}" for a in row))
