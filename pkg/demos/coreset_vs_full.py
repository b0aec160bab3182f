"""ER and iCaRL trained on a 20% GraphCut coreset vs the full task data, over three seeds.

Run: python demos/coreset_vs_full.py   (about 10 s)
"""

import statistics

from dietcl.coreset import CoresetSpec
from dietcl.learners import LearnerConfig
from dietcl.protocol import DatasetConfig, ProtocolConfig, RunConfig, make_stream, run_stream

for kind in ("er", "icarl"):
    for spec in (CoresetSpec(method="graphcut", fraction=0.2), CoresetSpec(method="full")):
        accs, bwts = [], []
        for seed in (0, 1, 2):
            cfg = RunConfig(learner=LearnerConfig(kind=kind), dataset=DatasetConfig(seed=seed),
                            protocol=ProtocolConfig(e=30, seed=seed), coreset=spec)
            rec = run_stream(make_stream(cfg.dataset), cfg)
            accs.append(100 * rec.acc)
            bwts.append(100 * rec.bwt)
        label = "full" if spec.is_full else f"{spec.method}@{spec.fraction}"
        print(f"{kind:6s} {label:13s} ACC {statistics.fmean(accs):6.2f} ± {statistics.stdev(accs):.2f}"
              f"   BWT {statistics.fmean(bwts):7.2f} ± {statistics.stdev(bwts):.2f}")
