"""LwF diagnostics: weight change of the old-class head between tasks, PCA of the
final embeddings and input saliency, for GraphCut vs Random coresets.

Run: python demos/lwf_probes.py
"""

from dietcl.coreset import CoresetSpec
from dietcl.learners import LearnerConfig
from dietcl.protocol import ProtocolConfig, RunConfig, make_stream, run_stream

for method in ("graphcut", "random"):
    cfg = RunConfig(learner=LearnerConfig(kind="lwf"), protocol=ProtocolConfig(e=30),
                    coreset=CoresetSpec(method=method, fraction=0.2))
    rec = run_stream(make_stream(cfg.dataset), cfg)
    deltas = " ".join(f"{d['delta']:.3f}" for d in rec.weight_deltas)
    pca = rec.diagnostics["pca"]
    print(f"{method:8s} ACC {rec.acc:.3f}  head deltas {deltas}")
    print(f"         PCA explained {[round(r, 3) for r in pca['explained_ratio']]}, {len(pca['points'])} points")
    top = rec.diagnostics["saliency"][0]
    print(f"         saliency of sample {top['sample_id']}: max |g| {max(abs(v) for v in top['saliency']):.3f}")
