"""Build a class-incremental Gaussian stream and score a hand-made accuracy matrix.

Run: python demos/streams_and_metrics.py
"""

from dietcl.protocol import AccuracyMatrix, acc, bwt
from dietcl.streams import make_gaussian_stream

stream = make_gaussian_stream(num_tasks=5, classes_per_task=2, train_per_class=200, test_per_class=100,
                              dim=16, seed=0)
print(f"{len(stream)} tasks, {stream.total_classes} classes, dim {stream.feature_dim}")
for task in stream:
    print(f"  task {task.index}: classes {task.sorted_classes}, {len(task.train)} train / {len(task.test)} test")
print("stream digest", stream.digest()[:16])

# row t holds accuracy on tasks 1..t right after learning task t
m = AccuracyMatrix([[0.9], [0.7, 0.8]])
print(m.to_csv(), end="")
print("ACC", acc(m), "BWT", bwt(m))  # 0.75 and -0.2, exactly
