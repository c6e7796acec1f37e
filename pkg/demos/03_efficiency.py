"""
Where the time goes
===================

Analytic MACs per frame for the neural models, then measured latency of the
single-branch network next to a two-branch reference that needs normalised
difference and appearance frames computed before the network runs.
"""

from pulseforge.bench import bench, flop_table
from pulseforge.synth import SynthParams, gen_clip

for name, row in flop_table(36).items():
    print(f"{name:>6}: {row['macs']:>11,d} MACs/frame  {row['params']:>9,d} params")

# single-threaded and pinned to one CPU; ten timed trials per method
item = gen_clip(SynthParams(duration_s=10.0))
report = bench(["conv", "tscan", "t2", "pos", "chrom", "ica"], item, trials=10)
print(report.to_table())
