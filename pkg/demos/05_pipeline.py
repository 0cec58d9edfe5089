"""The full workflow on simulated data, then the same run from the CLI.

The pipeline selects the blanket, orients a graph using time stamps, checks
for simultaneity, screens instrument candidates and runs the endogeneity
tests. The run writes report.json, report.txt, graph.txt and graph.dot.

Equivalent command line:

    mbiv pipeline --scenario mb_reduced --response y -n 5000 --seed 7 --out runs/mb
"""

import sys

from mbiv.pipeline import PipelineConfig, run_pipeline

out = sys.argv[1] if len(sys.argv) > 1 else None
rep = run_pipeline(PipelineConfig(scenario="mb_reduced", response="y", n=5000, seed=7))
print(rep.to_text())
if out:
    for path in rep.write(out):
        print("wrote", path)
