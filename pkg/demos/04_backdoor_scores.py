"""Is there a direct edge from p to c besides the path through m?

Score both models (with and without the backdoor edge) by AIC, BIC and
BGe on data from each world.
"""

from mbiv.graph import Dag
from mbiv.score import compare_backdoor
from mbiv.sem import LinearSem, sample

for be in (0.0, 0.5):
    edges = [("p", "m"), ("m", "c")] + ([("p", "c")] if be else [])
    w = {("p", "m"): 0.8, ("m", "c"): 0.7}
    if be:
        w[("p", "c")] = be
    sem = LinearSem(dag=Dag(["p", "m", "c"], edges), weights=w)
    d = compare_backdoor(sample(sem, 10_000, seed=0), "p", "m", "c")
    print(f"== true backdoor coefficient {be}")
    print(d.table())
