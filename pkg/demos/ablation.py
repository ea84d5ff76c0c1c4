"""Rate loss of STD+FC, STD and TD at matched compression ratio (9-11%).

    python demos/ablation.py [n_seeds]

Each seed takes about 15 s on one core. The same run is available from the
command line with ``stdcodec eval demos/ablation.json``.
"""
import json
import sys
from pathlib import Path

from stdcodec.evaluation import Scenario, ablation_summary, run_scenario

spec = json.loads((Path(__file__).parent / "ablation.json").read_text())
if len(sys.argv) > 1:
    spec["seeds"] = list(range(int(sys.argv[1])))
sc = Scenario.from_dict(spec)
rows = run_scenario(sc)
summary = ablation_summary(rows, *sc.cr_band)
print(f"paired seeds: {summary['seeds']}")
for method, rl in summary["mean_RL"].items():
    print(f"  mean RL {method:7} {rl:.4f}")
for pair, t in summary["sign_tests"].items():
    print(f"  {pair}: {t['wins']}/{t['n']} wins, p = {t['p_value']:.4f}")
