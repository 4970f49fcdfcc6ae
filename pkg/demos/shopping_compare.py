"""Small version of the shopping comparison: EW, L2R and MA-RDPG on one seed.

The full experiment is ``mardpg compare --config configs/shopping.yaml``; this
uses fewer sessions and training steps so it finishes in a few minutes.

    python3 demos/shopping_compare.py [out_dir]
"""

import json
import sys

from mardpg import harness

out = sys.argv[1] if len(sys.argv) > 1 else "runs/demo_shopping"
cfg = harness.load_config("configs/shopping.yaml", environ={
    "MARDPG__EVAL__SESSIONS": "2000",
    "MARDPG__EVAL__SEEDS": "[0]",
    "MARDPG__TRAIN__TRAIN_STEPS": "2000",
    "MARDPG__L2R__LOG_SESSIONS": "3000",
})
res = harness.run_experiment(cfg, out)
summary = harness.summarize(res.records)
print(f"{'pair':16s} {'GMV main':>10s} {'GMV in-shop':>12s} {'total':>10s} {'gap vs EW+EW':>13s}")
for name, e in summary["pairs"].items():
    print(f"{name:16s} {e['gmv_main']:10.0f} {e['gmv_inshop']:12.0f} {e['gmv_total']:10.0f} {e['gap_total']:+13.4f}")
print(json.dumps({"metrics": f"{out}/metrics.csv", "summary": f"{out}/metrics_summary.json"}))
