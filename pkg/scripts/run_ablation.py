"""Run the four-variant ablation and write the JSON comparison table.

Usage: python3 scripts/run_ablation.py [results.json]
"""

import json
import sys

from donanet.train import AblationConfig, ablation_verdict, run_ablation


def main():
    path = sys.argv[1] if len(sys.argv) > 1 else "results/ablation.json"
    table = run_ablation(AblationConfig(), log=lambda r: print(json.dumps(r), flush=True), results_path=path)
    table["verdict"] = ablation_verdict(table["summary"])
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(table, fh, indent=2)
    print(json.dumps(table["summary"], indent=2))
    print(json.dumps(table["verdict"], indent=2))


if __name__ == "__main__":
    main()
