#!/usr/bin/env python3
"""Regenerate scenarios/default.json from the in-code default scenario."""

import argparse
import json
from pathlib import Path

from apid.cli import scenario_to_dict
from apid.harness import default_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent
                                         / "scenarios" / "default.json"))
    args = ap.parse_args()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(scenario_to_dict(default_scenario()), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
