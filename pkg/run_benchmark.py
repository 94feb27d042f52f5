#!/usr/bin/env python3
"""
run_benchmark.py
================

This script runs the reference desk-scale benchmark end to end by
chaining the `subgroup-unlearn` command-line interface, and renders one
HTML comparison table of the proposed pipeline against every baseline.

Usage:

    python run_benchmark.py [--config CONFIG] [--out-dir OUT_DIR] [--skip-pretrain]

The default configuration is `configs/default-1.0.yaml` and the default
artifact store is the one named in the configuration.

Steps performed:
    1. Pre-train the original model (`subgroup-unlearn pretrain`).
    2. Run the unlearning pipeline (`subgroup-unlearn unlearn`).
    3. Run the five baselines (`subgroup-unlearn baseline --method ...`).
    4. Render every report into `reports/comparison.html` (`subgroup-unlearn render-html`).

If any step fails, the script will exit with that step's status.
"""

import argparse
import subprocess
import sys
from pathlib import Path

METHODS = ["FT", "GA", "FISHER_NOISE", "LIP", "EMMN"]


def run_command(cmd: list[str]) -> str:
    """Run a command, echo its output and exit with its status if it fails."""
    result = subprocess.run(cmd, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    print(result.stdout, end="")
    if result.returncode != 0:
        print(result.stderr, file=sys.stderr)
        print(f"Command failed: {' '.join(cmd)}", file=sys.stderr)
        sys.exit(result.returncode)
    return result.stdout


def main() -> None:
    repo_root = Path(__file__).resolve().parent
    parser = argparse.ArgumentParser(description="Run the reference subgroup-unlearning benchmark.")
    parser.add_argument("--config", default=str(repo_root / "configs" / "default-1.0.yaml"))
    parser.add_argument("--out-dir", default=None, help="Override the artifact store root")
    parser.add_argument("--skip-pretrain", action="store_true", help="Reuse an existing original checkpoint")
    args = parser.parse_args()

    cli = [sys.executable, "-m", "subgroup_unlearn.cli"]
    common = ["--config", args.config] + (["--out-dir", args.out_dir] if args.out_dir else [])

    if not args.skip_pretrain:
        run_command(cli + ["pretrain"] + common)
    output = run_command(cli + ["unlearn"] + common)
    for method in METHODS:
        output += run_command(cli + ["baseline", "--method", method] + common)

    # every report JSON the run wrote, pipeline first
    written = [line[len("Wrote "):].strip() for line in output.splitlines() if line.startswith("Wrote ")]
    reports = [p for p in written if p.endswith(".json") and Path(p).parent.name == "reports"
               and (Path(p).stem == "restored" or Path(p).stem.startswith("baseline-"))]
    if not reports:
        print("No reports were written", file=sys.stderr)
        sys.exit(1)
    html_out = Path(reports[0]).parent / "comparison.html"
    run_command(cli + ["render-html", "--in", *reports, "--out", str(html_out)])
    print(f"Benchmark complete: {html_out}")


if __name__ == "__main__":
    main()
