"""End-to-end demo: generate each data kind for one model and reconstruct it.

Usage: python scripts/demo_pipeline.py [--model NAME] [--points K] [--workdir DIR]
"""
import argparse
import json
import tempfile
from pathlib import Path

from causal_lens.cli import main as cli


def run(model, points, workdir):
    workdir.mkdir(parents=True, exist_ok=True)
    for kind, fan in (("time_probe", 16), ("scatter", 8), ("shadow", 8)):
        data = workdir / f"{kind}.jsonl"
        report = workdir / f"{kind}.report.jsonl"
        code = cli(["generate", "--model", model, "--points", str(points), "--fan", str(fan),
                    "--kinds", kind, "-o", str(data)])
        if code:
            return code
        code = cli(["reconstruct", str(data), "-o", str(report)])
        if code:
            return code
        counts = {}
        for line in report.read_text().splitlines():
            k = json.loads(line)["kind"]
            counts[k] = counts.get(k, 0) + 1
        print(f"{kind:>10}: {counts}")
    return 0


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", default="conformal-block")
    ap.add_argument("--points", type=int, default=4)
    ap.add_argument("--workdir", type=Path)
    args = ap.parse_args()
    if args.workdir is None:
        with tempfile.TemporaryDirectory() as tmp:
            return run(args.model, args.points, Path(tmp))
    return run(args.model, args.points, args.workdir)


if __name__ == "__main__":
    raise SystemExit(main())
