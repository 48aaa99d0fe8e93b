"""Run the acceptance suite and print one PASS/FAIL line per criterion."""
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def main():
    cmd = [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", str(ROOT / "tests" / "test_acceptance.py")]
    proc = subprocess.run(cmd, cwd=ROOT, capture_output=True, text=True)
    lines = [s for s in proc.stdout.splitlines() if s.startswith("[PASS]") or s.startswith("[FAIL]")]
    print("\n".join(lines) if lines else proc.stdout)
    return proc.returncode


if __name__ == "__main__":
    sys.exit(main())
