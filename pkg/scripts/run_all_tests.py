#!/usr/bin/env python3
"""
Master Test Suite for the exemplar counting service
Runs the unit suites phase by phase, then an optional CLI smoke run
"""

import os
import subprocess
import sys
import tempfile
from datetime import datetime
from pathlib import Path

SERVICE_DIR = Path(__file__).resolve().parent.parent / "services" / "counter"

PHASES = [
    ("tensor_engine", "tests/test_tensor.py", "Phase 1: Tensor Engine and Gradients"),
    ("model_blocks", "tests/test_encoder.py tests/test_relation.py tests/test_decoder.py", "Phase 2: Encoder, Relation Learner, Decoder"),
    ("objectives", "tests/test_objectives.py", "Phase 3: Losses and Metrics"),
    ("scenes", "tests/test_scenes.py tests/test_config.py", "Phase 4: Scenes, Storage and Configuration"),
    ("training", "tests/test_training.py", "Phase 5: Training, Evaluation and Suites"),
    ("cli", "tests/test_main.py", "Phase 6: Command Line"),
    ("experiments", "tests/test_experiments.py", "Phase 7: Desk-Scale Experiments (COUNTER_SLOW=1)"),
]


def run_command(cmd, description, cwd=SERVICE_DIR):
    """Run a command and return success status"""
    print(f"\n{'='*70}")
    print(f"🔬 {description}")
    print(f"{'='*70}\n")

    result = subprocess.run(cmd, shell=True, cwd=cwd)
    return result.returncode == 0


def smoke_commands(workdir: Path):
    config, data, ckpt = workdir / "config.yml", workdir / "data", workdir / "ckpt"
    return [
        ("gencfg", f"{sys.executable} main.py gencfg --profile desk --out {config}"),
        ("makedata", f"{sys.executable} main.py makedata --spec multi --out {data} --n 8 --seed 0"),
        ("shorten", f"{sys.executable} -c \"import yaml; p='{config}'; d=yaml.safe_load(open(p)); d['epochs']=2; yaml.safe_dump(d, open(p, 'w'))\""),
        ("train", f"{sys.executable} main.py train --config {config} --data {data} --out {ckpt}"),
        ("eval", f"{sys.executable} main.py eval --ckpt {ckpt} --data {data} --split eval --regions"),
        ("asmap", f"{sys.executable} main.py asmap --ckpt {ckpt} --sample {data}/s00000 --out {workdir / 'asmap'}"),
    ]


def main():
    start_time = datetime.now()

    print(f"\n{'#'*70}")
    print(f"# Exemplar Counting Service - Test Suite")
    print(f"# {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    print(f"{'#'*70}")

    results = {}

    for name, paths, description in PHASES:
        results[name] = run_command(f"{sys.executable} -m pytest -q {paths}", description)

    if os.environ.get("COUNTER_SMOKE") == "1":
        with tempfile.TemporaryDirectory() as tmp:
            ok = True
            for label, cmd in smoke_commands(Path(tmp)):
                ok = run_command(cmd, f"Phase 8: CLI Smoke - {label}")
                if not ok:
                    break
            results["cli_smoke"] = ok

    # Print final summary
    elapsed = (datetime.now() - start_time).total_seconds()

    print(f"\n{'#'*70}")
    print(f"# Final Test Report")
    print(f"{'#'*70}\n")

    total_tests = len(results)
    passed_tests = sum(1 for v in results.values() if v)

    for test_name, passed in results.items():
        status = "✅ PASSED" if passed else "❌ FAILED"
        print(f"{status} - {test_name}")

    print(f"\n{'='*70}")
    print(f"Overall Results: {passed_tests}/{total_tests} test suites passed")
    print(f"Time elapsed: {elapsed:.2f} seconds")
    print(f"{'='*70}\n")

    if passed_tests == total_tests:
        print("🎉 All tests passed!")
        return 0
    else:
        print("⚠️  Some tests failed. Please review the output above.")
        return 1


if __name__ == "__main__":
    sys.exit(main())
