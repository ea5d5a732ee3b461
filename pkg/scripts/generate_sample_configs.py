#!/usr/bin/env python3
"""
Sample Config Generator for the black-box communication workbench
Writes one JSON experiment config per scenario into config/experiments/.
"""

import argparse
from pathlib import Path
from typing import Any, Dict

import orjson

DEFAULT_OUTPUT_DIR = Path(__file__).resolve().parent.parent / "config" / "experiments"


def bsc_matrix(p: float):
    return [[1 - p, p], [p, 1 - p]]


# Declarations shared by every sample
DECLARATIONS: Dict[str, Any] = {
    "alphabets": {"bit": [0, 1]},
    "distributions": {
        "uniform": {"alphabet": "bit", "probs": [0.5, 0.5]},
        "bern02": {"alphabet": "bit", "probs": [0.8, 0.2]},
        "bern03": {"alphabet": "bit", "probs": [0.7, 0.3]},
    },
    "distortions": {"hamming": {"input": "bit", "output": "bit", "matrix": "hamming"}},
    "channels": {
        "bsc02": {"type": "bsc", "crossover": 0.02},
        "pipe02": {"type": "composed", "inner": "bsc02", "layers": ["permutation", "scrambler"]},
        "source_code": {"type": "source_code", "source": "uniform", "distortion": "hamming", "D": 0.1,
                        "rate_margin": 0.05},
        "bursty": {"type": "sliding_window", "input": "bit", "output": "bit",
                   "kernels": [bsc_matrix(0.01), bsc_matrix(0.04), bsc_matrix(0.08)],
                   "window": 4, "burst_prob": 0.005},
        "switch": {"type": "adversarial_switch", "input": "bit", "output": "bit",
                   "kernels": [bsc_matrix(0.01), bsc_matrix(0.05)], "period": 100},
        "z_channel": {"type": "dmc", "input": "bit", "output": "bit", "matrix": [[1.0, 0.0], [0.1, 0.9]]},
    },
}

LONG_N = [200, 500, 1000, 2000]

SAMPLES: Dict[str, Dict[str, Any]] = {
    "rd": {
        "description": "R(D) of Bernoulli(0.3) under Hamming distortion",
        "experiment": {"kind": "rd", "source": "bern03", "distortion": "hamming",
                       "D_grid": [0.0, 0.03, 0.06, 0.09, 0.12, 0.15, 0.18, 0.21, 0.24, 0.27, 0.3]},
    },
    "exponent": {
        "description": "Impostor exponent of the uniform binary source at D=0.1 against eps",
        "experiment": {"kind": "exponent", "source": "uniform", "distortion": "hamming", "D": 0.1,
                       "eps_grid": [0.0, 0.02, 0.05, 0.1, 0.2]},
    },
    "source": {
        "description": "Excess distortion of random source codes at R(0.1) + 0.05",
        "experiment": {"kind": "source", "source": "uniform", "distortion": "hamming", "D": 0.1,
                       "rate_margin": 0.05, "n_list": LONG_N, "trials": 500},
    },
    "capacity": {
        "description": "Capacity of the memoryless sample channels",
        "experiment": {"kind": "capacity", "channels": ["bsc02", "z_channel"]},
    },
    "direct": {
        "description": "Direct communication of the uniform source within D=0.1",
        "experiment": {"kind": "direct", "channels": ["pipe02", "source_code", "bursty", "switch"],
                       "source": "uniform", "distortion": "hamming", "D": 0.1, "n_list": LONG_N,
                       "trials": 200},
    },
    "reliability": {
        "description": "Random code at R=0.4 over the source-code channel, with the behavioral check",
        "experiment": {"kind": "reliability", "channels": ["source_code"], "source": "uniform",
                       "distortion": "hamming", "D": 0.1, "eps": 0.1, "rate": 0.4, "n_list": LONG_N,
                       "messages": 4, "trials": 500,
                       "behavioral": {"n": 2000, "trials": 50, "threshold": 0.02}},
    },
    "reliability_high_rate": {
        "description": "Random code at R=0.65, above R(D) + margin: errors stay high",
        "experiment": {"kind": "reliability", "channels": ["source_code"], "source": "uniform",
                       "distortion": "hamming", "D": 0.1, "eps": 0.1, "rate": 0.65, "n_list": LONG_N,
                       "messages": 4, "trials": 100},
    },
    "reliability_compound": {
        "description": "One random-code ensemble over a three-member compound set",
        "experiment": {"kind": "reliability", "channels": ["pipe02", "source_code", "bursty"],
                       "source": "uniform", "distortion": "hamming", "D": 0.1, "eps": 0.1, "rate": 0.4,
                       "n_list": [500, 2000], "messages": 4, "trials": 250},
    },
    "separation": {
        "description": "Source code + random channel code over BSC(0.02), certified at D=0.1",
        "experiment": {"kind": "separation", "source": "uniform", "distortion": "hamming", "D": 0.19,
                       "channel": "bsc02", "rate_margin": 0.1, "eps": 0.1,
                       "certify": {"source": "uniform", "distortion": "hamming", "D": 0.1, "omega": 0.1,
                                   "trials": 200, "n_list": [2000]},
                       "n_list": [500, 1000, 2000], "trials": 200,
                       "behavioral": {"n": 2000, "trials": 50, "threshold": 0.02}},
    },
    "separation_pipe": {
        "description": "Source code over a noiseless pipe",
        "experiment": {"kind": "separation", "source": "bern02", "distortion": "hamming", "D": 0.05,
                       "pipe_rate": 0.6, "rate_margin": 0.1, "n_list": [200, 500, 1000], "trials": 200},
    },
    "equivalence": {
        "description": "Carry Bernoulli(0.2) within 0.05 over a pipe certified for the uniform source at 0.1",
        "experiment": {"kind": "equivalence", "source": "uniform", "distortion": "hamming", "D": 0.1,
                       "carried_source": "bern02", "carried_distortion": "hamming", "carried_D": 0.05,
                       "pipe": "source_code", "margin": 0.05, "eps": 0.1, "n_list": [500, 1000, 2000],
                       "trials": 200},
    },
    "sanov_check": {
        "description": "Union bound on impostor acceptance against the Sanov bound",
        "experiment": {"kind": "sanov-check", "source": "uniform", "distortion": "hamming", "instances": [
            {"D": D, "eps": eps, "rate": rate, "n": n, "y_type": [0.5, 0.5]}
            for n in (20, 50, 100, 200)
            for D, eps, rate in ((0.1, 0.05, 0.3), (0.1, 0.1, 0.4), (0.2, 0.05, 0.2), (0.2, 0.1, 0.1),
                                 (0.05, 0.05, 0.5), (0.05, 0.0, 0.6), (0.15, 0.02, 0.3), (0.3, 0.1, 0.05))
        ]},
    },
    "multiuser": {
        "description": "Three users on a shared-noise medium at 0.75 R^I per pair",
        "experiment": {"kind": "multiuser",
                       "medium": {"type": "shared_noise", "num_users": 3, "pairs": [[0, 1], [1, 2], [2, 0]],
                                  "crossover": 0.02},
                       "pairs": [{"i": i, "j": j, "source": "uniform", "distortion": "hamming", "D": 0.1,
                                  "rate_fraction": 0.75} for i, j in ((0, 1), (1, 2), (2, 0))],
                       "modes": ["direct", "reliable", "induction"], "n_list": [200, 500, 1000],
                       "trials": 300, "eps": 0.1, "threshold": 0.03,
                       "induction": {"n": 1000, "trials": 100, "threshold": 0.03}},
    },
    "multiuser_shared_seed": {
        "description": "Negative control: all pairs draw their messages from one stream",
        "experiment": {"kind": "multiuser",
                       "medium": {"type": "shared_noise", "num_users": 3, "pairs": [[0, 1], [1, 2], [2, 0]],
                                  "crossover": 0.02},
                       "pairs": [{"i": i, "j": j, "source": "uniform", "distortion": "hamming", "D": 0.1,
                                  "rate_fraction": 0.75, "stream": 0} for i, j in ((0, 1), (1, 2), (2, 0))],
                       "modes": ["induction"], "n_list": [1000], "trials": 100, "eps": 0.1,
                       "induction": {"n": 1000, "trials": 100, "threshold": 0.03}},
    },
}


def build_config(name: str, seed: int) -> Dict[str, Any]:
    sample = SAMPLES[name]
    return {"schema_version": 1, "seed": seed, "output": f"{name}.csv", **DECLARATIONS,
            "experiment": sample["experiment"]}


def main():
    parser = argparse.ArgumentParser(description="Generate sample experiment configs")
    parser.add_argument("--output-dir", "-o", type=Path, default=DEFAULT_OUTPUT_DIR, help="Where to write the configs")
    parser.add_argument("--seed", type=int, default=2024, help="Seed written into every config")
    parser.add_argument("--only", "-n", action="append", help="Write only the named sample (repeatable)")
    parser.add_argument("--list", action="store_true", help="List available samples")

    args = parser.parse_args()

    if args.list:
        print("📋 Available samples:")
        for name, sample in SAMPLES.items():
            print(f"  • {name}: {sample['description']}")
        return

    names = args.only or list(SAMPLES)
    unknown = [name for name in names if name not in SAMPLES]
    if unknown:
        print(f"❌ Unknown samples: {', '.join(unknown)}")
        return

    args.output_dir.mkdir(parents=True, exist_ok=True)
    for name in names:
        path = args.output_dir / f"{name}.json"
        path.write_bytes(orjson.dumps(build_config(name, args.seed), option=orjson.OPT_INDENT_2) + b"\n")
        print(f"✅ {path}")
    print(f"🏁 Wrote {len(names)} configs to {args.output_dir}")


if __name__ == "__main__":
    main()
