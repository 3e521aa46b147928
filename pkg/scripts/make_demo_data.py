"""
Write demo inputs for the command line.

Usage: python scripts/make_demo_data.py [--out demo] [--seed 1995]

Creates
    patients.csv           patient-level data for two subgroup x outcome
                           regimes, stratified by subgroup and outcome
    panel_crude.csv        five years of crude effects with strongly
                           correlated centre effects (longitudinal input)
    model_ar1.json,
    model_rc.json          structured model fixtures for --model-fixture
    scenario_*.json        the scenarios used, for the simulate command
"""

import argparse
import json
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pandas as pd

from app.schemas.scenario import ScenarioConfig
from estimation.simulation import simulate

YEARS = [1991, 1992, 1993, 1994, 1995]

# (subgroup, outcome, patients per centre-year, baseline rate, covariate effects, mu, tau2)
# The very-preterm covariate is strong: overall mortality near 0.26 but
# little Bernoulli information per birth.
REGIMES = [
    ("at_term", "cs", 695, 0.16, [0.3], 0.038, 0.124),
    ("very_preterm", "mortality", 14.3, 0.0151, [6.5], 0.0, 0.336),
]

PANEL_MEANS = [0.15, 0.36, 0.40, 0.42, 0.37]
PANEL_VARIANCES = [0.13, 0.27, 0.35, 0.35, 0.30]
PANEL_CORRELATIONS = [
    [1.0],
    [0.84, 1.0],
    [0.80, 0.99, 1.0],
    [0.80, 0.99, 0.99, 1.0],
    [0.47, 0.86, 0.88, 0.90, 1.0],
]

FIXTURES = {
    "model_ar1.json": {
        "structure": "ar1",
        "years": YEARS,
        "M": [0.27, 0.33, 0.34, 0.36, 0.37],
        "structure_params": {"tau2": 0.25, "rho": 0.945},
        "log_likelihood": -410.30,
    },
    "model_rc.json": {
        "structure": "rc",
        "years": YEARS,
        "time_origin": 1990,
        "structure_params": {
            "tau_A2": 0.19,
            "tau_B2": 0.0125,
            "rho_AB": -0.23,
            "alpha": 0.18,
            "beta": 0.053,
        },
        "log_likelihood": -408.51,
    },
}


def panel_covariance() -> np.ndarray:
    """Published rounded correlations, clipped to the nearest PSD matrix."""
    J = len(PANEL_VARIANCES)
    corr = np.eye(J)
    for j, row in enumerate(PANEL_CORRELATIONS):
        for k, value in enumerate(row):
            corr[j, k] = corr[k, j] = value
    sd = np.sqrt(PANEL_VARIANCES)
    cov = corr * np.outer(sd, sd)
    values, vectors = np.linalg.eigh(cov)
    cov = (vectors * np.clip(values, 1e-6, None)) @ vectors.T
    return (cov + cov.T) / 2.0


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n")
    print(f"Wrote {path}")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    parser.add_argument("--out", default="demo")
    parser.add_argument("--seed", type=int, default=1995)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    frames = []
    for offset, (subgroup, outcome, patients, rate, effects, mu, tau2) in enumerate(REGIMES):
        scenario = ScenarioConfig(
            n_centres=112,
            years=YEARS,
            patients_per_centre_year={"distribution": "poisson", "mean": patients},
            baseline_rate=rate,
            covariate_effects=effects,
            prior={"kind": "univariate", "mu": mu, "tau2": tau2},
            mode="patient",
            seed=args.seed + offset,
        )
        write_json(out / f"scenario_{subgroup}_{outcome}.json", scenario.model_dump(mode="json"))
        dataset = simulate(scenario)
        frame = dataset.patients.copy()
        frame.insert(0, "outcome_type", outcome)
        frame.insert(0, "subgroup", subgroup)
        frames.append(frame)
        print(f"Simulated {len(frame):,} patients for {subgroup} x {outcome}")

    patients = pd.concat(frames, ignore_index=True)
    patients.to_csv(out / "patients.csv", index=False, float_format="%.6g")
    print(f"Wrote {out / 'patients.csv'}")

    panel = ScenarioConfig(
        n_centres=112,
        years=YEARS,
        patients_per_centre_year={"distribution": "poisson", "mean": 14.3},
        baseline_rate=0.26,
        prior={"kind": "panel", "M": PANEL_MEANS, "T": panel_covariance().tolist()},
        mode="crude",
        seed=args.seed + len(REGIMES),
    )
    write_json(out / "scenario_panel.json", panel.model_dump(mode="json"))
    crudes = simulate(panel).crudes
    pd.DataFrame([c.model_dump() for c in crudes]).to_csv(
        out / "panel_crude.csv", index=False, float_format="%.6g"
    )
    print(f"Wrote {out / 'panel_crude.csv'}")

    for name, payload in FIXTURES.items():
        write_json(out / name, payload)

    print("\nDemo data ready. Try:")
    print(f"  python -m app.cli.main rank --input {out}/patients.csv --stratify-by subgroup,outcome_type --out out/rank")
    print(f"  python -m app.cli.main longitudinal --input {out}/panel_crude.csv --mode crude --structure ar1,rc --out out/panel")


if __name__ == "__main__":
    main()
