"""Write the committed study-2 design (p = 100 mediators, 5 true).

Run once; the JSON output is versioned so coefficients never change with
numpy releases.
"""

import json
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "intervmed" / "dgps" / "study2.json"


def build(seed=20240):
    rng = np.random.default_rng(seed)
    meds = [
        {"name": "M1", "type": "continuous", "treatment": 0.8, "covariates": [0.3, -0.2],
         "latent": [0.5, 0.0, 0.0]},
        {"name": "M2", "type": "continuous", "treatment": 0.7, "covariates": [0.2, 0.2],
         "latent": [0.0, 0.5, 0.0]},
        {"name": "M3", "type": "continuous", "treatment": -0.8, "covariates": [0.0, 0.2],
         "latent": [0.0, 0.0, 0.5], "parents": {"M1": 0.3}},
        {"name": "M4", "type": "binary", "intercept": 0.0, "treatment": 1.0,
         "covariates": [0.2, 0.0], "latent": [0.4, 0.4, 0.0]},
        {"name": "M5", "type": "binary", "intercept": -0.2, "treatment": -1.0,
         "covariates": [0.0, -0.2], "latent": [0.0, 0.4, 0.4]},
    ]
    true = [m["name"] for m in meds]
    for j in range(6, 101):
        m = {"name": f"M{j}", "type": "binary" if rng.random() < 0.3 else "continuous",
             "treatment": 0.0, "covariates": np.round(rng.normal(0, 0.2, 2), 3).tolist(),
             "latent": np.round(rng.normal(0, 0.5, 3), 3).tolist()}
        if rng.random() < 0.3:
            m["treatment"] = float(np.round(rng.choice([-1, 1]) * rng.uniform(0.3, 0.8), 3))
        if rng.random() < 0.1:
            m["parents"] = {str(rng.choice(true)): float(np.round(rng.uniform(0.2, 0.5), 3))}
        if m["type"] == "binary":
            m["intercept"] = float(np.round(rng.normal(0, 0.3), 3))
        meds.append(m)
    return {
        "name": "study2", "n": 1000, "seed": 108, "n_covariates": 2, "n_latent": 3,
        "covariate_dist": "normal", "treatment": {"type": "randomized", "prob": 0.5},
        "mediators": meds,
        "outcome": {"family": "logistic", "intercept": -0.3, "treatment": 0.3,
                    "mediators": {"M1": 0.5, "M2": 0.5, "M3": 0.5, "M4": 1.0, "M5": 1.0},
                    "covariates": [0.3, -0.3]},
    }


if __name__ == "__main__":
    OUT.write_text(json.dumps(build(), indent=1) + "\n")
    print(f"wrote {OUT}")
