"""Fit a unit step with a global line, a global quintic and the
cluster-classify-regress model.

k-means finds the two plateaus, the gate learns which side of the jump a
point is on, and each expert only has to fit a constant. Both global
polynomials overshoot and ring around the jump instead.

    python demos/ccr_discontinuity.py
"""
import numpy as np

from ccr_mpc.ccr import CcrConfig, ccr_fit, fit_forward_model
from ccr_mpc.dataio import Dataset
from ccr_mpc.mpc import metric_r2


def main():
    x = np.random.default_rng(0).uniform(0, 1, 200)
    ds = Dataset(["x"], x[:, None], (x > 0.5).astype(float))

    models = {
        "ccr (2 linear experts)": ccr_fit(ds, CcrConfig(n_clusters=2, degree=1)),
        "global line": fit_forward_model(ds, "polynomial", degree=1),
        "global quintic": fit_forward_model(ds, "polynomial", degree=5),
    }
    grid = np.linspace(0, 1, 11)
    print(f"{'model':<24}{'train R2':>10}   predictions on x = 0, 0.1, ..., 1")
    for name, m in models.items():
        r2 = metric_r2(ds.targets, m.predict(ds.features))
        print(f"{name:<24}{r2:>10.4f}   {np.round(m.predict(grid[:, None]), 2)}")

    ccr = models["ccr (2 linear experts)"]
    print("\ngate labels either side of the jump:", ccr.gate(np.array([[0.45], [0.55]])))
    print("k-means objective trace:", np.round(ccr.cluster_trace, 4))


if __name__ == "__main__":
    main()
