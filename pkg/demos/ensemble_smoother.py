"""Recover two parameters of a mildly nonlinear model with the iterative
ensemble smoother, and check the linear case against the closed form.

    python demos/ensemble_smoother.py
"""
import numpy as np

from ccr_mpc.optimize import ObjectiveQ, ies_run


def forward(theta):
    t = np.atleast_2d(theta)
    return np.column_stack([t[:, 0] + 0.1 * t[:, 0] ** 2,
                            t[:, 1] + 0.1 * t[:, 1] ** 2 + 0.1 * t[:, 0] * t[:, 1]])


def main():
    truth = np.array([1.5, -0.8])
    setup = ObjectiveQ(theta_prior=[0.0, 0.0], prior_cov_diag=[4.0, 4.0], y_obs=forward(truth)[0],
                       obs_cov_diag=[0.01, 0.01], forward=lambda t: forward(t)[0])
    res = ies_run(setup, n_ens=500, iterations=3, seed=0, forward_batch=forward)
    print("truth          ", truth)
    print("posterior mean ", np.round(res.mean, 4))
    print("posterior std  ", np.round(res.ensemble.members.std(axis=0), 4))
    for k, (q, qm, qd) in enumerate(res.q_trace):
        print(f"iteration {k}: Q = {q:9.4f}  (prior term {qm:.4f}, data term {qd:.4f})")

    # linear-Gaussian check: one update approaches the exact posterior mean
    A = np.array([[1.0, 0.5], [0.2, 1.0], [1.0, -1.0]])
    m0, c0, cd, y = np.array([0.5, -0.3]), np.array([1.0, 2.0]), np.full(3, 0.5), np.array([1.0, 0.4, 0.2])
    exact = m0 + np.diag(c0) @ A.T @ np.linalg.solve(A @ np.diag(c0) @ A.T + np.diag(cd), y - A @ m0)
    lin = ObjectiveQ(m0, c0, y, cd, lambda t: A @ t)
    print("\nlinear case, exact posterior mean", np.round(exact, 4))
    for n in (100, 1000, 10_000):
        est = ies_run(lin, n, iterations=1, seed=0, forward_batch=lambda T: T @ A.T).mean
        print(f"  N_e = {n:>6}: {np.round(est, 4)}  error {np.linalg.norm(est - exact):.4f}")


if __name__ == "__main__":
    main()
