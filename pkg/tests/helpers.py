"""Shared test oracles and generators.

The batch estimator here is deliberately independent of the filter
implementation: it solves the stacked weighted least-squares problem over
the full horizon by dense linear algebra, so the recursive filter and
smoother can be checked against it.
"""

from __future__ import annotations

import numpy as np

from crowdroad.vehicle import DiscreteAugmentedModel


def state_maps(A: np.ndarray, horizon: int) -> list[np.ndarray]:
    """Maps from z = [x0; eta_1; ...; eta_horizon] to the state at each step."""
    n = A.shape[0]
    width = n * (horizon + 1)
    powers = [np.eye(n)]
    for _ in range(horizon):
        powers.append(A @ powers[-1])
    maps = []
    for t in range(horizon + 1):
        L = np.zeros((n, width))
        for j in range(t + 1):
            L[:, j * n:(j + 1) * n] = powers[t - j]
        maps.append(L)
    return maps


def batch_map_estimate(A, Q, P0, x0, C_steps, R_steps, ys, query_step=None):
    """MAP/MMSE estimate of the state from stacked measurements.

    C_steps, R_steps, ys are per-step lists (time-varying allowed).
    Returns (x_hat, cov) at query_step (default: the last step), using all
    supplied measurements.
    """
    T = len(ys)
    horizon = T - 1
    n = A.shape[0]
    maps = state_maps(A, horizon)
    width = n * (horizon + 1)
    if query_step is None:
        query_step = horizon

    H = np.zeros((width, width))
    b = np.zeros(width)
    H[:n, :n] = np.linalg.inv(P0)
    b[:n] = np.linalg.solve(P0, np.asarray(x0, dtype=float))
    Qinv = np.linalg.inv(Q)
    for j in range(1, horizon + 1):
        sl = slice(j * n, (j + 1) * n)
        H[sl, sl] += Qinv
    for t in range(T):
        C = np.atleast_2d(C_steps[t])
        Rinv = np.linalg.inv(np.atleast_2d(R_steps[t]))
        CL = C @ maps[t]
        H += CL.T @ Rinv @ CL
        b += CL.T @ Rinv @ np.atleast_1d(ys[t])

    cov_z = np.linalg.inv(H)
    z_hat = cov_z @ b
    L = maps[query_step]
    return L @ z_hat, L @ cov_z @ L.T


def batch_filter_oracle(model: DiscreteAugmentedModel, measurements, init,
                        steps=None):
    """Filtered-state oracle: for each requested step k, solve the batch
    problem with measurements 0..k and return the estimate of state k."""
    Z = np.atleast_2d(np.asarray(measurements, dtype=float))
    T = Z.shape[0]
    if steps is None:
        steps = range(T)
    x0, P0 = init
    C_steps = [model.C_bar] * T
    R_steps = [model.R] * T
    out = {}
    for k in steps:
        x, P = batch_map_estimate(model.A_bar, model.Q, P0, x0,
                                  C_steps[:k + 1], R_steps[:k + 1],
                                  list(Z[:k + 1]), query_step=k)
        out[k] = (x, P)
    return out


def random_stable_matrix(rng: np.random.Generator, n: int,
                         radius: float = 0.9) -> np.ndarray:
    A = rng.standard_normal((n, n))
    return A * (radius / max(abs(np.linalg.eigvals(A))))


def random_linear_model(rng: np.random.Generator, n: int, r: int,
                        q_scale: float = 0.05, r_scale: float = 0.1
                        ) -> DiscreteAugmentedModel:
    """Random stable synthetic model wrapped in the package's model type."""
    A = random_stable_matrix(rng, n, radius=float(rng.uniform(0.5, 0.95)))
    C = rng.standard_normal((r, n))
    G = rng.standard_normal((n, n)) * q_scale
    Q = G @ G.T + 1e-10 * np.eye(n)
    R = np.diag(rng.uniform(0.5, 1.5, r)) * r_scale ** 2
    return DiscreteAugmentedModel(A_bar=A, B_bar=np.zeros((n, 0)), C_bar=C,
                                  Q=Q, R=R, sample_time=1.0)


def simulate_linear_model(rng: np.random.Generator,
                          model: DiscreteAugmentedModel, T: int,
                          x0: np.ndarray | None = None):
    """Draw one trajectory and its measurements from the model's noises."""
    n = model.n_states
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    Lq = np.linalg.cholesky(model.Q + 1e-12 * np.eye(n))
    Lr = np.linalg.cholesky(model.R)
    states = np.empty((T, n))
    ys = np.empty((T, model.n_outputs))
    for k in range(T):
        states[k] = x
        ys[k] = model.C_bar @ x + Lr @ rng.standard_normal(model.n_outputs)
        x = model.A_bar @ x + Lq @ rng.standard_normal(n)
    return states, ys
