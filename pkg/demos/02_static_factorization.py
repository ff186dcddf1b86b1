"""Per-bin alternating factorization and cross-bin frame alignment.

First fits a single bin of noisy low-rank ratings and prints the objective
trace, then shows why alignment matters: two bins that differ only by a
rotation of the latent frame look far apart until align_factor_pair maps
them into a common basis, all without changing either bin's predictions.
"""

import argparse

import numpy as np

from socialdmf import FactorPair, align_factor_pair, factorize_bin


def sample_bin(U, V, p, noise, rng):
    m, n = U.shape[0], V.shape[0]
    cells = rng.choice(m * n, size=p, replace=False)
    users = (cells // n).astype(np.int64)
    items = (cells % n).astype(np.int64)
    order = np.lexsort((items, users))
    users, items = users[order], items[order]
    values = np.einsum("ij,ij->i", U[users], V[items]) + noise * rng.standard_normal(p)
    return users, items, values


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--rank", type=int, default=3)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)

    m, n, k = 60, 45, args.rank
    U_true = rng.standard_normal((m, k)) / np.sqrt(k)
    V_true = rng.standard_normal((n, k)) / np.sqrt(k)
    obs = sample_bin(U_true, V_true, p=900, noise=0.1, rng=rng)

    pair, trace = factorize_bin(obs, m, n, k=k, gamma=0.5, iters=200, seed=args.seed)
    print(f"objective: {trace[0]:.3f} -> {trace[-1]:.3f} in {len(trace) - 1} half-steps")
    print(f"norm balance: |U|_F = {np.linalg.norm(pair.U):.4f}, "
          f"|V|_F = {np.linalg.norm(pair.V):.4f}")

    pred = np.einsum("ij,ij->i", pair.U[obs[0]], pair.V[obs[1]])
    print(f"train rmse {np.sqrt(np.mean((pred - obs[2]) ** 2)):.4f} "
          f"(noise floor 0.1)")

    # Build a second pair that is the first one spun by a random rotation.
    # Predictions are identical, coordinates are not.
    Q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    spun = FactorPair(U=pair.U @ Q, V=pair.V @ Q)
    print(f"frame gap before alignment: {np.linalg.norm(spun.U - pair.U):.4f}")
    aligned = align_factor_pair(spun, pair)
    print(f"frame gap after alignment:  {np.linalg.norm(aligned.U - pair.U):.2e}")
    drift = np.abs(aligned.U @ aligned.V.T - spun.U @ spun.V.T).max()
    print(f"max prediction drift introduced by aligning: {drift:.2e}")


if __name__ == "__main__":
    main()
