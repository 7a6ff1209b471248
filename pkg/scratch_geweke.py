# One-off calibration: forward vs successive-conditional moments for the
# hierarchical sweep on a (2,2,2) rank-1 model. Not part of the package.
import numpy as np
import time

from multiway.arrays import MultiwayArray, compose_values
from multiway.gibbs import HierPrior, HierarchicalState, gibbs_sweep_hier, ess
from multiway.linalg import Spd
from multiway.rng import RngStream, invgamma_sample, invwishart_sample, mvn_sample

DIMS = (2, 2, 2)
R = 1
PRIOR = HierPrior(mu0=0.0, kappa0=1.0, nu0_wish=5, tau20=1.0, nu0_sigma=6.0, sigma20=0.5)


def forward_draw(rng):
    mus, psis, Us = [], [], []
    for m in DIMS:
        psi = invwishart_sample(rng, np.eye(R) / PRIOR.tau20, PRIOR.nu0_wish)
        mu = mvn_sample(rng, np.zeros(R), Spd(psi.matrix / PRIOR.kappa0))
        U = mu + rng.standard_normal((m, R)) @ psi.chol.T
        mus.append(mu)
        psis.append(psi)
        Us.append(U)
    sigma2 = invgamma_sample(rng, PRIOR.nu0_sigma / 2, PRIOR.nu0_sigma * PRIOR.sigma20 / 2)
    theta = compose_values(Us)
    y = theta + np.sqrt(sigma2) * rng.standard_normal(DIMS)
    return mus, psis, Us, sigma2, theta, y


def stats_of(mus, psis, sigma2, y):
    out = [sigma2, sigma2 ** 2]
    out += [float(m[0]) for m in mus]
    out += [float(m[0] ** 2) for m in mus]
    out += [float(p.matrix[0, 0]) for p in psis]
    out.append(float(np.sum(y * y)))
    return out


NAMES = (
    ["sigma2", "sigma2^2"]
    + [f"mu_{k}" for k in range(3)]
    + [f"mu_{k}^2" for k in range(3)]
    + [f"psi_{k}" for k in range(3)]
    + ["|y|^2"]
)


def run(n_fwd=200000, n_succ=200000):
    rng = RngStream(2024)
    t0 = time.time()
    F = np.array([stats_of(*(lambda d: (d[0], d[1], d[3], d[5]))(forward_draw(rng.substream("f", i)))) for i in range(n_fwd)])
    print(f"forward {n_fwd} in {time.time()-t0:.1f}s")

    srng = rng.substream("succ")
    mus, psis, Us, sigma2, theta, y = forward_draw(rng.substream("init"))
    state = HierarchicalState(Us, mus, psis, sigma2)
    S = np.empty((n_succ, len(NAMES)))
    t0 = time.time()
    import sys
    psi_scale = sys.argv[1] if len(sys.argv) > 1 else "gram"
    for it in range(n_succ):
        theta = state.theta
        y = theta + np.sqrt(state.sigma2) * srng.standard_normal(DIMS)
        state = gibbs_sweep_hier(MultiwayArray(y), state, PRIOR, srng, psi_scale=psi_scale)
        S[it] = stats_of(state.mu, state.psi, state.sigma2, y)
    print(f"successive ({psi_scale}) {n_succ} in {time.time()-t0:.1f}s")

    for j, name in enumerate(NAMES):
        mf, sf = F[:, j].mean(), F[:, j].std(ddof=1) / np.sqrt(len(F))
        ms = S[:, j].mean()
        e = ess(S[:, j])
        ss = S[:, j].std(ddof=1) / np.sqrt(e)
        z = (mf - ms) / np.hypot(sf, ss)
        print(f"{name:10s} fwd {mf:9.4f}±{sf:.4f}  succ {ms:9.4f}±{ss:.4f}  z={z:6.2f}  ess={e:9.0f}")


if __name__ == "__main__":
    run(100000, 100000)
