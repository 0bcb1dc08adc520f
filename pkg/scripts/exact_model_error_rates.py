#!/usr/bin/env python3
"""Operating characteristics of the TDP machinery under the exact model.

Bypasses fitting entirely: coefficient differences are drawn straight from
the Gaussian model the window tests assume (true covariance, zero bias), so
the chi-square nulls are exact. The resulting error rates are the ceiling for
any implementation whose fitted statistics actually follow the assumed model,
which makes this the reference point for judging the simulated tables.
"""

import argparse
import sys

import numpy as np
from scipy.stats import chi2

from smoothdiff.basis import difference_penalty
from smoothdiff.fitting import fit_stratum, select_lambda
from smoothdiff.simulate import SimScenario, gen_coefficients, gen_stratum, replicate_rng
from smoothdiff.tdp import PValueFamily, phi_alpha
from smoothdiff.windows import sliding_inverses


def representative_covariance(seed=99):
    """V1 + V2 from one fitted stratum of the reference Gaussian scenario."""
    scn = SimScenario(n_nonzero=15, alphas=(0.1,), n_replicates=1, seed=seed)
    spec = scn.basis()
    pen = difference_penalty(scn.m, scn.penalty_order)
    rng = replicate_rng(seed, 0)
    b_base, _, _ = gen_coefficients(scn, rng)
    data = gen_stratum(b_base, scn, rng, spec)
    fit = fit_stratum(data, spec, pen, select_lambda(data, spec, pen))
    return spec, 2.0 * fit.cov


def run(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--replicates", type=int, default=1500)
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args(argv)

    spec, v = representative_covariance()
    half = np.linalg.cholesky(v)
    w = spec.degree + 1
    m_t = spec.n_regions
    inverses = sliding_inverses(v, w, reanchor=None)

    cases = [
        (15, (0.1, 0.2), (0.5, 0.7, 0.9)),
        (30, (0.1,), (0.5, 0.7, 0.9)),
    ]
    for nz, alphas, taus in cases:
        scn = SimScenario(n_nonzero=nz, alphas=alphas, n_replicates=1, seed=args.seed)
        errs = {(a, t): [] for a in alphas for t in taus}
        rng = np.random.default_rng(args.seed + nz)
        for _ in range(args.replicates):
            b_base, b_alt, _ = gen_coefficients(scn, rng)
            delta_true = b_alt - b_base
            d_hat = delta_true + half @ rng.normal(size=scn.m)
            t_stats = np.asarray(
                [d_hat[k : k + w] @ inverses[k] @ d_hat[k : k + w] for k in range(m_t)]
            )
            p = chi2.sf(t_stats, df=w)
            truth = np.asarray([np.any(delta_true[k : k + w] != 0) for k in range(m_t)])
            for alpha in alphas:
                family = PValueFamily(p=p, alpha=alpha)
                order = np.lexsort((np.arange(m_t), p))
                for tau in taus:
                    chosen = None
                    for s in range(m_t, 0, -1):
                        phi = phi_alpha(family, order[:s])
                        if phi >= tau * s:
                            chosen = (s, phi)
                            break
                    if chosen is None:
                        errs[(alpha, tau)].append(0)
                        continue
                    s, phi = chosen
                    n_true = int(truth[order[:s]].sum())
                    errs[(alpha, tau)].append(int(phi > n_true))
        print(f"{nz}/120 planted differences, exact model, {args.replicates} replicates:")
        for (alpha, tau), vals in sorted(errs.items()):
            mean = np.mean(vals)
            se = np.std(vals) / np.sqrt(len(vals))
            print(f"  alpha={alpha} tdp={tau}: error={mean:.4f} +- {se:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(run())
