"""Time the compiled kernels against their pure-Python twins.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5]

Both backends are run on identical inputs and their outputs are compared
before timing.
"""
import argparse
import timeit

import numpy as np

from tlvar import kernels
from tlvar.tensor import lambda_max


def _var_case(rng, N, p, n):
    coef = rng.standard_normal((N, N * p))
    coef *= 0.4 / np.abs(np.linalg.eigvals(coef[:, :N])).max() / p
    return (np.ascontiguousarray(coef), rng.standard_normal((n, N)), p)


def _lasso_case(rng, N, p, T):
    X = rng.standard_normal((N * p, T))
    Y = rng.standard_normal((N, T))
    G = X @ X.T / T
    C = Y @ X.T / T
    return (G, C, 0.05, 1.0 / lambda_max(G), np.zeros_like(C), 20000, 1e-8, 10)


CASES = {
    "var_recursion N=10 p=1 n=2000": ("var_recursion", lambda r: _var_case(r, 10, 1, 2000)),
    "var_recursion N=20 p=4 n=2000": ("var_recursion", lambda r: _var_case(r, 20, 4, 2000)),
    "lasso_fista N=10 p=4 T=200": ("lasso_fista", lambda r: _lasso_case(r, 10, 4, 200)),
    "lasso_fista N=20 p=4 T=200": ("lasso_fista", lambda r: _lasso_case(r, 20, 4, 200)),
}


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    impls = kernels.backends()
    if "compiled" not in impls:
        print("compiled extension not built; timing the Python backend only")
    names = list(impls)
    print(f"{'case':34s}" + "".join(f"{n:>12s}" for n in names) + "     speedup")
    for label, (fn, make) in CASES.items():
        inputs = make(np.random.default_rng(0))
        outs = [getattr(impls[n], fn)(*inputs) for n in names]
        first = [np.asarray(o[0] if isinstance(o, tuple) else o) for o in outs]
        for o in first[1:]:
            np.testing.assert_allclose(o, first[0], rtol=1e-8, atol=1e-10)
        best = [min(timeit.repeat(lambda f=getattr(impls[n], fn): f(*inputs), number=1,
                                  repeat=args.repeat)) for n in names]
        speed = f"{best[0] / best[-1]:10.1f}x" if len(best) > 1 else ""
        print(f"{label:34s}" + "".join(f"{b * 1e3:10.2f}ms" for b in best) + speed)


if __name__ == "__main__":
    main()
