"""Time each hot kernel through its jitted and its numpy implementation.

    python benchmarks/bench_kernels.py [--repeat 20]

Both paths are checked for identical output before timing. The first jitted
call (compilation) is excluded.
"""
import argparse
import timeit

import numpy as np

from slfvlab import kernels
from slfvlab._accel import HAVE_NUMBA
from slfvlab.environment import EventModel, generate_environment
from slfvlab.geometry import Domain


def cases(rng):
    dom = Domain.torus(20.0, 20.0)
    pos = dom.uniform(rng, 200_000)
    center = np.array([3.0, 17.0])
    yield "sq_distances", (pos, center, dom.L, True)

    env = generate_environment(EventModel.ball(1.0, 1.0, 0.5), (0.0, 50.0), dom, 0)
    g = env.index
    x = np.array([10.0, 10.0])
    c = g.cell_of(x)
    start, stop = int(g.cell_start[c]), int(g.cell_start[c + 1])
    yield "query_cell", (x, 0.0, 50.0, start, stop, g.cell_items, env.t, env.z, env._reach2, dom.L, True)

    a = rng.integers(0, 2 ** 40, size=200_000)
    yield "hash_uniform", (0x1234ABCD, a, 7)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<14} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for name, argv in cases(rng):
        nb, npy = kernels.IMPLEMENTATIONS[name]
        if not np.array_equal(nb(*argv), npy(*argv)):
            raise SystemExit(f"{name}: implementations disagree")
        t_nb = min(timeit.repeat(lambda: nb(*argv), number=1, repeat=args.repeat)) * 1e3
        t_np = min(timeit.repeat(lambda: npy(*argv), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<14} {t_nb:>10.3f} {t_np:>10.3f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
