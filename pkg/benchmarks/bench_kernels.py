"""Time the compiled and pure-Python kernels on the same synthetic workload.

    python3 benchmarks/bench_kernels.py [--users 300] [--items 1500] [--repeat 3]
"""

import argparse
import time

import numpy as np

from mmrec import backend
from mmrec.data import leave_one_out_split, sample_negatives
from mmrec.fm import FeatureEncoder, init_fm
from mmrec.similarity import SimConfig, init_similarity
from mmrec.synth import SyntheticSpec, generate_synthetic


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def workload(users, items, seed=0):
    ds, _, truth = generate_synthetic(SyntheticSpec(num_users=users, num_items=items, interactions_per_user=10, seed=seed))
    split = leave_one_out_split(ds, seed)
    train = split.train
    rng = np.random.default_rng(seed)
    u = train.users()
    neg = sample_negatives(train, u, 4, rng)
    inst_u = np.concatenate((u, np.repeat(u, 4)))
    inst_i = np.concatenate((train.indices, neg.ravel()))
    labels = np.concatenate((np.ones(u.size), np.zeros(neg.size)))
    order = rng.permutation(labels.size).astype(np.int64)
    codes = truth.model.item_codes(standardize=True)
    return train, codes, inst_u, inst_i, labels, order


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--users", type=int, default=300)
    ap.add_argument("--items", type=int, default=1500)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    train, codes, inst_u, inst_i, labels, order = workload(args.users, args.items)
    enc = FeatureEncoder(train.num_users, train.num_items, codes / np.sqrt(codes.shape[1]))
    csr = enc.encode(inst_u, inst_i)
    fm0 = init_fm(enc.layout, 16, 0)
    sim0 = init_similarity(train.num_items, codes, SimConfig(d=16))
    kernels = backend.available()
    print(f"{labels.size} training instances, {csr[1].size} FM nonzeros; backends: {', '.join(kernels)}")

    rows = {}
    for name, k in kernels.items():
        def fm_epoch():
            w0, w, V = np.zeros(1), fm0.w.copy(), fm0.V.copy()
            k.fm_sgd_epoch(w0, w, V, *csr, labels, order, 0.02, 1e-5)

        def predict():
            k.fm_predict(fm0.w0, fm0.w, fm0.V, *csr)

        def sim_epoch():
            P, O, M, A, z = (getattr(sim0, a).copy() for a in ("P", "O", "M", "A", "z"))
            k.sim_sgd_epoch(P, O, M, codes, A, z, 0.5, inst_u, inst_i, labels,
                            train.indptr, train.indices, order, 0.02, 1e-5)

        # the Python similarity kernel is slow; one pass is enough for a stable ratio
        rows[name] = {
            "fm_predict": best_of(predict, args.repeat),
            "fm_sgd_epoch": best_of(fm_epoch, args.repeat),
            "sim_sgd_epoch": best_of(sim_epoch, 1 if name == "python" else args.repeat),
        }

    names = list(rows)
    print(f"{'kernel':<15}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for op in rows[names[0]]:
        line = f"{op:<15}" + "".join(f"{rows[n][op]:>11.4f}s" for n in names)
        if "python" in rows and "cython" in rows:
            line += f"{rows['python'][op] / rows['cython'][op]:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
