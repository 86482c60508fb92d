"""Time one likelihood evaluation for growing 1-D lattices and block counts."""

import argparse

from fgp.bench import TimingConfig, timing_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+", default=[10_000, 100_000, 400_000])
    ap.add_argument("--blocks", type=int, nargs="+", default=[1, 4, 8])
    ap.add_argument("--workers", type=int, default=8)
    ap.add_argument("--repeats", type=int, default=1)
    args = ap.parse_args()
    cfg = TimingConfig(sizes=args.sizes, blocks=args.blocks, repeats=args.repeats)
    print("M,J,seconds")
    for M, J, s in timing_benchmark(cfg, workers=args.workers):
        print(f"{M},{J},{s if isinstance(s, str) else f'{s:.4f}'}")


if __name__ == "__main__":
    main()
