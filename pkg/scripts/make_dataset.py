"""Generate a synthetic PNG dataset for desk-scale deblurring runs."""

import argparse

from serpent.datagen import make_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir")
    ap.add_argument("--count", type=int, default=200)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--channels", type=int, default=3, choices=(1, 3))
    args = ap.parse_args()
    paths = make_dataset(args.out_dir, args.count, size=args.size, seed=args.seed,
                         channels=args.channels)
    print(f"wrote {len(paths)} images to {args.out_dir}")


if __name__ == "__main__":
    main()
