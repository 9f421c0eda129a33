"""Write a directory-per-class synthetic fire/nofire dataset of PNGs."""

import argparse

from vitforge.synthetic import make_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("root")
    ap.add_argument("--train", type=int, default=128, help="images per class in train/")
    ap.add_argument("--val", type=int, default=32)
    ap.add_argument("--test", type=int, default=32)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    root = make_dataset(args.root, {"train": args.train, "val": args.val, "test": args.test},
                        size=args.size, seed=args.seed)
    print(f"wrote {root}")


if __name__ == "__main__":
    main()
