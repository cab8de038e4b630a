"""Write synthetic degraded/clean PNG pairs, a manifest and a training config.

    python scripts/make_synthetic_dataset.py data/synthetic --pairs 16 --size 64
    usln train data/synthetic/config.ini --epochs 5
"""
import argparse
from pathlib import Path

from usln.data import save_image, write_manifest
from usln.synthetic import make_pairs

CONFIG = """[data]
manifest = manifest.csv
output_dir = run

[train]
epochs = {epochs}
batch_size = 2
lr0 = 0.005
lr_decay_per_epoch = 0.01
resize = none
checkpoint_every = 10
"""


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", type=Path)
    ap.add_argument("--pairs", type=int, default=16)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--test-fraction", type=float, default=0.25)
    ap.add_argument("--epochs", type=int, default=50)
    args = ap.parse_args()

    rows = []
    n_test = int(round(args.pairs * args.test_fraction))
    for i, (raw, clean) in enumerate(make_pairs(args.pairs, args.size, args.seed)):
        split = "test" if i >= args.pairs - n_test else "train"
        save_image(raw, args.out / "raw" / f"{i:04d}.png")
        save_image(clean, args.out / "reference" / f"{i:04d}.png")
        rows.append((f"raw/{i:04d}.png", f"reference/{i:04d}.png", split))
    write_manifest(args.out / "manifest.csv", [r for r in rows if r[2] == "train"])
    write_manifest(args.out / "test.csv", [r for r in rows if r[2] == "test"])
    (args.out / "config.ini").write_text(CONFIG.format(epochs=args.epochs), encoding="utf-8")
    print(f"wrote {len(rows)} pairs to {args.out} ({n_test} test)")


if __name__ == "__main__":
    main()
