"""Overfit the network on synthetic pairs and report train-set PSNR and the loss curve.

    python scripts/overfit_benchmark.py --epochs 300 --out runs/overfit
"""
import argparse
import time
from pathlib import Path

from usln.benchmark import OverfitConfig, overfit_train_config, run_overfit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--pairs", type=int, default=8)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--batch-size", type=int)
    ap.add_argument("--lr0", type=float)
    ap.add_argument("--decay", type=float, help="per-epoch multiplicative lr decay")
    ap.add_argument("--out", type=Path, help="keep checkpoints, train_log.tsv and weights here")
    args = ap.parse_args()

    train = overfit_train_config(args.epochs, args.seed)
    for key, val in (("batch_size", args.batch_size), ("lr0", args.lr0), ("lr_decay_per_epoch", args.decay)):
        if val is not None:
            setattr(train, key, val)
    train.__post_init__()
    cfg = OverfitConfig(args.pairs, args.size, args.seed, train)

    t0 = time.perf_counter()
    res = run_overfit(cfg, args.out)
    step = max(1, len(res.history) // 10)
    print("epoch\tlr\tloss")
    for h in res.history[::step] + ([res.history[-1]] if (len(res.history) - 1) % step else []):
        print(f"{h.epoch + 1}\t{h.lr:.3g}\t{h.total:.5f}")
    print(f"train PSNR mean {res.mean_psnr:.2f} dB, min {min(res.psnr):.2f} dB")
    print(f"loss ratio last/first {res.loss_ratio:.4f}")
    print(f"{time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
