#!/usr/bin/env python3
"""Regenerates f1_trend.csv and f2_mean_revert.csv in the parent directory."""
import math
from datetime import datetime, timedelta, timezone
from pathlib import Path

HERE = Path(__file__).resolve().parent.parent


def fmt(x):
    s = f"{x:.4f}".rstrip("0").rstrip(".")
    return s or "0"


def write(path, t0, step, closes, volumes, pad):
    rows = ["timestamp,open,high,low,close,volume"]
    prev = closes[0]
    for i, (c, v) in enumerate(zip(closes, volumes)):
        o = prev
        hi = max(o, c) + pad
        lo = min(o, c) - pad
        ts = (t0 + step * i).strftime("%Y-%m-%dT%H:%M:%SZ")
        rows.append(f"{ts},{fmt(o)},{fmt(hi)},{fmt(lo)},{fmt(c)},{fmt(v)}")
        prev = c
    path.write_text("\n".join(rows) + "\n")


def f1():
    # Flat, then a steady rise, a decline, and a flat tail: one golden cross
    # and one death cross under MA(3, 5).
    closes = []
    for i in range(60):
        if i < 15:
            c = 100.0
        elif i < 35:
            c = 100.0 + 2.0 * (i - 14)
        elif i < 50:
            c = 140.0 - 1.5 * (i - 34)
        else:
            c = 117.5
        closes.append(c)
    volumes = [1000 + 37 * ((i * 7) % 11) for i in range(60)]
    t0 = datetime(2021, 1, 1, tzinfo=timezone.utc)
    write(HERE / "f1_trend.csv", t0, timedelta(days=1), closes, volumes, 0.5)


def f2():
    # Five-minute bars oscillating around 100 across a UTC midnight.
    n = 288
    closes = [round(100.0 + 2.0 * math.sin(2 * math.pi * i / 24), 4) for i in range(n)]
    volumes = [10 + (i * 7) % 13 for i in range(n)]
    t0 = datetime(2021, 6, 1, 12, 0, tzinfo=timezone.utc)
    write(HERE / "f2_mean_revert.csv", t0, timedelta(minutes=5), closes, volumes, 0.1)


if __name__ == "__main__":
    f1()
    f2()
