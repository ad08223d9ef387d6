"""Learning-curve smoothing and trend fitting for ``metrics.csv`` files."""

from __future__ import annotations

import csv
from os import PathLike

import numpy as np


class CurveParseError(ValueError):
    pass


def read_rewards(path: str | PathLike) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CurveParseError(f"{path}:1: empty file") from None
        try:
            ie, ir = header.index("epoch"), header.index("episodic_reward")
        except ValueError:
            raise CurveParseError(f"{path}:1: header needs 'epoch' and 'episodic_reward' columns") from None
        epochs, rewards = [], []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            try:
                epochs.append(int(row[ie]))
                rewards.append(float(row[ir]))
            except (ValueError, IndexError):
                raise CurveParseError(f"{path}:{line}: malformed row {row!r}") from None
    return np.asarray(epochs), np.asarray(rewards, dtype=np.float64)


def moving_average(epochs, rewards, window: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Trailing mean over ``window`` epochs, one point per full window.

    With fewer than ``window`` rows the result is a single point: the mean
    of everything, placed at the last epoch.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    epochs = np.asarray(epochs)
    rewards = np.asarray(rewards, dtype=np.float64)
    if len(rewards) == 0:
        return epochs[:0], rewards[:0]
    if window >= len(rewards):
        return epochs[-1:], np.array([rewards.mean()])
    c = np.cumsum(np.concatenate([[0.0], rewards]))
    ma = (c[window:] - c[:-window]) / window
    return epochs[window - 1 :], ma


def linear_slope(x, y) -> float:
    """Least-squares slope of ``y`` on ``x``; 0 for fewer than two points."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2:
        return 0.0
    xc = x - x.mean()
    denom = float((xc * xc).sum())
    return float((xc * (y - y.mean())).sum() / denom) if denom > 0 else 0.0


def write_curve(path: str | PathLike, epochs, rewards, window: int = 50) -> dict:
    """Write ``epoch,reward,moving_average`` rows and return the trend summary."""
    ma_epochs, ma = moving_average(epochs, rewards, window)
    lookup = dict(zip(np.asarray(ma_epochs).tolist(), ma.tolist()))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "reward", "moving_average"])
        for e, r in zip(np.asarray(epochs).tolist(), np.asarray(rewards).tolist()):
            w.writerow([e, repr(float(r)), repr(lookup[e]) if e in lookup else ""])
    return {"window": window, "points": len(ma), "slope": linear_slope(ma_epochs, ma)}
