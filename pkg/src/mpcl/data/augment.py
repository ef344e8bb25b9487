import numpy as np


def temporal_window(sequence, window_len: int, rng) -> np.ndarray:
    """Random contiguous window of at most ``window_len`` frames.

    The start is uniform over every valid offset, so successive draws from the
    same sequence may overlap. Sequences no longer than the window come back
    whole.
    """
    if window_len < 1:
        raise ValueError(f"window_len must be >= 1, got {window_len}")
    t = len(sequence)
    if t <= window_len:
        return sequence
    start = int(rng.integers(0, t - window_len + 1))
    return sequence[start:start + window_len]
