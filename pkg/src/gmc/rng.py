"""Counter-based random streams.

Every random draw in the package comes from a Philox stream keyed on
(seed, purpose, indices), so any value can be regenerated in isolation
without replaying the draws that happened to precede it.
"""

from __future__ import annotations

import numpy as np

# Stream purposes. Values are part of the on-disk reproducibility story:
# changing them changes every generated dataset and initialization.
CLASS_TEMPLATE = 0
STYLE_MIXER = 1
LABEL = 2
STYLE = 3
NOISE = 4
SHUFFLE = 5
PARAM_INIT = 6
PROBE_INIT = 7
PROBE_SHUFFLE = 8

_MASK64 = (1 << 64) - 1


def stream(seed: int, purpose: int, a: int = 0, b: int = 0) -> np.random.Generator:
    """Return the generator for one (seed, purpose, a, b) stream.

    `a` must fit in 40 bits and `b` in 20, which covers sample indices,
    epochs, modalities, and parameter ordinals with room to spare.
    """
    if not 0 <= a < (1 << 40) or not 0 <= b < (1 << 20):
        raise ValueError(f"stream index out of range: a={a}, b={b}")
    token = (purpose << 60) | (a << 20) | b
    key = np.array([seed & _MASK64, token & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
