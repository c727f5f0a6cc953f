"""Deterministic random number generation for training runs.

Every training run owns a :class:`RunRng` seeded from the experiment seed.
Randomness is split into named substreams backed by the counter-based
Philox generator, so each consumer draws from its own stream in a fixed,
documented order:

* ``"init"``     - parameter initialization, consumed once at model build
                   time in parameter construction order
* ``"dropout"``  - dropout masks, consumed per training forward pass in
                   op-construction order
* ``"shuffle"``  - training batch shuffling, consumed once per epoch
* ``"finetune.shuffle"`` - batch shuffling during the fine-tune phase

Two runs with the same seed therefore consume identical random sequences,
and adding a consumer to one stream never perturbs the others.
"""

import hashlib

import numpy as np


def _stream_key(seed: int, name: str) -> np.ndarray:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    tag = int.from_bytes(digest[:8], "little")
    return np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(tag)], dtype=np.uint64)


class RunRng:
    """Named, counter-based random streams for one training run."""

    def __init__(self, seed: int):
        if not isinstance(seed, (int, np.integer)):
            raise TypeError(f"seed must be an int, got {type(seed).__name__}")
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def stream(self, name: str) -> np.random.Generator:
        """Return the lazily created generator for a named stream.

        Repeated calls with the same name return the same generator, so
        consumers share one sequential stream per name.
        """
        gen = self._streams.get(name)
        if gen is None:
            gen = np.random.Generator(np.random.Philox(key=_stream_key(self.seed, name)))
            self._streams[name] = gen
        return gen

    def fork(self) -> "RunRng":
        """Fresh RunRng with the same seed and all streams rewound."""
        return RunRng(self.seed)
