"""Splittable counter-based random streams.

Every consumer of randomness (data generation, latent sampling, noise
injection, ...) gets its own child stream derived from (seed, label), so
adding or removing draws in one place never shifts the samples seen by
another.  Streams are Philox counter-based generators keyed by a hash of
the label path, which makes child derivation independent of call order.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _derive_key(parent_key: bytes, label: str) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    h.update(parent_key)
    h.update(label.encode("utf-8"))
    return h.digest()


class Rng:
    """A labeled Philox stream; children are forked by (seed, label)."""

    def __init__(self, seed: int, _key: bytes | None = None, _path: str = ""):
        self.seed = int(seed)
        self.path = _path
        if _key is None:
            _key = _derive_key(b"gf2-root", str(self.seed))
        self._key = _key
        self._gen = np.random.Generator(
            np.random.Philox(key=int.from_bytes(_key, "little"))
        )

    def child(self, label) -> "Rng":
        label = str(label)
        path = f"{self.path}/{label}" if self.path else label
        return Rng(self.seed, _key=_derive_key(self._key, label), _path=path)

    def normal(self, shape=(), mean=0.0, std=1.0) -> np.ndarray:
        x = self._gen.standard_normal(size=shape, dtype=np.float32)
        return x * np.float32(std) + np.float32(mean)

    def uniform(self, shape=(), low=0.0, high=1.0) -> np.ndarray:
        x = self._gen.random(size=shape, dtype=np.float32)
        return x * np.float32(high - low) + np.float32(low)

    def integers(self, low, high, shape=()) -> np.ndarray:
        # high is inclusive, matching the closed ranges used by scene configs
        return self._gen.integers(low, high, size=shape, endpoint=True)

    def shuffle(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def get_state(self) -> dict:
        state = self._gen.bit_generator.state
        return {
            "seed": self.seed,
            "path": self.path,
            "key": self._key.hex(),
            "counter": [int(v) for v in state["state"]["counter"]],
            "philox_key": [int(v) for v in state["state"]["key"]],
            "buffer": [int(v) for v in state["buffer"]],
            "buffer_pos": int(state["buffer_pos"]),
            "has_uint32": int(state["has_uint32"]),
            "uinteger": int(state["uinteger"]),
        }

    @classmethod
    def from_state(cls, snap: dict) -> "Rng":
        rng = cls(snap["seed"], _key=bytes.fromhex(snap["key"]), _path=snap["path"])
        state = rng._gen.bit_generator.state
        state["state"]["counter"] = np.array(snap["counter"], dtype=np.uint64)
        state["state"]["key"] = np.array(snap["philox_key"], dtype=np.uint64)
        state["buffer"] = np.array(snap["buffer"], dtype=np.uint64)
        state["buffer_pos"] = snap["buffer_pos"]
        state["has_uint32"] = snap["has_uint32"]
        state["uinteger"] = snap["uinteger"]
        rng._gen.bit_generator.state = state
        return rng
