"""Append-only, integrity-tagged logs of checkpoints and control inputs.

Each sub-system owns three coupled logs: checkpoints, their save times and
the applied control inputs.  Every appended record extends a keyed-hash
chain (HMAC-SHA256 over the canonical payload concatenated with the
previous tag), so any in-place mutation of a stored record is detected by
:func:`SecureStore.verify_integrity`.  Truncating a suffix of a log is NOT
detected by the chain alone; only the in-memory record counts reveal it.

The store is in-memory first.  ``save``/``load`` provide an optional binary
persistence format for post-run analysis: per record
``[u32 length][payload][32-byte tag]``, little-endian, IEEE-754 doubles.

The integrity key comes from the ``CPSRECOVER_STORE_KEY`` environment
variable or the constructor; the built-in default key is for simulation
convenience only and offers no security.
"""

from __future__ import annotations

import hmac
import hashlib
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .timebase import to_us

DEFAULT_KEY = b"cpsrecover-insecure-default-key"
_TAG_LEN = 32


class IntegrityError(RuntimeError):
    """A stored record failed integrity verification."""


class MonotonicityError(ValueError):
    """An append would violate the strictly-increasing time order."""


@dataclass(frozen=True)
class Checkpoint:
    """Timestamped cyber-physical snapshot: estimate plus detector flags."""

    t: float
    x_hat: np.ndarray
    ads_flags: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x_hat", np.asarray(self.x_hat, float))
        object.__setattr__(self, "ads_flags",
                           np.asarray(self.ads_flags, int).ravel())


@dataclass(frozen=True)
class ControlRecord:
    """Control input applied at time ``t``."""

    t: float
    u: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", np.asarray(self.u, float))


def _pack_checkpoint(cp: Checkpoint) -> bytes:
    return (b"C" + struct.pack("<dII", cp.t, cp.x_hat.size, cp.ads_flags.size)
            + cp.x_hat.astype("<f8").tobytes()
            + cp.ads_flags.astype("<u1").tobytes())


def _unpack_checkpoint(payload: bytes) -> Checkpoint:
    t, nx, nf = struct.unpack_from("<dII", payload, 1)
    off = 1 + struct.calcsize("<dII")
    x = np.frombuffer(payload, "<f8", nx, off)
    flags = np.frombuffer(payload, "<u1", nf, off + 8 * nx).astype(int)
    return Checkpoint(t, x.copy(), flags)


def _pack_control(rec: ControlRecord) -> bytes:
    return (b"U" + struct.pack("<dI", rec.t, rec.u.size)
            + rec.u.astype("<f8").tobytes())


def _unpack_control(payload: bytes) -> ControlRecord:
    t, nu = struct.unpack_from("<dI", payload, 1)
    off = 1 + struct.calcsize("<dI")
    return ControlRecord(t, np.frombuffer(payload, "<f8", nu, off).copy())


class _Chain:
    """One append-only log with a keyed hash chain."""

    def __init__(self, key: bytes):
        self._key = key
        self.payloads: list[bytes] = []
        self.tags: list[bytes] = []

    def _tag(self, payload: bytes, prev: bytes) -> bytes:
        return hmac.new(self._key, prev + payload, hashlib.sha256).digest()

    def append(self, payload: bytes) -> None:
        prev = self.tags[-1] if self.tags else b"\x00" * _TAG_LEN
        self.payloads.append(payload)
        self.tags.append(self._tag(payload, prev))

    def verify(self) -> bool:
        prev = b"\x00" * _TAG_LEN
        for payload, tag in zip(self.payloads, self.tags):
            if not hmac.compare_digest(self._tag(payload, prev), tag):
                return False
            prev = tag
        return True


class SecureStore:
    """Per-subsystem checkpoint, save-time and control logs."""

    def __init__(self, key: bytes | None = None):
        if key is None:
            key = os.environb.get(b"CPSRECOVER_STORE_KEY", DEFAULT_KEY)
        self._key = key
        self._checkpoints: dict[str, _Chain] = {}
        self._controls: dict[str, _Chain] = {}
        self._busy = False  # internal exclusion contract, single writer

    def _chains(self, subsystem: str) -> tuple[_Chain, _Chain]:
        if subsystem not in self._checkpoints:
            self._checkpoints[subsystem] = _Chain(self._key)
            self._controls[subsystem] = _Chain(self._key)
        return self._checkpoints[subsystem], self._controls[subsystem]

    # -- writes ---------------------------------------------------------

    def append_checkpoint(self, subsystem: str, cp: Checkpoint) -> None:
        """Append a checkpoint; its save time is recorded with it."""
        if self._busy:
            raise RuntimeError("interleaved store write")
        self._busy = True
        try:
            ckpts, _ = self._chains(subsystem)
            last = self.save_times(subsystem)
            if last and cp.t <= last[-1]:
                raise MonotonicityError(
                    f"{subsystem}: checkpoint time {cp.t} not after {last[-1]}")
            ckpts.append(_pack_checkpoint(cp))
        finally:
            self._busy = False

    def append_control(self, subsystem: str, rec: ControlRecord) -> None:
        if self._busy:
            raise RuntimeError("interleaved store write")
        self._busy = True
        try:
            _, ctrls = self._chains(subsystem)
            if ctrls.payloads:
                last_t = _unpack_control(ctrls.payloads[-1]).t
                if rec.t <= last_t:
                    raise MonotonicityError(
                        f"{subsystem}: control time {rec.t} not after {last_t}")
            ctrls.append(_pack_control(rec))
        finally:
            self._busy = False

    # -- reads ----------------------------------------------------------

    def subsystems(self) -> list[str]:
        return list(self._checkpoints)

    def save_times(self, subsystem: str) -> list[float]:
        ckpts, _ = self._chains(subsystem)
        return [_unpack_checkpoint(p).t for p in ckpts.payloads]

    def checkpoints(self, subsystem: str) -> list[Checkpoint]:
        ckpts, _ = self._chains(subsystem)
        return [_unpack_checkpoint(p) for p in ckpts.payloads]

    def controls(self, subsystem: str) -> list[ControlRecord]:
        _, ctrls = self._chains(subsystem)
        return [_unpack_control(p) for p in ctrls.payloads]

    def retrieve(self, subsystem: str, t_from: float, t_to: float):
        """Records with ``t in [t_from, t_to)``; verifies integrity first.

        Returns ``(checkpoints, save_times, controls)``.  Recovery must not
        proceed on corrupt data, so an integrity failure is a hard error.
        """
        if t_from > t_to:
            raise ValueError("t_from must be <= t_to")
        if not self.verify_integrity():
            raise IntegrityError("store integrity check failed")
        lo, hi = to_us(t_from), to_us(t_to)
        cps = [c for c in self.checkpoints(subsystem)
               if lo <= to_us(c.t) < hi]
        ctl = [c for c in self.controls(subsystem)
               if lo <= to_us(c.t) < hi]
        return cps, [c.t for c in cps], ctl

    def verify_integrity(self) -> bool:
        """True iff every chain in every subsystem validates."""
        for sub in self._checkpoints:
            if not self._checkpoints[sub].verify():
                return False
            if not self._controls[sub].verify():
                return False
        return True

    def prune_controls(self, subsystem: str, keep_from: float) -> None:
        """Drop control records older than ``keep_from`` seconds.

        The caller is responsible for keeping at least the history any live
        recovery could still roll forward from (oldest usable checkpoint).
        The chain is rebuilt over the surviving records.
        """
        _, ctrls = self._chains(subsystem)
        keep = [p for p in ctrls.payloads
                if _unpack_control(p).t >= keep_from]
        fresh = _Chain(self._key)
        for p in keep:
            fresh.append(p)
        self._controls[subsystem] = fresh

    # -- persistence ----------------------------------------------------

    def save(self, path) -> None:
        """Write all logs as length-prefixed tagged records."""
        with open(path, "wb") as fh:
            for sub in sorted(self._checkpoints):
                for chain in (self._checkpoints[sub], self._controls[sub]):
                    for payload, tag in zip(chain.payloads, chain.tags):
                        rec = sub.encode() + b"\x00" + payload
                        fh.write(struct.pack("<I", len(rec)))
                        fh.write(rec)
                        fh.write(tag)

    @classmethod
    def load(cls, path, key: bytes | None = None) -> "SecureStore":
        store = cls(key=key)
        with open(path, "rb") as fh:
            while True:
                hdr = fh.read(4)
                if not hdr:
                    break
                (length,) = struct.unpack("<I", hdr)
                rec = fh.read(length)
                fh.read(_TAG_LEN)  # tags are recomputed on append
                sub, payload = rec.split(b"\x00", 1)
                subsystem = sub.decode()
                if payload[:1] == b"C":
                    store.append_checkpoint(subsystem, _unpack_checkpoint(payload))
                else:
                    store.append_control(subsystem, _unpack_control(payload))
        return store

    # test hook: deliberately corrupt a stored payload
    def _tamper(self, subsystem: str, which: str = "control", index: int = 0,
                byte: int = -1) -> None:
        chain = (self._controls if which == "control"
                 else self._checkpoints)[subsystem]
        p = bytearray(chain.payloads[index])
        p[byte] ^= 0x01
        chain.payloads[index] = bytes(p)
