"""Typed round messages and the optional protocol transcript.

Messages are immutable records. They carry weights, weight updates and
boundary-bus hidden embeddings, plus integer bookkeeping (round, layer, ids,
sample positions). Raw load windows and labels never appear in any variant;
:func:`check_message_privacy` enforces this structurally.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from types import MappingProxyType

import numpy as np


class ProtocolError(RuntimeError):
    """A client was asked to run without an embedding it needs."""

    def __init__(self, message, round=None, layer=None, bus=None):
        super().__init__(message)
        self.round, self.layer, self.bus = round, layer, bus


def _frozen(d):
    out = {}
    for k, v in d.items():
        a = np.array(v, dtype=float)
        a.setflags(write=False)
        out[k] = a
    return MappingProxyType(out)


@dataclass(frozen=True)
class WeightBroadcast:
    round: int
    fe: MappingProxyType
    gcn: MappingProxyType

    @classmethod
    def create(cls, round, fe, gcn):
        return cls(int(round), _frozen(fe), _frozen(gcn))


@dataclass(frozen=True)
class EmbeddingShare:
    """Embeddings entering GCN layer ``layer`` for the sender's boundary buses.

    ``rows[bus]`` has shape (len(samples), d_layer); ``samples`` are positions
    in the shared training index, so receivers can align rows with their own
    batches.
    """

    round: int
    layer: int
    sender: int
    samples: np.ndarray
    rows: MappingProxyType

    @classmethod
    def create(cls, round, layer, sender, samples, rows):
        s = np.array(samples, dtype=np.int64)
        s.setflags(write=False)
        return cls(int(round), int(layer), int(sender), s,
                   _frozen({int(b): r for b, r in rows.items()}))

    def restrict(self, buses):
        """Copy holding only the rows for ``buses``."""
        return EmbeddingShare(self.round, self.layer, self.sender, self.samples,
                              MappingProxyType({b: self.rows[b] for b in buses}))


@dataclass(frozen=True)
class GradientUpload:
    round: int
    client: int
    fe_grads: MappingProxyType
    gcn_grads: MappingProxyType
    n_m: int

    @classmethod
    def create(cls, round, client, fe_grads, gcn_grads, n_m):
        return cls(int(round), int(client), _frozen(fe_grads), _frozen(gcn_grads), int(n_m))


MESSAGE_TYPES = (WeightBroadcast, EmbeddingShare, GradientUpload)

# every field a message may carry, and what kind of value it is
ALLOWED_FIELDS = {
    "round": "int", "layer": "int", "sender": "int", "client": "int", "n_m": "int",
    "samples": "index", "fe": "weights", "gcn": "weights", "fe_grads": "weights",
    "gcn_grads": "weights", "rows": "embeddings",
}


def check_message_privacy(msg, embedding_widths, raw_width):
    """Raise ``ProtocolError`` if ``msg`` could carry raw samples or labels.

    The check is purely structural: every field must be a known weight,
    gradient, embedding or integer field; embedding rows must be 2-D with a
    hidden width from ``embedding_widths`` and never the raw feature width.
    """
    if not isinstance(msg, MESSAGE_TYPES):
        raise ProtocolError(f"unknown message type {type(msg).__name__}")
    for f in fields(msg):
        kind = ALLOWED_FIELDS.get(f.name)
        value = getattr(msg, f.name)
        if kind is None:
            raise ProtocolError(f"{type(msg).__name__}.{f.name} is not an allowed field")
        if kind == "int" and not isinstance(value, int):
            raise ProtocolError(f"{f.name} must be an integer")
        if kind == "index" and (value.ndim != 1 or not np.issubdtype(value.dtype, np.integer)):
            raise ProtocolError("sample positions must be a 1-D integer index")
        if kind == "embeddings":
            for bus, rows in value.items():
                if rows.ndim != 2 or rows.shape[1] not in embedding_widths or rows.shape[1] == raw_width:
                    raise ProtocolError(f"rows for bus {bus} have shape {rows.shape}, not a hidden embedding",
                                        round=msg.round, layer=msg.layer, bus=bus)


def payload_digest(msg) -> str:
    h = hashlib.sha256()
    for f in fields(msg):
        value = getattr(msg, f.name)
        if isinstance(value, MappingProxyType):
            for k in sorted(value):
                h.update(str(k).encode())
                h.update(np.ascontiguousarray(value[k]).tobytes())
        elif isinstance(value, np.ndarray):
            h.update(value.tobytes())
        else:
            h.update(repr(value).encode())
    return h.hexdigest()[:16]


def _endpoint(role, ident=None):
    return role if ident is None else f"{role}{ident}"


def transcript_line(msg, receiver) -> str:
    """``round|type|sender|receiver|payload-digest``"""
    if isinstance(msg, WeightBroadcast):
        sender = "server"
    elif isinstance(msg, GradientUpload):
        sender = _endpoint("client", msg.client)
    else:
        sender = _endpoint("client", msg.sender)
    return f"{msg.round}|{type(msg).__name__}|{sender}|{receiver}|{payload_digest(msg)}"


class Transcript:
    """Collects emitted messages; optionally mirrors transcript lines to a file."""

    def __init__(self, path=None, keep_messages=False):
        self.lines = []
        self.messages = [] if keep_messages else None
        self._fh = open(path, "w") if path is not None else None

    def record(self, msg, receiver):
        line = transcript_line(msg, receiver)
        self.lines.append(line)
        if self.messages is not None:
            self.messages.append(msg)
        if self._fh is not None:
            self._fh.write(line + "\n")

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None
