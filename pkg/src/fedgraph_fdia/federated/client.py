"""Client state, embedding routing and the per-round local step."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..grid import ClientLaplacian, ClientPartition, client_laplacian
from ..model import ModelWeights, feature_forward, hybrid_backward, hybrid_forward
from ..nn.layers import gcn_layer_forward, relu
from ..nn.losses import bce_with_logits
from ..nn.optim import sgd_step
from .messages import EmbeddingShare, GradientUpload, ProtocolError


def share_buses(part: ClientPartition, client: int) -> np.ndarray:
    """Local buses of ``client`` that some other client references."""
    return np.array(sorted({v for v, _, _ in part.boundary_edges[client]}), dtype=int)


@dataclass
class ClientState:
    """One federated client: its subgraph view, data shard and embedding cache.

    ``X`` is (n_samples, n_local, W, F) model input for the local buses and
    ``y`` the matching labels. ``remote_cache[l]`` holds the latest embeddings
    of remote boundary buses entering GCN layer ``l``, aligned with the shard's
    sample positions; ``have[l]`` marks which remote buses were ever received.
    """

    client: int
    view: ClientLaplacian
    shared: np.ndarray
    X: np.ndarray
    y: np.ndarray
    weights: ModelWeights | None = None
    remote_cache: list = field(default_factory=list)
    have: list = field(default_factory=list)

    def __post_init__(self):
        if self.X.shape[1] != self.view.local_buses.size or self.y.shape != self.X.shape[:2]:
            raise ValueError(f"client {self.client}: shard does not match its subgraph view")

    @property
    def n_m(self) -> int:
        """Labelled (sample, bus) pairs in the local shard."""
        return int(self.y.size)

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    def reset_cache(self, widths):
        nr = self.view.remote_buses.size
        self.remote_cache = [np.zeros((self.n_samples, nr, d)) for d in widths]
        self.have = [np.zeros(nr, dtype=bool) for _ in widths]

    def receive(self, inbox):
        """Store inbox rows into the embedding cache."""
        pos = {int(b): i for i, b in enumerate(self.view.remote_buses)}
        for share in inbox:
            for bus, rows in share.rows.items():
                j = pos[bus]
                self.remote_cache[share.layer][share.samples, j] = rows
                self.have[share.layer][j] = True

    def check_inbox(self, round):
        for l, have in enumerate(self.have):
            if not have.all():
                bus = int(self.view.remote_buses[np.flatnonzero(~have)[0]])
                raise ProtocolError(f"round {round}: client {self.client} has no layer-{l} embedding for bus {bus}",
                                    round=round, layer=l, bus=bus)


def build_clients(grid, part: ClientPartition, X, y, L=None):
    clients = []
    for c in range(part.num_clients):
        view = client_laplacian(grid, part, c, L)
        idx = view.local_buses
        clients.append(ClientState(c, view, share_buses(part, c), np.ascontiguousarray(X[:, idx]),
                                   np.ascontiguousarray(y[:, idx], dtype=float)))
    return clients


def fedgraph_route(shares, part: ClientPartition, senders=None):
    """Deliver each client exactly the rows of its boundary neighbours.

    Returns ``{client: [EmbeddingShare, ...]}``. Every (sender, layer) pair in
    ``shares`` is routed; a receiver needing a bus whose owner is in
    ``senders`` (default: all clients) but which no share covers raises
    ``ProtocolError``.
    """
    by_key = {(s.sender, s.layer): s for s in shares}
    layers = sorted({s.layer for s in shares})
    senders = set(range(part.num_clients)) if senders is None else set(senders)
    inboxes = {}
    for c in range(part.num_clients):
        need = {}
        for _, u, owner in part.boundary_edges[c]:
            need.setdefault(owner, set()).add(u)
        inbox = []
        for owner in sorted(need):
            if owner not in senders:
                continue
            for l in layers:
                share = by_key.get((owner, l))
                missing = sorted(need[owner] - set(share.rows) if share else need[owner])
                if missing:
                    rnd = share.round if share else None
                    raise ProtocolError(f"no layer-{l} embedding for bus {missing[0]} from client {owner}",
                                        round=rnd, layer=l, bus=missing[0])
                inbox.append(share.restrict(sorted(need[owner])))
        inboxes[c] = inbox
    return inboxes


def _pseudo_grads(before, after, lr):
    return {k: (before[k] - after[k]) / lr for k in before}


def client_local_step(state: ClientState, broadcast, inbox, *, lr, batch_size=64, rng=None, epochs=1):
    """Local SGD from the broadcast weights, then upload the scaled weight change.

    The upload is ``(w_broadcast - w_local) / lr``, which equals the plain
    gradient when the epoch is a single batch. Returns
    ``(upload, outgoing shares, mean loss, local weights)``.
    """
    r = broadcast.round
    state.receive(inbox)
    state.check_inbox(r)
    start = ModelWeights({k: np.array(v) for k, v in broadcast.fe.items()},
                         {k: np.array(v) for k, v in broadcast.gcn.items()})
    w = start.copy()
    n = state.n_samples
    view = state.view
    n_remote = view.remote_buses.size
    widths = [state.remote_cache[l].shape[-1] for l in range(len(state.remote_cache))]
    out_rows = [np.zeros((n, state.shared.size, d)) for d in widths]
    share_pos = np.searchsorted(view.local_buses, state.shared)
    total, count = 0.0, 0
    for _ in range(epochs):
        order = rng.permutation(n) if rng is not None else np.arange(n)
        for s in range(0, n, batch_size):
            b = order[s:s + batch_size]
            remote = [cache[b] for cache in state.remote_cache] if n_remote else None
            logits, inputs, cache = hybrid_forward(w, state.X[b], view.local_block, remote,
                                                   view.remote_block if n_remote else None)
            loss, dlogits = bce_with_logits(logits, state.y[b])
            g_fe, g_gcn = hybrid_backward(w, cache, view.local_block, dlogits)
            for l, rows in enumerate(out_rows):
                rows[b] = inputs[l][:, share_pos]
            w.fe = sgd_step(w.fe, g_fe, lr)
            w.gcn = sgd_step(w.gcn, g_gcn, lr)
            total += loss * b.size
            count += b.size
    upload = GradientUpload.create(r, state.client, _pseudo_grads(start.fe, w.fe, lr),
                                   _pseudo_grads(start.gcn, w.gcn, lr), state.n_m)
    shares = []
    if state.shared.size:
        samples = np.arange(n)
        shares = [EmbeddingShare.create(r, l, state.client, samples,
                                        {int(bus): rows[:, j] for j, bus in enumerate(state.shared)})
                  for l, rows in enumerate(out_rows)]
    return upload, shares, total / max(count, 1), w


def federated_forward(clients, weights: ModelWeights, inputs, part: ClientPartition, *,
                      round=0, transcript=None, collect=None, samples=None):
    """Layer-synchronous forward with same-round embedding exchange.

    ``inputs[c]`` is client ``c``'s (B, n_local, W, F) window batch. Each GCN
    layer waits until every client has published its boundary embeddings for
    that layer, so with shared weights the result equals the monolithic
    forward. Returns per-client logits (B, n_local). If ``collect`` is a list,
    the emitted shares are appended to it; ``samples`` labels the batch rows
    in those shares (default ``arange(B)``).
    """
    H = []
    for c, st in enumerate(clients):
        X = inputs[c]
        B, n_loc = X.shape[:2]
        h, _ = feature_forward(weights.fe, X.reshape((B * n_loc,) + X.shape[2:]))
        H.append(h.reshape(B, n_loc, -1))
    n_layers = sum(1 for k in weights.gcn if k.startswith("W"))
    B = H[0].shape[0]
    samples = np.arange(B) if samples is None else np.asarray(samples)
    for l in range(n_layers):
        shares = [EmbeddingShare.create(round, l, st.client, samples,
                                        {int(bus): H[c][:, j] for bus, j in
                                         zip(st.shared, np.searchsorted(st.view.local_buses, st.shared))})
                  for c, st in enumerate(clients) if st.shared.size]
        if collect is not None:
            collect.extend(shares)
        inboxes = fedgraph_route(shares, part)
        new_H = []
        for c, st in enumerate(clients):
            if transcript is not None:
                for share in inboxes[c]:
                    transcript.record(share, f"client{c}")
            pos = {int(b): i for i, b in enumerate(st.view.remote_buses)}
            H_rem = np.zeros((B, len(pos), H[c].shape[-1]))
            for share in inboxes[c]:
                for bus, rows in share.rows.items():
                    H_rem[:, pos[bus]] = rows
            Z, _ = gcn_layer_forward(H[c], st.view.local_block, weights.gcn[f"W{l}"], weights.gcn[f"b{l}"],
                                     H_rem if pos else None, st.view.remote_block if pos else None)
            new_H.append(relu(Z) if l < n_layers - 1 else Z[..., 0])
        H = new_H
    return H
