"""Flat parameter layout shared by both kernel backends.

All weights of a network live in one contiguous float64 vector ``theta``.  Each
layer owns up to four slots:

======== ============================ ==========================
backbone slots                        shapes
======== ============================ ==========================
gcn      W                            (d_in, d_out)
attention W, W_att                    (d_in, d_out), (d_in, d_out)
sage     W1, W2, W_pool, b            (d_in, d_out), (d_in, d_out), (d_in, d_in), (d_in,)
======== ============================ ==========================

followed by the dense head ``w_den`` of shape ``(d_L, out_dim)``.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInput

BACKBONES = {"gcn": 0, "attention": 1, "sage": 2}
LOSSES = {"mse": 0, "zip": 1}
SLOT_NAMES = {
    "gcn": ("W",),
    "attention": ("W", "W_att"),
    "sage": ("W1", "W2", "W_pool", "b"),
}


def slot_shapes(backbone, d_in, d_out):
    if backbone == "gcn":
        return [(d_in, d_out)]
    if backbone == "attention":
        return [(d_in, d_out), (d_in, d_out)]
    if backbone == "sage":
        return [(d_in, d_out), (d_in, d_out), (d_in, d_in), (d_in,)]
    raise InvalidInput(f"unknown backbone {backbone!r}")


class Layout:
    """Offsets and shapes of every weight inside ``theta``."""

    def __init__(self, backbone, dims, out_dim):
        if backbone not in BACKBONES:
            raise InvalidInput(f"unknown backbone {backbone!r}")
        dims = [int(d) for d in dims]
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise InvalidInput(f"invalid layer dims {dims}")
        self.backbone = backbone
        self.dims = dims
        self.out_dim = int(out_dim)
        self.n_layers = len(dims) - 1
        self.offsets = np.full((self.n_layers, 4), -1, dtype=np.int64)
        self.entries = []
        pos = 0
        for layer in range(self.n_layers):
            shapes = slot_shapes(backbone, dims[layer], dims[layer + 1])
            for slot, (name, shape) in enumerate(zip(SLOT_NAMES[backbone], shapes)):
                self.offsets[layer, slot] = pos
                self.entries.append((f"layer{layer}.{name}", shape, pos))
                pos += int(np.prod(shape))
        self.dense_offset = pos
        self.entries.append(("dense.w_den", (dims[-1], self.out_dim), pos))
        pos += dims[-1] * self.out_dim
        self.size = pos

    def mask_size(self, n_nodes):
        """Length of one sample's concatenated dropout masks (inputs of every layer)."""
        return n_nodes * sum(self.dims[:-1])

    def mask_slices(self, n_nodes):
        out, pos = [], 0
        for d in self.dims[:-1]:
            out.append((pos, pos + n_nodes * d, d))
            pos += n_nodes * d
        return out

    def views(self, flat):
        """Name -> reshaped view of ``flat`` for every weight."""
        return {name: flat[pos:pos + int(np.prod(shape))].reshape(shape)
                for name, shape, pos in self.entries}

    def init_theta(self, rng):
        from .nn_core import glorot_uniform

        theta = np.zeros(self.size)
        views = self.views(theta)
        for name, shape, _ in self.entries:
            if len(shape) == 1:
                continue          # biases start at zero
            views[name][...] = glorot_uniform(rng, shape)
        return theta
