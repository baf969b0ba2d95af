"""Pure-Python implementations of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable or when
``KCN_PURE_PYTHON=1``.  The API mirrors ``_ckernels`` exactly.
"""

from __future__ import annotations

import bisect

import numpy as np

from . import nn_core as nn
from ._layout import Layout

NAME = "python"


def knn_query(points, perm, dim, split, left, right, start, end, qx, qy, k, exclude):
    best = []          # sorted (d2, idx) pairs, at most k long
    px = points[:, 0].tolist()
    py = points[:, 1].tolist()
    q = (qx, qy)

    def visit(node):
        axis = dim[node]
        if axis < 0:
            for p in perm[start[node]:end[node]].tolist():
                if p == exclude:
                    continue
                dx = qx - px[p]
                dy = qy - py[p]
                item = (dx * dx + dy * dy, p)
                if len(best) < k:
                    bisect.insort(best, item)
                elif item < best[-1]:
                    bisect.insort(best, item)
                    best.pop()
            return
        diff = q[axis] - split[node]
        if diff < 0.0:
            near, far = left[node], right[node]
        else:
            near, far = right[node], left[node]
        visit(near)
        if len(best) < k or diff * diff <= best[-1][0]:
            visit(far)

    visit(0)
    idx = np.array([b[1] for b in best], dtype=np.int64)
    d2 = np.array([b[0] for b in best], dtype=np.float64)
    return idx, d2


def knn_query_many(points, perm, dim, split, left, right, start, end, queries, k, excludes):
    m = len(queries)
    idx = np.empty((m, k), dtype=np.int64)
    d2 = np.empty((m, k), dtype=np.float64)
    for i in range(m):
        idx[i], d2[i] = knn_query(points, perm, dim, split, left, right, start, end,
                                  float(queries[i, 0]), float(queries[i, 1]), k, int(excludes[i]))
    return idx, d2


class NetKernel:
    """Per-sample forward/backward of a KCN network, built from :mod:`kcn.nn_core`."""

    def __init__(self, backbone, dims, out_dim, loss):
        self.layout = Layout(backbone, dims, out_dim)
        self.backbone = backbone
        self.loss = loss

    def _params(self, theta, grad):
        gviews = self.layout.views(grad) if grad is not None else {}
        return {name: nn.Parameter(v, gviews.get(name), name=name)
                for name, v in self.layout.views(theta).items()}

    def _forward(self, tape, params, A, H0, mask):
        h = H0
        n = H0.shape[0]
        slices = self.layout.mask_slices(n)
        for layer in range(self.layout.n_layers):
            if mask is not None:
                lo, hi, d = slices[layer]
                h = nn.dropout(tape, h, mask[lo:hi].reshape(n, d))
            p = f"layer{layer}."
            if self.backbone == "gcn":
                h = nn.gcn_layer(tape, A, h, params[p + "W"], "relu")
            elif self.backbone == "attention":
                a_att = nn.attention_adjacency(tape, h, params[p + "W_att"], A)
                h = nn.gcn_layer(tape, a_att, h, params[p + "W"], "relu")
            else:
                h = nn.sage_layer(tape, h, params[p + "W1"], params[p + "W2"],
                                  params[p + "W_pool"], params[p + "b"], "relu")
        row = nn.select_row(tape, h, 0)
        return nn.dense(tape, row, params["dense.w_den"], "identity")

    def forward(self, theta, A, H0):
        out = self._forward(None, self._params(theta, None), A, H0, None)
        return out.value.reshape(-1).copy()

    def loss_grad(self, theta, grad, A, H0, target, mask=None):
        """Loss of one sample; ``grad`` is overwritten with its gradient."""
        grad[...] = 0.0
        tape = nn.Tape()
        out = self._forward(tape, self._params(theta, grad), A, H0, mask)
        if self.loss == "mse":
            loss = nn.mse_loss(tape, out, target)
        else:
            loss = nn.zip_nll_loss(tape, out, target)
        tape.backward(loss)
        return float(loss.value)

    def train_epoch(self, theta, m, v, step, lr, beta1, beta2, eps,
                    A_all, H0_all, y_all, order, masks=None):
        grad = np.zeros_like(theta)
        param = nn.Parameter(theta, grad)
        state = nn.AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=step, m=[m], v=[v])
        total = 0.0
        for i in order:
            mask = None if masks is None else masks[i]
            total += self.loss_grad(theta, grad, A_all[i], H0_all[i], y_all[i], mask)
            nn.adam_step([param], state)
        return total, state.step

    def predict_many(self, theta, A_all, H0_all):
        return np.stack([self.forward(theta, A_all[i], H0_all[i]) for i in range(len(A_all))])
