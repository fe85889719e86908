"""Stacked bidirectional LSTM sequence encoder.

Forward and backward passes are written out by hand over numpy arrays
(no autodiff). Each direction owns half the hidden width, so the
concatenated state read off at sequence position 0 is exactly ``d`` wide.
Padded positions never update the recurrent state (update gating by the
mask), so PAD tokens contribute nothing to the readout or to gradients.
"""

from __future__ import annotations

import numpy as np

from .numerics import sigmoid, uniform_init


class BiLSTMEncoder:
    """Bidirectional LSTM, ``layers`` deep, readout at position 0.

    Gate layout in the packed weight matrices is ``[i | f | o | g]``:

        z = x @ Wx + h_prev @ Wh + b          # (B, 4H)
        c = f * c_prev + i * g
        h = o * tanh(c)

    with per-direction hidden width ``H = d // 2``. Layer inputs are the
    concatenated forward/backward states of the layer below (the embedding
    sequence for layer 0), always ``d`` wide.
    """

    arch = "LSTM"

    def __init__(self, d: int, layers: int, rng: np.random.Generator, dtype=np.float64):
        if d % 2 != 0:
            raise ValueError("LSTM width d must be even (d/2 per direction)")
        self.d = d
        self.layers = layers
        self.hidden = d // 2
        self.params: dict[str, np.ndarray] = {}
        for l in range(layers):
            for dir_ in ("fwd", "bwd"):
                h = self.hidden
                self.params[f"l{l}.{dir_}.Wx"] = uniform_init(rng, (d, 4 * h), d, dtype)
                self.params[f"l{l}.{dir_}.Wh"] = uniform_init(rng, (h, 4 * h), d, dtype)
                self.params[f"l{l}.{dir_}.b"] = np.zeros(4 * h, dtype=dtype)

    def _run_direction(self, x, mask, l, dir_):
        """One direction of one layer. x: (B,T,d) layer input, mask: (B,T)."""
        B, T, _ = x.shape
        h_dim = self.hidden
        Wx = self.params[f"l{l}.{dir_}.Wx"]
        Wh = self.params[f"l{l}.{dir_}.Wh"]
        b = self.params[f"l{l}.{dir_}.b"]
        order = range(T) if dir_ == "fwd" else range(T - 1, -1, -1)

        gates = np.zeros((T, B, 4 * h_dim), dtype=x.dtype)  # post-activation
        tanh_c = np.zeros((T, B, h_dim), dtype=x.dtype)  # tanh(c_new)
        h_prevs = np.zeros((T, B, h_dim), dtype=x.dtype)
        c_prevs = np.zeros((T, B, h_dim), dtype=x.dtype)
        h_out = np.zeros((B, T, h_dim), dtype=x.dtype)  # masked states per position

        h = np.zeros((B, h_dim), dtype=x.dtype)
        c = np.zeros((B, h_dim), dtype=x.dtype)
        for t in order:
            m = mask[:, t : t + 1]
            z = x[:, t] @ Wx + h @ Wh + b
            i = sigmoid(z[:, :h_dim])
            f = sigmoid(z[:, h_dim : 2 * h_dim])
            o = sigmoid(z[:, 2 * h_dim : 3 * h_dim])
            g = np.tanh(z[:, 3 * h_dim :])
            c_new = f * c + i * g
            tc = np.tanh(c_new)
            h_new = o * tc

            gates[t] = np.concatenate([i, f, o, g], axis=1)
            tanh_c[t] = tc
            h_prevs[t] = h
            c_prevs[t] = c

            h = m * h_new + (1.0 - m) * h
            c = m * c_new + (1.0 - m) * c
            h_out[:, t] = h
        cache = (x, mask, gates, tanh_c, h_prevs, c_prevs, order, l, dir_)
        return h_out, cache

    def _run_direction_backward(self, cache, dh_out, grads):
        """BPTT for one direction. dh_out: (B,T,H) grads on the stored states."""
        x, mask, gates, tanh_c, h_prevs, c_prevs, order, l, dir_ = cache
        B, T, _ = x.shape
        h_dim = self.hidden
        Wx = self.params[f"l{l}.{dir_}.Wx"]
        Wh = self.params[f"l{l}.{dir_}.Wh"]
        dWx = grads[f"l{l}.{dir_}.Wx"]
        dWh = grads[f"l{l}.{dir_}.Wh"]
        db = grads[f"l{l}.{dir_}.b"]
        dx = np.zeros_like(x)

        dh_carry = np.zeros((B, h_dim), dtype=x.dtype)
        dc_carry = np.zeros((B, h_dim), dtype=x.dtype)
        for t in reversed(list(order)):
            m = mask[:, t : t + 1]
            i = gates[t][:, :h_dim]
            f = gates[t][:, h_dim : 2 * h_dim]
            o = gates[t][:, 2 * h_dim : 3 * h_dim]
            g = gates[t][:, 3 * h_dim :]
            tc = tanh_c[t]

            dh_total = dh_out[:, t] + dh_carry
            dc_total = dc_carry
            # gradient through h_t = m*h_new + (1-m)*h_prev (and same for c)
            dh_new = m * dh_total
            dh_prev = (1.0 - m) * dh_total
            dc_new = m * dc_total
            dc_prev = (1.0 - m) * dc_total

            do = dh_new * tc
            dc_new = dc_new + dh_new * o * (1.0 - tc * tc)
            df = dc_new * c_prevs[t]
            dc_prev = dc_prev + dc_new * f
            di = dc_new * g
            dg = dc_new * i

            dz = np.concatenate(
                [di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g * g)],
                axis=1,
            )
            dx[:, t] = dz @ Wx.T
            dWx += x[:, t].T @ dz
            dWh += h_prevs[t].T @ dz
            db += dz.sum(axis=0)
            dh_carry = dz @ Wh.T + dh_prev
            dc_carry = dc_prev
        return dx

    def forward(self, x: np.ndarray, mask: np.ndarray):
        """x: (B,T,d) embedded tokens; mask: (B,T) 1.0 at real positions.

        Returns the (B,d) readout (forward/backward states at position 0)
        and a cache for :meth:`backward`.
        """
        mask = mask.astype(x.dtype)
        caches = []
        layer_in = x
        for l in range(self.layers):
            hf, cf = self._run_direction(layer_in, mask, l, "fwd")
            hb, cb = self._run_direction(layer_in, mask, l, "bwd")
            caches.append((cf, cb))
            layer_in = np.concatenate([hf, hb], axis=2)
        readout = layer_in[:, 0]  # (B, d): [h_fwd[0] | h_bwd[0]] of the top layer
        return readout, (caches, x.shape)

    def backward(self, cache, d_readout: np.ndarray):
        """Returns (param grads, d_input (B,T,d))."""
        caches, in_shape = cache
        B, T, d = in_shape
        h_dim = self.hidden
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}

        d_layer_out = np.zeros((B, T, d), dtype=d_readout.dtype)
        d_layer_out[:, 0] = d_readout
        for l in range(self.layers - 1, -1, -1):
            cf, cb = caches[l]
            dxf = self._run_direction_backward(cf, d_layer_out[:, :, :h_dim], grads)
            dxb = self._run_direction_backward(cb, d_layer_out[:, :, h_dim:], grads)
            d_layer_out = dxf + dxb
        return grads, d_layer_out
