"""Minimal layer zoo with hand-written backward passes.

Everything is NHWC float64. Layers cache what they need during forward and
consume the cache in backward, so a layer instance serves one forward/backward
pair at a time (the training loops are single-owner). BatchNorm separates
"use batch statistics" (training) from "commit running statistics"
(update_stats) so losses can be evaluated as pure functions during gradient
checks.
"""

import numpy as np

from . import backend, default_dtype


class Module:
    """Base class: leaf layers override params/grads/buffers, composites override children."""

    def children(self):
        return []

    def params(self):
        return {}

    def grads(self):
        return {}

    def buffers(self):
        return {}

    def forward(self, x, training=False, update_stats=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def named_params(self, prefix=""):
        out = {prefix + k: v for k, v in self.params().items()}
        for name, child in self.children():
            out.update(child.named_params(prefix + name + "."))
        return out

    def named_grads(self, prefix=""):
        out = {prefix + k: v for k, v in self.grads().items()}
        for name, child in self.children():
            out.update(child.named_grads(prefix + name + "."))
        return out

    def named_buffers(self, prefix=""):
        out = {prefix + k: v for k, v in self.buffers().items()}
        for name, child in self.children():
            out.update(child.named_buffers(prefix + name + "."))
        return out

    def state_arrays(self):
        state = dict(self.named_params())
        state.update({"buffer:" + k: v for k, v in self.named_buffers().items()})
        return state

    def get_state(self):
        return {k: v.copy() for k, v in self.state_arrays().items()}

    def set_state(self, state):
        arrays = self.state_arrays()
        missing = set(arrays) - set(state)
        extra = set(state) - set(arrays)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, arr in arrays.items():
            arr[...] = state[k]


class Conv2d(Module):
    def __init__(self, cin, cout, ksize=3, stride=1, pad=1, rng=None):
        scale = np.sqrt(2.0 / (ksize * ksize * cin))
        rng = rng or np.random.default_rng(0)
        self.w = rng.normal(0.0, scale, size=(ksize, ksize, cin, cout)).astype(default_dtype())
        self.dw = np.zeros_like(self.w)
        self.stride = stride
        self.pad = pad
        self._ctx = None

    def params(self):
        return {"w": self.w}

    def grads(self):
        return {"w": self.dw}

    def forward(self, x, training=False, update_stats=None):
        y, self._ctx = backend.conv2d(x, self.w, self.stride, self.pad, need_ctx=training)
        return y

    def backward(self, dout):
        dx, dw = backend.conv2d_backward(self._ctx, dout)
        self.dw = dw
        return dx


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        dt = default_dtype()
        self.gamma = np.ones(channels, dtype=dt)
        self.beta = np.zeros(channels, dtype=dt)
        self.dgamma = np.zeros(channels, dtype=dt)
        self.dbeta = np.zeros(channels, dtype=dt)
        self.running_mean = np.zeros(channels, dtype=dt)
        self.running_var = np.ones(channels, dtype=dt)
        self.momentum = momentum
        self.eps = eps
        self._cache = None

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return {"gamma": self.dgamma, "beta": self.dbeta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, training=False, update_stats=None):
        if training:
            mean = x.mean(axis=(0, 1, 2))
            var = x.var(axis=(0, 1, 2))
            if update_stats is None or update_stats:
                m = self.momentum
                self.running_mean *= 1.0 - m
                self.running_mean += m * mean
                self.running_var *= 1.0 - m
                self.running_var += m * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std, training, x.shape)
        return self.gamma * xhat + self.beta

    def backward(self, dout):
        xhat, inv_std, training, shape = self._cache
        self.dgamma = np.sum(dout * xhat, axis=(0, 1, 2))
        self.dbeta = np.sum(dout, axis=(0, 1, 2))
        dxhat = dout * self.gamma
        if not training:
            return dxhat * inv_std
        m = shape[0] * shape[1] * shape[2]
        # standard batch-stat backward: mean and variance both depend on x
        return (inv_std / m) * (
            m * dxhat
            - np.sum(dxhat, axis=(0, 1, 2))
            - xhat * np.sum(dxhat * xhat, axis=(0, 1, 2))
        )


class ReLU(Module):
    def forward(self, x, training=False, update_stats=None):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dout):
        return np.where(self._mask, dout, 0.0)


class Sigmoid(Module):
    def forward(self, x, training=False, update_stats=None):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        self._out = out
        return out

    def backward(self, dout):
        return dout * self._out * (1.0 - self._out)


class Linear(Module):
    def __init__(self, fan_in, fan_out, rng=None):
        rng = rng or np.random.default_rng(0)
        self.w = rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(fan_in, fan_out)).astype(default_dtype())
        self.b = np.zeros(fan_out, dtype=default_dtype())
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._x = None

    def params(self):
        return {"w": self.w, "b": self.b}

    def grads(self):
        return {"w": self.dw, "b": self.db}

    def forward(self, x, training=False, update_stats=None):
        self._x = x
        return x @ self.w + self.b

    def backward(self, dout):
        self.dw = self._x.T @ dout
        self.db = dout.sum(axis=0)
        return dout @ self.w.T


class Flatten(Module):
    def forward(self, x, training=False, update_stats=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Reshape(Module):
    def __init__(self, shape):
        self.shape = shape

    def forward(self, x, training=False, update_stats=None):
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, dout):
        return dout.reshape(dout.shape[0], -1)


class GlobalAvgPool(Module):
    def forward(self, x, training=False, update_stats=None):
        self._hw = (x.shape[1], x.shape[2])
        return x.mean(axis=(1, 2))

    def backward(self, dout):
        h, w = self._hw
        return np.broadcast_to(dout[:, None, None, :] / (h * w), dout.shape[:1] + (h, w) + dout.shape[1:]).copy()


class Upsample2x(Module):
    """Nearest-neighbour 2x upsampling."""

    def forward(self, x, training=False, update_stats=None):
        return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)

    def backward(self, dout):
        n, h2, w2, c = dout.shape
        return dout.reshape(n, h2 // 2, 2, w2 // 2, 2, c).sum(axis=(2, 4))


class Sequential(Module):
    def __init__(self, named_layers):
        self._layers = list(named_layers)

    def children(self):
        return self._layers

    def forward(self, x, training=False, update_stats=None):
        for _, layer in self._layers:
            x = layer.forward(x, training, update_stats)
        return x

    def backward(self, dout):
        for _, layer in reversed(self._layers):
            dout = layer.backward(dout)
        return dout


class WideBasicBlock(Module):
    """Pre-activation residual block: BN-ReLU-Conv-BN-ReLU-Conv plus shortcut.

    When the shape changes, the 1x1 shortcut convolution reads the
    post-activation tensor, so `a = relu(bn1(x))` feeds both branches.
    """

    def __init__(self, cin, cout, stride, rng):
        self.bn1 = BatchNorm2d(cin)
        self.relu1 = ReLU()
        self.conv1 = Conv2d(cin, cout, 3, stride, 1, rng)
        self.bn2 = BatchNorm2d(cout)
        self.relu2 = ReLU()
        self.conv2 = Conv2d(cout, cout, 3, 1, 1, rng)
        self.projecting = stride != 1 or cin != cout
        self.shortcut = Conv2d(cin, cout, 1, stride, 0, rng) if self.projecting else None

    def children(self):
        out = [("bn1", self.bn1), ("conv1", self.conv1), ("bn2", self.bn2), ("conv2", self.conv2)]
        if self.projecting:
            out.append(("shortcut", self.shortcut))
        return out

    def forward(self, x, training=False, update_stats=None):
        a = self.relu1.forward(self.bn1.forward(x, training, update_stats), training)
        out = self.conv1.forward(a, training)
        out = self.relu2.forward(self.bn2.forward(out, training, update_stats), training)
        out = self.conv2.forward(out, training)
        sc = self.shortcut.forward(a, training) if self.projecting else x
        return out + sc

    def backward(self, dout):
        dmain = self.conv2.backward(dout)
        dmain = self.bn2.backward(self.relu2.backward(dmain))
        da = self.conv1.backward(dmain)
        if self.projecting:
            da = da + self.shortcut.backward(dout)
        dx = self.bn1.backward(self.relu1.backward(da))
        if not self.projecting:
            dx = dx + dout
        return dx
