"""The verification CNN: five unpadded convolutions followed by three fc layers.

Every conv is followed by batch norm and ReLU, fc-1 by ReLU. fc-2 is the
embedding layer and fc-3 produces speaker logits; neither has an
activation.
"""

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import MissingCache, ShapeMismatch, SpecMismatch
from . import layers

DEFAULT_CHANNELS = (32, 64, 128, 256, 256)
DEFAULT_KERNELS = (7, 5, 3, 3, 3)
DEFAULT_STRIDES = ((2, 2), (1, 1), (1, 1), (1, 1), (1, 1))


@dataclass(frozen=True)
class ModelSpec:
    n_classes: int = 1251
    embedding_dim: int = 256
    fc_width: int = 1024
    conv_channels: tuple = DEFAULT_CHANNELS
    conv_kernels: tuple = DEFAULT_KERNELS
    conv_strides: tuple = DEFAULT_STRIDES
    input_shape: tuple = (3, 40, 100)

    def __post_init__(self):
        # normalise lists coming back from JSON
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        object.__setattr__(self, "conv_kernels", tuple(self.conv_kernels))
        object.__setattr__(self, "conv_strides", tuple(tuple(s) for s in self.conv_strides))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        if not (len(self.conv_channels) == len(self.conv_kernels) == len(self.conv_strides)):
            raise SpecMismatch("conv channel/kernel/stride lists differ in length")
        if min(self.n_classes, self.embedding_dim, self.fc_width, *self.conv_channels) < 1:
            raise SpecMismatch("all layer widths must be positive")

    @classmethod
    def scaled(cls, n_classes, width=1.0, embedding_dim=None, fc_width=None):
        """Default geometry with every conv/fc width multiplied by ``width``.

        Kernels and strides are untouched, so the spatial shape chain is the
        same as the full-size network.
        """
        channels = tuple(max(1, int(round(c * width))) for c in DEFAULT_CHANNELS)
        return cls(
            n_classes=n_classes,
            embedding_dim=embedding_dim or max(1, int(round(256 * width))),
            fc_width=fc_width or max(1, int(round(1024 * width))),
            conv_channels=channels,
        )

    def conv_output_shapes(self):
        c, h, w = self.input_shape
        shapes = []
        for out_c, k, (sh, sw) in zip(self.conv_channels, self.conv_kernels, self.conv_strides):
            h = layers.conv_output_size(h, k, sh)
            w = layers.conv_output_size(w, k, sw)
            if h < 1 or w < 1:
                raise SpecMismatch(f"conv stack collapses the input to {h}x{w}")
            c = out_c
            shapes.append((c, h, w))
        return shapes

    @property
    def flat_dim(self):
        return int(np.prod(self.conv_output_shapes()[-1]))

    @property
    def n_conv(self):
        return len(self.conv_channels)

    def param_shapes(self):
        """Ordered mapping of parameter name to shape."""
        shapes = {}
        in_c = self.input_shape[0]
        for i, (out_c, k) in enumerate(zip(self.conv_channels, self.conv_kernels), start=1):
            shapes[f"conv{i}.W"] = (out_c, in_c, k, k)
            shapes[f"conv{i}.b"] = (out_c,)
            for name in ("gamma", "beta", "running_mean", "running_var"):
                shapes[f"bn{i}.{name}"] = (out_c,)
            in_c = out_c
        fc_in = self.flat_dim
        for name, width in (("fc1", self.fc_width), ("fc2", self.embedding_dim), ("fc3", self.n_classes)):
            shapes[f"{name}.W"] = (width, fc_in)
            shapes[f"{name}.b"] = (width,)
            fc_in = width
        return shapes

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def is_buffer(name):
    return name.endswith(".running_mean") or name.endswith(".running_var")


def is_weight(name):
    return name.endswith(".W")


def init_params(spec, seed, dtype=np.float32):
    """He-normal conv/fc weights, zero biases, unit gamma, zero beta; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in spec.param_shapes().items():
        if is_weight(name):
            fan_in = int(np.prod(shape[1:]))
            params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)
        elif name.endswith(".gamma") or name.endswith(".running_var"):
            params[name] = np.ones(shape, dtype=dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return params


class Network:
    """Parameters plus the forward/backward pass of the fixed layer chain.

    A single instance serves both Siamese branches: the two inputs of a pair
    go through the same ``params`` dict, so the branches cannot drift apart.
    """

    def __init__(self, spec, params=None, seed=0, dtype=np.float32):
        self.spec = spec
        self.params = init_params(spec, seed, dtype) if params is None else params
        self._check_params()
        self._caches = None

    def _check_params(self):
        expected = self.spec.param_shapes()
        if set(expected) != set(self.params):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise SpecMismatch(f"parameter names differ from spec (missing {missing}, extra {extra})")
        for name, shape in expected.items():
            if self.params[name].shape != tuple(shape):
                raise SpecMismatch(f"{name} has shape {self.params[name].shape}, spec says {shape}")

    @property
    def dtype(self):
        return self.params["conv1.W"].dtype

    def astype(self, dtype):
        return Network(self.spec, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self):
        return Network(self.spec, {k: v.copy() for k, v in self.params.items()})

    def forward(self, x, mode="eval", head="classifier"):
        if head not in ("classifier", "embedding"):
            raise ValueError(f"unknown head {head!r}")
        p = self.params
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.spec.input_shape:
            raise ShapeMismatch(f"input shape {x.shape[1:]} does not match spec {self.spec.input_shape}")
        caches = []
        h = x
        for i in range(1, self.spec.n_conv + 1):
            stride = self.spec.conv_strides[i - 1]
            h, c_conv = layers.conv_forward(h, p[f"conv{i}.W"], p[f"conv{i}.b"], stride)
            h, c_bn = layers.batchnorm_forward(
                h, p[f"bn{i}.gamma"], p[f"bn{i}.beta"], p[f"bn{i}.running_mean"], p[f"bn{i}.running_var"], mode
            )
            h, c_relu = layers.relu_forward(h)
            caches.append((c_conv, c_bn, c_relu))
        h, c_fc1 = layers.fc_forward(h, p["fc1.W"], p["fc1.b"])
        h, c_relu1 = layers.relu_forward(h)
        h, c_fc2 = layers.fc_forward(h, p["fc2.W"], p["fc2.b"])
        fc_caches = [c_fc1, c_relu1, c_fc2]
        if head == "classifier":
            h, c_fc3 = layers.fc_forward(h, p["fc3.W"], p["fc3.b"])
            fc_caches.append(c_fc3)
        self._caches = (head, caches, fc_caches)
        return h

    def backward(self, dout):
        """Gradients of every trainable parameter on the path of the last forward call."""
        if self._caches is None:
            raise MissingCache("backward called before forward")
        head, caches, fc_caches = self._caches
        grads = {}
        if head == "classifier":
            dout, grads["fc3.W"], grads["fc3.b"] = layers.fc_backward(dout, fc_caches[3])
        dout, grads["fc2.W"], grads["fc2.b"] = layers.fc_backward(dout, fc_caches[2])
        dout = layers.relu_backward(dout, fc_caches[1])
        dout, grads["fc1.W"], grads["fc1.b"] = layers.fc_backward(dout, fc_caches[0])
        last_shape = (dout.shape[0],) + self.spec.conv_output_shapes()[-1]
        dout = dout.reshape(last_shape)
        for i in range(self.spec.n_conv, 0, -1):
            c_conv, c_bn, c_relu = caches[i - 1]
            dout = layers.relu_backward(dout, c_relu)
            dout, grads[f"bn{i}.gamma"], grads[f"bn{i}.beta"] = layers.batchnorm_backward(dout, c_bn)
            dout, grads[f"conv{i}.W"], grads[f"conv{i}.b"] = layers.conv_backward(dout, c_conv)
        self._caches = None
        return grads, dout


def sgd_step(params, grads, velocity, lr, momentum=0.9):
    """Momentum SGD in place: v <- momentum*v - lr*g; p <- p + v. Returns ``params``."""
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(p)
        v *= momentum
        v -= (lr * g).astype(p.dtype, copy=False)
        p += v
    return params
