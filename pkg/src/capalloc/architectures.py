"""Parametrized linear model manifolds: coefficient maps and Jacobians.

A manifold maps a parameter vector w in R^p to a coefficient vector
a in R^(n*d), where n is the receptive field and d the number of input
components per position. Coefficients are stored lag-major: the d
components of lag 1 first, then lag 2, and so on.

Stacked architectures are evaluated by composing explicit causal linear
operators per layer over a window of length n, which gives one code path
for plain, tiled and repeated dilation patterns and for multi-channel
models. Within the window the state is a (channels, n) array whose last
time index is the most recent sample (t = n - lag).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a stacked linear architecture.

    kind:
      - "dilated_conv": causal convolution, kernel ``kernel_size``,
        dilation ``dilation``, dense across channels.
      - "pointwise": 1x1 convolution (kernel 1, dilation 1).
      - "recurrent_diag": per-channel geometric recursion; channel j has a
        single weight w_j and kernel (w_j^0, w_j^1, ...) over the window.
    """

    kind: str
    kernel_size: int = 1
    dilation: int = 1
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        if self.kind not in ("dilated_conv", "pointwise", "recurrent_diag"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kernel_size < 1 or self.dilation < 1:
            raise ValueError("kernel_size and dilation must be >= 1")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")
        if self.kind == "pointwise" and (self.kernel_size != 1 or self.dilation != 1):
            raise ValueError("pointwise layers have kernel_size = dilation = 1")
        if self.kind == "recurrent_diag" and self.in_channels != self.out_channels:
            raise ValueError("recurrent_diag layers preserve the channel count")

    @property
    def param_count(self) -> int:
        if self.kind == "recurrent_diag":
            return self.in_channels
        return self.out_channels * self.in_channels * self.kernel_size

    @property
    def reach(self) -> int:
        """Window positions the layer looks back over, beyond the current one."""
        if self.kind == "recurrent_diag":
            return 0  # geometric kernel covers whatever window it is given
        return self.dilation * (self.kernel_size - 1)


def dilated(kernel_size, dilation, in_channels=1, out_channels=1) -> LayerSpec:
    return LayerSpec("dilated_conv", kernel_size, dilation, in_channels, out_channels)


def pointwise(in_channels, out_channels) -> LayerSpec:
    return LayerSpec("pointwise", 1, 1, in_channels, out_channels)


def recurrent_diag(channels) -> LayerSpec:
    return LayerSpec("recurrent_diag", 1, 1, channels, channels)


# -- layer evaluation kernels ------------------------------------------------
#
# All operate on (channels, T) state arrays. ``apply`` is the forward
# operator B, ``apply_adjoint`` is B^T, ``weight_gradient`` contracts a
# co-state v with an input state y into per-weight derivatives, and
# ``jacobian_columns`` does the same against a batch of input states.


def _conv_apply(layer, wt, x):
    t_len = x.shape[1]
    out = np.zeros((layer.out_channels,) + x.shape[1:])
    for k in range(layer.kernel_size):
        shift = k * layer.dilation
        if shift >= t_len:
            break
        out[:, shift:] += np.tensordot(wt[:, :, k], x[:, : t_len - shift], axes=(1, 0))
    return out


def _conv_adjoint(layer, wt, v):
    t_len = v.shape[1]
    out = np.zeros((layer.in_channels,) + v.shape[1:])
    for k in range(layer.kernel_size):
        shift = k * layer.dilation
        if shift >= t_len:
            break
        out[:, : t_len - shift] += np.tensordot(wt[:, :, k], v[:, shift:], axes=(0, 0))
    return out


def _conv_weight_gradient(layer, wt, v, y):
    t_len = v.shape[-1]
    grad = np.zeros((layer.out_channels, layer.in_channels, layer.kernel_size))
    for k in range(layer.kernel_size):
        shift = k * layer.dilation
        if shift >= t_len:
            break
        grad[:, :, k] = v[:, shift:] @ y[:, : t_len - shift].T
    return grad.reshape(-1)


def _conv_jacobian_columns(layer, wt, v, pre):
    # pre has shape (in_channels, T, n*d); columns ordered like the flat weights
    t_len = v.shape[-1]
    cols = np.zeros((layer.param_count, pre.shape[-1]))
    idx = np.arange(layer.param_count).reshape(
        layer.out_channels, layer.in_channels, layer.kernel_size
    )
    for o in range(layer.out_channels):
        for k in range(layer.kernel_size):
            shift = k * layer.dilation
            if shift >= t_len:
                continue
            block = np.tensordot(v[o, shift:], pre[:, : t_len - shift, :], axes=(0, 1))
            cols[idx[o, :, k]] = block
    return cols


def _recurrent_apply(layer, w, x):
    out = np.empty_like(x)
    out[:, 0] = x[:, 0]
    scale = w.reshape((-1,) + (1,) * (x.ndim - 2))
    for t in range(1, x.shape[1]):
        out[:, t] = x[:, t] + scale * out[:, t - 1]
    return out


def _recurrent_adjoint(layer, w, v):
    out = np.empty_like(v)
    out[:, -1] = v[:, -1]
    scale = w.reshape((-1,) + (1,) * (v.ndim - 2))
    for t in range(v.shape[1] - 2, -1, -1):
        out[:, t] = v[:, t] + scale * out[:, t + 1]
    return out


def _geometric_derivative_weights(w, t_len):
    # column s holds s * w_j^(s-1); 0**0 = 1 covers the w = 0 case at s = 1
    s = np.arange(t_len)
    with np.errstate(divide="ignore", invalid="ignore"):
        pw = np.power.outer(w, np.maximum(s - 1, 0))
    return s * pw


def _recurrent_weight_gradient(layer, w, v, y):
    t_len = v.shape[-1]
    coeffs = _geometric_derivative_weights(w, t_len)
    grad = np.zeros(w.size)
    for s in range(1, t_len):
        grad += coeffs[:, s] * np.sum(v[:, s:] * y[:, : t_len - s], axis=1)
    return grad


def _recurrent_jacobian_columns(layer, w, v, pre):
    t_len = v.shape[-1]
    coeffs = _geometric_derivative_weights(w, t_len)
    cols = np.zeros((w.size, pre.shape[-1]))
    for s in range(1, t_len):
        inner = np.einsum("jt,jtb->jb", v[:, s:], pre[:, : t_len - s, :])
        cols += coeffs[:, s : s + 1] * inner
    return cols


def _layer_ops(layer):
    if layer.kind == "recurrent_diag":
        return (_recurrent_apply, _recurrent_adjoint,
                _recurrent_weight_gradient, _recurrent_jacobian_columns)
    return (_conv_apply, _conv_adjoint, _conv_weight_gradient, _conv_jacobian_columns)


def _layer_weights(layer, w_layer):
    if layer.kind == "recurrent_diag":
        return w_layer
    return w_layer.reshape(layer.out_channels, layer.in_channels, layer.kernel_size)


@dataclass(frozen=True)
class ModelManifold:
    """A parametrization w -> A_w of a space of linear models.

    kind "stack" composes LayerSpecs; "linear_map" is A_w = matrix @ w;
    "product_scale" is A_w = (prod_i w_i) * direction, one block per factor.
    """

    kind: str
    receptive_field: int
    input_dim: int = 1
    layers: tuple[LayerSpec, ...] = ()
    matrix: np.ndarray | None = field(default=None, compare=False)
    direction: np.ndarray | None = field(default=None, compare=False)
    factors: int = 1

    # -- construction -----------------------------------------------------

    @classmethod
    def stack(cls, layers, input_dim=1, receptive_field=None):
        layers = tuple(layers)
        if not layers:
            raise ValueError("a stack needs at least one layer")
        if layers[0].in_channels != input_dim:
            raise ValueError("first layer must consume input_dim channels")
        if layers[-1].out_channels != 1:
            raise ValueError("last layer must produce a single output channel")
        for a, b in zip(layers, layers[1:]):
            if a.out_channels != b.in_channels:
                raise ValueError("channel counts must chain between layers")
        minimal = 1 + sum(l.reach for l in layers)
        has_recurrent = any(l.kind == "recurrent_diag" for l in layers)
        if receptive_field is None:
            receptive_field = minimal
        if not has_recurrent and receptive_field != minimal:
            raise ValueError(
                f"declared receptive field {receptive_field} disagrees with "
                f"layer structure ({minimal})"
            )
        if receptive_field < minimal:
            raise ValueError("receptive field smaller than the layer reach")
        return cls(
            kind="stack",
            receptive_field=receptive_field,
            input_dim=input_dim,
            layers=layers,
        )

    @classmethod
    def linear(cls, matrix, receptive_field=None, input_dim=1):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2:
            raise ShapeMismatch("linear manifold needs a 2-d matrix")
        if receptive_field is None:
            if matrix.shape[0] % input_dim:
                raise ShapeMismatch("matrix rows must be a multiple of input_dim")
            receptive_field = matrix.shape[0] // input_dim
        return cls(
            kind="linear_map",
            receptive_field=receptive_field,
            input_dim=input_dim,
            matrix=matrix,
        )

    @classmethod
    def product(cls, direction, factors=2, input_dim=1):
        direction = np.asarray(direction, dtype=float)
        if direction.ndim != 1 or direction.size % input_dim:
            raise ShapeMismatch("direction must be a vector of length n * input_dim")
        return cls(
            kind="product_scale",
            receptive_field=direction.size // input_dim,
            input_dim=input_dim,
            direction=direction,
            factors=int(factors),
        )

    @classmethod
    def fully_connected(cls, n, input_dim=1):
        return cls.stack(
            [dilated(n, 1, in_channels=input_dim, out_channels=1)], input_dim=input_dim
        )

    @classmethod
    def hierarchical(cls, depth, kernel=2, channels=1, input_dim=1,
                     pattern="exponential", blocks=1):
        """Stack of dilated convolutions.

        pattern "exponential": dilations kernel^(l-1), l = 1..depth.
        pattern "tiled": the exponential block of ``depth`` layers repeated
        ``blocks`` times, i.e. {1, 2, .., D, 1, 2, .., D, ...}.
        pattern "repeated": each dilation repeated ``blocks`` times in
        place, i.e. {1 x B, 2 x B, .., D x B}.
        """
        base = [kernel ** (l - 1) for l in range(1, depth + 1)]
        if pattern == "exponential":
            dilations = base
        elif pattern == "tiled":
            dilations = base * blocks
        elif pattern == "repeated":
            dilations = [dl for dl in base for _ in range(blocks)]
        else:
            raise ValueError(f"unknown dilation pattern {pattern!r}")
        total = len(dilations)
        chans = [input_dim] + [channels] * (total - 1) + [1]
        layers = [
            dilated(kernel, dl, in_channels=chans[i], out_channels=chans[i + 1])
            for i, dl in enumerate(dilations)
        ]
        return cls.stack(layers, input_dim=input_dim)

    @classmethod
    def recurrent(cls, n, channels=1, input_dim=1):
        layers = [
            pointwise(input_dim, channels),
            recurrent_diag(channels),
            pointwise(channels, 1),
        ]
        return cls.stack(layers, input_dim=input_dim, receptive_field=n)

    # -- bookkeeping -------------------------------------------------------

    @property
    def coeff_dim(self) -> int:
        return self.receptive_field * self.input_dim

    @property
    def param_count(self) -> int:
        if self.kind == "stack":
            return sum(l.param_count for l in self.layers)
        if self.kind == "linear_map":
            return self.matrix.shape[1]
        return self.factors

    def parameter_blocks(self) -> dict[str, np.ndarray]:
        """Named index blocks, one per layer (or per factor / column)."""
        if self.kind == "stack":
            blocks, start = {}, 0
            for i, layer in enumerate(self.layers):
                blocks[f"layer{i + 1}"] = np.arange(start, start + layer.param_count)
                start += layer.param_count
            return blocks
        if self.kind == "linear_map":
            return {f"w{j + 1}": np.array([j]) for j in range(self.matrix.shape[1])}
        return {f"w{j + 1}": np.array([j]) for j in range(self.factors)}

    def _check_w(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.param_count,):
            raise ShapeMismatch(
                f"expected parameter vector of length {self.param_count}, got shape {w.shape}"
            )
        return w

    def _split(self, w: np.ndarray) -> list[np.ndarray]:
        out, start = [], 0
        for layer in self.layers:
            out.append(w[start : start + layer.param_count])
            start += layer.param_count
        return out

    # coefficient index q = (lag - 1) * d + j maps to window state [j, n - lag]

    def _coeff_to_window(self, a: np.ndarray) -> np.ndarray:
        n, d = self.receptive_field, self.input_dim
        return np.ascontiguousarray(a.reshape(n, d).T[:, ::-1])

    def _window_to_coeff(self, x: np.ndarray) -> np.ndarray:
        return x[:, ::-1].T.reshape(-1)

    def _costates(self, blocks) -> list[np.ndarray]:
        """Co-state (channels, T) above each layer, from the output selector."""
        n = self.receptive_field
        v = np.zeros((1, n))
        v[0, n - 1] = 1.0  # read the output at the most recent position
        out = [v]
        for layer, w_layer in zip(reversed(self.layers[1:]), reversed(blocks[1:])):
            _, adjoint, _, _ = _layer_ops(layer)
            out.append(adjoint(layer, _layer_weights(layer, w_layer), out[-1]))
        out.reverse()
        return out

    # -- public evaluation --------------------------------------------------

    def coefficients(self, w) -> np.ndarray:
        """The coefficient vector A_w, lag-major over n * d entries."""
        w = self._check_w(w)
        if self.kind == "linear_map":
            return self.matrix @ w
        if self.kind == "product_scale":
            return float(np.prod(w)) * self.direction
        blocks = self._split(w)
        v = self._costates(blocks)[0]
        layer = self.layers[0]
        _, adjoint, _, _ = _layer_ops(layer)
        row = adjoint(layer, _layer_weights(layer, blocks[0]), v)
        return self._window_to_coeff(row)

    def jacobian(self, w) -> np.ndarray:
        """Analytic Jacobian dA/dw, shape (n * d, p).

        Each layer's weights enter the composition linearly (geometric
        recurrent kernels are differentiated analytically), so the column
        for one weight is the composition with a unit indicator in its slot.
        """
        w = self._check_w(w)
        if self.kind == "linear_map":
            return self.matrix.copy()
        if self.kind == "product_scale":
            cols = [
                float(np.prod(np.delete(w, j))) * self.direction
                for j in range(self.factors)
            ]
            return np.stack(cols, axis=1)
        n, d = self.receptive_field, self.input_dim
        blocks = self._split(w)
        costates = self._costates(blocks)
        # batch of unit coefficient vectors propagated forward through the stack
        pre = np.zeros((d, n, n * d))
        q = np.arange(n * d)
        lag, comp = q // d + 1, q % d
        pre[comp, n - lag, q] = 1.0
        jac = np.zeros((n * d, self.param_count))
        col = 0
        for layer, w_layer, v in zip(self.layers, blocks, costates):
            apply, _, _, jac_cols = _layer_ops(layer)
            wt = _layer_weights(layer, w_layer)
            cols = jac_cols(layer, wt, v, pre)
            jac[:, col : col + layer.param_count] = cols.T
            col += layer.param_count
            if col < self.param_count:
                pre = apply(layer, wt, pre)
        return jac

    def gradient_of_quadratic(self, w, v_coeff: np.ndarray) -> np.ndarray:
        """Compute J(w)^T v_coeff without materializing the Jacobian."""
        w = self._check_w(w)
        if self.kind == "linear_map":
            return self.matrix.T @ v_coeff
        if self.kind == "product_scale":
            base = self.direction @ v_coeff
            return np.array([
                float(np.prod(np.delete(w, j))) * base for j in range(self.factors)
            ])
        blocks = self._split(w)
        costates = self._costates(blocks)
        y = self._coeff_to_window(np.asarray(v_coeff, dtype=float))
        grad = np.empty(self.param_count)
        col = 0
        for layer, w_layer, v in zip(self.layers, blocks, costates):
            apply, _, weight_grad, _ = _layer_ops(layer)
            wt = _layer_weights(layer, w_layer)
            grad[col : col + layer.param_count] = weight_grad(layer, wt, v, y)
            col += layer.param_count
            if col < self.param_count:
                y = apply(layer, wt, y)
        return grad

    def init_parameters(self, rng: np.random.Generator) -> np.ndarray:
        """Random initialization, zero mean, scale 1/sqrt(fan-in) per layer.

        Recurrent weights are drawn uniformly inside (-1, 1) instead, so
        geometric kernels stay bounded over the window.
        """
        if self.kind == "linear_map":
            return rng.normal(scale=1.0 / np.sqrt(self.matrix.shape[1]),
                              size=self.param_count)
        if self.kind == "product_scale":
            return rng.normal(scale=1.0, size=self.param_count)
        parts = []
        for layer in self.layers:
            if layer.kind == "recurrent_diag":
                parts.append(rng.uniform(-0.95, 0.95, size=layer.param_count))
            else:
                fan_in = layer.in_channels * layer.kernel_size
                parts.append(rng.normal(scale=1.0 / np.sqrt(fan_in),
                                        size=layer.param_count))
        return np.concatenate(parts)
