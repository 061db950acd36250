"""Reverse-mode automatic differentiation over dense float64 arrays.

Every tensor op used by the mask network and the contour GCN lives here.
Tensors wrap a numpy float64 array; ops that involve at least one
gradient-requiring input record a backward closure and their parents, and
``backward()`` replays the chain rule once per recorded op in reverse
topological order.  Repeated ``backward()`` calls accumulate into ``.grad``;
the trainer is responsible for zeroing gradients between steps.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


class Tensor:
    """A dense float64 array with an optional gradient slot.

    ``data`` is stored row-major; ``grad`` is lazily allocated with the same
    shape the first time a gradient reaches this tensor.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # keep numpy from hijacking `ndarray <op> Tensor`; defer to our r-ops
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        req = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{req})"

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Populate ``.grad`` on every reachable gradient-requiring tensor.

        Only defined for scalar tensors.  Visits each recorded op exactly
        once, in reverse execution order (reverse topological order of the
        recorded graph).  Grads accumulate across repeated calls.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar tensor, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        # op outputs carry transient per-pass gradients; only leaves accumulate
        for node in topo:
            if node._backward is not None:
                node.grad = None
        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar; keeps loss code readable.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return hadamard(self, other)

    def __rmul__(self, other):
        return hadamard(self, other)

    def __sub__(self, other):
        return add(self, hadamard(_lift(other), -1.0))

    def __rsub__(self, other):
        return add(_lift(other), hadamard(self, -1.0))

    def __neg__(self):
        return hadamard(self, -1.0)

    def __truediv__(self, other):
        other = _lift(other)
        return hadamard(self, power(other, -1.0))

    def reshape(self, *shape):
        return reshape(self, *shape)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _wants_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


def _attach(out: Tensor, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Record the op on the output iff some parent participates in autodiff."""
    if _wants_grad(*parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` to undo numpy broadcasting."""
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] > 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / linear algebra


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = Tensor(a.data + b.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return _attach(out, (a, b), backward)


def hadamard(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = Tensor(a.data * b.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return _attach(out, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    return _attach(out, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    x = _lift(x)
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0))

    def backward(g):
        x.accumulate_grad(g * mask)

    return _attach(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    x = _lift(x)
    # exp over the non-positive branch only, so large |x| never overflows
    pos = x.data >= 0
    z = np.empty_like(x.data)
    z[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    z[~pos] = e / (1.0 + e)
    out = Tensor(z)

    def backward(g):
        x.accumulate_grad(g * z * (1.0 - z))

    return _attach(out, (x,), backward)


def softmax(x: Tensor) -> Tensor:
    """Softmax of a 1-D tensor; output sums to 1."""
    x = _lift(x)
    if x.data.ndim != 1:
        raise ValueError(f"softmax expects a 1-D tensor, got shape {x.shape}")
    e = np.exp(x.data - x.data.max())
    y = e / e.sum()
    out = Tensor(y)

    def backward(g):
        x.accumulate_grad(y * (g - np.dot(g, y)))

    return _attach(out, (x,), backward)


def log(x: Tensor) -> Tensor:
    x = _lift(x)
    out = Tensor(np.log(x.data))

    def backward(g):
        x.accumulate_grad(g / x.data)

    return _attach(out, (x,), backward)


def exp(x: Tensor) -> Tensor:
    x = _lift(x)
    y = np.exp(x.data)
    out = Tensor(y)

    def backward(g):
        x.accumulate_grad(g * y)

    return _attach(out, (x,), backward)


def power(x: Tensor, p: float) -> Tensor:
    x = _lift(x)
    out = Tensor(x.data**p)

    def backward(g):
        x.accumulate_grad(g * p * x.data ** (p - 1.0))

    return _attach(out, (x,), backward)


def sqrt(x: Tensor) -> Tensor:
    """Elementwise square root; subgradient 0 at exact zeros."""
    x = _lift(x)
    y = np.sqrt(x.data)
    out = Tensor(y)

    def backward(g):
        dx = np.zeros_like(x.data)
        nz = y > 0
        dx[nz] = g[nz] / (2.0 * y[nz])
        x.accumulate_grad(dx)

    return _attach(out, (x,), backward)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes through strictly inside the range."""
    x = _lift(x)
    out = Tensor(np.clip(x.data, lo, hi))
    inside = (x.data > lo) & (x.data < hi)

    def backward(g):
        x.accumulate_grad(g * inside)

    return _attach(out, (x,), backward)


def reshape(x: Tensor, *shape) -> Tensor:
    x = _lift(x)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = x.data.shape
    out = Tensor(x.data.reshape(shape))

    def backward(g):
        x.accumulate_grad(g.reshape(old))

    return _attach(out, (x,), backward)


def tsum(x: Tensor, axis=None) -> Tensor:
    x = _lift(x)
    out = Tensor(x.data.sum(axis=axis))

    def backward(g):
        if axis is None:
            x.accumulate_grad(np.broadcast_to(g, x.data.shape).copy())
        else:
            x.accumulate_grad(np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy())

    return _attach(out, (x,), backward)


def tmean(x: Tensor, axis=None) -> Tensor:
    x = _lift(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return hadamard(tsum(x, axis), 1.0 / n)


def amin(x: Tensor, axis: int) -> Tensor:
    """Minimum along one axis of a 2-D tensor.

    Subgradient routes to the first minimizer along the axis (numpy argmin
    tie rule), which keeps backward deterministic.
    """
    x = _lift(x)
    if x.data.ndim != 2:
        raise ValueError(f"amin expects a 2-D tensor, got shape {x.shape}")
    idx = np.argmin(x.data, axis=axis)
    out = Tensor(np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis))

    def backward(g):
        dx = np.zeros_like(x.data)
        if axis == 0:
            dx[idx, np.arange(x.data.shape[1])] = g
        else:
            dx[np.arange(x.data.shape[0]), idx] = g
        x.accumulate_grad(dx)

    return _attach(out, (x,), backward)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(sl)])

    return _attach(out, tuple(tensors), backward)


def concat_channels(tensors: list[Tensor]) -> Tensor:
    """Concatenate (C_i, H, W) feature maps along the channel axis."""
    for t in tensors:
        if t.data.ndim != 3:
            raise ValueError(f"concat_channels expects (C,H,W) tensors, got shape {t.shape}")
        if t.data.shape[1:] != tensors[0].data.shape[1:]:
            raise ValueError(
                f"concat_channels spatial mismatch: {t.shape} vs {tensors[0].shape}"
            )
    return concat(tensors, axis=0)


def adaptive_avg_pool(x: Tensor) -> Tensor:
    """Global average pool of a (C, H, W) tensor down to (C, 1, 1)."""
    x = _lift(x)
    if x.data.ndim != 3:
        raise ValueError(f"adaptive_avg_pool expects (C,H,W), got shape {x.shape}")
    c, h, w = x.data.shape
    out = Tensor(x.data.mean(axis=(1, 2), keepdims=True))

    def backward(g):
        x.accumulate_grad(np.broadcast_to(g / (h * w), x.data.shape).copy())

    return _attach(out, (x,), backward)


# ---------------------------------------------------------------------------
# convolution


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    c = xp.shape[0]
    s0, s1, s2 = xp.strides
    win = as_strided(
        xp,
        shape=(c, kh, kw, oh, ow),
        strides=(s0, s1, s2, s1 * stride, s2 * stride),
    )
    return win.reshape(c * kh * kw, oh * ow).copy()


def _conv2d_strided(x, weight, bias, stride, padding, shapes):
    """General path: explicit column matrix, one matmul."""
    cin, h, w, cout, kh, kw, oh, ow = shapes
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    wmat = weight.data.reshape(cout, cin * kh * kw)
    out = Tensor((wmat @ cols).reshape(cout, oh, ow) + bias.data[:, None, None])

    def backward(g):
        gmat = g.reshape(cout, oh * ow)
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(1, 2)))
        if weight.requires_grad:
            weight.accumulate_grad((gmat @ cols.T).reshape(weight.data.shape))
        if x.requires_grad:
            dcols = (wmat.T @ gmat).reshape(cin, kh, kw, oh, ow)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i : i + stride * (oh - 1) + 1 : stride,
                        j : j + stride * (ow - 1) + 1 : stride] += dcols[:, i, j]
            if padding:
                dxp = dxp[:, padding : padding + h, padding : padding + w]
            x.accumulate_grad(dxp)

    return _attach(out, (x, weight, bias), backward)


def _conv2d_unit_stride(x, weight, bias, padding, shapes):
    """Stride-1 path: per-tap matmuls on contiguous flat views, no column copy.

    With the input padded to (C, Hp, Wp) and flattened, the (i, j) kernel tap
    contributes W[:, :, i, j] @ xp_flat[:, i*Wp+j : i*Wp+j + oh*Wp]; the
    extra Wp-ow columns per row are wrap-around garbage discarded by the
    final slice.
    """
    cin, h, w, cout, kh, kw, oh, ow = shapes
    hp, wp = h + 2 * padding, w + 2 * padding
    n = oh * wp
    tail = kw - 1  # last tap's view runs past the grid end
    xflat = np.zeros((cin, hp * wp + tail))
    xflat[:, : hp * wp].reshape(cin, hp, wp)[:, padding : padding + h, padding : padding + w] = x.data
    # per-tap contiguous weights; strided slices would knock matmul off BLAS
    wtaps = np.ascontiguousarray(weight.data.transpose(2, 3, 0, 1))
    buf = np.zeros((cout, n))
    tmp = np.empty((cout, n))
    for i in range(kh):
        base = i * wp
        for j in range(kw):
            off = base + j
            np.matmul(wtaps[i, j], xflat[:, off : off + n], out=tmp)
            buf += tmp
    out_full = buf.reshape(cout, oh, wp)
    out = Tensor(out_full[:, :, :ow] + bias.data[:, None, None])

    def backward(g):
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(1, 2)))
        gbuf = np.zeros((cout, oh, wp))
        gbuf[:, :, :ow] = g
        gflat = gbuf.reshape(cout, n)
        if weight.requires_grad:
            dw_taps = np.empty((kh, kw, cout, cin))
            for i in range(kh):
                for j in range(kw):
                    off = i * wp + j
                    np.matmul(gflat, xflat[:, off : off + n].T, out=dw_taps[i, j])
            weight.accumulate_grad(np.ascontiguousarray(dw_taps.transpose(2, 3, 0, 1)))
        if x.requires_grad:
            dxp = np.zeros((cin, hp * wp + tail))
            dtmp = np.empty((cin, n))
            for i in range(kh):
                for j in range(kw):
                    off = i * wp + j
                    np.matmul(wtaps[i, j].T, gflat, out=dtmp)
                    dxp[:, off : off + n] += dtmp
            dxp = dxp[:, : hp * wp].reshape(cin, hp, wp)
            if padding:
                dxp = dxp[:, padding : padding + h, padding : padding + w]
            x.accumulate_grad(dxp)

    return _attach(out, (x, weight, bias), backward)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution of an unbatched (C_in, H, W) input.

    weight is (C_out, C_in, kh, kw); output spatial dims follow
    floor((H + 2*padding - kh) / stride) + 1.
    """
    x, weight, bias = _lift(x), _lift(weight), _lift(bias)
    if x.data.ndim != 3 or weight.data.ndim != 4:
        raise ValueError(
            f"conv2d expects (C,H,W) input and (O,C,kh,kw) weight, got {x.shape}, {weight.shape}"
        )
    cin, h, w = x.data.shape
    cout, cin_w, kh, kw = weight.data.shape
    if cin != cin_w:
        raise ValueError(
            f"conv2d channel mismatch: input has {cin} channels, weight expects {cin_w}"
        )
    if bias.data.shape != (cout,):
        raise ValueError(f"conv2d bias must be ({cout},), got {bias.data.shape}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ValueError(f"conv2d output would be empty for input {x.shape}, kernel {kh}x{kw}")
    shapes = (cin, h, w, cout, kh, kw, oh, ow)
    if stride == 1:
        return _conv2d_unit_stride(x, weight, bias, padding, shapes)
    return _conv2d_strided(x, weight, bias, stride, padding, shapes)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 2) -> Tensor:
    """Transpose convolution upsampling by exactly ``stride``.

    weight is (C_in, C_out, k, k) with k == stride, so output taps never
    overlap and output spatial dims are exactly stride times the input's.
    """
    x, weight, bias = _lift(x), _lift(weight), _lift(bias)
    if x.data.ndim != 3 or weight.data.ndim != 4:
        raise ValueError(
            f"conv_transpose2d expects (C,H,W) input and (C,O,k,k) weight, got {x.shape}, {weight.shape}"
        )
    cin, h, w = x.data.shape
    cin_w, cout, kh, kw = weight.data.shape
    if cin != cin_w:
        raise ValueError(
            f"conv_transpose2d channel mismatch: input has {cin} channels, weight expects {cin_w}"
        )
    if kh != stride or kw != stride:
        raise ValueError(f"conv_transpose2d kernel must equal stride ({stride}), got {kh}x{kw}")
    if bias.data.shape != (cout,):
        raise ValueError(f"conv_transpose2d bias must be ({cout},), got {bias.data.shape}")
    y = np.einsum("cij,cokl->oikjl", x.data, weight.data, optimize=True)
    out = Tensor(y.reshape(cout, h * stride, w * stride) + bias.data[:, None, None])

    def backward(g):
        gv = g.reshape(cout, h, stride, w, stride)
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(1, 2)))
        if weight.requires_grad:
            weight.accumulate_grad(np.einsum("cij,oikjl->cokl", x.data, gv, optimize=True))
        if x.requires_grad:
            x.accumulate_grad(np.einsum("oikjl,cokl->cij", gv, weight.data, optimize=True))

    return _attach(out, (x, weight, bias), backward)


def bilinear_sample(fmap: Tensor, points: Tensor) -> Tensor:
    """Sample a (C, H, W) feature map at N fractional (x, y) index positions.

    Returns an (N, C) tensor.  Positions are clamped to the map extent;
    gradients flow both into the map (scatter-add at the four corners) and
    into the points (zero where a coordinate was clamped).
    """
    fmap, points = _lift(fmap), _lift(points)
    if fmap.data.ndim != 3:
        raise ValueError(f"bilinear_sample expects a (C,H,W) map, got shape {fmap.shape}")
    if points.data.ndim != 2 or points.data.shape[1] != 2:
        raise ValueError(f"bilinear_sample expects (N,2) points, got shape {points.shape}")
    c, h, w = fmap.data.shape
    xs = np.clip(points.data[:, 0], 0.0, w - 1.0)
    ys = np.clip(points.data[:, 1], 0.0, h - 1.0)
    x_free = (points.data[:, 0] > 0.0) & (points.data[:, 0] < w - 1.0)
    y_free = (points.data[:, 1] > 0.0) & (points.data[:, 1] < h - 1.0)
    x0 = np.minimum(np.floor(xs), w - 2 if w > 1 else 0).astype(np.int64)
    y0 = np.minimum(np.floor(ys), h - 2 if h > 1 else 0).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    f00 = fmap.data[:, y0, x0]  # (C, N)
    f01 = fmap.data[:, y0, x1]
    f10 = fmap.data[:, y1, x0]
    f11 = fmap.data[:, y1, x1]
    top = f00 * (1 - fx) + f01 * fx
    bot = f10 * (1 - fx) + f11 * fx
    out = Tensor((top * (1 - fy) + bot * fy).T)

    def backward(g):
        gt = g.T  # (C, N)
        if fmap.requires_grad:
            dmap = np.zeros_like(fmap.data)
            np.add.at(dmap, (slice(None), y0, x0), gt * (1 - fx) * (1 - fy))
            np.add.at(dmap, (slice(None), y0, x1), gt * fx * (1 - fy))
            np.add.at(dmap, (slice(None), y1, x0), gt * (1 - fx) * fy)
            np.add.at(dmap, (slice(None), y1, x1), gt * fx * fy)
            fmap.accumulate_grad(dmap)
        if points.requires_grad:
            ddx = (f01 - f00) * (1 - fy) + (f11 - f10) * fy
            ddy = bot - top
            dpts = np.empty_like(points.data)
            dpts[:, 0] = (gt * ddx).sum(axis=0) * x_free
            dpts[:, 1] = (gt * ddy).sum(axis=0) * y_free
            points.accumulate_grad(dpts)

    return _attach(out, (fmap, points), backward)


def crop_spatial(x: Tensor, h: int, w: int) -> Tensor:
    """Keep the top-left (.., h, w) window of a (C, H, W) or (H, W) tensor."""
    x = _lift(x)
    sl = (Ellipsis, slice(0, h), slice(0, w))
    out = Tensor(x.data[sl])

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[sl] = g
        x.accumulate_grad(dx)

    return _attach(out, (x,), backward)


def backward(loss: Tensor) -> None:
    """Run reverse-mode accumulation from a scalar loss."""
    loss.backward()
