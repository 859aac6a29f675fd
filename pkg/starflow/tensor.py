# -*- coding: utf-8 -*-
"""A small dense tensor library with reverse-mode gradients.

Only the operations the crowd-flow network needs are implemented: 2D
convolution with same zero padding, fully-connected layers, ReLU/Tanh,
channel concatenation, residual addition, reshaping, the MSE loss and the
kernel L2 penalty. Every operation registers a backward rule, so calling
:func:`backward` on a scalar loss fills the ``grad`` slot of every parameter
that contributed to it.

Values are :mod:`numpy` arrays. Computation happens in 32-bit floats unless a
64-bit mode is selected with :func:`set_precision` or :func:`precision`; the
64-bit mode exists for gradient verification with :func:`finite_diff_check`.

"""

import contextlib
import logging

import numpy as np

from starflow.errors import ContractError, ShapeError

logger = logging.getLogger(__name__)

PRECISIONS = {'float32': np.float32, 'float64': np.float64}

_dtype = np.float32


def get_dtype():
    """Returns the numpy dtype new tensors are created with."""
    return _dtype


def set_precision(name):
    """Selects ``'float32'`` (the default) or ``'float64'`` computation."""
    global _dtype
    try:
        _dtype = PRECISIONS[name]
    except KeyError:
        raise ContractError("unknown precision '%s'" % name)
    logger.debug("Tensor precision set to %s." % name)


@contextlib.contextmanager
def precision(name):
    """Temporarily switches the tensor precision.

    .. code:: python

        >>> with precision('float64'):
        ...     model = build_model(cfg, seed=0)

    """
    global _dtype
    previous = _dtype
    set_precision(name)
    try:
        yield
    finally:
        _dtype = previous


class Tensor(object):
    """A dense array with an optional gradient slot.

    Tensors created directly are leaves. Leaves created with
    *requires_grad* (see :meth:`parameter`) accumulate gradients when
    :func:`backward` runs. Tensors produced by operations remember their
    parents and the rule that maps the output gradient to parent gradients.

    :param data: Anything :func:`numpy.array` accepts. The values are copied.
    :param bool requires_grad: Whether or not gradients should be collected
        for this tensor.
    :param str name: An optional name (parameters are identified by it).
    :param dtype: The numpy dtype (defaults to :func:`get_dtype`).
    :param tuple shape: If given, *data* is treated as a flat buffer in
        row-major order and reshaped; its length must equal the product of
        *shape*.

    """

    def __init__(self, data, requires_grad=False, name=None, dtype=None,
                 shape=None):
        dtype = get_dtype() if dtype is None else dtype
        array = np.array(data, dtype=dtype)
        if shape is not None:
            shape = tuple(int(d) for d in shape)
            if any(d < 1 for d in shape):
                raise ShapeError('Tensor', ('shape',), 'positive sizes', shape)
            if array.size != int(np.prod(shape)):
                raise ShapeError('Tensor', ('data',), int(np.prod(shape)),
                                 array.size)
            array = array.reshape(shape)

        #: The values as a contiguous :class:`numpy.ndarray`.
        self.data = np.ascontiguousarray(array)

        #: The accumulated gradient (same shape as :attr:`data`) or ``None``.
        self.grad = None

        #: Whether or not :func:`backward` should collect gradients here.
        self.requires_grad = requires_grad

        #: An optional name.
        self.name = name

        self._parents = ()
        self._rule = None

    @classmethod
    def parameter(cls, data, name=None):
        """Creates a trainable leaf tensor."""
        return cls(data, requires_grad=True, name=name)

    @classmethod
    def from_op(cls, data, parents, rule, name=None):
        """Creates the output tensor of an operation.

        *rule* is called with the gradient of the output and must return one
        gradient (or ``None``) per parent, in the order of *parents*. The
        array *data* is used as is, without copying.

        """
        tensor = cls.__new__(cls)
        tensor.data = data
        tensor.grad = None
        tensor.requires_grad = any(p.requires_grad for p in parents)
        tensor.name = name
        tensor._parents = tuple(parents)
        tensor._rule = rule
        return tensor

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._rule is None

    def item(self):
        """Returns the value of a one-element tensor as a Python float."""
        if self.size != 1:
            raise ContractError("item() on a tensor of shape %s" %
                                (self.shape,))
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        """Sets the gradient to zeros."""
        self.grad = np.zeros_like(self.data)

    def check_finite(self):
        """Raises :exc:`~starflow.errors.ContractError` on NaN or Inf."""
        if not np.all(np.isfinite(self.data)):
            raise ContractError("tensor '%s' holds non-finite values" %
                                (self.name or '<unnamed>'))
        if self.grad is not None and not np.all(np.isfinite(self.grad)):
            raise ContractError("gradient of tensor '%s' holds non-finite "
                                "values" % (self.name or '<unnamed>'))

    def __repr__(self):
        return 'Tensor(shape=%s, dtype=%s, name=%r)' % (
            self.shape, self.data.dtype, self.name)


def as_tensor(value):
    """Wraps *value* in a constant :class:`Tensor` unless it is one already."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


class ConvParams(object):
    """The kernel and bias of one convolution layer.

    :param Tensor kernel: Shape ``out_channels × in_channels × k_h × k_w``;
        both kernel sizes must be odd.
    :param Tensor bias: Shape ``out_channels``.
    :param float l2_coeff: The kernel L2 regularization coefficient.

    """

    def __init__(self, kernel, bias, l2_coeff=0.0):
        if kernel.ndim != 4:
            raise ShapeError('ConvParams', ('kernel rank',), 4, kernel.ndim)
        out_channels, _, k_h, k_w = kernel.shape
        if k_h % 2 == 0 or k_w % 2 == 0:
            raise ContractError("kernel sizes must be odd, got %dx%d" %
                                (k_h, k_w))
        if bias.shape != (out_channels,):
            raise ShapeError('ConvParams', ('bias',), (out_channels,),
                             bias.shape)
        if l2_coeff < 0:
            raise ContractError("l2_coeff must be non-negative")
        self.kernel = kernel
        self.bias = bias
        self.l2_coeff = float(l2_coeff)

    @property
    def in_channels(self):
        return self.kernel.shape[1]

    @property
    def out_channels(self):
        return self.kernel.shape[0]

    def parameters(self):
        return [self.kernel, self.bias]


def _im2col(data, k_h, k_w, pad_h, pad_w):
    """Expands every padded k_h×k_w window into a row.

    Returns an array of shape ``(B·H·W, C·k_h·k_w)``.

    """
    batch, channels, height, width = data.shape
    padded = np.pad(data, ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w)),
                    mode='constant')
    cols = np.empty((batch, channels, k_h, k_w, height, width),
                    dtype=data.dtype)
    for m in range(k_h):
        for n in range(k_w):
            cols[:, :, m, n] = padded[:, :, m:m + height, n:n + width]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(batch * height * width,
                                                    -1)


def _col2im(cols, shape, k_h, k_w, pad_h, pad_w):
    """Scatters window rows back onto the input, summing overlaps."""
    batch, channels, height, width = shape
    cols = cols.reshape(batch, height, width, channels, k_h, k_w)
    cols = cols.transpose(0, 3, 4, 5, 1, 2)
    padded = np.zeros((batch, channels, height + 2 * pad_h,
                       width + 2 * pad_w), dtype=cols.dtype)
    for m in range(k_h):
        for n in range(k_w):
            padded[:, :, m:m + height, n:n + width] += cols[:, :, m, n]
    return padded[:, :, pad_h:pad_h + height, pad_w:pad_w + width]


def conv2d(x, params, padding='same'):
    """Convolves a ``B×C_in×H×W`` input, summing over input channels.

    Output element ``(b, i, j, k)`` is
    ``bias[i] + Σ_c Σ_m Σ_n x[b, c, j+m, k+n] · kernel[i, c, m, n]`` with
    ``m``/``n`` centred on the window and zeros outside the input, so the
    output keeps the input's spatial size.

    :param x: The input tensor.
    :param ConvParams params: The layer's kernel and bias.
    :param str padding: Only ``'same'`` is supported.
    :return: A ``B×C_out×H×W`` tensor.

    """
    x = as_tensor(x)
    if padding != 'same':
        raise ContractError("unsupported padding '%s'" % padding)
    if x.ndim != 4:
        raise ShapeError('conv2d', ('rank',), 4, x.ndim)
    kernel, bias = params.kernel, params.bias
    batch, channels, height, width = x.shape
    filters, kernel_channels, k_h, k_w = kernel.shape
    if channels != kernel_channels:
        raise ShapeError('conv2d', ('in_channels',), kernel_channels,
                         channels)
    pad_h, pad_w = (k_h - 1) // 2, (k_w - 1) // 2

    cols = _im2col(x.data, k_h, k_w, pad_h, pad_w)
    weights = kernel.data.reshape(filters, -1)
    out = np.dot(cols, weights.T) + bias.data
    out = out.reshape(batch, height, width, filters).transpose(0, 3, 1, 2)

    def rule(grad):
        grad = grad.transpose(0, 2, 3, 1).reshape(-1, filters)
        grad_kernel = np.dot(grad.T, cols).reshape(kernel.shape)
        grad_bias = grad.sum(axis=0)
        grad_x = None
        if x.requires_grad:
            grad_x = _col2im(np.dot(grad, weights), x.shape, k_h, k_w,
                             pad_h, pad_w)
        return grad_x, grad_kernel, grad_bias

    return Tensor.from_op(np.ascontiguousarray(out), (x, kernel, bias), rule,
                          name='conv2d')


def fully_connected(x, weight, bias):
    """Computes ``x · weightᵀ + bias`` for a ``B×D_in`` input."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError('fully_connected', ('rank',), 2, x.ndim)
    if weight.shape[1] != x.shape[1]:
        raise ShapeError('fully_connected', ('D_in',), weight.shape[1],
                         x.shape[1])
    if bias.shape != (weight.shape[0],):
        raise ShapeError('fully_connected', ('D_out',), (weight.shape[0],),
                         bias.shape)
    out = np.dot(x.data, weight.data.T) + bias.data

    def rule(grad):
        grad_x = np.dot(grad, weight.data) if x.requires_grad else None
        return grad_x, np.dot(grad.T, x.data), grad.sum(axis=0)

    return Tensor.from_op(out, (x, weight, bias), rule,
                          name='fully_connected')


def activation(x, kind):
    """Applies ``'relu'`` (with relu'(0) = 0) or ``'tanh'`` elementwise."""
    x = as_tensor(x)
    if kind == 'relu':
        mask = x.data > 0
        out = np.where(mask, x.data, 0).astype(x.data.dtype)

        def rule(grad):
            return (grad * mask,)
    elif kind == 'tanh':
        # Large inputs round to ±1 in floating point; keep the open interval.
        bound = np.nextafter(x.data.dtype.type(1), x.data.dtype.type(0))
        out = np.clip(np.tanh(x.data), -bound, bound)

        def rule(grad):
            return (grad * (1 - out * out),)
    else:
        raise ContractError("unknown activation '%s'" % kind)
    return Tensor.from_op(out, (x,), rule, name=kind)


def concat_channels(a, b):
    """Concatenates two ``B×C×H×W`` tensors along the channel axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 4 or b.ndim != 4:
        raise ShapeError('concat_channels', ('rank',), 4, (a.ndim, b.ndim))
    for axis, name in ((0, 'batch'), (2, 'height'), (3, 'width')):
        if a.shape[axis] != b.shape[axis]:
            raise ShapeError('concat_channels', (name,), a.shape[axis],
                             b.shape[axis])
    split = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def rule(grad):
        return grad[:, :split], grad[:, split:]

    return Tensor.from_op(out, (a, b), rule, name='concat_channels')


def residual_add(x, fx):
    """Adds a residual branch *fx* to its shortcut *x* elementwise."""
    x, fx = as_tensor(x), as_tensor(fx)
    if x.shape != fx.shape:
        raise ShapeError('residual_add', ('shape',), x.shape, fx.shape)

    def rule(grad):
        return grad, grad

    return Tensor.from_op(x.data + fx.data, (x, fx), rule,
                          name='residual_add')


def add(a, b):
    """Adds two tensors of identical shape (used to sum loss terms)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError('add', ('shape',), a.shape, b.shape)

    def rule(grad):
        return grad, grad

    return Tensor.from_op(a.data + b.data, (a, b), rule, name='add')


def reshape(x, shape):
    """Returns *x* with a new shape holding the same number of elements."""
    x = as_tensor(x)
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError('reshape', ('size',), x.size, int(np.prod(shape)))
    original = x.shape

    def rule(grad):
        return (grad.reshape(original),)

    return Tensor.from_op(x.data.reshape(shape), (x,), rule, name='reshape')


def sum_all(x):
    """Sums every element of *x* into a scalar."""
    x = as_tensor(x)
    original = x.shape

    def rule(grad):
        return (np.full(original, grad, dtype=x.data.dtype),)

    return Tensor.from_op(np.array(x.data.sum(), dtype=x.data.dtype), (x,),
                          rule, name='sum_all')


def mse_loss(pred, target):
    """Returns the mean of the squared differences as a scalar tensor."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError('mse_loss', ('shape',), pred.shape, target.shape)
    diff = pred.data - target.data
    count = diff.size
    out = np.array(np.mean(diff * diff), dtype=diff.dtype)

    def rule(grad):
        grad_pred = grad * 2 * diff / count
        return grad_pred, -grad_pred

    return Tensor.from_op(out, (pred, target), rule, name='mse_loss')


def l2_penalty(kernel, coeff):
    """Returns ``coeff · Σ kernel²`` as a scalar tensor."""
    data = kernel.data
    out = np.array(coeff * np.sum(data * data), dtype=data.dtype)

    def rule(grad):
        return (grad * 2 * coeff * data,)

    return Tensor.from_op(out, (kernel,), rule, name='l2_penalty')


def _topological_order(root):
    """Returns the graph below *root* with every node after its parents."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss):
    """Accumulates ``d(loss)/d(leaf)`` into every gradient-collecting leaf.

    Gradients are added to whatever the leaves' ``grad`` slots already hold;
    call :func:`reset_grads` between steps.

    :param Tensor loss: A one-element tensor produced by registered ops.

    """
    if loss.size != 1:
        raise ContractError("backward needs a scalar loss, got shape %s" %
                            (loss.shape,))
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        grad = grads.pop(id(node), None)
        if grad is None or not node.requires_grad:
            continue
        if node.is_leaf:
            if node.grad is None:
                node.grad = np.array(grad, dtype=node.data.dtype)
            else:
                node.grad += grad
            continue
        for parent, parent_grad in zip(node._parents, node._rule(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + parent_grad
            else:
                grads[key] = parent_grad


def reset_grads(params):
    """Sets the gradient of every tensor in *params* to zeros."""
    for param in params:
        param.zero_grad()


class AdamState(object):
    """Moment estimates and hyperparameters of the Adam optimizer.

    :param float learning_rate: The fixed step size.
    :param float beta1: Decay rate of the first-moment estimate.
    :param float beta2: Decay rate of the second-moment estimate.
    :param float epsilon: Added to the denominator for stability.

    """

    def __init__(self, learning_rate=1e-3, beta1=0.9, beta2=0.999,
                 epsilon=1e-7):
        if learning_rate <= 0:
            raise ContractError("learning_rate must be positive")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ContractError("beta1 and beta2 must lie in [0, 1)")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon

        #: The number of completed updates.
        self.step_count = 0

        #: First-moment estimates keyed by parameter name.
        self.m = {}

        #: Second-moment estimates keyed by parameter name.
        self.v = {}


def _param_key(param):
    return param.name if param.name is not None else id(param)


def adam_step(params, state, grads=None):
    """Applies one bias-corrected Adam update to *params* in place.

    :param list params: The parameters to update.
    :param AdamState state: The optimizer state; updated in place.
    :param list grads: Gradients aligned with *params* (defaults to each
        parameter's ``grad`` slot).
    :return: ``(params, state)``

    """
    if grads is None:
        grads = [p.grad for p in params]
    state.step_count += 1
    correction1 = 1.0 - state.beta1 ** state.step_count
    correction2 = 1.0 - state.beta2 ** state.step_count
    step_size = state.learning_rate / correction1
    for param, grad in zip(params, grads):
        if grad is None:
            grad = np.zeros_like(param.data)
        if grad.shape != param.shape:
            raise ShapeError('adam_step', (str(param.name),), param.shape,
                             grad.shape)
        key = _param_key(param)
        if key not in state.m:
            state.m[key] = np.zeros_like(param.data)
            state.v[key] = np.zeros_like(param.data)
        m, v = state.m[key], state.v[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * (grad * grad)
        denom = np.sqrt(v / correction2) + state.epsilon
        param.data -= (step_size * m / denom).astype(param.data.dtype)
    return params, state


def _central_difference(f, flat, index, h):
    original = flat[index]
    flat[index] = original + h
    plus = f().item()
    flat[index] = original - h
    minus = f().item()
    flat[index] = original
    return plus, minus


def finite_diff_check(f, params, h=1e-5, floor=None):
    """Compares :func:`backward`'s gradients with central differences.

    *f* is called without arguments and must rebuild the loss from the
    current values of *params* (which are perturbed in place and restored).
    The relative error of an element is ``|a − n| / max(|a|, |n|, floor)``.

    A central difference straddling a ReLU kink does not estimate the
    derivative. Such elements are recognised because the one-sided slopes
    stop scaling with the step size, and are skipped.

    :param f: A callable returning a scalar :class:`Tensor`.
    :param list params: The tensors to differentiate with respect to.
    :param float h: The finite-difference step.
    :param float floor: Lower bound of the relative-error denominator
        (defaults to ``1e-4`` in 64-bit mode, ``1e-2`` in 32-bit mode).
    :return: The worst relative error over all checked elements.
    :rtype: float

    """
    if get_dtype() is not np.float64:
        logger.warning("finite_diff_check is running in 32-bit mode; "
                       "expect errors near 1e-2.")
    if floor is None:
        floor = 1e-4 if get_dtype() is np.float64 else 1e-2
    reset_grads(params)
    base = f()
    backward(base)
    f0 = base.item()
    eps = float(np.finfo(get_dtype()).eps)
    noise = 1e3 * eps * max(abs(f0), 1.0) / h

    worst = 0.0
    skipped = 0
    for param in params:
        analytic = param.grad.reshape(-1).copy()
        flat = param.data.reshape(-1)
        for index in range(flat.size):
            plus, minus = _central_difference(f, flat, index, h)
            half_plus, half_minus = _central_difference(f, flat, index,
                                                        h / 2)
            asym = (plus - f0) / h - (f0 - minus) / h
            half_asym = (half_plus - f0) / (h / 2) - (f0 - half_minus) / (h / 2)
            if abs(asym - 2 * half_asym) > noise:
                skipped += 1
                continue
            numeric = (plus - minus) / (2 * h)
            a = float(analytic[index])
            error = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, error)
    if skipped:
        logger.debug("finite_diff_check skipped %d element(s) at kinks." %
                     skipped)
    return worst
