"""A tour of the tensor engine: eager numpy ops on a gradient tape.

Every op runs immediately; when a Graph is open and an input requires
gradients, the op also lands on the tape. backward() replays the tape in
reverse, one fixed order, so two identical runs produce identical gradients
down to the last bit.
"""

import numpy as np

from afp import tensor as T
from afp.tensor import Graph, Tensor, backward

# A couple of leaves. float64 here; training uses float32.
x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
w = Tensor(np.array([[0.5, 1.5], [2.0, -1.0], [0.0, 1.0]]), requires_grad=True)

with Graph() as g:
    h = T.matmul(T.reshape(x, (1, 3)), w)       # [1, 2]
    s = T.softmax_lastdim(h)                    # rows sum to 1 exactly-ish
    loss = T.sum_all(T.mul(s, s))
    backward(g, loss)

print("softmax row:", s.data, "sum:", s.data.sum())
print("dloss/dx:", x.grad)
print("dloss/dw:\n", w.grad)

# The gradients are worth trusting because central differences agree.
from afp.gradcheck import grad_error
from afp.rng import stream


def rebuild():
    h = T.matmul(T.reshape(x, (1, 3)), w)
    return T.sum_all(T.mul(T.softmax_lastdim(h), T.softmax_lastdim(h)))


err = grad_error(rebuild, [x, w], stream(0, "demo"), coords_per_tensor=3)
print(f"finite-difference agreement: worst relative error {err:.2e}")

# Outside a Graph the same ops are pure inference: nothing is recorded.
y = T.gelu(Tensor(np.linspace(-2, 2, 5)))
print("gelu(-2..2):", np.round(y.data, 4))
assert y.requires_grad is False

# Shape contracts fail loudly rather than broadcasting silently.
try:
    T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
except Exception as exc:
    print("shape error as expected:", exc)
