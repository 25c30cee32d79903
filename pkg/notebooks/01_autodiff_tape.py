"""
Recording expressions on a tape and differentiating them twice
===============================================================

"""
import numpy as np

from localind.autodiff import Tape, backward, forward, grad_check, input_gradient_expression, mlp_expression
from localind.models import mlp_init

# w . x on a tape, then its gradient with respect to w
tape = Tape()
w = tape.parameter((2,), "w")
x = tape.input((2,), "x")
out = tape.dot(w, x)
values = forward(tape, {"w": [1.0, 2.0], "x": [3.0, 4.0]})
print("w.x =", values[out.id])
print("d(w.x)/dw =", backward(tape, values, out)[w.id])

# an MLP logit and its input gradient, built as ordinary graph nodes
sizes = (2, 8, 1)
params = mlp_init(sizes, "softplus", seed=0)
tape = Tape()
xs = tape.input((None, 2), "x")
mlp = mlp_expression(tape, sizes, "softplus", xs)
grad_x = input_gradient_expression(mlp)
penalty = tape.mean(tape.sum(tape.square(grad_x), axis=-1))

bindings = mlp.bind(params)
bindings["x"] = np.array([[0.5, -1.0], [2.0, 0.3]])
values = forward(tape, bindings)
print("input gradients:\n", values[grad_x.id])

# the penalty depends on the weights through the input gradient: double backprop
grads = backward(tape, values, penalty)
print("d penalty / d W0 shape:", grads[mlp.weights[0].id].shape)


def build(t):
    x = t.input((None, 2), "x")
    g = input_gradient_expression(mlp_expression(t, sizes, "softplus", x))
    return t.mean(t.sum(t.square(g), axis=-1))


point = {"W0": params.weights[0], "b0": params.biases[0], "W1": params.weights[1],
         "b1": params.biases[1], "x": bindings["x"], "center": np.zeros(2), "inv_scale": np.ones(2)}
print("worst relative error vs central differences: %.2e" % grad_check(build, point))
