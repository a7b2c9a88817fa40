"""Reverse-mode differentiation on a tiny expression, then a finite-difference check.

    python demos/01_autodiff.py
"""

import numpy as np

from auxseg.tensor import Tensor, grad_check, relu

x = Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True)
w = Tensor(np.array([1.5, 0.3, -0.7]), requires_grad=True)

# y = sum(relu(x * w) + x * x)
y = (relu(x * w) + x * x).sum()
y.backward()
print("y      =", y.item())
print("dy/dx  =", x.grad)   # w * [x*w > 0] + 2x
print("dy/dw  =", w.grad)   # x * [x*w > 0]

report = grad_check(lambda: (relu(x * w) + x * x).sum(), [x, w])
print(f"finite-difference check: max rel error {report.max_rel_error:.2e}, passed={report.passed}")

# Repeated backward accumulates; zero_grad resets.
x.zero_grad()
y.backward()
y.backward()
print("after two backward passes dy/dx =", x.grad)
