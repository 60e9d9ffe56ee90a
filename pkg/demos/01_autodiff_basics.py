"""A tour of the numerics layer: tensors, tape, gradients.

Builds a two-layer network by hand, checks its gradients against central
finite differences, and shows the no-grad mode used everywhere at decode
time.
"""
import numpy as np

from worddiar import numerics as nm

rng = np.random.default_rng(0)

# Parameters are tensors with gradient accumulators and a frozen flag.
w1 = nm.Parameter(rng.uniform(-0.1, 0.1, size=(4, 8)), name="w1")
b1 = nm.Parameter(np.zeros((1, 8)), name="b1")
w2 = nm.Parameter(rng.uniform(-0.1, 0.1, size=(8, 3)), name="w2")

x = nm.constant(rng.normal(size=(5, 4)))


def loss():
    h = nm.tanh(nm.affine(x, w1, b1))
    z = nm.matmul(h, w2)
    return nm.sum_all(nm.mul(z, z))  # sum of squares


value = loss()
value.backward()
print(f"loss = {value.item():.6f}")
print(f"dL/dw1 norm = {np.linalg.norm(w1.grad):.6f}")
print(f"dL/dw2 norm = {np.linalg.norm(w2.grad):.6f}")

# The same harness the test suite uses: worst relative error of the tape
# gradients against central differences.
for p in (w1, b1, w2):
    p.zero_grad()
err = nm.finite_difference_check(loss, [w1, b1, w2])
print(f"finite-difference worst rel. error = {err:.2e}")

# Inside no_grad, forwards build no graph at all.
with nm.no_grad():
    silent = loss()
print(f"no-grad loss = {silent.item():.6f} (requires_grad={silent.requires_grad})")

# An LSTM layer runs a sequence through the fused recurrent cell.
lstm = nm.LstmParams(
    nm.Parameter(rng.uniform(-0.1, 0.1, size=(4, 32)), name="lstm.w_x"),
    nm.Parameter(rng.uniform(-0.1, 0.1, size=(8, 32)), name="lstm.w_h"),
    nm.Parameter(np.zeros((1, 32)), name="lstm.b"))
hs = nm.lstm_run(lstm, x)
print(f"lstm output shape = {hs.shape}")
