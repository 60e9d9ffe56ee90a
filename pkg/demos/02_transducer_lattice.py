"""The transducer loss, verified against brute-force path enumeration.

A transducer aligns T frames to U labels through a lattice where each cell
either advances time (blank) or emits the next label. The loss is the
negative log of the total probability over all such paths; this script
computes it both by dynamic programming and by enumerating every path.
"""
import numpy as np

from worddiar.transducer import (LogProbLattice, brute_force_loss,
                                 forward_backward, path_count)

rng = np.random.default_rng(1)
T, U = 4, 2

# Random normalized lattice: blank probability b per cell, label probability
# (1-b) * q per cell, as log-probs.
b = rng.uniform(0.2, 0.8, size=(T, U + 1))
q = rng.uniform(0.2, 0.8, size=(T, U))
lat = LogProbLattice(np.log(b), np.log((1 - b[:, :U]) * q))

res = forward_backward(lat)
brute = brute_force_loss(lat)
print(f"T={T} U={U}: {path_count(T, U)} alignment paths")
print(f"forward-backward loss = {res.loss:.12f}")
print(f"brute-force loss      = {brute:.12f}")
print(f"difference            = {abs(res.loss - brute):.2e}")

# The DP also returns exact gradients w.r.t. every lattice entry
# (negative occupancy probabilities from the alpha/beta passes).
print(f"grad_blank[0, 0] = {res.grad_blank[0, 0]:+.6f}")
print(f"grad_label[0, 0] = {res.grad_label[0, 0]:+.6f}")

# The hand-checkable case from the unit tests: 2 frames, 1 label,
# blank 0.5 and correct-label mass (1-b)*q = 0.25 everywhere.
# Two alignments, each 0.25 * 0.5 * 0.5 -> total P = 1/8.
lat2 = LogProbLattice(np.full((2, 2), np.log(0.5)), np.full((2, 1), np.log(0.25)))
print(f"hand case loss = {forward_backward(lat2).loss:.6f}"
      f" (expected {-np.log(0.125):.6f})")
