"""
Survival losses and gradient checking
=====================================

L1 is the likelihood of the first hitting time (censored patients only say
the event has not happened yet). L2 penalises acceptable pairs whose
cumulative incidences are in the wrong order. Both are summed over the batch.
"""
import numpy as np

from masksurv.gradcheck import gradient_suite, toy_batch
from masksurv.losses import acceptable_pairs, loss_l1, loss_l2
from masksurv.tensor import Tensor

# censored in bin 1 with a uniform hazard: F(1) = 0.5, so L1 = log 2
print("L1 =", float(loss_l1(Tensor([[0.25] * 4]), [1], [0]).data))

# i dies in bin 1, j is still alive at bin 3, F_i(1) - F_j(1) = 0.4
y = Tensor([[0.1, 0.5, 0.2, 0.2], [0.1, 0.1, 0.4, 0.4]])
print("L2 =", float(loss_l2(y, [1, 3], [1, 0]).data), "(e^-4 =", np.exp(-4), ")")

X, A, s, k = toy_batch(8, 6, 6)
print("acceptable pairs in the toy batch:", int(acceptable_pairs(s, k).sum()))

# tape gradients of every loss through the encoder vs central differences
for name, err in gradient_suite("toy", max_coords=8).items():
    print(f"{name:>6s} max relative error {err:.2e}")
