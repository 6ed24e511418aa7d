"""
One-vs-one SVM on three classes
===============================

Trains the SMO solver on three Gaussian clouds, checks the optimality
gap, and shows how pairwise votes are combined.
"""

import numpy as np

from lesionforge import udls
from lesionforge.svm import (
    Kernel, dual_objective, fit_multiclass, kkt_violation, model_from_tensors,
    model_to_tensors, ovo_vote, smo_train,
)

rng = np.random.default_rng(3)
centers = np.array([[0, 0], [2.5, 0], [0, 2.5]])
x = np.vstack([rng.normal(c, 0.7, (40, 2)) for c in centers])
labels = ["MEL"] * 40 + ["NV"] * 40 + ["BCC"] * 40

# one binary machine by hand
sel = slice(0, 80)
y = np.r_[np.ones(40), -np.ones(40)]
k = Kernel("rbf", 0.5)
m = smo_train(x[sel], y, k, c_pos=1.0, c_neg=1.0)
print("iterations:", m.n_iter, " support vectors:", len(m.dual_coef))
print("max KKT violation: %.2e" % kkt_violation(m.alpha, x[sel], y, k, 1.0, 1.0))
print("dual objective: %.6f" % dual_objective(m.alpha, x[sel], y, k))

model = fit_multiclass(x, labels)
pred = model.predict_many(x)
print("training accuracy:", np.mean([p == t for p, t in zip(pred, labels)]))

# a point between all three clouds
label, votes, sums = model.predict(np.array([1.0, 1.0]))
print("votes:", votes, " decision sums:", {c: round(v, 3) for c, v in sums.items()}, "->", label)

# three-way cycle: every class gets one vote, the summed margins decide
print(ovo_vote(("A", "B", "C"), ((0, 1), (1, 2), (0, 2)), [0.2, 0.5, -0.9]))

back = model_from_tensors(udls.decode(udls.encode(model_to_tensors(model))))
print("roundtrip identical:", back.decisions(x).tobytes() == model.decisions(x).tobytes())
