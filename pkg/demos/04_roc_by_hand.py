"""
ROC and AUC on a toy score list
===============================

Tied scores are swept together, so the curve has one point per distinct
threshold; the area is the trapezoid sum and equals the Mann-Whitney
probability that a random positive outscores a random negative.

    python3 demos/04_roc_by_hand.py
"""

import numpy as np

from coughscreen.metrics import auc, confusion, roc, summary

scores = np.array([0.9, 0.8, 0.8, 0.7, 0.55, 0.4, 0.4, 0.2, 0.1, 0.05])
labels = np.array([1, 1, 0, 1, 0, 1, 0, 0, 1, 0])

curve = roc(scores, labels)
print(curve.to_csv())

pos, neg = scores[labels == 1], scores[labels == 0]
pairs = [(1.0 if p > n else 0.5 if p == n else 0.0) for p in pos for n in neg]
print(f"trapezoid AUC {auc(curve):.4f}   pairwise AUC {np.mean(pairs):.4f}")

cm = confusion(scores, labels, threshold=0.5)
print(f"at 0.5: tp={cm.tp:g} tn={cm.tn:g} fp={cm.fp:g} fn={cm.fn:g}")
for k, v in summary(cm).items():
    print(f"  {k:<12} {v:.3f}")
