"""
Unequal misclassification costs
===============================

If missing a cancer costs twice as much as a false alarm, predicting
cancer is the cheaper choice as soon as its probability exceeds 1/3.
"""

import numpy as np

from customtrain import LossSpec, weighted_class_decision

# classes: 0 = normal, 1 = cancer
costs = LossSpec("misclassification", class_weights=(1.0, 2.0))
for p in (0.2, 0.3, 0.33, 0.34, 0.4, 0.6):
    label = weighted_class_decision([1 - p, p], costs)
    print(f"p(cancer) = {p:.2f} -> {'cancer' if label == 1 else 'normal'}")

sweep = np.linspace(0, 1, 10001)
flip = sweep[np.argmax(weighted_class_decision(np.column_stack([1 - sweep, sweep]), costs))]
print("first probability predicted as cancer:", flip)
