"""
Test rows far from every training row
=====================================

When a cluster of test rows contains no training rows there is nothing to
fit, so those rows are left unpredicted. Resolving walks up the dendrogram
to the first merge that brings in training rows and fits there.
"""

import numpy as np

from customtrain import build_joint_partition, fit_ct, predict_ct, resolve_rejections

X_train = np.array([[0.0], [1.0]])
y_train = np.array([0.0, 1.0])
X_test = np.array([[0.5], [100.0], [101.0]])

part = build_joint_partition(X_train, X_test, G=2)
# least-penalized end of the path
model = fit_ct(part, X_train, y_train, "gaussian", lambda_index=99)
before = predict_ct(model, X_test)
print("rejected:", before.rejected.tolist())
print("predictions:", before.values.tolist())

resolved = resolve_rejections(model, X_train, y_train)
after = predict_ct(resolved, X_test)
print("after resolution:", after.values.tolist())
print("re-cut height per row:", after.resolved_height.tolist())
print("cut height of the original partition:", part.cut_height)
