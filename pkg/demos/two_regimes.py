"""
One model per neighborhood
==========================

Two groups of rows follow opposite linear trends. A single lasso fit
averages them away; fitting each cluster separately recovers both slopes.
"""

import numpy as np

from customtrain import FitSettings, build_joint_partition, cv_select, fit_ct, fit_standard
from customtrain import predict_ct, predict_standard

rng = np.random.default_rng(0)


def draw(n):
    x = rng.uniform(-2, 2, size=n)
    side = rng.integers(0, 2, size=n)
    z = 15.0 * side + rng.normal(0, 0.5, size=n)
    y = np.where(side == 0, 2 * x, -2 * x) + 0.3 * rng.normal(size=n)
    return np.column_stack([x, z]), y


X, y = draw(200)
X_new, y_new = draw(100)

###############################################################################
# Let cross-validation pick the number of clusters and the penalty.
settings = FitSettings(np.linspace(1, 0, 40))
report = cv_select(X, y, "gaussian", G_grid=(1, 2, 3, 5), settings=settings, seed=0)
print("chosen G:", report.selected_G, " lambda fraction:", round(report.selected_fraction, 3))

part = build_joint_partition(X, X_new, report.selected_G)
model = fit_ct(part, X, y, "gaussian", lambda_index=report.selected_index, settings=settings)
for k, fit in sorted(model.fits.items()):
    print(f"cluster {k}: slope on x = {fit.coefs[model.lambda_index][0]:+.2f}")

###############################################################################
# Compare with a single model on all rows.
fit, idx = fit_standard(X, y, "gaussian", lambda_index=report.selected_index, settings=settings)
ct_mse = np.mean((predict_ct(model, X_new).values - y_new) ** 2)
st_mse = np.mean((predict_standard(fit, idx, X_new) - y_new) ** 2)
print(f"pooled slope on x = {fit.coefs[idx][0]:+.2f}")
print(f"test MSE: customized {ct_mse:.3f}, single model {st_mse:.3f}")
