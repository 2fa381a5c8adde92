"""
Finding nonpositively curved vertizontal planes
===============================================

On S^3 x S^1 foliated by the Hopf circles of the first factor, no point is
fat: the S^1 direction X kills A*_X nu for every vertical nu, and the plane
spanned by X and nu is flat.  On the round Hopf fibration every point is fat,
yet a search over holonomy transformations still finds dual vectors whose
vertizontal curvature is exactly balanced by |A*|^2.
"""

import numpy as np

from folilab import TangentVector, fat_point_margin, kernel_direction, make_model, thm_max_search, unreduced_sectional
from folilab.foliation import point_data

rng = np.random.default_rng(5)

product = make_model("s3_x_s1")
for _ in range(3):
    p = product.random_point(rng)
    nu = TangentVector(p, point_data(product, p).vertical_onb()[:, 0])
    X = kernel_direction(product, p, nu)
    print("kernel direction", np.round(X.components, 8), "K =", unreduced_sectional(product.metric, X, nu),
          "fatness margin", fat_point_margin(product, p))

hopf = make_model("hopf_s3")
p = hopf.random_point(rng)
print("Hopf fatness margin at a random point:", fat_point_margin(hopf, p))
nu0 = TangentVector(p, point_data(hopf, p).vertical_onb()[:, 0])
for budget in (100, 1000):
    res = thm_max_search(hopf, p, nu0, budget, seed=0)
    print(f"budget {budget}: best rho {res.best_rho:.9f}, worst margin {res.worst_margin:.2e}")

warped = make_model("hopf_warped", **{"lambda": 0.5})
p = warped.random_point(rng)
nu0 = TangentVector(p, point_data(warped, p).vertical_onb()[:, 0])
for budget in (100, 400, 1600):
    res = thm_max_search(warped, p, nu0, budget, seed=0)
    print(f"warped, budget {budget}: best rho {res.best_rho:.4f}, worst margin {res.worst_margin:.4f}")
