"""
Curvature of the Berger spheres
===============================

Shrinking the Hopf fibers of the round 3-sphere by a factor eps gives the
Berger metrics.  Planes containing the fiber have curvature eps^2 while the
horizontal plane has 4 - 3 eps^2.  On orthonormal horizontal pairs the
O'Neill A-tensor has norm eps.
"""

import numpy as np

from folilab import TangentVector, a_tensor, fat_point_margin, make_model, unreduced_sectional
from folilab.foliation import point_data

rng = np.random.default_rng(0)

print(f"{'eps':>5} {'K(fiber,X)':>12} {'K(X,Y)':>10} {'|A_X Y|':>9} {'fatness':>8}")
for eps in (1.0, 0.8, 0.5, 0.2):
    fm = make_model("hopf_s3", epsilon=eps)
    p = fm.random_point(rng)
    pd = point_data(fm, p)

    # orthonormal frame: one fiber direction, two horizontal ones
    V = TangentVector(p, pd.vertical_onb()[:, 0])
    X, Y = (TangentVector(p, z) for z in pd.horizontal_onb().T)

    k_vert = unreduced_sectional(fm.metric, V, X)
    k_hor = unreduced_sectional(fm.metric, X, Y)
    a = a_tensor(fm, X, Y)
    a_norm = pd.norm(a.components)
    print(f"{eps:5.2f} {k_vert:12.6f} {k_hor:10.6f} {a_norm:9.6f} {fat_point_margin(fm, p):8.4f}")

# the closed forms for comparison
for eps in (1.0, 0.8, 0.5, 0.2):
    print(f"eps={eps}: expected eps^2={eps**2:.6f}, 4-3eps^2={4 - 3 * eps**2:.6f}")
