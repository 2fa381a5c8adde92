"""
Holonomy and dual holonomy fields on a warped Hopf fibration
============================================================

The fibers of S^3 -> S^2 are stretched by exp(phi) with phi = 0.3 * height of
the base point.  Holonomy fields then change length like exp(phi), dual fields
like exp(-phi), and their pairing never changes.
"""

import numpy as np

from folilab import (
    holonomy_bound_estimate,
    holonomy_transformation,
    make_model,
    random_horizontal_path,
    transport_dual,
    transport_holonomy,
)
from folilab.geometry import TangentVector
from folilab.holonomy import vertical_onb
from folilab.models import warping_function

fm = make_model("hopf_warped", **{"lambda": 0.3})
phi, _ = warping_function(fm)
rng = np.random.default_rng(3)
p = fm.random_point(rng)

# a broken horizontal geodesic: four unit-speed pieces of length 0.6
path = random_horizontal_path(fm, p, 4, 0.6, rng_seed=3, max_step=0.01)
print(f"path length {path.length():.6f}, worst horizontality drift {path.max_drift:.2e}")

xi0 = TangentVector(p, vertical_onb(fm, p)[:, 0])
xi = transport_holonomy(fm, path, xi0)
nu = transport_dual(fm, path, xi0)


def norm(v):
    g = fm.metric.metric_fn(v.base.chart_id, v.base.coords)
    return float(np.sqrt(v.components @ g @ v.components))


print(f"{'t':>5} {'|xi|':>9} {'exp(dphi)':>10} {'|nu|':>9} {'<xi,nu>':>12}")
for i in range(0, len(path.t), 40):
    a, b = xi.at(i), nu.at(i)
    g = fm.metric.metric_fn(a.base.chart_id, a.base.coords)
    dphi = phi(a.base.chart_id, a.base.coords) - phi(p.chart_id, p.coords)
    print(f"{path.t[i]:5.2f} {norm(a):9.6f} {np.exp(dphi):10.6f} {norm(b):9.6f} {a.components @ g @ b.components:12.9f}")

h = holonomy_transformation(fm, path)
print("transformation matrix", h.matrix, "singular values", h.singular_values())

# an empirical holonomy bound: largest stretch over many random paths
print("bound over 30 paths:", holonomy_bound_estimate(fm, p, 30, seed=1))
print("bound over 60 paths:", holonomy_bound_estimate(fm, p, 60, seed=1))
