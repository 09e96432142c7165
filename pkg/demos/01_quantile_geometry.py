"""
Distributions as quantile curves
================================

Each unit in this library is a whole distribution, stored as its quantile
function on a fixed grid of levels.  In that embedding the 2-Wasserstein
distance is a weighted L2 norm and the barycenter is a pointwise mean.
"""

import numpy as np

from distcause import QuantileGrid, barycenter, empirical_quantile, wasserstein2
from distcause.quantile_space import effect_map

rng = np.random.default_rng(0)
grid = QuantileGrid.midpoints(100)

# three normal samples with unit variance
curves = [empirical_quantile(rng.normal(mu, 1.0, 10_000), grid) for mu in (1, 3, 4)]

# shifting a normal moves its quantile curve up by the same amount, so the
# W2 distance between N(1, 1) and N(3, 1) is close to 2
print("W2(N(1,1), N(3,1)) ~", round(wasserstein2(curves[0], curves[1]), 3))

# the barycenter of the three is again normal, centred at the mean of means
bary = barycenter(curves)
print("barycenter median ~", round(bary(0.5), 3), " (exact: 8/3 =", round(8 / 3, 3), ")")

# the barycenter minimises the summed squared distance to the collection
def cost(c):
    return sum(wasserstein2(c, x) ** 2 for x in curves)

print("cost at barycenter:", round(cost(bary), 4), " cost at first curve:", round(cost(curves[0]), 4))

# an effect map is a pointwise difference of two quantile curves; for a pure
# location shift it is flat
shift = effect_map(curves[2], curves[0])
print("effect map at levels 0.1, 0.5, 0.9:", np.round(shift([0.1, 0.5, 0.9]), 3))
