"""Profiles, G-matrices and effects for a small polytomous design.

Run with ``python3 demos/01_attribute_space.py``.
"""

# %%
import numpy as np

from polyvb import QMatrix, build_gmatrices, enumerate_profiles, theta_to_delta

# Two attributes with three mastery levels each give 9 profiles, listed
# with the last attribute changing fastest.
space = enumerate_profiles([3, 3])
print("profiles:")
print(space.profiles)

# %%
# Item 1 needs level 1 of attribute 1 and level 2 of attribute 2.
# Item 2 needs level 2 of attribute 1 only.
q = QMatrix.uniform([[1, 2], [2, 0]], 3)

# The collapsed map keeps only whether each requirement is met, so item 1
# separates four patterns and item 2 separates two.
for g in build_gmatrices(q, space, "collapsed"):
    print(f"item {g.item + 1} collapsed patterns:\n{g.patterns}")
    print("profile -> pattern:", g.lookup)

# %%
# The reduced map keeps the full level of every relevant attribute.
for g in build_gmatrices(q, space, "reduced"):
    print(f"item {g.item + 1} has {g.n_patterns} reduced patterns")

# %%
# Correct-response probabilities on the collapsed patterns of item 1,
# ordered (0,0), (0,1), (1,0), (1,1), re-expressed as G-DINA style effects.
theta = np.array([0.15, 0.45, 0.40, 0.90])
effects = theta_to_delta(theta, build_gmatrices(q, space)[0].patterns)
for label, value in zip(effects.labels(), effects.values):
    print(f"{label:>4s} {value:+.3f}")
