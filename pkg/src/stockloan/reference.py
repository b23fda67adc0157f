"""Published benchmark values for the two standard loan-amount grids.

Perpetual grid: sigma2 = 0.15, r = alpha = 0.05, v0 = 100; cases 2 and 4
add rho = 0.9, gamma = 0.01; cases 3 and 4 have delta = 0.05, cases 1 and 2
delta = 0.  Finite grid: T = 5, sigma2 = 0.4, rho = 0.4, gamma = 0.01,
delta = 0.05, r = 0.05, alpha = 0.07, v0 = 100.
"""

LOAN_AMOUNTS = (50, 60, 70, 80, 90, 100, 110, 120)

PERPETUAL_CASES = {
    1: dict(delta=0.0, rho=None, gamma=None),
    2: dict(delta=0.0, rho=0.9, gamma=0.01),
    3: dict(delta=0.05, rho=None, gamma=None),
    4: dict(delta=0.05, rho=0.9, gamma=0.01),
}

PERPETUAL_FEE = {
    1: (50, 60, 70, 80, 90, 100, 110, 120),
    2: (31.0528, 39.5086, 48.1242, 56.8653, 65.7084, 74.6363, 83.6361, 92.6978),
    3: (0.0, 0.0, 0.0, 0.0, 1.9041, 7.4530, 14.8794, 23.3145),
    4: (0.0, 0.0, 0.0, 0.0, 1.9015, 7.4510, 14.8778, 23.3132),
}

# exercise threshold; case 1 has none (infinite)
PERPETUAL_THRESHOLD = {
    2: (263.8914, 292.8058, 319.9876, 345.8010, 370.4988, 394.2648, 417.2377, 439.5251),
    3: (61.25, 73.5, 85.75, 98.0, 110.25, 122.5, 134.75, 147.0),
    4: (61.1055, 73.2926, 85.4688, 97.6341, 109.7885, 121.9323, 134.0656, 146.1884),
}

FINITE_FEE = (0.0, 0.0, 0.0, 1.0667, 4.1073, 9.3487, 16.0344, 23.8156)

FINITE_SCENARIO = dict(
    r=0.05, sigma2=0.4, rho=0.4, gamma=0.01, delta=0.05, alpha=0.07, v0=100.0, T=5.0
)
PERPETUAL_BASE = dict(r=0.05, sigma2=0.15, alpha=0.05, v0=100.0, T=None)
