"""The two-department admissions world used as the running example.

Department ``x`` in {0, 1}, protected group ``p`` in {0, 1}.  ``D_MASK`` has a
zero average effect yet treats groups differently inside each department;
``EXPLOIT_ONLY_11`` admits only group 1 of department 1.
"""

from .world import Policy, WorldModel

PI = [[1 / 15, 9 / 15], [4 / 15, 1 / 15]]
GAMMA = [[0.5, 0.5], [0.25, 1.0]]
RHO = 0.1


def world(rho: float = RHO) -> WorldModel:
    return WorldModel(k=2, pi=PI, gamma=GAMMA, rho=rho)


D_MASK = Policy([[0.5, 0.0], [0.0, 1.0]])
EXPLOIT_ONLY_11 = Policy([[0.0, 0.0], [0.0, 1.0]])
# Water-filling fair optimum at rho = 0.1: all budget goes to department 0.
D_FAIR = Policy([[0.15, 0.15], [0.0, 0.0]])
