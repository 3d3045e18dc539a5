import os

__version__ = "0.2"
DESCRIPTION = "Offline primal-dual reinforcement learning for linear MDPs"
PKG_NAME = os.path.basename(os.path.dirname(__file__))

DISCOUNTED = 'discounted'
AVERAGE = 'average'
SETTINGS = (DISCOUNTED, AVERAGE)
