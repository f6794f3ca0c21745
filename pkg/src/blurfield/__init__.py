"""Desk-scale blind motion deblurring: a factorized radiance field trained
from blurry images, with a learned continuous ray-warp kernel that models the
camera motion during exposure.
"""

__version__ = "0.1.0"
