"""Desk-scale dynamic garment synthesis pipeline.

Simulates coarse and target garments over procedural body motion, learns a
motion-to-coarse-geometry regressor and a neural-texture renderer, and
synthesizes temporally coherent garment frames over body renders.
"""

__version__ = "0.1.0"
