"""Implicit morphable face model toolkit.

Submodules:
  geometry       meshes, spatial queries, triangulation, SE(3) math
  autodiff       reverse-mode differentiation engine (second-order capable)
  synth          parametric synthetic face generator with exact correspondence
  preprocess     mesh-to-SDF pipeline for non-watertight face surfaces
  model          deformation / SDF network stack (blend fields, hyper nets)
  losses         training objectives
  training       auto-decoder training and test-time latent fitting
  reconstruction marching-cubes isosurface extraction
  evaluate       Chamfer / F-score metrics, correspondence, latent PCA
  cli            the ``imface`` command line front end
"""

__version__ = "0.1.0"
