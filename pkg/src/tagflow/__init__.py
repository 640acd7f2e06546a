"""Dense 3D motion estimation from multi-orientation tagged volumes.

The package estimates a smooth, incompressible, diffeomorphic displacement
field between a fixed and a moving tagged acquisition by direct optimisation
of a stationary velocity field.  Submodules:

``grid``       volume containers, trilinear sampling, spatial derivatives
``vvol``       the on-disk volume format (JSON header + raw float32 payload)
``phantom``    synthetic tagged phantoms with known ground-truth motion
``harp``       harmonic-phase filtering and the sin/cos channel transform
``deform``     scaling-and-squaring velocity integration and its adjoint
``objective``  similarity / smoothness / volume-preservation losses
``optim``      Adam and the per-pair registration loop
``metrics``    evaluation metrics and the report container
``cli``        the ``tagflow`` command-line entry point
"""

__version__ = "0.1.0"
