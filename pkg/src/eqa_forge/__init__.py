"""eqa_forge: desk-scale embodied question answering toolkit.

Procedural indoor scenes with labeled colored objects, occlusion-correct
egocentric point-cloud rendering, PointNet++-style forward encoders,
LazyTheta* expert paths, templated question/episode datasets,
inflection-weighted behavior cloning, and the T-10/30/50 navigation
evaluation protocol with bootstrap confidence intervals.
"""

__version__ = "0.1.0"
