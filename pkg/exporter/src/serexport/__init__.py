"""Torch-side companion to the salientcues pipeline.

Loads a small residual speech-emotion classifier, serves its probabilities
over the ORC1 line protocol, and exports class-conditioned relevance maps
(epsilon-LRP) and batched occlusion maps as SGM1-S files that the pipeline
imports. Training is out of scope; `serexport init` creates a seeded
untrained model artifact for integration work.
"""

__version__ = "0.1.0"
