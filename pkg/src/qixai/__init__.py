"""Layer-wise CNN interpretability toolkit.

Activation extraction, global average pooling, PCA/SVD, cosine-similarity
layer comparison, mutual-information dependency analysis, and Integrated
Gradients attribution over a portable binary tensor-archive format.
"""

__version__ = "0.1.0"
