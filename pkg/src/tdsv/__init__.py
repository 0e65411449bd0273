"""Text-dependent speaker verification with alignment supervectors.

Subpackages provide differentiable building blocks (`nn`), feature
extraction (`features`), per-phrase aligners (`hmm`, `gmm`), training
objectives (`losses`), detection metrics (`metrics`), a synthetic corpus
generator (`corpus`), the model architectures (`network`) and a CLI
(`cli`).
"""

__version__ = "0.1.0"
