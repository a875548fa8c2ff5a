"""Train-on-validation (ToV) data selection toolkit.

Scores a training pool by how much each example's loss moves when a
surrogate model is briefly fine-tuned on a target validation set, selects
a budget-constrained subset, and ships exact numerical oracles for the
influence-function quantities behind the method.
"""

__version__ = "0.1.0"
