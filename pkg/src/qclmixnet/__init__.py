"""QCL-MixNet: imbalanced tabular classification with QE layers, kNN mixup
and a hybrid contrastive objective, on a small numpy autodiff engine."""

__version__ = "0.1.0"
