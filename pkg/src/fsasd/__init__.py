"""First-shot unsupervised anomalous sound detection: autoencoder baseline,
selective Mahalanobis scoring and the AUC/pAUC evaluation protocol."""

__version__ = "0.1.0"
