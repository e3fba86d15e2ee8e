"""Disentangled cardiac segmentation with resolution and factor-based augmentation."""
