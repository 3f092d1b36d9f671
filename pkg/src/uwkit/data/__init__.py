"""Synthetic scene generation, COCO I/O and training datasets."""
