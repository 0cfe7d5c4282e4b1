"""Vocabulary, lexicon/G2P, augmentation, synthetic data and manifests."""
