"""CTC decoding, n-gram language models and phoneme-to-word reconstruction."""
