"""Two-stage phoneme-centric visual speech recognition at desk scale.

Stage 1 maps mouth crops and lip landmarks to ARPAbet phonemes with a
hybrid CTC/attention model; Stage 2 turns (possibly noisy) phonemes into
words with a lexicon-constrained beam search and an n-gram language model.
"""

__version__ = "0.1.0"
