"""IndRNN seizure/non-seizure classification of scalp EEG."""

__version__ = "0.1.0"
