"""Word-level joint speech recognition and speaker diarization, desk scale."""

__version__ = "0.1.0"
