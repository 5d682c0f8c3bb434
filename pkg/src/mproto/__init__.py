"""Multi-prototype token classification for distantly supervised NER,
with optimal-transport prototype assignment and denoising of O tokens."""

__version__ = "0.1.0"
