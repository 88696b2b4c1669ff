"""selokit: semantic-localization maps over large rasters plus their
indicator-based evaluation."""

__version__ = "0.1.0"
