"""fruitband: paired visible/narrowband fruit-defect imaging pipeline."""

__version__ = "0.1.0"
