"""
Judge Scanner - Quantify the accuracy of sports judges from panel scoring data.
"""

__version__ = "1.0.1"
