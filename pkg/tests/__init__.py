"""
Test package for xai-inversion.
"""
