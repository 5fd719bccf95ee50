"""
Minimal dense-tensor library with reverse-mode automatic differentiation
"""
