"""
Used to access version in code
"""

# Do not edit this file manually
__version__ = '1.0.0'
