"""F-formation membership and conversational role detection from wearable sensors.

Pairs of participants are cut into sliding windows of triaxial acceleration
and binary proximity, and a small LSTM classifies each window.
"""

__version__ = "0.1.0"
