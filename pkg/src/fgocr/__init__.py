"""Font-group-aware OCR for early printed books.

Recognizers trained per font group, a classifier that predicts the group
for every position of a text line, and several ways of combining them.
"""

__version__ = "0.1.0"
