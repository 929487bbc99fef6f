"""Lines printed in the terminal summary, one per acceptance criterion."""

LINES = []
