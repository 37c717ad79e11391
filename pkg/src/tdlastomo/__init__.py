"""Two-line TDLAS tomography: SART and relative-entropy regularised joint reconstruction."""
