# Test package for brnash
