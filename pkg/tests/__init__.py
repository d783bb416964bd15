# Test package for switch tomography
