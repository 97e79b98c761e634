"""Construction-free coordinate-descent augmented-Lagrangian MPC for ARX models."""
