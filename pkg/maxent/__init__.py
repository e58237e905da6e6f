"""MaxEnt activations, linear maps and the saddle-point solver."""
