"""Layer stacks, the perceptron encoder and the D-PBN / AEC decoders."""
