from simic.core.tensor import Function, ShapeError, Tape, Tensor, no_grad
