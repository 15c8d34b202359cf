import numpy as np


class RMSprop:
    """RMSprop with per-parameter squared-gradient accumulators.

    ``acc <- decay * acc + (1 - decay) * g**2``;
    ``p <- p - lr * g / (sqrt(acc) + epsilon)``.
    """

    def __init__(self, params, learning_rate=0.01, decay=0.9, epsilon=1e-7):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < decay < 1.0:
            raise ValueError("decay must lie in (0, 1)")
        self.learning_rate = learning_rate
        self.decay = decay
        self.epsilon = epsilon
        self.acc = params.zeros_like()

    def step(self, params, grads):
        for name, g in grads.items():
            acc = self.acc[name]
            acc *= self.decay
            acc += (1.0 - self.decay) * g * g
            params[name] -= self.learning_rate * g / (np.sqrt(acc) + self.epsilon)

    def copy(self):
        new = RMSprop.__new__(RMSprop)
        new.learning_rate, new.decay, new.epsilon = self.learning_rate, self.decay, self.epsilon
        new.acc = self.acc.copy()
        return new
