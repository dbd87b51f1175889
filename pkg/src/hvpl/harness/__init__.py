"""Synthetic continual-VIS experiment engine: tasks, loss, training, evaluation, forgetting metrics."""
