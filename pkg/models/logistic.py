"""
Binary logistic regression trained by full-batch gradient descent with an L2
penalty. Training runs in torch; weights are exported to numpy so point
queries do not pay torch dispatch overhead.
"""

import numpy as np
import torch
from scipy.special import expit

from models.bundle import (ModelBundle, Task, accuracy, binary_confidence,
                           check_binary_labels, standardize_params)

LEARNING_RATE = 0.1
N_ITERATIONS = 500
L2_PENALTY = 1e-4


class LogisticRegression(torch.nn.Module):
    def __init__(self, n_features):
        super(LogisticRegression, self).__init__()
        self.linear = torch.nn.Linear(n_features, 1).double()
        torch.nn.init.zeros_(self.linear.weight)
        torch.nn.init.zeros_(self.linear.bias)

    def forward(self, X):
        return self.linear(X).squeeze(-1)

    def export_weights(self):
        return {"weight": self.linear.weight.detach().numpy()[0].copy(),
                "bias": self.linear.bias.detach().numpy().copy()}


def fit_logistic(X, y, learning_rate=LEARNING_RATE, n_iterations=N_ITERATIONS,
                 l2_penalty=L2_PENALTY):
    check_binary_labels(y)
    mean, scale = standardize_params(X)
    X_t = torch.from_numpy((X - mean) / scale)
    y_t = torch.from_numpy(y.astype(np.float64))

    model = LogisticRegression(X.shape[1])
    optimizer = torch.optim.SGD(model.parameters(), lr=learning_rate)
    criterion = torch.nn.BCEWithLogitsLoss()
    for _ in range(n_iterations):
        optimizer.zero_grad()
        loss = criterion(model(X_t), y_t)
        loss = loss + 0.5 * l2_penalty * torch.sum(model.linear.weight ** 2)
        loss.backward()
        optimizer.step()

    payload = model.export_weights()
    payload["mean"] = mean
    payload["scale"] = scale
    return payload


def positive_probability(model, X):
    X = model.check_features(X)
    w = model.payload
    return expit(((X - w["mean"]) / w["scale"]) @ w["weight"] + w["bias"][0])


def predict_logistic(model, X):
    return (positive_probability(model, X) > 0.5).astype(np.float64)


def confidence_logistic(model, X):
    return binary_confidence(positive_probability(model, X))


def builtin_logistic_regression():
    return ModelBundle(name="logistic_regression",
                       task=Task.CLASSIFICATION,
                       train=fit_logistic,
                       predict=predict_logistic,
                       confidence=confidence_logistic,
                       score=accuracy,
                       rank_score=positive_probability)
