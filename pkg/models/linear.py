"""
Ridge linear regression by full-batch gradient descent, for regression
pipelines (ranking workloads, and the check that regressions are not cascaded).
"""

import numpy as np
import torch

from models.bundle import ModelBundle, Task, negative_mse, standardize_params
from models.logistic import L2_PENALTY, LEARNING_RATE, N_ITERATIONS


class LinearRegression(torch.nn.Module):
    def __init__(self, n_features):
        super(LinearRegression, self).__init__()
        self.linear = torch.nn.Linear(n_features, 1).double()
        torch.nn.init.zeros_(self.linear.weight)
        torch.nn.init.zeros_(self.linear.bias)

    def forward(self, X):
        return self.linear(X).squeeze(-1)

    def export_weights(self):
        return {"weight": self.linear.weight.detach().numpy()[0].copy(),
                "bias": self.linear.bias.detach().numpy().copy()}


def fit_linear(X, y, learning_rate=LEARNING_RATE, n_iterations=N_ITERATIONS,
               l2_penalty=L2_PENALTY):
    mean, scale = standardize_params(X)
    y_mean = float(y.mean())
    y_scale = float(y.std()) or 1.0
    X_t = torch.from_numpy((X - mean) / scale)
    y_t = torch.from_numpy((y - y_mean) / y_scale)

    model = LinearRegression(X.shape[1])
    optimizer = torch.optim.SGD(model.parameters(), lr=learning_rate)
    criterion = torch.nn.MSELoss()
    for _ in range(n_iterations):
        optimizer.zero_grad()
        loss = criterion(model(X_t), y_t) + 0.5 * l2_penalty * torch.sum(model.linear.weight ** 2)
        loss.backward()
        optimizer.step()

    payload = model.export_weights()
    payload.update(mean=mean, scale=scale, y_mean=np.array([y_mean]), y_scale=np.array([y_scale]))
    return payload


def predict_linear(model, X):
    X = model.check_features(X)
    w = model.payload
    standardized = ((X - w["mean"]) / w["scale"]) @ w["weight"] + w["bias"][0]
    return standardized * w["y_scale"][0] + w["y_mean"][0]


def builtin_linear_regression():
    return ModelBundle(name="linear_regression",
                       task=Task.REGRESSION,
                       train=fit_linear,
                       predict=predict_linear,
                       score=negative_mse,
                       rank_score=predict_linear)
