"""Mental simulation benchmarks: Mental-Pong neural predictivity and object-contact prediction.

Modules: ``tensorio`` (binary tensors and dataset manifests), ``mpong`` (the occluded-ball
task), ``dynamics`` (CTRNN / LSTM / No-Dynamics latent predictors), ``regress`` (ridge,
logistic regression, k-fold iterators), ``metrics`` (split-half reliability and neural
predictivity), ``neuralbench``, ``behavior``, ``synth`` and ``cli``.
"""

__version__ = "0.1.0"
