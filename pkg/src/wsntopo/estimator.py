"""scikit-learn style front end.

``TopologyOptimizer().fit(spec)`` trains a policy for one network;
``predict()`` returns its greedy topology and ``score()`` that topology's
lifetime in rounds. ``partial_fit`` continues training, optionally on a
changed network with the same node slots.
"""
from __future__ import annotations

from dataclasses import fields
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .network import NetworkSpec, Topology, lifetime_deterministic, load_instance, validate_topology
from .trainer import TrainConfig, Trainer, evaluate

_TRAIN_FIELDS = {f.name for f in fields(TrainConfig)}


def check_network(X) -> NetworkSpec:
    """Coerce ``X`` to a :class:`NetworkSpec`.

    Accepts a spec, a path to an instance file, or an ``(N, 2)`` array of
    positions (gateway first) which gets the default radio parameters.
    """
    if isinstance(X, NetworkSpec):
        return X
    if isinstance(X, (str, Path)):
        spec, _ = load_instance(X)
        return spec
    pos = np.asarray(X, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 2:
        raise ValueError(f"expected a NetworkSpec, an instance path or an (N, 2) array; got shape {pos.shape}")
    return NetworkSpec(pos, initial_energy=1.0, eps_proc=50e-9, rho=1e-12,
                       data_bits_min=500, data_bits_max=1000)


def check_topology(spec: NetworkSpec, topology) -> Topology:
    return validate_topology(spec, topology)


class TopologyOptimizer(BaseEstimator):
    """Learn a long-lived tree topology for a sensor network.

    Parameters mirror :class:`~wsntopo.trainer.TrainConfig`;
    ``random_state`` becomes its ``seed``.
    """

    def __init__(self, iterations=40, episodes_per_iter=8, sims_per_state=64, minibatch=16,
                 learning_rate=1e-3, c_puct=1.5, replay_episodes=20, eval_realizations=100,
                 epochs=1, tree_reuse=True, bare_encoding=False, dirichlet_alpha=None,
                 dirichlet_frac=0.25, dirichlet_iterations=None, conv_blocks=3, filters=32, value_head_hidden=64,
                 random_state=0):
        self.iterations = iterations
        self.episodes_per_iter = episodes_per_iter
        self.sims_per_state = sims_per_state
        self.minibatch = minibatch
        self.learning_rate = learning_rate
        self.c_puct = c_puct
        self.replay_episodes = replay_episodes
        self.eval_realizations = eval_realizations
        self.epochs = epochs
        self.tree_reuse = tree_reuse
        self.bare_encoding = bare_encoding
        self.dirichlet_alpha = dirichlet_alpha
        self.dirichlet_frac = dirichlet_frac
        self.dirichlet_iterations = dirichlet_iterations
        self.conv_blocks = conv_blocks
        self.filters = filters
        self.value_head_hidden = value_head_hidden
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        params = {k: v for k, v in self.get_params().items() if k in _TRAIN_FIELDS}
        return TrainConfig(seed=int(self.random_state or 0), **params)

    def fit(self, X, y=None):
        spec = check_network(X)
        self.trainer_ = Trainer(spec, self._train_config())
        self.trainer_.run()
        self._sync()
        return self

    def partial_fit(self, X=None, y=None, n_iter=1):
        """Run ``n_iter`` more iterations, switching to ``X`` first if given."""
        if not hasattr(self, "trainer_"):
            self.trainer_ = Trainer(check_network(X), self._train_config())
        elif X is not None:
            spec = check_network(X)
            if spec.node_count != self.trainer_.spec.node_count:
                raise ValueError("a changed network must keep the same number of node slots")
            if spec is not self.trainer_.spec:
                self.trainer_.spec = spec
                self.trainer_.buffer.clear()
        self.trainer_.run(self.trainer_.iteration + n_iter)
        self._sync()
        return self

    def _sync(self):
        self.net_ = self.trainer_.net
        self.spec_ = self.trainer_.spec
        self.reports_ = self.trainer_.reports
        self.n_iter_ = self.trainer_.iteration

    def _spec(self, X):
        check_is_fitted(self, "net_")
        if X is None:
            return self.spec_
        spec = check_network(X)
        if spec.node_count != self.net_.config.n_nodes:
            raise ValueError(f"network has {spec.node_count} node slots; model expects {self.net_.config.n_nodes}")
        return spec

    def predict(self, X=None) -> Topology:
        """Greedy topology from the learned policy."""
        spec = self._spec(X)
        return evaluate(spec, self.net_, 1, "greedy").topologies[0]

    def sample_topologies(self, X=None, n=100, random_state=None) -> list[Topology]:
        spec = self._spec(X)
        return evaluate(spec, self.net_, n, "sample", random_state).topologies

    def score(self, X=None, y=None) -> float:
        """Lifetime in rounds of the greedy topology."""
        spec = self._spec(X)
        return float(lifetime_deterministic(spec, self.predict(spec)))
