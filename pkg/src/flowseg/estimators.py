"""scikit-learn style wrappers around the capacity, solver and training code.

``HandcraftedCapacities`` and ``MaxFlowSegmenter`` chain in a
``sklearn.pipeline.Pipeline``; ``FlowRegularizedSegmenter`` is the trainable
three-region model.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .capnet import HandcraftedParams, NetConfig, NetParams, OptimConfig, forward, capacity_head
from .capnet import handcrafted_caps, standardize
from .evalmetrics import dice
from .levelset import threshold
from .losses import FlowLossForm, HuberParams
from .solver import CapacityMaps, SolverConfig, solve
from .synthdata import Sample
from .validation import check_capacity_batch, check_image_batch, check_mask_batch


class HandcraftedCapacities(TransformerMixin, BaseEstimator):
    """Intensity-distance source/sink capacities and a Sobel edge weight.

    ``fit`` estimates the foreground and background intensities of the chosen
    channel from labelled images when ``fg_mean``/``bg_mean`` are left as None.
    """

    def __init__(self, fg_mean=None, bg_mean=None, edge_scale=0.5, edge_sharpness=2.0,
                 channel_index=0):
        self.fg_mean = fg_mean
        self.bg_mean = bg_mean
        self.edge_scale = edge_scale
        self.edge_sharpness = edge_sharpness
        self.channel_index = channel_index

    def fit(self, X, y=None):
        X = check_image_batch(X)
        if not 0 <= self.channel_index < X.shape[1]:
            raise ValueError(f"channel_index {self.channel_index} out of range")
        fg, bg = self.fg_mean, self.bg_mean
        if fg is None or bg is None:
            if y is None:
                raise ValueError("labels are required to estimate class intensities")
            y = check_mask_batch(y, X.shape[0], X.shape[2:], n_masks=1)[:, 0].astype(bool)
            channel = X[:, self.channel_index]
            if not y.any() or y.all():
                raise ValueError("labels need both foreground and background pixels")
            fg = float(channel[y].mean()) if fg is None else fg
            bg = float(channel[~y].mean()) if bg is None else bg
        self.fg_mean_, self.bg_mean_ = float(fg), float(bg)
        self.n_channels_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "fg_mean_")
        X = check_image_batch(X, n_channels=self.n_channels_)
        params = HandcraftedParams(
            self.fg_mean_, self.bg_mean_, self.edge_scale, self.edge_sharpness, self.channel_index
        )
        return np.stack([handcrafted_caps(img, params).stack() for img in X])


class MaxFlowSegmenter(TransformerMixin, BaseEstimator):
    """ADMM max-flow inference on ``(n, 3, H, W)`` capacity stacks.

    ``transform`` returns the relaxed labels, ``predict`` the thresholded masks.
    Nothing is learned; ``fit`` only validates its input.
    """

    def __init__(self, step_size=0.16, penalty=0.3, iterations=15, tv_mode="isotropic",
                 level=0.5, clamp_lambda_final=True):
        self.step_size = step_size
        self.penalty = penalty
        self.iterations = iterations
        self.tv_mode = tv_mode
        self.level = level
        self.clamp_lambda_final = clamp_lambda_final

    def _solver_config(self):
        return SolverConfig(
            step_size=self.step_size,
            penalty=self.penalty,
            iterations=self.iterations,
            tv_mode=self.tv_mode,
            clamp_lambda_final=self.clamp_lambda_final,
        )

    def fit(self, X, y=None):
        check_capacity_batch(X)
        self.solver_config_ = self._solver_config()
        return self

    def transform(self, X):
        check_is_fitted(self, "solver_config_")
        X = check_capacity_batch(X)
        return np.stack([solve(CapacityMaps(*caps), self.solver_config_).lam for caps in X])

    def predict(self, X):
        return np.stack([threshold(lam, self.level) for lam in self.transform(X)])

    def score(self, X, y):
        """Mean Dice of the predicted masks against ``y``."""
        pred = self.predict(X)
        y = check_mask_batch(y, pred.shape[0], pred.shape[1:], n_masks=1)[:, 0]
        return float(np.mean([dice(p, t) for p, t in zip(pred, y)]))


class FlowRegularizedSegmenter(BaseEstimator):
    """Three-region (WT, TC, EC) segmenter trained with the flow-regularized loss.

    ``X`` holds ``(n, C, H, W)`` images (standardized per image internally),
    ``y`` holds ``(n, 3, H, W)`` nested binary masks. ``predict`` returns masks
    of the same layout with EC inside TC inside WT.
    """

    def __init__(self, down_widths=(8, 16, 16, 32, 32, 64), dropout_rate=0.3,
                 learning_rate=0.002, momentum=0.9, weight_decay=1e-6, epochs=30,
                 step_size=0.16, penalty=0.3, iterations=15, level=0.5, huber_delta=1.0,
                 loss_form="deviation", flow_weight=1.0, normalize_energy=True,
                 source_ceiling=10.0, random_state=0):
        self.down_widths = down_widths
        self.dropout_rate = dropout_rate
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.step_size = step_size
        self.penalty = penalty
        self.iterations = iterations
        self.level = level
        self.huber_delta = huber_delta
        self.loss_form = loss_form
        self.flow_weight = flow_weight
        self.normalize_energy = normalize_energy
        self.source_ceiling = source_ceiling
        self.random_state = random_state

    def _train_config(self):
        from .trainer import TrainConfig

        return TrainConfig(
            optim=OptimConfig(self.learning_rate, self.momentum, self.weight_decay),
            solver=SolverConfig(self.step_size, self.penalty, self.iterations),
            huber=HuberParams(self.huber_delta),
            loss_form=FlowLossForm(self.loss_form),
            epochs=self.epochs,
            shuffle_seed=self.random_state,
            normalize_energy=self.normalize_energy,
            flow_weight=self.flow_weight,
            source_ceiling=self.source_ceiling,
            level=self.level,
        )

    def fit(self, X, y, validation=None):
        """Train from scratch. ``validation`` is an optional ``(X_val, y_val)`` pair."""
        from .trainer import train

        net_cfg = NetConfig(
            in_channels=np.shape(X)[1] if np.ndim(X) == 4 else 1,
            down_widths=tuple(self.down_widths),
            dropout_rate=self.dropout_rate,
            seed=self.random_state,
        )
        X = check_image_batch(X, multiple_of=2**net_cfg.n_blocks)
        samples = self._samples(X, y)
        val = self._samples(*validation) if validation is not None else None
        self.net_config_ = net_cfg
        self.params_ = NetParams.init(net_cfg)
        self.train_config_ = self._train_config()
        self.train_stats_ = train(self.params_, net_cfg, samples, self.train_config_, val)
        return self

    def _samples(self, X, y):
        X = check_image_batch(X)
        y = check_mask_batch(y, X.shape[0], X.shape[2:])
        return [Sample(standardize(img), tuple(m)) for img, m in zip(X, y)]

    def capacities(self, X):
        """Network capacity stacks, shape ``(n, 3 regions, 3 maps, H, W)``."""
        check_is_fitted(self, "params_")
        X = check_image_batch(X, n_channels=self.net_config_.in_channels)
        out = []
        for img in X:
            raw, _ = forward(self.params_, self.net_config_, standardize(img))
            groups, _ = capacity_head(raw)
            out.append(np.stack([g.stack() for g in groups]))
        return np.stack(out)

    def predict(self, X):
        from .trainer import infer_full

        check_is_fitted(self, "params_")
        X = check_image_batch(X, n_channels=self.net_config_.in_channels)
        scfg = self.train_config_.solver
        return np.stack([
            np.stack(infer_full(self.params_, self.net_config_, standardize(img), scfg, self.level).masks)
            for img in X
        ])

    def score(self, X, y):
        """Mean whole-tumour Dice."""
        pred = self.predict(X)
        y = check_mask_batch(y, pred.shape[0], pred.shape[2:])
        return float(np.mean([dice(p[0], t[0]) for p, t in zip(pred, y)]))
