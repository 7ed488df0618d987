"""
All hyperparameters of the pipeline, grouped per module.  Every field has a
documented default; `PipelineConfig` nests the groups and is the single
config file read by the command-line tools.
"""
import dataclasses
import json
import os
from dataclasses import dataclass, field
from scipy.stats import chi2
from .error import DataError, UsageError
from . import base

@dataclass
class FlowConfig:
    epipolar_tol: float = 1.5      # px, |y_left - y_right| per frame
    cycle_tol: float = 2.0         # px, closing-step displacement
    max_iters: int = 50            # Gauss-Newton iterations
    step_tol: float = 1e-10        # Gauss-Newton termination on step norm
    robust_scale: float = 3.0      # discard residuals above scale * median
    robust_floor: float = 1.0      # px, lower bound of the discard threshold

    def __post_init__(self):
        if self.epipolar_tol <= 0 or self.cycle_tol <= 0:
            raise DataError(
                f'{type(self).__qualname__}: tolerances must be > 0.  Got '
                f'epipolar_tol={self.epipolar_tol}, cycle_tol={self.cycle_tol}')

@dataclass
class LocalizeConfig:
    min_points: int = 10
    lo_percentile: float = 5.0
    hi_percentile: float = 95.0

@dataclass
class TrackingConfig:
    sigma_pos_process: float = 0.1   # m
    sigma_vel_process: float = 0.1   # m/frame
    sigma_pos_obs: float = 0.3       # m
    sigma_vel_obs: float = 0.5       # m/frame
    gate_threshold: float = float(chi2.ppf(0.99, df=3))
    assoc_min: float = 0.05
    window: int = 15
    min_length: int = 5
    max_misses: int = 3
    seed_vel_inflation: float = 10.0
    # gate and score against the position marginal plus observation noise
    gate_obs_noise: bool = False

    def __post_init__(self):
        if self.min_length < 1 or self.max_misses < 0 or self.window < 0:
            raise DataError(
                f'{type(self).__qualname__}: invalid tube limits '
                f'min_length={self.min_length}, max_misses={self.max_misses}, '
                f'window={self.window}')

@dataclass
class ScoringConfig:
    w1: float = 1.0          # motion
    w2: float = 1.0          # mask consistency
    w3: float = 1.0          # objectness
    alpha: float = 20.0      # mask null base value
    beta: float = 10.0       # objectness null base value
    area_gp: float = 4000.0  # m^2, 80 x 50 sensing area
    iou_floor: float = 1e-4
    score_floor: float = 1e-4

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3) < 0 or self.w1 + self.w2 + self.w3 <= 0:
            raise DataError(
                f'{type(self).__qualname__}: weights must be nonnegative with a '
                f'positive sum.  Got ({self.w1}, {self.w2}, {self.w3})')
        if self.alpha <= 1 or self.beta <= 1 or self.area_gp <= 0:
            raise DataError(
                f'{type(self).__qualname__}: need alpha > 1, beta > 1, '
                f'area_gp > 0.  Got alpha={self.alpha}, beta={self.beta}, '
                f'area_gp={self.area_gp}')

@dataclass
class SelectConfig:
    eps1: float = 100.0     # not 5.0: clutter chains of a few frames score 40 to 80
    eps2: float = 30.0      # not 2.0: at 2.0 near-duplicate tubes of one object all survive
    batch_len: int = 100
    node_budget: int = 1000000

@dataclass
class PipelineConfig:
    flow: FlowConfig = field(default_factory=FlowConfig)
    localize: LocalizeConfig = field(default_factory=LocalizeConfig)
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    select: SelectConfig = field(default_factory=SelectConfig)
    seed: int = 0

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        groups = { f.name: f.type for f in dataclasses.fields(cls) }
        unknown = set(d) - set(groups)
        if unknown:
            raise DataError(
                f'{cls.__qualname__}: unknown config keys '
                f'{base.grammar_list(sorted(unknown))}')
        kwargs = {}
        for name, val in d.items():
            if name == 'seed':
                kwargs[name] = int(val)
                continue
            group_cls = _GROUPS[name]
            names = { f.name for f in dataclasses.fields(group_cls) }
            bad = set(val) - names
            if bad:
                raise DataError(
                    f'{cls.__qualname__}: unknown keys in \'{name}\': '
                    f'{base.grammar_list(sorted(bad))}')
            kwargs[name] = group_cls(**val)
        return cls(**kwargs)

    def replace(self, **group_updates):
        """
        Return a copy with fields of the named groups updated, e.g.
        cfg.replace(scoring={'alpha': 5.0})
        """
        d = self.to_dict()
        for group, updates in group_updates.items():
            if group == 'seed':
                d['seed'] = updates
            else:
                d[group].update(updates)
        return type(self).from_dict(d)

    def to_json(self):
        return base.canonical_json(self.to_dict(), indent=2)

    def save(self, path):
        with open(path, 'w') as fh:
            fh.write(self.to_json())
            fh.write('\n')

    @classmethod
    def load(cls, path):
        if path is None:
            return cls()
        if not os.path.exists(path):
            raise UsageError(f'Config file \'{path}\' does not exist')
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as ex:
                raise DataError(f'invalid JSON: {ex}', path=path)
        return cls.from_dict(d)

_GROUPS = {
        'flow': FlowConfig,
        'localize': LocalizeConfig,
        'tracking': TrackingConfig,
        'scoring': ScoringConfig,
        'select': SelectConfig,
        }

