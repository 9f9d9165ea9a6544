"""Run configuration: a flat INI-style key/value file with sections.

Every key has a documented default (see DEFAULT_CONFIG); unknown sections
or keys are rejected. One root seed drives all randomness.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field

from .dataset import AggregationConfig
from .grid import GridSpec
from .ontology import Ontology
from .synth import LidarModel, SceneParams
from .train import ModelConfig, TrainConfig

DEFAULT_CONFIG = """\
[run]
seed = 0
out_dir = runs

[grid]
x_min = -12.8
x_max = 12.8
y_min = -12.8
y_max = 12.8
z_min = -3.0
z_max = 3.0
cell_size = 0.2

[pillars]
max_pillars = 4096
max_points = 32
channels = 128

[fusion]
frames = 3
offsets = 0,-5,-10

[train]
learning_rate = 2.0e-4
weight_decay = 0.01
batch_size = 2
stage1_steps = 500
stage2_steps = 300
eval_every = 0
patience = 5
target_miou = 0.0
log_every = 25
lr_decay = 1.0
lr_decay_every = 0

[dataset]
num_scans = 15
stride = 2
vehicle_height = 2.5
ground_percentile = 0.05
band_low = -0.3

[synth]
frames = 20
speed = 0.6
extent = 30.0
road_half_width = 3.0
road_wobble = 1.2
road_period = 45.0
num_bushes = 12
num_boxes = 7
num_walls = 2
num_trunks = 7

[lidar]
rings = -24,-22.27,-20.53,-18.8,-17.07,-15.33,-13.6,-11.87,-10.13,-8.4,-6.67,-4.93,-3.2,-1.47,0.27,2
azimuth_step = 2.0
max_range = 20.0
range_sigma = 0.01
dropout = 0.02
sensor_height = 1.8

[paths]
ontology =
"""


@dataclass
class RunConfig:
    grid: GridSpec
    channels: int = 128
    max_pillars: int = 4096
    max_points: int = 32
    train: TrainConfig = field(default_factory=TrainConfig)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    scene: SceneParams = field(default_factory=SceneParams)
    lidar: LidarModel = field(default_factory=LidarModel)
    synth_frames: int = 20
    synth_speed: float = 0.6
    ontology_path: str = ""
    out_dir: str = "runs"
    seed: int = 0

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.grid, self.channels, self.max_pillars, self.max_points)

    def ontology(self) -> Ontology:
        if self.ontology_path:
            return Ontology.load(self.ontology_path)
        return Ontology.default()

    def dump(self) -> str:
        """Canonical text of the resolved configuration."""
        tc, ag, sc, li = self.train, self.aggregation, self.scene, self.lidar
        g = self.grid
        rings = ",".join(f"{r:g}" for r in li.ring_elevations_deg)
        offsets = ",".join(str(o) for o in tc.frame_offsets)
        return (
            f"[run]\nseed = {self.seed}\nout_dir = {self.out_dir}\n\n"
            f"[grid]\nx_min = {g.x_min:g}\nx_max = {g.x_max:g}\ny_min = {g.y_min:g}\n"
            f"y_max = {g.y_max:g}\nz_min = {g.z_min:g}\nz_max = {g.z_max:g}\n"
            f"cell_size = {g.cell_size:g}\n\n"
            f"[pillars]\nmax_pillars = {self.max_pillars}\nmax_points = {self.max_points}\n"
            f"channels = {self.channels}\n\n"
            f"[fusion]\nframes = {tc.frames}\noffsets = {offsets}\n\n"
            f"[train]\nlearning_rate = {tc.learning_rate:g}\nweight_decay = {tc.weight_decay:g}\n"
            f"batch_size = {tc.batch_size}\nstage1_steps = {tc.stage1_steps}\n"
            f"stage2_steps = {tc.stage2_steps}\neval_every = {tc.eval_every}\n"
            f"patience = {tc.patience}\ntarget_miou = {tc.target_miou:g}\n"
            f"log_every = {tc.log_every}\nlr_decay = {tc.lr_decay:g}\n"
            f"lr_decay_every = {tc.lr_decay_every}\n\n"
            f"[dataset]\nnum_scans = {ag.num_scans}\nstride = {ag.stride}\n"
            f"vehicle_height = {ag.vehicle_height:g}\nground_percentile = {ag.ground_percentile:g}\n"
            f"band_low = {ag.band_low:g}\n\n"
            f"[synth]\nframes = {self.synth_frames}\nspeed = {self.synth_speed:g}\n"
            f"extent = {sc.extent:g}\nroad_half_width = {sc.road_half_width:g}\n"
            f"road_wobble = {sc.road_wobble:g}\nroad_period = {sc.road_period:g}\n"
            f"num_bushes = {sc.num_bushes}\nnum_boxes = {sc.num_boxes}\n"
            f"num_walls = {sc.num_walls}\nnum_trunks = {sc.num_trunks}\n\n"
            f"[lidar]\nrings = {rings}\nazimuth_step = {li.azimuth_step_deg:g}\n"
            f"max_range = {li.max_range:g}\nrange_sigma = {li.range_sigma:g}\n"
            f"dropout = {li.dropout:g}\nsensor_height = {li.sensor_height:g}\n\n"
            f"[paths]\nontology = {self.ontology_path}\n"
        )

    def config_hash(self) -> str:
        return hashlib.sha256(self.dump().encode()).hexdigest()[:16]


def _parser_from_text(text: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read_string(text)
    return parser


def _validate_keys(parser: configparser.ConfigParser, path):
    reference = _parser_from_text(DEFAULT_CONFIG)
    for section in parser.sections():
        if section not in reference.sections():
            raise ValueError(f"{path}: unknown config section [{section}]")
        for key in parser[section]:
            if key not in reference[section]:
                raise ValueError(f"{path}: unknown key '{key}' in section [{section}]")


def load_config(path=None) -> RunConfig:
    """Parse a config file over the documented defaults (path=None: defaults)."""
    if path is None:
        return load_config_text(DEFAULT_CONFIG)
    with open(path) as f:
        return load_config_text(f.read(), origin=str(path))


def load_config_text(text: str, origin: str = "<config>") -> RunConfig:
    parser = _parser_from_text(DEFAULT_CONFIG)
    user = _parser_from_text(text)
    _validate_keys(user, origin)
    parser.read_dict({s: dict(user[s]) for s in user.sections()})

    g = parser["grid"]
    grid = GridSpec.from_bounds(
        g.getfloat("x_min"), g.getfloat("x_max"),
        g.getfloat("y_min"), g.getfloat("y_max"),
        g.getfloat("z_min"), g.getfloat("z_max"),
        g.getfloat("cell_size"),
    )
    run = parser["run"]
    fusion = parser["fusion"]
    t = parser["train"]
    train = TrainConfig(
        learning_rate=t.getfloat("learning_rate"),
        weight_decay=t.getfloat("weight_decay"),
        batch_size=t.getint("batch_size"),
        stage1_steps=t.getint("stage1_steps"),
        stage2_steps=t.getint("stage2_steps"),
        seed=run.getint("seed"),
        frames=fusion.getint("frames"),
        frame_offsets=tuple(int(x) for x in fusion.get("offsets").split(",")),
        eval_every=t.getint("eval_every"),
        patience=t.getint("patience"),
        target_miou=t.getfloat("target_miou"),
        log_every=t.getint("log_every"),
        lr_decay=t.getfloat("lr_decay"),
        lr_decay_every=t.getint("lr_decay_every"),
    )
    d = parser["dataset"]
    aggregation = AggregationConfig(
        num_scans=d.getint("num_scans"),
        stride=d.getint("stride"),
        vehicle_height=d.getfloat("vehicle_height"),
        ground_percentile=d.getfloat("ground_percentile"),
        band_low=d.getfloat("band_low"),
    )
    s = parser["synth"]
    scene = SceneParams(
        extent=s.getfloat("extent"),
        road_half_width=s.getfloat("road_half_width"),
        road_wobble=s.getfloat("road_wobble"),
        road_period=s.getfloat("road_period"),
        num_bushes=s.getint("num_bushes"),
        num_boxes=s.getint("num_boxes"),
        num_walls=s.getint("num_walls"),
        num_trunks=s.getint("num_trunks"),
    )
    li = parser["lidar"]
    lidar = LidarModel(
        ring_elevations_deg=tuple(float(x) for x in li.get("rings").split(",")),
        azimuth_step_deg=li.getfloat("azimuth_step"),
        max_range=li.getfloat("max_range"),
        range_sigma=li.getfloat("range_sigma"),
        dropout=li.getfloat("dropout"),
        sensor_height=li.getfloat("sensor_height"),
    )
    p = parser["pillars"]
    return RunConfig(
        grid=grid,
        channels=p.getint("channels"),
        max_pillars=p.getint("max_pillars"),
        max_points=p.getint("max_points"),
        train=train,
        aggregation=aggregation,
        scene=scene,
        lidar=lidar,
        synth_frames=s.getint("frames"),
        synth_speed=s.getfloat("speed"),
        ontology_path=parser["paths"].get("ontology", "").strip(),
        out_dir=run.get("out_dir"),
        seed=run.getint("seed"),
    )
