"""Deterministic synthetic aerial-scene generator.

Produces stabilized low-frame-rate grayscale sequences: a static value-noise
background, oriented-rectangle vehicles following scripted paths, per-frame
sensor noise, ground-truth tracks, and a corrupted detection stream (misses
for slow movers, union merges for close pairs, center jitter, Poisson
clutter). Everything derives from a single integer seed through a
counter-based generator, so output is bit-identical across runs and
platforms regardless of evaluation order.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import InvalidConfig
from .fileio import parse_keyvalue_file
from .types import BBox, Detection, GrayFrame, Observation, Track

_MASK = (1 << 64) - 1
_GOLDEN_INT = 0x9E3779B97F4A7C15
_MIX1_INT = 0xBF58476D1CE4E5B9
_MIX2_INT = 0x94D049BB133111EB
_GOLDEN = np.uint64(_GOLDEN_INT)
_MIX1 = np.uint64(_MIX1_INT)
_MIX2 = np.uint64(_MIX2_INT)

# substream tags: per-frame streams are frame*8+tag, global streams sit far above
_TAG_NOISE = 0
_TAG_MISS = 1
_TAG_JITTER = 2
_TAG_CLUTTER = 3
_STREAM_BACKGROUND = 1 << 40
_STREAM_SPECKLE = (1 << 40) + 1000


def _mix_int(x: int) -> int:
    x &= _MASK
    x ^= x >> 30
    x = (x * _MIX1_INT) & _MASK
    x ^= x >> 27
    x = (x * _MIX2_INT) & _MASK
    x ^= x >> 31
    return x


def _mix_array(x: np.ndarray) -> np.ndarray:
    x = x ^ (x >> np.uint64(30))
    x = x * _MIX1
    x = x ^ (x >> np.uint64(27))
    x = x * _MIX2
    x = x ^ (x >> np.uint64(31))
    return x


class CounterRng:
    """Counter-mode splitmix64: word(i) = mix(base + (i+1)*golden).

    Streams are independent hashes of (seed, stream), so any substream can
    be drawn without consuming state from any other — per-frame draws stay
    identical no matter which frames are generated or in what order.
    """

    def __init__(self, seed: int, stream: int = 0):
        base = _mix_int(seed + _GOLDEN_INT)
        base = _mix_int(base ^ _mix_int(stream * _GOLDEN_INT + _GOLDEN_INT))
        self._base = np.uint64(base)
        self._counter = 0
        self.seed = seed
        self.stream = stream

    def substream(self, tag: int) -> "CounterRng":
        return CounterRng(self.seed, self.stream * 65537 + tag + 1)

    def _words(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        return _mix_array(self._base + idx * _GOLDEN)

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1), 53-bit resolution."""
        return (self._words(n) >> np.uint64(11)) * (2.0 ** -53)

    def gaussians(self, n: int) -> np.ndarray:
        """n standard normals via Box-Muller on uniform pairs."""
        m = (n + 1) // 2
        u1 = 1.0 - self.uniform(m)  # (0, 1] keeps the log finite
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2),
                            r * np.sin(2.0 * np.pi * u2)])
        return z[:n]

    def poisson(self, lam: float) -> int:
        """One Poisson draw by uniform products; fine for small rates."""
        if lam <= 0:
            return 0
        limit = math.exp(-lam)
        k = 0
        p = 1.0
        while True:
            p *= float(self.uniform(1)[0])
            if p <= limit:
                return k
            k += 1


# ---------------------------------------------------------------------------
# scenario description


@dataclass(frozen=True)
class PathCommand:
    kind: str  # "move" or "stop"
    x: float = 0.0
    y: float = 0.0
    speed: float = 0.0
    hold: int = 0


@dataclass(frozen=True)
class VehicleSpec:
    vid: int
    start: tuple
    commands: tuple
    length: float
    width: float
    gray: float
    speckle: float
    hidden: tuple = ()  # inclusive (first, last) frame ranges

    def hidden_at(self, t: int) -> bool:
        return any(a <= t <= b for a, b in self.hidden)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    width: int = 256
    height: int = 256
    frames: int = 50
    background_gray: float = 90.0
    texture_amplitude: float = 22.0
    noise_sigma: float = 2.0
    vehicle_length: float = 14.0
    vehicle_width: float = 7.0
    vehicle_gray: float = 30.0
    speckle_amplitude: float = 8.0
    miss_speed_floor: float = 2.0
    miss_drop_prob: float = 1.0
    merge_distance: float = 12.0
    jitter_sigma: float = 0.4
    clutter_rate: float = 0.5
    clutter_size: float = 7.0
    vehicles: tuple = ()

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        mapping = parse_keyvalue_file(path)
        return cls.from_mapping(mapping)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ScenarioConfig":
        scalar_keys = {
            "name": str, "width": int, "height": int, "frames": int,
            "background_gray": float, "texture_amplitude": float,
            "noise_sigma": float, "vehicle_length": float,
            "vehicle_width": float, "vehicle_gray": float,
            "speckle_amplitude": float, "miss_speed_floor": float,
            "miss_drop_prob": float, "merge_distance": float,
            "jitter_sigma": float, "clutter_rate": float,
            "clutter_size": float,
        }
        kwargs = {}
        per_vehicle: dict[int, dict] = {}
        vehicle_re = re.compile(r"^vehicle_(\d+)_(path|size|gray|hidden|speckle)$")
        for key, raw in mapping.items():
            if key in scalar_keys:
                try:
                    kwargs[key] = scalar_keys[key](raw)
                except ValueError:
                    raise InvalidConfig(f"scenario key {key}: bad value {raw!r}")
                continue
            m = vehicle_re.match(key)
            if not m:
                raise InvalidConfig(f"unknown scenario key {key!r}")
            per_vehicle.setdefault(int(m.group(1)), {})[m.group(2)] = raw
        base = cls(**kwargs)
        vehicles = []
        for vid in sorted(per_vehicle):
            fields = per_vehicle[vid]
            if "path" not in fields:
                raise InvalidConfig(f"vehicle {vid}: missing path")
            start, commands = _parse_path(fields["path"], vid)
            length, width = base.vehicle_length, base.vehicle_width
            if "size" in fields:
                try:
                    length, width = (float(v) for v in fields["size"].split(","))
                except ValueError:
                    raise InvalidConfig(f"vehicle {vid}: bad size {fields['size']!r}")
            gray = float(fields.get("gray", base.vehicle_gray))
            speckle = float(fields.get("speckle", base.speckle_amplitude))
            hidden = _parse_ranges(fields.get("hidden", ""), vid)
            vehicles.append(VehicleSpec(vid=vid, start=start, commands=commands,
                                        length=length, width=width, gray=gray,
                                        speckle=speckle, hidden=hidden))
        if base.frames < 1 or base.width < 16 or base.height < 16:
            raise InvalidConfig("scenario too small: need frames>=1 and 16x16 pixels")
        return cls(**kwargs, vehicles=tuple(vehicles))


def _parse_path(text: str, vid: int):
    """`start X,Y ; move to X,Y speed S ; stop N` — a waypoint script."""
    parts = [p.strip() for p in text.split(";") if p.strip()]
    if not parts or not parts[0].startswith("start"):
        raise InvalidConfig(f"vehicle {vid}: path must begin with 'start X,Y'")
    start = _parse_xy(parts[0][len("start"):], vid)
    commands = []
    for part in parts[1:]:
        tokens = part.split()
        if tokens[0] == "stop":
            if len(tokens) != 2 or not tokens[1].isdigit():
                raise InvalidConfig(f"vehicle {vid}: bad command {part!r}")
            commands.append(PathCommand(kind="stop", hold=int(tokens[1])))
        elif tokens[0] == "move":
            if len(tokens) != 5 or tokens[1] != "to" or tokens[3] != "speed":
                raise InvalidConfig(f"vehicle {vid}: bad command {part!r}")
            x, y = _parse_xy(tokens[2], vid)
            try:
                speed = float(tokens[4])
            except ValueError:
                raise InvalidConfig(f"vehicle {vid}: bad speed in {part!r}")
            if speed <= 0:
                raise InvalidConfig(f"vehicle {vid}: speed must be positive")
            commands.append(PathCommand(kind="move", x=x, y=y, speed=speed))
        else:
            raise InvalidConfig(f"vehicle {vid}: bad command {part!r}")
    return start, tuple(commands)


def _parse_xy(text: str, vid: int) -> tuple:
    try:
        x, y = (float(v) for v in text.strip().split(","))
    except ValueError:
        raise InvalidConfig(f"vehicle {vid}: bad coordinate {text!r}")
    return (x, y)


def _parse_ranges(text: str, vid: int) -> tuple:
    text = text.strip()
    if not text:
        return ()
    out = []
    for chunk in text.split(","):
        m = re.match(r"^\s*(\d+)\s*-\s*(\d+)\s*$", chunk)
        if not m:
            raise InvalidConfig(f"vehicle {vid}: bad hidden range {chunk!r}")
        a, b = int(m.group(1)), int(m.group(2))
        if b < a:
            raise InvalidConfig(f"vehicle {vid}: empty hidden range {chunk!r}")
        out.append((a, b))
    return tuple(out)


# ---------------------------------------------------------------------------
# path compilation and rendering


@dataclass
class VehicleStates:
    spec: VehicleSpec
    positions: np.ndarray  # (frames, 2)
    headings: np.ndarray   # radians
    speeds: np.ndarray     # px/frame, arriving speed

    def gt_box(self, t: int) -> BBox:
        c = abs(math.cos(self.headings[t]))
        s = abs(math.sin(self.headings[t]))
        w = self.spec.length * c + self.spec.width * s
        h = self.spec.length * s + self.spec.width * c
        return BBox(float(self.positions[t, 0]), float(self.positions[t, 1]), w, h)


def compile_states(spec: VehicleSpec, frames: int) -> VehicleStates:
    pos = [np.array(spec.start, dtype=np.float64)]
    for cmd in spec.commands:
        if len(pos) >= frames:
            break
        if cmd.kind == "stop":
            for _ in range(cmd.hold):
                pos.append(pos[-1].copy())
        else:
            target = np.array([cmd.x, cmd.y], dtype=np.float64)
            while len(pos) < frames:
                delta = target - pos[-1]
                dist = float(np.hypot(delta[0], delta[1]))
                if dist <= 1e-9:
                    break
                step = min(cmd.speed, dist)
                pos.append(pos[-1] + delta / dist * step)
    while len(pos) < frames:
        pos.append(pos[-1].copy())
    positions = np.array(pos[:frames])

    deltas = np.diff(positions, axis=0)
    step_len = np.hypot(deltas[:, 0], deltas[:, 1]) if frames > 1 else np.zeros(0)
    headings = np.zeros(frames)
    current = 0.0
    for t in range(frames - 1):  # initial heading looks ahead to first motion
        if step_len[t] > 1e-9:
            current = math.atan2(deltas[t, 1], deltas[t, 0])
            break
    for t in range(frames):
        # Yaw has inertia: align the body with the centered travel
        # direction, so a one-frame lateral jink reads as a skid rather
        # than an instant spin, while sustained turns still rotate it.
        lo = max(t - 1, 0)
        hi = min(t + 1, frames - 1)
        dx = positions[hi, 0] - positions[lo, 0]
        dy = positions[hi, 1] - positions[lo, 1]
        if math.hypot(dx, dy) > 1e-9:
            current = math.atan2(dy, dx)
        headings[t] = current
    speeds = np.zeros(frames)
    if frames > 1:
        speeds[1:] = step_len
        speeds[0] = step_len[0]
    return VehicleStates(spec=spec, positions=positions, headings=headings,
                         speeds=speeds)


def value_noise(width: int, height: int, rng: CounterRng,
                scales=(48, 24, 12)) -> np.ndarray:
    """Multi-octave bilinear lattice noise in [-1, 1], shape (height, width)."""
    acc = np.zeros((height, width))
    weight, total = 1.0, 0.0
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    for scale in scales:
        gh = height // scale + 2
        gw = width // scale + 2
        lattice = rng.uniform(gh * gw).reshape(gh, gw) * 2.0 - 1.0
        acc += weight * map_coordinates(lattice, [ys / scale, xs / scale], order=1)
        total += weight
        weight *= 0.5
    return acc / total


def _speckle_lattice(rng: CounterRng, cells: int = 16) -> np.ndarray:
    return rng.uniform(cells * cells).reshape(cells, cells) * 2.0 - 1.0


_SPECKLE_CELL = 3.0


def _render_vehicle(img: np.ndarray, state: VehicleStates, t: int,
                    lattice: np.ndarray) -> None:
    spec = state.spec
    cx, cy = state.positions[t]
    theta = state.headings[t]
    radius = 0.5 * math.hypot(spec.length, spec.width) + 1.5
    x0 = max(int(math.floor(cx - radius)), 0)
    y0 = max(int(math.floor(cy - radius)), 0)
    x1 = min(int(math.ceil(cx + radius)) + 1, img.shape[1])
    y1 = min(int(math.ceil(cy + radius)) + 1, img.shape[0])
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    dx = xs - cx
    dy = ys - cy
    c, s = math.cos(theta), math.sin(theta)
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    cov = (np.clip(spec.length / 2 + 0.5 - np.abs(lx), 0.0, 1.0)
           * np.clip(spec.width / 2 + 0.5 - np.abs(ly), 0.0, 1.0))
    half = lattice.shape[0] / 2.0
    tex = map_coordinates(lattice, [ly / _SPECKLE_CELL + half,
                                    lx / _SPECKLE_CELL + half],
                          order=1, mode="nearest")
    img[y0:y1, x0:x1] += cov * (spec.gray + spec.speckle * tex)


# ---------------------------------------------------------------------------
# full scenario simulation


@dataclass
class SimOutput:
    scenario: ScenarioConfig
    seed: int
    frames: list = field(default_factory=list)      # GrayFrame per frame
    gt_tracks: list = field(default_factory=list)   # Track per vehicle
    detections: dict = field(default_factory=dict)  # frame -> [Detection]


def simulate(scenario: ScenarioConfig, seed: int) -> SimOutput:
    if not scenario.vehicles:
        raise InvalidConfig("scenario defines no vehicles")
    states = [compile_states(spec, scenario.frames) for spec in scenario.vehicles]
    lattices = {spec.vid: _speckle_lattice(CounterRng(seed, _STREAM_SPECKLE + spec.vid))
                for spec in scenario.vehicles}
    background = (scenario.background_gray
                  + scenario.texture_amplitude
                  * value_noise(scenario.width, scenario.height,
                                CounterRng(seed, _STREAM_BACKGROUND)))

    out = SimOutput(scenario=scenario, seed=seed)
    for spec, st in zip(scenario.vehicles, states):
        obs = [Observation(t, st.gt_box(t)) for t in range(scenario.frames)]
        out.gt_tracks.append(Track(id=spec.vid, observations=obs))

    for t in range(scenario.frames):
        img = background.copy()
        for spec, st in zip(scenario.vehicles, states):
            if not spec.hidden_at(t):
                _render_vehicle(img, st, t, lattices[spec.vid])
        if scenario.noise_sigma > 0:
            noise = CounterRng(seed, t * 8 + _TAG_NOISE).gaussians(
                scenario.height * scenario.width)
            img += scenario.noise_sigma * noise.reshape(scenario.height,
                                                        scenario.width)
        out.frames.append(GrayFrame(np.clip(img, 0, 255).astype(np.uint8), t))
        out.detections[t] = _corrupt_detections(scenario, states, t, seed)
    return out


def _corrupt_detections(scenario: ScenarioConfig, states: list, t: int,
                        seed: int) -> list:
    miss_rng = CounterRng(seed, t * 8 + _TAG_MISS)
    kept = []
    for st in states:  # states are in vid order, so draw order is stable
        if st.spec.hidden_at(t):
            continue
        if st.speeds[t] < scenario.miss_speed_floor:
            if float(miss_rng.uniform(1)[0]) < scenario.miss_drop_prob:
                continue
        box = st.gt_box(t)
        area = max(1.0, round(st.spec.length * st.spec.width))
        kept.append((box, area))

    merged = _merge_close(kept, scenario.merge_distance)

    jitter_rng = CounterRng(seed, t * 8 + _TAG_JITTER)
    detections = []
    for box, area in merged:
        dx, dy = jitter_rng.gaussians(2) * scenario.jitter_sigma
        detections.append(Detection(
            frame_index=t, box=box.moved_to(box.cx + float(dx), box.cy + float(dy)),
            blob_area=area))

    clutter_rng = CounterRng(seed, t * 8 + _TAG_CLUTTER)
    for _ in range(clutter_rng.poisson(scenario.clutter_rate)):
        u = clutter_rng.uniform(4)
        w = scenario.clutter_size * (0.7 + 0.6 * float(u[2]))
        h = scenario.clutter_size * (0.7 + 0.6 * float(u[3]))
        cx = float(u[0]) * (scenario.width - 2 * w) + w
        cy = float(u[1]) * (scenario.height - 2 * h) + h
        detections.append(Detection(frame_index=t, box=BBox(cx, cy, w, h),
                                    blob_area=max(1.0, round(0.8 * w * h))))
    return detections


def _merge_close(kept: list, merge_distance: float) -> list:
    """Union-find over center proximity; a group becomes one union box whose
    blob area is the sum of its members (connected blobs clump)."""
    n = len(kept)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            a, b = kept[i][0], kept[j][0]
            if math.hypot(a.cx - b.cx, a.cy - b.cy) <= merge_distance:
                parent[find(j)] = find(i)

    groups: dict[int, list] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    out = []
    for root in sorted(groups):
        members = groups[root]
        if len(members) == 1:
            out.append(kept[members[0]])
            continue
        boxes = [kept[i][0] for i in members]
        x0 = min(b.cx - b.w / 2 for b in boxes)
        x1 = max(b.cx + b.w / 2 for b in boxes)
        y0 = min(b.cy - b.h / 2 for b in boxes)
        y1 = max(b.cy + b.h / 2 for b in boxes)
        union = BBox((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)
        out.append((union, sum(kept[i][1] for i in members)))
    return out


# ---------------------------------------------------------------------------
# annotation overlay

_GLYPHS = {
    "0": ("111", "101", "101", "101", "111"),
    "1": ("010", "110", "010", "010", "111"),
    "2": ("111", "001", "111", "100", "111"),
    "3": ("111", "001", "111", "001", "111"),
    "4": ("101", "101", "111", "001", "001"),
    "5": ("111", "100", "111", "001", "111"),
    "6": ("111", "100", "111", "101", "111"),
    "7": ("111", "001", "010", "010", "010"),
    "8": ("111", "101", "111", "101", "111"),
    "9": ("111", "101", "111", "001", "111"),
}


def render_annotated(frames: list, tracks: list) -> list:
    """Copy frames with white box outlines and track-id labels burned in."""
    canvases = [f.pixels.copy() for f in frames]
    for track in tracks:
        for obs in track.observations:
            if not 0 <= obs.frame_index < len(canvases):
                continue
            img = canvases[obs.frame_index]
            _draw_box(img, obs.box)
            _draw_label(img, str(track.id), obs.box)
    return [GrayFrame(img, f.frame_index) for img, f in zip(canvases, frames)]


def _draw_box(img: np.ndarray, box: BBox) -> None:
    h, w = img.shape
    x0 = int(round(box.cx - box.w / 2))
    x1 = int(round(box.cx + box.w / 2))
    y0 = int(round(box.cy - box.h / 2))
    y1 = int(round(box.cy + box.h / 2))
    xs0, xs1 = max(x0, 0), min(x1 + 1, w)
    ys0, ys1 = max(y0, 0), min(y1 + 1, h)
    if xs0 >= xs1 or ys0 >= ys1:
        return
    if 0 <= y0 < h:
        img[y0, xs0:xs1] = 255
    if 0 <= y1 < h:
        img[y1, xs0:xs1] = 255
    if 0 <= x0 < w:
        img[ys0:ys1, x0] = 255
    if 0 <= x1 < w:
        img[ys0:ys1, x1] = 255


def _draw_label(img: np.ndarray, text: str, box: BBox) -> None:
    h, w = img.shape
    x = int(round(box.cx - box.w / 2))
    y = int(round(box.cy - box.h / 2)) - 7
    for ch in text:
        glyph = _GLYPHS.get(ch)
        if glyph is None:
            x += 4
            continue
        for gy, row in enumerate(glyph):
            for gx, bit in enumerate(row):
                if bit == "1" and 0 <= y + gy < h and 0 <= x + gx < w:
                    img[y + gy, x + gx] = 255
        x += 4
