"""Simulation of multichannel conversational scenes with a moving head.

A scene is assembled directly in the STFT domain: the dry target utterance
is rendered from a tone lexicon, its direct path is imposed through
far-field steering vectors of the per-frame head-relative target
direction, an image-source reverberation tail (order <= 2) and an optional
interferer are added, and coloured noise is mixed at a requested SNR.
The per-frame quantized target direction is recorded as a one-hot trace
over the steering grid, which is exactly the gating information the
head-movement-aware beamformer consumes.
"""

import json
import os
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import config as cfgmod
from . import signal as sig
from .errors import DataError, InvalidInputError

SPEED_OF_SOUND = 343.0


# geometry --------------------------------------------------------------

@dataclass
class ArrayGeometry:
    """Microphone positions (M, 3) in the head frame, metres."""

    mic_positions: np.ndarray
    reference_index: int = 0

    def __post_init__(self):
        self.mic_positions = np.asarray(self.mic_positions, dtype=np.float64)
        if self.mic_positions.ndim != 2 or self.mic_positions.shape[1] != 3:
            raise InvalidInputError("mic_positions must be (M, 3)")
        m = self.mic_positions.shape[0]
        if m < 1:
            raise InvalidInputError("need at least one microphone")
        if not 0 <= self.reference_index < m:
            raise InvalidInputError("reference index out of range")
        diffs = self.mic_positions[:, None] - self.mic_positions[None, :]
        if np.any((np.linalg.norm(diffs, axis=-1) == 0)
                  & ~np.eye(m, dtype=bool)):
            raise InvalidInputError("microphone positions must be distinct")

    @property
    def num_mics(self):
        return self.mic_positions.shape[0]


def glasses_array():
    """4-mic array on a glasses frame: two front, two temples.

    Head frame: +x right, +y forward (the zero azimuth/elevation
    direction), +z up.
    """
    return ArrayGeometry(np.array([
        [0.08, 0.09, 0.00],
        [-0.08, 0.09, 0.00],
        [0.11, -0.02, 0.00],
        [-0.11, -0.02, 0.00],
    ]))


def pair_array(spacing=0.1):
    """Two mics on the x-axis, for small tests."""
    return ArrayGeometry(np.array([
        [-spacing / 2.0, 0.0, 0.0],
        [spacing / 2.0, 0.0, 0.0],
    ]))


def direction_vector(azimuth, elevation):
    """Unit vector for azimuth/elevation in radians; (0, 0) is +y."""
    return np.array([
        np.sin(azimuth) * np.cos(elevation),
        np.cos(azimuth) * np.cos(elevation),
        np.sin(elevation),
    ])


def rotate_to_head(direction_world, pose_azimuth, pose_elevation):
    """Express a world direction in the frame of a head with the given
    yaw/pitch pose (yaw about +z, pitch about the head's +x)."""
    ca, sa = np.cos(pose_azimuth), np.sin(pose_azimuth)
    yaw = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
    ce, se = np.cos(pose_elevation), np.sin(pose_elevation)
    pitch = np.array([[1.0, 0.0, 0.0], [0.0, ce, -se], [0.0, se, ce]])
    # head axes in world coordinates are (yaw @ pitch); world -> head is
    # the transpose
    return (yaw @ pitch).T @ np.asarray(direction_world)


# steering --------------------------------------------------------------

def steering_vector(geometry, direction, frequency_hz):
    """Far-field steering vector a_m = exp(-i 2 pi f tau_m) with
    tau_m = (mic_m - mic_r) . direction / c; the reference entry is 1."""
    rel = geometry.mic_positions - geometry.mic_positions[geometry.reference_index]
    tau = rel @ np.asarray(direction) / SPEED_OF_SOUND
    return np.exp(-2j * np.pi * frequency_hz * tau)


@dataclass
class SteeringField:
    """Per-direction, per-frequency steering vectors: (D, F, M)."""

    directions: np.ndarray  # (D, 3) unit vectors in the head frame
    vectors: np.ndarray     # (D, F, M) complex
    geometry: ArrayGeometry
    freqs_hz: np.ndarray

    @property
    def num_directions(self):
        return self.directions.shape[0]

    @property
    def num_bins(self):
        return self.vectors.shape[1]

    def nearest_index(self, direction):
        return int(np.argmax(self.directions @ np.asarray(direction)))


def build_steering_field(geometry, az_grid_deg, el_grid_deg, window=512,
                         sample_rate=sig.SAMPLE_RATE):
    """Steering vectors for the az x el grid at all STFT bin frequencies."""
    az_grid_deg = np.atleast_1d(np.asarray(az_grid_deg, dtype=np.float64))
    el_grid_deg = np.atleast_1d(np.asarray(el_grid_deg, dtype=np.float64))
    if az_grid_deg.size == 0 or el_grid_deg.size == 0:
        raise InvalidInputError("azimuth/elevation grids must be nonempty")
    freqs = np.arange(window // 2 + 1) * sample_rate / window
    dirs = []
    for el in np.deg2rad(el_grid_deg):
        for az in np.deg2rad(az_grid_deg):
            dirs.append(direction_vector(az, el))
    dirs = np.asarray(dirs)
    rel = geometry.mic_positions - geometry.mic_positions[geometry.reference_index]
    tau = dirs @ rel.T / SPEED_OF_SOUND  # (D, M)
    vectors = np.exp(-2j * np.pi * freqs[None, :, None] * tau[:, None, :])
    return SteeringField(dirs, vectors, geometry, freqs)


@dataclass
class PoseTrajectory:
    """Per-STFT-frame head yaw/pitch in radians."""

    azimuth: np.ndarray
    elevation: np.ndarray

    def __post_init__(self):
        self.azimuth = np.asarray(self.azimuth, dtype=np.float64)
        self.elevation = np.asarray(self.elevation, dtype=np.float64)
        if self.azimuth.shape != self.elevation.shape:
            raise InvalidInputError("pose azimuth/elevation length mismatch")

    @property
    def num_frames(self):
        return self.azimuth.shape[0]


@dataclass
class DirectionTrace:
    """Per-frame one-hot gates over D grid directions."""

    indices: np.ndarray
    num_directions: int

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if np.any(self.indices < 0) or np.any(self.indices >= self.num_directions):
            raise InvalidInputError("direction index out of range")

    @property
    def num_frames(self):
        return self.indices.shape[0]

    def gates(self):
        """(D, T) matrix with exactly one 1 per column."""
        g = np.zeros((self.num_directions, self.num_frames))
        g[self.indices, np.arange(self.num_frames)] = 1.0
        return g

    def active_directions(self):
        return np.unique(self.indices)


# tone lexicon ----------------------------------------------------------

class ToneLexicon:
    """Renders transcripts as sequences of multi-harmonic tone units.

    Each character maps to a distinct fundamental; the space token renders
    as silence of the same unit duration.
    """

    def __init__(self, characters="abcdefgh", space=" ",
                 unit_seconds=0.2, gap_seconds=0.05,
                 edge_silence_seconds=0.05, sample_rate=sig.SAMPLE_RATE):
        self.characters = list(characters)
        self.space = space
        self.unit_seconds = unit_seconds
        self.gap_seconds = gap_seconds
        self.edge_silence_seconds = edge_silence_seconds
        self.sample_rate = sample_rate
        self.f0 = {c: 220.0 * (2.0 ** (i / 6.0))
                   for i, c in enumerate(self.characters)}

    def tokens(self):
        return self.characters + [self.space]

    def render_unit(self, token, rng):
        n = int(round(self.unit_seconds * self.sample_rate))
        if token == self.space:
            return np.zeros(n)
        if token not in self.f0:
            raise InvalidInputError(f"unknown token {token!r}")
        f0 = self.f0[token] * (1.0 + rng.uniform(-0.02, 0.02))
        t = np.arange(n) / self.sample_rate
        wave = np.zeros(n)
        for h in range(1, 5):
            amp = h ** -1.5 * (1.0 + rng.uniform(-0.1, 0.1))
            wave += amp * np.sin(2.0 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi))
        attack = int(0.01 * self.sample_rate)
        release = int(0.03 * self.sample_rate)
        env = np.ones(n)
        env[:attack] = np.linspace(0.0, 1.0, attack)
        env[-release:] = np.linspace(1.0, 0.0, release)
        return 0.25 * wave * env

    def render(self, transcript, rng):
        edge = np.zeros(int(round(self.edge_silence_seconds * self.sample_rate)))
        gap = np.zeros(int(round(self.gap_seconds * self.sample_rate)))
        pieces = [edge]
        for i, token in enumerate(transcript):
            if i > 0:
                pieces.append(gap)
            pieces.append(self.render_unit(token, rng))
        pieces.append(edge)
        return sig.WaveBuffer(np.concatenate(pieces)[None, :], self.sample_rate)

    def sample_transcript(self, rng, num_words=(1, 3), word_length=(2, 4)):
        words = []
        for _ in range(int(rng.integers(num_words[0], num_words[1] + 1))):
            length = int(rng.integers(word_length[0], word_length[1] + 1))
            words.append("".join(rng.choice(self.characters, size=length)))
        return self.space.join(words)


def tone_lexicon_render(transcript, seed, lexicon=None):
    """Render a transcript with a fresh RNG derived from ``seed``."""
    lexicon = lexicon or ToneLexicon()
    return lexicon.render(transcript, np.random.default_rng(seed))


# scene configuration ---------------------------------------------------

@dataclass
class SceneConfig:
    """Sampling ranges for the conversational scene generator."""

    room_width: tuple = (5.0, 7.0)
    room_depth: tuple = (6.0, 8.0)
    room_height: tuple = (2.5, 3.5)
    rt60: tuple = (0.15, 0.30)
    device_frac_width: tuple = (0.4, 0.6)
    device_frac_depth: tuple = (0.15, 0.35)
    device_height: tuple = (1.0, 1.5)
    device_azimuth_deg: tuple = (-72.0, 72.0)
    device_elevation_deg: tuple = (-45.0, 45.0)
    speaker_frac_width: tuple = (0.1, 0.9)
    speaker_frac_depth: tuple = (0.4, 0.85)
    speaker_height: tuple = (1.0, 1.5)
    snr_db: tuple = (-2.0, 8.0)
    sir_db: tuple = (0.0, 5.0)
    interferer_prob: float = 0.5
    head_move: bool = True
    reverb: bool = True
    noise: bool = True
    noise_cutoff_hz: float = 1500.0
    noise_tilt: float = 2.0
    noise_point_gain: float = 0.5
    az_grid_deg: tuple = tuple(float(a) for a in range(-180, 180, 10))
    el_grid_deg: tuple = (-30.0, 0.0, 30.0)
    window: int = 512
    hop: int = 128
    num_mics: int = 4
    min_speaker_distance: float = 0.3
    characters: str = "abcdefgh"
    num_words: tuple = (1, 3)
    word_length: tuple = (2, 4)

    def geometry(self):
        geo = glasses_array() if self.num_mics == 4 else pair_array()
        if geo.num_mics != self.num_mics:
            raise InvalidInputError("num_mics must be 2 or 4")
        return geo

    def lexicon(self):
        return ToneLexicon(characters=self.characters)

    def build_field(self):
        return build_steering_field(self.geometry(), self.az_grid_deg,
                                    self.el_grid_deg, window=self.window)

    def to_dict(self):
        out = {}
        for name in self.__dataclass_fields__:
            out[name] = getattr(self, name)
        return out

    @staticmethod
    def from_dict(d):
        cfg = SceneConfig()
        for key, value in d.items():
            if key not in cfg.__dataclass_fields__:
                raise DataError(f"unknown scene config key: {key}")
            default = getattr(cfg, key)
            if isinstance(default, tuple) and not isinstance(value, tuple):
                value = (value,)
            setattr(cfg, key, value)
        return cfg

    def save(self, path):
        cfgmod.write_kv_file(path, self.to_dict())

    @staticmethod
    def load(path):
        return SceneConfig.from_dict(cfgmod.parse_kv_file(path))


@dataclass
class SceneExample:
    """One synthesized scene plus its ground truth."""

    mixture: sig.ComplexSpectrogram
    clean_target: sig.ComplexSpectrogram
    clean_wave: sig.WaveBuffer
    trace: DirectionTrace
    transcript: str
    snr_db: float
    interferer_active: bool
    pose: PoseTrajectory
    components: dict = dc_field(default_factory=dict)
    scene_id: str = ""

    def mixture_wave(self):
        return sig.istft(self.mixture, self.mixture.window, self.mixture.hop,
                         length=self.clean_wave.num_samples)


# image-source reverberation --------------------------------------------

def _axis_images(coord, size):
    """1-D image coordinates with their reflection counts (order <= 2)."""
    images = [(coord, 0)]
    images.append((-coord, 1))
    images.append((2.0 * size - coord, 1))
    images.append((2.0 * size + coord, 2))
    images.append((-2.0 * size + coord, 2))
    return images


def image_sources(source, room, max_order=2):
    """Image positions and reflection orders for a shoebox room."""
    per_axis = [_axis_images(source[i], room[i]) for i in range(3)]
    out = []
    for cx, ox in per_axis[0]:
        for cy, oy in per_axis[1]:
            for cz, oz in per_axis[2]:
                order = ox + oy + oz
                if 0 < order <= max_order:
                    out.append((np.array([cx, cy, cz]), order))
    return out


def _reflection_coefficient(room, rt60):
    width, depth, height = room
    volume = width * depth * height
    surface = 2.0 * (width * depth + width * height + depth * height)
    absorption = np.clip(0.161 * volume / (rt60 * surface), 1e-3, 0.99)
    return np.sqrt(1.0 - absorption)


def _segment_transfer(field, source, device, room, beta, pose_az, pose_el,
                      include_tail):
    """Per-frequency (F, M) transfer of the image tail for one pose.

    Gains are relative to the unit-gain direct path; the direct path itself
    is excluded (it is imposed through the trace's steering vectors)."""
    f_bins = field.num_bins
    m = field.geometry.num_mics
    transfer = np.zeros((f_bins, m), dtype=np.complex128)
    if not include_tail:
        return transfer
    d0 = max(np.linalg.norm(source - device), 1e-6)
    for pos, order in image_sources(source, room):
        dist = max(np.linalg.norm(pos - device), 1e-6)
        gain = (beta ** order) * (d0 / dist)
        delay = (dist - d0) / SPEED_OF_SOUND
        head_dir = rotate_to_head((pos - device) / dist, pose_az, pose_el)
        a = np.exp(-2j * np.pi * field.freqs_hz[:, None]
                   * (field.geometry.mic_positions
                      - field.geometry.mic_positions[field.geometry.reference_index])
                   .dot(head_dir)[None, :] / SPEED_OF_SOUND)
        transfer += gain * np.exp(-2j * np.pi * field.freqs_hz[:, None] * delay) * a
    return transfer


def _source_image(field, spec, source, device, room, beta, pose_frames,
                  switch_frame, include_tail):
    """Multichannel STFT (M, F, T) of one source: per-frame direct steering
    plus the per-segment reverberation tail.  Also returns the per-frame
    grid direction indices."""
    f_bins, t_len = spec.shape
    m = field.geometry.num_mics
    out = np.zeros((m, f_bins, t_len), dtype=np.complex128)
    indices = np.zeros(t_len, dtype=np.int64)
    d0 = np.linalg.norm(source - device)
    world_dir = (source - device) / d0
    for seg, (t0, t1) in enumerate(((0, switch_frame), (switch_frame, t_len))):
        if t0 >= t1:
            continue
        pose_az, pose_el = pose_frames[seg]
        head_dir = rotate_to_head(world_dir, pose_az, pose_el)
        d_idx = field.nearest_index(head_dir)
        indices[t0:t1] = d_idx
        a = field.vectors[d_idx]  # (F, M)
        tail = _segment_transfer(field, source, device, room, beta,
                                 pose_az, pose_el, include_tail)
        out[:, :, t0:t1] = (a + tail).T[:, :, None] * spec[None, :, t0:t1]
    return out, indices


def _colored_noise(rng, shape, freqs_hz, cutoff_hz, tilt):
    env = (1.0 + (freqs_hz / cutoff_hz) ** 2) ** (-tilt / 2.0)
    noise = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return env[None, :, None] * noise / np.sqrt(2.0)


# scene synthesis -------------------------------------------------------

def _sample_position(rng, cfg, room, device, attempts=100):
    width, depth, _ = room
    for _ in range(attempts):
        pos = np.array([
            rng.uniform(cfg.speaker_frac_width[0] * width,
                        cfg.speaker_frac_width[1] * width),
            rng.uniform(cfg.speaker_frac_depth[0] * depth,
                        cfg.speaker_frac_depth[1] * depth),
            rng.uniform(*cfg.speaker_height),
        ])
        inside = np.all(pos > 0) and np.all(pos < np.asarray(room))
        if inside and np.linalg.norm(pos - device) >= cfg.min_speaker_distance:
            return pos
    raise InvalidInputError("could not place a speaker after 100 attempts")


def synthesize_scene(config, seed, field=None, transcript=None):
    """Draw one scene: room, poses, sources, reverb, noise; see SceneConfig."""
    rng = np.random.default_rng(seed)
    field = field or config.build_field()
    lexicon = config.lexicon()

    room = np.array([rng.uniform(*config.room_width),
                     rng.uniform(*config.room_depth),
                     rng.uniform(*config.room_height)])
    rt60 = rng.uniform(*config.rt60)
    beta = _reflection_coefficient(room, rt60)
    device = np.array([
        rng.uniform(config.device_frac_width[0] * room[0],
                    config.device_frac_width[1] * room[0]),
        rng.uniform(config.device_frac_depth[0] * room[1],
                    config.device_frac_depth[1] * room[1]),
        rng.uniform(*config.device_height),
    ])
    pose_a = (np.deg2rad(rng.uniform(*config.device_azimuth_deg)),
              np.deg2rad(rng.uniform(*config.device_elevation_deg)))
    pose_b = (np.deg2rad(rng.uniform(*config.device_azimuth_deg)),
              np.deg2rad(rng.uniform(*config.device_elevation_deg)))
    if not config.head_move:
        pose_b = pose_a

    if transcript is None:
        transcript = lexicon.sample_transcript(rng, config.num_words,
                                               config.word_length)
    target_pos = _sample_position(rng, config, room, device)
    clean_wave = lexicon.render(transcript, rng)
    clean_spec = sig.stft(clean_wave, config.window, config.hop)
    s_ft = clean_spec.data[0]
    t_len = s_ft.shape[1]

    switch_frame = int(rng.integers(t_len // 4, 3 * t_len // 4 + 1)) \
        if config.head_move and t_len >= 4 else t_len
    pose_frames = [pose_a, pose_b]
    azimuths = np.full(t_len, pose_a[0])
    elevations = np.full(t_len, pose_a[1])
    azimuths[switch_frame:] = pose_b[0]
    elevations[switch_frame:] = pose_b[1]
    pose = PoseTrajectory(azimuths, elevations)

    target_img, indices = _source_image(field, s_ft, target_pos, device, room,
                                        beta, pose_frames, switch_frame,
                                        config.reverb)
    trace = DirectionTrace(indices, field.num_directions)

    components = {"target": target_img}
    mixture = target_img.copy()

    interferer_active = bool(rng.random() < config.interferer_prob)
    if interferer_active:
        i_transcript = lexicon.sample_transcript(rng, config.num_words,
                                                 config.word_length)
        i_wave = lexicon.render(i_transcript, rng).samples[0]
        n = clean_wave.num_samples
        if i_wave.shape[0] < n:
            i_wave = np.pad(i_wave, (0, n - i_wave.shape[0]))
        i_spec = sig.stft(sig.WaveBuffer(i_wave[:n][None]), config.window,
                          config.hop).data[0]
        i_pos = _sample_position(rng, config, room, device)
        i_img, _ = _source_image(field, i_spec, i_pos, device, room, beta,
                                 pose_frames, switch_frame, config.reverb)
        sir = rng.uniform(*config.sir_db)
        t_energy = np.sum(np.abs(target_img[field.geometry.reference_index]) ** 2)
        i_energy = np.sum(np.abs(i_img[field.geometry.reference_index]) ** 2)
        if i_energy > 0:
            i_img *= np.sqrt(t_energy / (i_energy * 10.0 ** (sir / 10.0)))
        components["interferer"] = i_img
        mixture = mixture + i_img

    snr_db = float(rng.uniform(*config.snr_db))
    if config.noise:
        shape = mixture.shape
        noise = _colored_noise(rng, shape, field.freqs_hz,
                               config.noise_cutoff_hz, config.noise_tilt)
        point_dir = direction_vector(rng.uniform(-np.pi, np.pi),
                                     rng.uniform(-0.5, 0.5))
        a_pt = np.exp(-2j * np.pi * field.freqs_hz[:, None]
                      * (field.geometry.mic_positions
                         - field.geometry.mic_positions[
                             field.geometry.reference_index])
                      .dot(point_dir)[None, :] / SPEED_OF_SOUND)
        pt = _colored_noise(rng, (1,) + shape[1:], field.freqs_hz,
                            config.noise_cutoff_hz, config.noise_tilt)[0]
        noise = noise + config.noise_point_gain * a_pt.T[:, :, None] * pt
        ref = field.geometry.reference_index
        t_energy = np.sum(np.abs(target_img[ref]) ** 2)
        n_energy = np.sum(np.abs(noise[ref]) ** 2)
        noise *= np.sqrt(t_energy / (n_energy * 10.0 ** (snr_db / 10.0)))
        components["noise"] = noise
        mixture = mixture + noise

    return SceneExample(
        mixture=sig.ComplexSpectrogram(mixture, config.window, config.hop),
        clean_target=clean_spec,
        clean_wave=clean_wave,
        trace=trace,
        transcript=transcript,
        snr_db=snr_db,
        interferer_active=interferer_active,
        pose=pose,
        components=components,
    )


# dataset ---------------------------------------------------------------

def scene_seeds(master_seed, count):
    """Per-example integer seeds derived deterministically from a master."""
    ss = np.random.SeedSequence(master_seed)
    return [int(child.generate_state(1)[0]) for child in ss.spawn(count)]


def generate_dataset(config, seed, count, out_dir=None, field=None):
    """Synthesize ``count`` scenes; optionally write WAVs and a manifest."""
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    field = field or config.build_field()
    scenes = []
    records = []
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    for i, child_seed in enumerate(scene_seeds(seed, count)):
        scene = synthesize_scene(config, child_seed, field=field)
        scene.scene_id = f"scene_{i:05d}"
        scenes.append(scene)
        if out_dir is not None:
            mix_path = f"{scene.scene_id}_mix.wav"
            clean_path = f"{scene.scene_id}_clean.wav"
            sig.write_wav(os.path.join(out_dir, mix_path), scene.mixture_wave())
            sig.write_wav(os.path.join(out_dir, clean_path), scene.clean_wave)
            records.append({
                "id": scene.scene_id,
                "mix": mix_path,
                "clean": clean_path,
                "transcript": scene.transcript,
                "snr_db": round(scene.snr_db, 6),
                "interferer": scene.interferer_active,
                "directions": scene.trace.indices.tolist(),
            })
    if out_dir is not None:
        with open(os.path.join(out_dir, "manifest.jsonl"), "w",
                  encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        config.save(os.path.join(out_dir, "scene_config.txt"))
    return scenes


def load_manifest(manifest_path):
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]
    except OSError as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc}") from exc
