//! Synthetic two-class event data.
//!
//! Every stream renders a bright Gaussian blob on a dark background, runs the
//! frames through [`crate::evsim`] and adds Poisson background events. The
//! blob of a class-0 ("focused") stream drifts slowly; a class-1
//! ("distracted") stream additionally performs short, regularly recurring
//! jitter bursts that produce dense event bursts.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_stream::{
    read_events, segment_stream, write_events, Event, EventFormat, EventStream, Geometry, Polarity, Segment,
};
use crate::evsim::{frame_time_us, EventSimulator, SimConfig};
use crate::network::mix_seed;
use crate::par::Exec;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterBurst {
    pub rate_hz: f64,
    /// Peak displacement of a burst, in pixels.
    pub amplitude_px: f64,
    pub duration_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionProfile {
    /// Drift speed in pixels per second.
    pub slow_drift: f64,
    pub jitter_burst: JitterBurst,
}

impl MotionProfile {
    pub fn still() -> Self {
        Self {
            slow_drift: 0.0,
            jitter_burst: JitterBurst {
                rate_hz: 0.0,
                amplitude_px: 0.0,
                duration_ms: 0.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: u32,
    pub height: u32,
    pub n_streams_per_class: usize,
    pub stream_duration_us: u64,
    /// Render rate of the underlying frames.
    pub fps: f64,
    pub blob_sigma_px: f64,
    pub background: f64,
    pub peak: f64,
    pub class0: MotionProfile,
    pub class1: MotionProfile,
    /// Background events per pixel per second.
    pub noise_rate: f64,
    pub sim: SimConfig,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let drift = 30.0;
        Self {
            width: 640,
            height: 480,
            n_streams_per_class: 200,
            stream_duration_us: 3_000_000,
            fps: 500.0,
            blob_sigma_px: 8.0,
            background: 0.1,
            peak: 0.9,
            class0: MotionProfile {
                slow_drift: drift,
                jitter_burst: JitterBurst {
                    rate_hz: 0.0,
                    amplitude_px: 0.0,
                    duration_ms: 0.0,
                },
            },
            class1: MotionProfile {
                slow_drift: drift,
                jitter_burst: JitterBurst {
                    rate_hz: 40.0,
                    amplitude_px: 6.0,
                    duration_ms: 6.0,
                },
            },
            noise_rate: 0.1,
            sim: SimConfig::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Reduced desk-scale task: 160x120, 1 s streams, 200 per class.
    pub fn desk() -> Self {
        Self {
            width: 160,
            height: 120,
            stream_duration_us: 1_000_000,
            ..Self::default()
        }
    }

    pub fn geometry(&self) -> Geometry {
        Geometry::new(self.width, self.height)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width == 0 || self.height == 0 {
            return bad("geometry must be non-empty".into());
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        if !(self.noise_rate >= 0.0 && self.noise_rate.is_finite()) {
            return bad(format!("noise_rate must be >= 0, got {}", self.noise_rate));
        }
        if !(self.blob_sigma_px > 0.0) {
            return bad("blob_sigma_px must be positive".into());
        }
        if !((0.0..=1.0).contains(&self.background) && (0.0..=1.0).contains(&self.peak)) {
            return bad("background and peak intensities must be in [0, 1]".into());
        }
        for (i, p) in [self.class0, self.class1].iter().enumerate() {
            let j = p.jitter_burst;
            if p.slow_drift < 0.0 || j.rate_hz < 0.0 || j.amplitude_px < 0.0 || j.duration_ms < 0.0 {
                return bad(format!("class {i} motion profile has negative entries"));
            }
            if j.rate_hz > 0.0 && j.duration_ms * 1e-3 * j.rate_hz > 1.0 {
                return bad(format!("class {i} bursts overlap (duration x rate > 1)"));
            }
        }
        self.sim.validate()
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        crate::json_hash(self)
    }

    fn profile(&self, label: usize) -> &MotionProfile {
        if label == 0 {
            &self.class0
        } else {
            &self.class1
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledStream {
    pub stream: EventStream,
    pub label: usize,
    pub source_id: String,
    pub seed: u64,
}

/// Position of the blob centre over time.
struct Trajectory {
    start: (f64, f64),
    velocity: (f64, f64),
    bounds: ((f64, f64), (f64, f64)),
    bursts: Vec<(f64, (f64, f64))>,
    burst: JitterBurst,
}

fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let m = (x - lo).rem_euclid(2.0 * span);
    lo + if m > span { 2.0 * span - m } else { m }
}

impl Trajectory {
    fn new(cfg: &SynthConfig, profile: &MotionProfile, rng: &mut ChaCha8Rng) -> Self {
        let (w, h) = (cfg.width as f64, cfg.height as f64);
        let margin = (3.0 * cfg.blob_sigma_px).min(w / 2.0).min(h / 2.0);
        let bounds = ((margin, w - margin), (margin, h - margin));
        let start = (
            rng.random_range(bounds.0 .0..=bounds.0 .1),
            rng.random_range(bounds.1 .0..=bounds.1 .1),
        );
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let velocity = (profile.slow_drift * angle.cos(), profile.slow_drift * angle.sin());

        let burst = profile.jitter_burst;
        let mut bursts = Vec::new();
        if burst.rate_hz > 0.0 && burst.amplitude_px > 0.0 && burst.duration_ms > 0.0 {
            let period = 1.0 / burst.rate_hz;
            let dur_s = cfg.stream_duration_us as f64 * 1e-6;
            let slack = (period - burst.duration_ms * 1e-3).max(0.0);
            let mut k = 0.0;
            let phase = rng.random_range(0.0..period);
            loop {
                let t = phase - period + k * period + rng.random_range(0.0..=slack * 0.5);
                if t > dur_s {
                    break;
                }
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                bursts.push((t, (a.cos(), a.sin())));
                k += 1.0;
            }
        }
        Self {
            start,
            velocity,
            bounds,
            bursts,
            burst,
        }
    }

    fn at(&self, t: f64) -> (f64, f64) {
        let ((x0, x1), (y0, y1)) = self.bounds;
        let mut x = reflect(self.start.0 + self.velocity.0 * t, x0, x1);
        let mut y = reflect(self.start.1 + self.velocity.1 * t, y0, y1);
        let d = self.burst.duration_ms * 1e-3;
        for &(b, dir) in &self.bursts {
            if t >= b && t < b + d {
                let s = self.burst.amplitude_px * (std::f64::consts::PI * (t - b) / d).sin();
                x += s * dir.0;
                y += s * dir.1;
            }
        }
        (x, y)
    }
}

fn render(frame: &mut [f32], cfg: &SynthConfig, centre: (f64, f64)) {
    let (w, h) = (cfg.width as usize, cfg.height as usize);
    let bg = cfg.background as f32;
    frame.iter_mut().for_each(|v| *v = bg);
    let sigma = cfg.blob_sigma_px;
    let reach = 4.0 * sigma;
    let x_lo = (centre.0 - reach).floor().max(0.0) as usize;
    let x_hi = ((centre.0 + reach).ceil().max(0.0) as usize).min(w);
    let y_lo = (centre.1 - reach).floor().max(0.0) as usize;
    let y_hi = ((centre.1 + reach).ceil().max(0.0) as usize).min(h);
    let amp = cfg.peak - cfg.background;
    for y in y_lo..y_hi {
        for x in x_lo..x_hi {
            let (dx, dy) = (x as f64 + 0.5 - centre.0, y as f64 + 0.5 - centre.1);
            let r2 = dx * dx + dy * dy;
            if r2 < reach * reach {
                let v = cfg.background + amp * (-r2 / (2.0 * sigma * sigma)).exp();
                frame[y * w + x] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
}

/// Generates one stream. Deterministic in `(cfg, label, stream_seed)`.
pub fn generate_stream(cfg: &SynthConfig, label: usize, stream_seed: u64) -> Result<EventStream> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
    let traj = Trajectory::new(cfg, cfg.profile(label), &mut rng);
    let geometry = cfg.geometry();
    let mut sim = EventSimulator::new(geometry, cfg.fps, cfg.sim)?;
    let mut frame = vec![0f32; cfg.width as usize * cfg.height as usize];
    let n_frames = ((cfg.stream_duration_us as f64 * 1e-6 * cfg.fps).floor() as usize + 1).max(2);
    for n in 0..n_frames {
        let t = frame_time_us(n, cfg.fps) as f64 * 1e-6;
        render(&mut frame, cfg, traj.at(t));
        sim.push_frame(&frame)?;
    }
    let simulated = sim.finish()?;
    let mut events = simulated.events().to_vec();

    if cfg.noise_rate > 0.0 && cfg.stream_duration_us > 0 {
        let mean = cfg.noise_rate * geometry.width as f64 * geometry.height as f64 * cfg.stream_duration_us as f64 * 1e-6;
        let count = Poisson::new(mean)
            .map_err(|e| Error::Config(format!("noise rate: {e}")))?
            .sample(&mut rng) as usize;
        for _ in 0..count {
            events.push(Event::new(
                rng.random_range(0..cfg.stream_duration_us),
                rng.random_range(0..geometry.width),
                rng.random_range(0..geometry.height),
                if rng.random::<bool>() { Polarity::On } else { Polarity::Off },
            ));
        }
        events.sort_by_key(|e| (e.t_us, e.y, e.x, e.p as u8));
    }
    let duration = simulated.duration_us().max(cfg.stream_duration_us);
    EventStream::new(geometry, events, duration)
}

pub fn source_id(index: usize) -> String {
    format!("stream_{index:05}")
}

/// `n_streams_per_class` streams of class 0 followed by as many of class 1.
pub fn generate(cfg: &SynthConfig, exec: Exec) -> Result<Vec<LabeledStream>> {
    cfg.validate()?;
    let n = cfg.n_streams_per_class;
    exec.try_map(2 * n, |i| {
        let label = i / n.max(1);
        let seed = mix_seed(cfg.seed, i as u64);
        Ok(LabeledStream {
            stream: generate_stream(cfg, label, seed)?,
            label,
            source_id: source_id(i),
            seed,
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: usize,
    pub seed: u64,
    pub source_id: String,
    pub events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: SynthConfig,
    pub config_hash: String,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub streams: Vec<ManifestEntry>,
}

/// Writes every stream plus `manifest.json` into `dir` (created if needed).
pub fn write_dataset(
    dir: &Path,
    cfg: &SynthConfig,
    streams: &[LabeledStream],
    format: EventFormat,
) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(streams.len());
    for s in streams {
        let name = format!("{}.{}", s.source_id, format.extension());
        write_events(&s.stream, &dir.join(&name), format)?;
        entries.push(ManifestEntry {
            path: name,
            label: s.label,
            seed: s.seed,
            source_id: s.source_id.clone(),
            events: s.stream.len(),
        });
    }
    let manifest = DatasetManifest {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        width: cfg.width,
        height: cfg.height,
        streams: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::corrupt(&path, e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    pub streams: Vec<LabeledStream>,
}

impl Dataset {
    pub fn geometry(&self) -> Geometry {
        Geometry::new(self.manifest.width, self.manifest.height)
    }

    /// All segments of all streams, in manifest order.
    pub fn segments(&self, segment_us: u64, dt_us: u64) -> Result<Vec<Segment>> {
        let mut out = Vec::new();
        for s in &self.streams {
            out.extend(segment_stream(&s.stream, segment_us, dt_us, s.label, &s.source_id)?);
        }
        Ok(out)
    }
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(Error::Usage(format!("{} has no {MANIFEST_FILE}", dir.display())));
    }
    let manifest = read_manifest(dir)?;
    if manifest.streams.is_empty() {
        return Err(Error::Usage(format!("dataset {} lists no streams", dir.display())));
    }
    let geometry = Geometry::new(manifest.width, manifest.height);
    let mut streams = Vec::with_capacity(manifest.streams.len());
    for entry in &manifest.streams {
        let path = dir.join(&entry.path);
        let loaded = read_events(&path, EventFormat::from_path(&path))?;
        if loaded.stream.geometry() != geometry {
            return Err(Error::corrupt(&path, "stream geometry differs from the manifest"));
        }
        streams.push(LabeledStream {
            stream: loaded.stream,
            label: entry.label,
            source_id: entry.source_id.clone(),
            seed: entry.seed,
        });
    }
    Ok(Dataset {
        dir: dir.to_path_buf(),
        manifest,
        streams,
    })
}
