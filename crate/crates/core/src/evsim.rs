//! Ideal-sensor frame-to-event simulator.
//!
//! Each pixel keeps a reference log intensity. When a new frame moves the log
//! intensity `k` whole contrast thresholds away from the reference, `k` events
//! are emitted with timestamps interpolated across the frame interval, and the
//! reference advances by `k` thresholds. No noise, leak or refractory model.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_stream::{Event, EventStream, Geometry, Polarity};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Log-intensity step per event.
    pub contrast_threshold: f64,
    /// Floor added before taking the log.
    pub eps: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            contrast_threshold: 0.2,
            eps: 1e-3,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.contrast_threshold > 0.0 && self.contrast_threshold.is_finite()) {
            return Err(Error::Config(format!(
                "contrast_threshold must be positive, got {}",
                self.contrast_threshold
            )));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Luminance frames in `[0, 1]`, row-major, all of one geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    geometry: Geometry,
    fps: f64,
    frames: Vec<Vec<f32>>,
}

impl FrameSequence {
    pub fn new(geometry: Geometry, fps: f64, frames: Vec<Vec<f32>>) -> Result<Self> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Config(format!("fps must be positive, got {fps}")));
        }
        let n = geometry.width as usize * geometry.height as usize;
        for (i, f) in frames.iter().enumerate() {
            check_frame(f, n).map_err(|m| Error::Config(format!("frame {i}: {m}")))?;
        }
        Ok(Self {
            geometry,
            fps,
            frames,
        })
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> &[Vec<f32>] {
        &self.frames
    }
}

fn check_frame(frame: &[f32], n: usize) -> std::result::Result<(), String> {
    if frame.len() != n {
        return Err(format!("has {} pixels, expected {n}", frame.len()));
    }
    if let Some(v) = frame.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(format!("intensity {v} outside [0, 1]"));
    }
    Ok(())
}

/// Timestamp of frame `n` in microseconds.
pub fn frame_time_us(n: usize, fps: f64) -> u64 {
    (n as f64 * 1e6 / fps).round() as u64
}

#[derive(Debug, Clone, Copy)]
struct PixelState {
    intensity: f32,
    log_i: f64,
    reference: f64,
    last_t: Option<u64>,
}

/// Incremental simulator; frames are pushed one at a time so long clips need
/// not be held in memory.
#[derive(Debug, Clone)]
pub struct EventSimulator {
    geometry: Geometry,
    fps: f64,
    cfg: SimConfig,
    pixels: Vec<PixelState>,
    frames_seen: usize,
    events: Vec<Event>,
}

impl EventSimulator {
    pub fn new(geometry: Geometry, fps: f64, cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Config(format!("fps must be positive, got {fps}")));
        }
        Ok(Self {
            geometry,
            fps,
            cfg,
            pixels: Vec::new(),
            frames_seen: 0,
            events: Vec::new(),
        })
    }

    pub fn push_frame(&mut self, frame: &[f32]) -> Result<()> {
        let n = self.geometry.width as usize * self.geometry.height as usize;
        check_frame(frame, n)
            .map_err(|m| Error::Config(format!("frame {}: {m}", self.frames_seen)))?;
        let eps = self.cfg.eps;
        if self.frames_seen == 0 {
            self.pixels = frame
                .iter()
                .map(|&i| {
                    let l = (i as f64 + eps).ln();
                    PixelState {
                        intensity: i,
                        log_i: l,
                        reference: l,
                        last_t: None,
                    }
                })
                .collect();
            self.frames_seen = 1;
            return Ok(());
        }

        let t_prev = frame_time_us(self.frames_seen - 1, self.fps);
        let t_cur = frame_time_us(self.frames_seen, self.fps);
        let span = (t_cur - t_prev) as f64;
        let c = self.cfg.contrast_threshold;
        let width = self.geometry.width as usize;

        for (idx, (px, &i)) in self.pixels.iter_mut().zip(frame).enumerate() {
            if i == px.intensity {
                continue;
            }
            let l_prev = px.log_i;
            let l = (i as f64 + eps).ln();
            px.intensity = i;
            px.log_i = l;
            let diff = l - px.reference;
            let k = (diff.abs() / c).floor() as u64;
            if k == 0 {
                continue;
            }
            let (sign, p) = if diff > 0.0 {
                (1.0, Polarity::On)
            } else {
                (-1.0, Polarity::Off)
            };
            let (x, y) = ((idx % width) as u32, (idx / width) as u32);
            for j in 1..=k {
                let level = px.reference + sign * j as f64 * c;
                let frac = if l != l_prev {
                    ((level - l_prev) / (l - l_prev)).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                let mut t = t_prev + ((frac * span).ceil() as u64).max(1);
                if let Some(last) = px.last_t {
                    t = t.max(last + 1);
                }
                px.last_t = Some(t);
                self.events.push(Event::new(t, x, y, p));
            }
            px.reference += sign * k as f64 * c;
        }
        self.frames_seen += 1;
        Ok(())
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    /// Number of events emitted so far.
    pub fn event_count(&self) -> usize {
        self.events.len()
    }

    /// Finishes the clip. The duration is the last frame time, extended if
    /// crowded timestamps spilled past it.
    pub fn finish(mut self) -> Result<EventStream> {
        if self.frames_seen < 2 {
            return Err(Error::Config(format!(
                "simulation needs at least 2 frames, got {}",
                self.frames_seen
            )));
        }
        self.events.sort_unstable_by_key(|e| (e.t_us, e.y, e.x));
        let last_frame = frame_time_us(self.frames_seen - 1, self.fps);
        let duration = self
            .events
            .last()
            .map_or(last_frame, |e| e.t_us.max(last_frame));
        EventStream::new(self.geometry, self.events, duration)
    }
}

pub fn simulate_events(seq: &FrameSequence, cfg: &SimConfig) -> Result<EventStream> {
    if seq.frames.len() < 2 {
        return Err(Error::Config(format!(
            "simulation needs at least 2 frames, got {}",
            seq.frames.len()
        )));
    }
    let mut sim = EventSimulator::new(seq.geometry, seq.fps, *cfg)?;
    for f in &seq.frames {
        sim.push_frame(f)?;
    }
    sim.finish()
}

/// Reads a binary (P5) PGM with maxval 255, scaled to `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<(Geometry, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::corrupt(path, m);

    let mut pos = 0;
    let mut token = || -> Option<&[u8]> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| &bytes[start..pos])
    };
    if token() != Some(b"P5".as_slice()) {
        return Err(bad("not a binary PGM (P5)"));
    }
    let mut num = || -> Option<u32> { std::str::from_utf8(token()?).ok()?.parse().ok() };
    let (w, h, maxval) = match (num(), num(), num()) {
        (Some(w), Some(h), Some(m)) => (w, h, m),
        _ => return Err(bad("malformed PGM header")),
    };
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let n = w as usize * h as usize;
    if bytes.len() < start + n {
        return Err(bad("truncated raster"));
    }
    let data = bytes[start..start + n]
        .iter()
        .map(|&b| b as f32 / 255.0)
        .collect();
    Ok((Geometry::new(w, h), data))
}

pub fn write_pgm(path: &Path, geometry: Geometry, frame: &[f32]) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", geometry.width, geometry.height).into_bytes();
    out.extend(frame.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads every `*.pgm` in `dir`, in file-name order.
pub fn read_frames_dir(dir: &Path, fps: f64) -> Result<FrameSequence> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
        })
        .collect();
    paths.sort();
    let mut geometry = None;
    let mut frames = Vec::with_capacity(paths.len());
    for p in &paths {
        let (g, f) = read_pgm(p)?;
        if *geometry.get_or_insert(g) != g {
            return Err(Error::Config(format!(
                "{}: geometry {}x{} differs from the first frame",
                p.display(),
                g.width,
                g.height
            )));
        }
        frames.push(f);
    }
    FrameSequence::new(geometry.unwrap_or(Geometry::new(0, 0)), fps, frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_pixel(values: &[f32]) -> FrameSequence {
        let frames = values.iter().map(|&v| vec![v]).collect();
        FrameSequence::new(Geometry::new(1, 1), 100.0, frames).unwrap()
    }

    #[test]
    fn constant_frames_emit_nothing() {
        let g = Geometry::new(5, 4);
        let seq = FrameSequence::new(g, 30.0, vec![vec![0.4; 20]; 6]).unwrap();
        let s = simulate_events(&seq, &SimConfig::default()).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.duration_us(), frame_time_us(5, 30.0));
    }

    #[test]
    fn step_up_emits_ten_on_events() {
        let s = simulate_events(&single_pixel(&[0.1, 0.9]), &SimConfig::default()).unwrap();
        // ln(0.901 / 0.101) = 2.188..., floor(2.188 / 0.2) = 10
        assert_eq!(s.len(), 10);
        assert!(s.events().iter().all(|e| e.p == Polarity::On));
        let ts: Vec<u64> = s.events().iter().map(|e| e.t_us).collect();
        assert!(ts.windows(2).all(|w| w[0] < w[1]));
        assert!(ts.iter().all(|&t| t > 0 && t <= 10_000));
    }

    #[test]
    fn decrease_emits_off_only() {
        let s = simulate_events(&single_pixel(&[0.9, 0.5, 0.2, 0.05]), &SimConfig::default()).unwrap();
        assert!(!s.is_empty());
        assert!(s.events().iter().all(|e| e.p == Polarity::Off));
    }

    #[test]
    fn needs_two_frames() {
        assert!(matches!(
            simulate_events(&single_pixel(&[0.5]), &SimConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn rejects_bad_config_and_frames() {
        let cfg = SimConfig { contrast_threshold: 0.0, eps: 1e-3 };
        assert!(simulate_events(&single_pixel(&[0.1, 0.2]), &cfg).is_err());
        assert!(FrameSequence::new(Geometry::new(1, 1), 10.0, vec![vec![1.5]]).is_err());
        assert!(FrameSequence::new(Geometry::new(2, 1), 10.0, vec![vec![0.5]]).is_err());
    }

    #[test]
    fn ramp_up_and_down_balances() {
        let up: Vec<f32> = (0..=20).map(|i| 0.05 + 0.045 * i as f32).collect();
        let mut vals = up.clone();
        vals.extend(up.iter().rev().skip(1));
        let s = simulate_events(&single_pixel(&vals), &SimConfig::default()).unwrap();
        let on = s.events().iter().filter(|e| e.p == Polarity::On).count();
        let off = s.len() - on;
        assert!(on.abs_diff(off) <= 1, "on {on} off {off}");
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Geometry::new(3, 2);
        let f = vec![0.0, 1.0, 0.2, 0.4, 0.6, 0.8];
        write_pgm(&dir.path().join("a.pgm"), g, &f).unwrap();
        let (g2, f2) = read_pgm(&dir.path().join("a.pgm")).unwrap();
        assert_eq!(g, g2);
        for (a, b) in f.iter().zip(&f2) {
            assert!((a - b).abs() <= 0.5 / 255.0);
        }
    }

    #[test]
    fn pgm_header_comments() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pgm");
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([0u8, 255]);
        std::fs::write(&p, bytes).unwrap();
        let (g, f) = read_pgm(&p).unwrap();
        assert_eq!(g, Geometry::new(2, 1));
        assert_eq!(f, vec![0.0, 1.0]);
    }
}
