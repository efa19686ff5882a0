//! DVS event streams: storage, CSV/binary file formats, and binning into
//! binary spike tensors and fixed-length labelled segments.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default spike-tensor bin width (1 ms).
pub const DEFAULT_DT_US: u64 = 1_000;
/// Default segment duration (33 ms).
pub const DEFAULT_SEGMENT_US: u64 = 33_000;

const BIN_MAGIC: &[u8; 4] = b"EVS1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Polarity {
    Off = 0,
    On = 1,
}

impl Polarity {
    pub fn from_bit(p: u8) -> Option<Self> {
        match p {
            0 => Some(Polarity::Off),
            1 => Some(Polarity::On),
            _ => None,
        }
    }

    /// Channel index in a [`SpikeTensor`].
    pub fn channel(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub t_us: u64,
    pub x: u32,
    pub y: u32,
    pub p: Polarity,
}

impl Event {
    pub fn new(t_us: u64, x: u32, y: u32, p: Polarity) -> Self {
        Self { t_us, x, y, p }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Geometry {
    pub width: u32,
    pub height: u32,
}

impl Geometry {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height
    }
}

/// A time-sorted sequence of events over a fixed sensor geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    geometry: Geometry,
    events: Vec<Event>,
    duration_us: u64,
}

impl EventStream {
    /// Builds a stream, checking bounds, ordering and the duration.
    pub fn new(geometry: Geometry, events: Vec<Event>, duration_us: u64) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            if !geometry.contains(e.x, e.y) {
                return Err(Error::Bounds(format!(
                    "event {i} at ({}, {}) outside {}x{}",
                    e.x, e.y, geometry.width, geometry.height
                )));
            }
        }
        if events.windows(2).any(|w| w[0].t_us > w[1].t_us) {
            return Err(Error::Config("events are not sorted by timestamp".into()));
        }
        if let Some(last) = events.last() {
            if last.t_us > duration_us {
                return Err(Error::Bounds(format!(
                    "event at t={} µs beyond stream duration {duration_us} µs",
                    last.t_us
                )));
            }
        }
        Ok(Self {
            geometry,
            events,
            duration_us,
        })
    }

    /// Like [`EventStream::new`] but sorts the events (stably) first.
    /// The flag reports whether any reordering was needed.
    pub fn from_unsorted(
        geometry: Geometry,
        mut events: Vec<Event>,
        duration_us: u64,
    ) -> Result<(Self, bool)> {
        let resorted = events.windows(2).any(|w| w[0].t_us > w[1].t_us);
        if resorted {
            events.sort_by_key(|e| e.t_us);
        }
        Ok((Self::new(geometry, events, duration_us)?, resorted))
    }

    pub fn empty(geometry: Geometry, duration_us: u64) -> Self {
        Self {
            geometry,
            events: Vec::new(),
            duration_us,
        }
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn duration_us(&self) -> u64 {
        self.duration_us
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events with `t0 <= t_us < t1`.
    pub fn window(&self, t0: u64, t1: u64) -> &[Event] {
        let lo = self.events.partition_point(|e| e.t_us < t0);
        let hi = self.events.partition_point(|e| e.t_us < t1);
        &self.events[lo..hi.max(lo)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventFormat {
    Csv,
    Bin,
}

impl EventFormat {
    /// `.csv` selects CSV; anything else is the binary format.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => EventFormat::Csv,
            _ => EventFormat::Bin,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            EventFormat::Csv => "csv",
            EventFormat::Bin => "bin",
        }
    }
}

/// Result of [`read_events`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadedEvents {
    pub stream: EventStream,
    /// Set when the file was not time-sorted and had to be reordered.
    pub resorted: bool,
}

pub fn read_events(path: &Path, format: EventFormat) -> Result<LoadedEvents> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let (geometry, events, duration_us) = match format {
        EventFormat::Csv => parse_csv(reader, path)?,
        EventFormat::Bin => parse_bin(reader, path)?,
    };
    let (stream, resorted) = EventStream::from_unsorted(geometry, events, duration_us)?;
    if resorted {
        log::warn!("{}: events were not time-sorted; reordered", path.display());
    }
    Ok(LoadedEvents { stream, resorted })
}

pub fn write_events(stream: &EventStream, path: &Path, format: EventFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = match format {
        EventFormat::Csv => write_csv(stream, &mut w),
        EventFormat::Bin => write_bin(stream, &mut w, path),
    };
    res.and_then(|_| w.flush().map_err(|e| Error::io(path, e)))
        .map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
}

fn write_csv<W: Write>(stream: &EventStream, w: &mut W) -> Result<()> {
    let io = |e| Error::io(PathBuf::new(), e);
    let g = stream.geometry;
    writeln!(w, "{},{},{}", g.width, g.height, stream.duration_us).map_err(io)?;
    for e in &stream.events {
        writeln!(w, "{},{},{},{}", e.t_us, e.x, e.y, e.p as u8).map_err(io)?;
    }
    Ok(())
}

fn write_bin<W: Write>(stream: &EventStream, w: &mut W, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let g = stream.geometry;
    if g.width > u32::from(u16::MAX) + 1 || g.height > u32::from(u16::MAX) + 1 {
        return Err(Error::Bounds(format!(
            "geometry {}x{} does not fit 16-bit coordinates",
            g.width, g.height
        )));
    }
    w.write_all(BIN_MAGIC).map_err(io)?;
    w.write_all(&g.width.to_le_bytes()).map_err(io)?;
    w.write_all(&g.height.to_le_bytes()).map_err(io)?;
    w.write_all(&stream.duration_us.to_le_bytes()).map_err(io)?;
    w.write_all(&(stream.events.len() as u64).to_le_bytes())
        .map_err(io)?;
    let mut rec = [0u8; 13];
    for e in &stream.events {
        rec[0..8].copy_from_slice(&e.t_us.to_le_bytes());
        rec[8..10].copy_from_slice(&(e.x as u16).to_le_bytes());
        rec[10..12].copy_from_slice(&(e.y as u16).to_le_bytes());
        rec[12] = e.p as u8;
        w.write_all(&rec).map_err(io)?;
    }
    Ok(())
}

fn parse_fields<const N: usize>(line: &str, path: &Path, lineno: usize) -> Result<[u64; N]> {
    let perr = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: lineno,
        msg,
    };
    let mut out = [0u64; N];
    let mut fields = line.split(',');
    for (i, slot) in out.iter_mut().enumerate() {
        let f = fields
            .next()
            .ok_or_else(|| perr(format!("expected {N} fields, found {i}")))?;
        *slot = f
            .parse::<u64>()
            .map_err(|e| perr(format!("field {}: {e} ({f:?})", i + 1)))?;
    }
    if fields.next().is_some() {
        return Err(perr(format!("expected {N} fields, found more")));
    }
    Ok(out)
}

fn parse_csv<R: BufRead>(reader: R, path: &Path) -> Result<(Geometry, Vec<Event>, u64)> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: "missing header".into(),
    })?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let [w, h, duration_us] = parse_fields::<3>(header.trim_end_matches('\r'), path, 1)?;
    let to_u32 = |v: u64, what: &str, line: usize| {
        u32::try_from(v).map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{what} {v} does not fit in 32 bits"),
        })
    };
    let geometry = Geometry::new(to_u32(w, "width", 1)?, to_u32(h, "height", 1)?);

    let mut events = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let [t, x, y, p] = parse_fields::<4>(line, path, lineno)?;
        let p = u8::try_from(p)
            .ok()
            .and_then(Polarity::from_bit)
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("polarity must be 0 or 1, got {p}"),
            })?;
        let (x, y) = (to_u32(x, "x", lineno)?, to_u32(y, "y", lineno)?);
        if !geometry.contains(x, y) {
            return Err(Error::Bounds(format!(
                "{}:{lineno}: ({x}, {y}) outside {}x{}",
                path.display(),
                geometry.width,
                geometry.height
            )));
        }
        events.push(Event::new(t, x, y, p));
    }
    Ok((geometry, events, duration_us))
}

fn parse_bin<R: Read>(mut reader: R, path: &Path) -> Result<(Geometry, Vec<Event>, u64)> {
    let mut header = [0u8; 28];
    reader
        .read_exact(&mut header)
        .map_err(|_| Error::corrupt(path, "truncated header"))?;
    if &header[0..4] != BIN_MAGIC {
        return Err(Error::corrupt(path, "bad magic, expected EVS1"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(header[o..o + 8].try_into().unwrap());
    let geometry = Geometry::new(u32_at(4), u32_at(8));
    let duration_us = u64_at(12);
    let count = u64_at(20);

    let mut events = Vec::with_capacity(count.min(1 << 24) as usize);
    let mut rec = [0u8; 13];
    for i in 0..count {
        reader
            .read_exact(&mut rec)
            .map_err(|_| Error::corrupt(path, format!("truncated at event {i} of {count}")))?;
        let t = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let x = u16::from_le_bytes(rec[8..10].try_into().unwrap()) as u32;
        let y = u16::from_le_bytes(rec[10..12].try_into().unwrap()) as u32;
        let p = Polarity::from_bit(rec[12])
            .ok_or_else(|| Error::corrupt(path, format!("event {i}: polarity {}", rec[12])))?;
        if !geometry.contains(x, y) {
            return Err(Error::Bounds(format!(
                "{}: event {i} at ({x}, {y}) outside {}x{}",
                path.display(),
                geometry.width,
                geometry.height
            )));
        }
        events.push(Event::new(t, x, y, p));
    }
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::corrupt(path, "trailing bytes after last event"));
    }
    Ok((geometry, events, duration_us))
}

/// Binary spike tensor of shape `T x C x H x W`, stored sparsely: for every
/// timestep the sorted set of active `(c, h, w)` cells as flat indices
/// `c*H*W + h*W + w`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeTensor {
    steps: usize,
    channels: usize,
    height: usize,
    width: usize,
    dt_us: u64,
    offsets: Vec<usize>,
    active: Vec<u32>,
}

impl SpikeTensor {
    pub fn zeros(steps: usize, channels: usize, height: usize, width: usize, dt_us: u64) -> Self {
        Self {
            steps,
            channels,
            height,
            width,
            dt_us,
            offsets: vec![0; steps + 1],
            active: Vec::new(),
        }
    }

    /// Builds a tensor from `(t, c, h, w)` coordinates; duplicates collapse to
    /// a single spike.
    pub fn from_coords(
        dims: [usize; 4],
        dt_us: u64,
        coords: impl IntoIterator<Item = [usize; 4]>,
    ) -> Result<Self> {
        let [steps, channels, height, width] = dims;
        let frame = channels * height * width;
        if frame > u32::MAX as usize {
            return Err(Error::Shape(format!("frame of {frame} cells is too large")));
        }
        let mut cells: Vec<(usize, u32)> = Vec::new();
        for [t, c, h, w] in coords {
            if t >= steps || c >= channels || h >= height || w >= width {
                return Err(Error::Bounds(format!(
                    "spike ({t}, {c}, {h}, {w}) outside {steps}x{channels}x{height}x{width}"
                )));
            }
            cells.push((t, ((c * height + h) * width + w) as u32));
        }
        Ok(Self::from_cells(dims, dt_us, cells))
    }

    fn from_cells(dims: [usize; 4], dt_us: u64, mut cells: Vec<(usize, u32)>) -> Self {
        let [steps, channels, height, width] = dims;
        cells.sort_unstable();
        cells.dedup();
        let mut offsets = Vec::with_capacity(steps + 1);
        offsets.push(0);
        let mut it = 0;
        for t in 0..steps {
            while it < cells.len() && cells[it].0 == t {
                it += 1;
            }
            offsets.push(it);
        }
        Self {
            steps,
            channels,
            height,
            width,
            dt_us,
            offsets,
            active: cells.into_iter().map(|(_, i)| i).collect(),
        }
    }

    /// `[T, C, H, W]`.
    pub fn dims(&self) -> [usize; 4] {
        [self.steps, self.channels, self.height, self.width]
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt_us(&self) -> u64 {
        self.dt_us
    }

    pub fn get(&self, t: usize, c: usize, h: usize, w: usize) -> bool {
        if t >= self.steps || c >= self.channels || h >= self.height || w >= self.width {
            return false;
        }
        let idx = ((c * self.height + h) * self.width + w) as u32;
        self.active_at(t).binary_search(&idx).is_ok()
    }

    /// Flat `(c, h, w)` indices of the spikes at timestep `t`, ascending.
    pub fn active_at(&self, t: usize) -> &[u32] {
        &self.active[self.offsets[t]..self.offsets[t + 1]]
    }

    /// Total number of ones.
    pub fn count_ones(&self) -> usize {
        self.active.len()
    }

    /// Dense row-major `[t][c][h][w]` copy.
    pub fn to_dense(&self) -> Vec<u8> {
        let frame = self.channels * self.height * self.width;
        let mut out = vec![0u8; self.steps * frame];
        for t in 0..self.steps {
            for &i in self.active_at(t) {
                out[t * frame + i as usize] = 1;
            }
        }
        out
    }
}

/// Bins the events in `[t0_us, t0_us + steps*dt_us)` into a binary
/// `steps x 2 x H x W` tensor. Channel 0 is OFF, channel 1 is ON.
pub fn bin_to_spikes(stream: &EventStream, dt_us: u64, t0_us: u64, steps: usize) -> Result<SpikeTensor> {
    if dt_us == 0 {
        return Err(Error::Config("dt_us must be positive".into()));
    }
    if steps == 0 {
        return Err(Error::Config("spike tensor needs at least one timestep".into()));
    }
    let g = stream.geometry();
    let (h, w) = (g.height as usize, g.width as usize);
    let t1 = t0_us.saturating_add(dt_us.saturating_mul(steps as u64));
    let cells = stream
        .window(t0_us, t1)
        .iter()
        .map(|e| {
            let t = ((e.t_us - t0_us) / dt_us) as usize;
            let idx = (e.p.channel() * h + e.y as usize) * w + e.x as usize;
            (t, idx as u32)
        })
        .collect();
    Ok(SpikeTensor::from_cells([steps, 2, h, w], dt_us, cells))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub spikes: SpikeTensor,
    pub label: usize,
    pub source_id: String,
}

/// Cuts a stream into consecutive `segment_us` windows of `segment_us/dt_us`
/// bins each. A trailing partial window is dropped.
pub fn segment_stream(
    stream: &EventStream,
    segment_us: u64,
    dt_us: u64,
    label: usize,
    source_id: &str,
) -> Result<Vec<Segment>> {
    if dt_us == 0 || segment_us == 0 || !segment_us.is_multiple_of(dt_us) {
        return Err(Error::Config(format!(
            "segment length {segment_us} µs must be a positive multiple of the bin width {dt_us} µs"
        )));
    }
    let steps = (segment_us / dt_us) as usize;
    let n = stream.duration_us() / segment_us;
    (0..n)
        .map(|i| {
            Ok(Segment {
                spikes: bin_to_spikes(stream, dt_us, i * segment_us, steps)?,
                label,
                source_id: source_id.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn random_stream(rng: &mut ChaCha8Rng, n: usize, g: Geometry, duration: u64) -> EventStream {
        let mut ev: Vec<Event> = (0..n)
            .map(|_| {
                Event::new(
                    rng.random_range(0..duration),
                    rng.random_range(0..g.width),
                    rng.random_range(0..g.height),
                    if rng.random::<bool>() { Polarity::On } else { Polarity::Off },
                )
            })
            .collect();
        ev.sort_by_key(|e| e.t_us);
        EventStream::new(g, ev, duration).unwrap()
    }

    #[test]
    fn csv_single_record() {
        let f = write_tmp("1280,720,1000000\n5,10,20,1\n");
        let got = read_events(f.path(), EventFormat::Csv).unwrap();
        assert!(!got.resorted);
        assert_eq!(got.stream.geometry(), Geometry::new(1280, 720));
        assert_eq!(got.stream.events(), &[Event::new(5, 10, 20, Polarity::On)]);
    }

    #[test]
    fn csv_empty_body() {
        let f = write_tmp("640,480,0\n");
        let got = read_events(f.path(), EventFormat::Csv).unwrap();
        assert!(got.stream.is_empty());
        assert_eq!(got.stream.duration_us(), 0);
    }

    #[test]
    fn csv_unsorted_is_resorted() {
        let f = write_tmp("10,10,100\n30,1,1,1\n10,2,2,0\n20,3,3,1\n");
        let got = read_events(f.path(), EventFormat::Csv).unwrap();
        assert!(got.resorted);
        let ts: Vec<u64> = got.stream.events().iter().map(|e| e.t_us).collect();
        assert_eq!(ts, vec![10, 20, 30]);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let f = write_tmp("10,10,100\n1,1,1,1\n2,x,1,1\n");
        match read_events(f.path(), EventFormat::Csv) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let f = write_tmp("10,10,100\n1,1,1,1,\n");
        assert!(matches!(read_events(f.path(), EventFormat::Csv), Err(Error::Parse { line: 2, .. })));
        let f = write_tmp("10,10,100\n1,1,1,2\n");
        assert!(matches!(read_events(f.path(), EventFormat::Csv), Err(Error::Parse { line: 2, .. })));
        let f = write_tmp("10,10,100\n1,10,1,1\n");
        assert!(matches!(read_events(f.path(), EventFormat::Csv), Err(Error::Bounds(_))));
    }

    #[test]
    fn bin_rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        let s = random_stream(&mut ChaCha8Rng::seed_from_u64(1), 10, Geometry::new(8, 8), 100);
        write_events(&s, &p, EventFormat::Bin).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_events(&p, EventFormat::Bin), Err(Error::Corrupt { .. })));
        bytes[0] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_events(&p, EventFormat::Bin), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn empty_stream_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let s = EventStream::empty(Geometry::new(640, 480), 0);
        let p = dir.path().join("e.csv");
        write_events(&s, &p, EventFormat::Csv).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "640,480,0\n");
        let p = dir.path().join("e.bin");
        write_events(&s, &p, EventFormat::Bin).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 28);
    }

    #[test]
    fn ten_thousand_events_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = random_stream(&mut rng, 10_000, Geometry::new(640, 480), 3_000_000);
        for fmt in [EventFormat::Csv, EventFormat::Bin] {
            let p = dir.path().join(format!("r.{}", fmt.extension()));
            write_events(&s, &p, fmt).unwrap();
            let back = read_events(&p, fmt).unwrap();
            assert!(!back.resorted);
            assert_eq!(back.stream, s);
        }
    }

    #[test]
    fn binning_empty_and_clipping() {
        let g = Geometry::new(4, 3);
        let t = bin_to_spikes(&EventStream::empty(g, 100), 10, 0, 5).unwrap();
        assert_eq!(t.count_ones(), 0);
        assert_eq!(t.dims(), [5, 2, 3, 4]);

        let ev = vec![Event::new(1, 2, 1, Polarity::On); 3];
        let s = EventStream::new(g, ev, 100).unwrap();
        let t = bin_to_spikes(&s, 10, 0, 5).unwrap();
        assert_eq!(t.count_ones(), 1);
        assert!(t.get(0, 1, 1, 2));
        assert!(!t.get(0, 0, 1, 2));
    }

    #[test]
    fn binning_matches_scatter_oracle() {
        let g = Geometry::new(32, 24);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = random_stream(&mut rng, 500, g, 40_000);
        let (dt, t0, steps) = (1000u64, 2_000u64, 33usize);
        let got = bin_to_spikes(&s, dt, t0, steps).unwrap().to_dense();

        let (h, w) = (24usize, 32usize);
        let mut want = vec![0u8; steps * 2 * h * w];
        for e in s.events() {
            for t in 0..steps {
                let lo = t0 + t as u64 * dt;
                if e.t_us >= lo && e.t_us < lo + dt {
                    let c = e.p as usize;
                    want[((t * 2 + c) * h + e.y as usize) * w + e.x as usize] = 1;
                }
            }
        }
        assert_eq!(got, want);
    }

    #[test]
    fn segmentation_counts() {
        let g = Geometry::new(2, 2);
        let s = EventStream::empty(g, 3_000_000);
        assert_eq!(segment_stream(&s, 33_000, 1000, 0, "a").unwrap().len(), 90);

        let s = EventStream::empty(g, 20_000);
        assert!(segment_stream(&s, 33_000, 1000, 0, "a").unwrap().is_empty());

        let s = EventStream::empty(g, 66_000);
        let segs = segment_stream(&s, 33_000, 1000, 1, "a").unwrap();
        assert_eq!(segs.len(), 2);
        assert!(segs.iter().all(|x| x.spikes.steps() == 33 && x.label == 1));

        assert!(matches!(segment_stream(&s, 33_500, 1000, 0, "a"), Err(Error::Config(_))));
    }

    #[test]
    fn segments_partition_the_stream() {
        let g = Geometry::new(16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_stream(&mut rng, 2000, g, 100_000);
        let segs = segment_stream(&s, 33_000, 1000, 0, "x").unwrap();
        assert_eq!(segs.len(), 3);
        for (i, seg) in segs.iter().enumerate() {
            let direct = bin_to_spikes(&s, 1000, i as u64 * 33_000, 33).unwrap();
            assert_eq!(seg.spikes, direct);
        }
    }

    #[test]
    fn stream_constructor_enforces_invariants() {
        let g = Geometry::new(4, 4);
        assert!(EventStream::new(g, vec![Event::new(5, 4, 0, Polarity::On)], 10).is_err());
        assert!(EventStream::new(g, vec![Event::new(50, 0, 0, Polarity::On)], 10).is_err());
        let unsorted = vec![Event::new(5, 0, 0, Polarity::On), Event::new(1, 0, 0, Polarity::On)];
        assert!(EventStream::new(g, unsorted, 10).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_events() -> impl Strategy<Value = Vec<(u64, u32, u32, bool)>> {
            prop::collection::vec((0u64..5_000, 0u32..12, 0u32..9, any::<bool>()), 0..300)
        }

        fn build(raw: &[(u64, u32, u32, bool)]) -> EventStream {
            let ev = raw
                .iter()
                .map(|&(t, x, y, p)| Event::new(t, x, y, if p { Polarity::On } else { Polarity::Off }))
                .collect();
            EventStream::from_unsorted(Geometry::new(12, 9), ev, 5_000).unwrap().0
        }

        proptest! {
            #[test]
            fn binary_and_bounded(raw in arb_events(), dt in 1u64..700, t0 in 0u64..2_000, steps in 1usize..12) {
                let s = build(&raw);
                let t = bin_to_spikes(&s, dt, t0, steps).unwrap();
                prop_assert!(t.to_dense().iter().all(|&v| v <= 1));
                let in_window = s.window(t0, t0 + dt * steps as u64).len();
                prop_assert!(t.count_ones() <= in_window);
            }

            #[test]
            fn equal_timestamp_permutation_invariant(raw in arb_events(), seed in any::<u64>()) {
                let s = build(&raw);
                let mut ev = s.events().to_vec();
                // shuffle within runs of equal timestamps
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut i = 0;
                while i < ev.len() {
                    let j = ev[i..].partition_point(|e| e.t_us == ev[i].t_us) + i;
                    use rand::seq::SliceRandom;
                    ev[i..j].shuffle(&mut rng);
                    i = j;
                }
                let s2 = EventStream::new(s.geometry(), ev, s.duration_us()).unwrap();
                prop_assert_eq!(
                    bin_to_spikes(&s, 250, 0, 20).unwrap(),
                    bin_to_spikes(&s2, 250, 0, 20).unwrap()
                );
            }
        }
    }
}
