//! Generates the reduced synthetic dataset in memory and trains the default
//! model on it, printing one metrics line per epoch.
//!
//! cargo run --release --example desk_train -- [epochs]

use std::time::Instant;

use spikedd::event_stream::{segment_stream, DEFAULT_DT_US, DEFAULT_SEGMENT_US};
use spikedd::loss::LossConfig;
use spikedd::network::NetworkModel;
use spikedd::par::Exec;
use spikedd::synthgen::{generate, SynthConfig};
use spikedd::trainer::{split_by_source, train, OptimConfig, TrainOptions};

fn main() -> spikedd::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let cfg = SynthConfig::desk();
    let start = Instant::now();
    let streams = generate(&cfg, Exec::default())?;
    let mut segments = Vec::new();
    for s in &streams {
        segments.extend(segment_stream(&s.stream, DEFAULT_SEGMENT_US, DEFAULT_DT_US, s.label, &s.source_id)?);
    }
    eprintln!("{} streams, {} segments in {:.1}s", streams.len(), segments.len(), start.elapsed().as_secs_f64());
    let splits = split_by_source(segments, cfg.seed);
    let model = NetworkModel::<f32>::spiking_dd(cfg.width as usize, cfg.height as usize, 0)?;
    let opt = OptimConfig { epochs, ..Default::default() };
    let out = train(model, &splits.train, &splits.val, &LossConfig::default(), &opt, TrainOptions::default(), |m| {
        println!("{}", serde_json::to_string(m).unwrap());
    })?;
    eprintln!("best epoch {:?} in {:.1}s", out.best_epoch, start.elapsed().as_secs_f64());
    Ok(())
}
