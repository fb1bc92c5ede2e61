//! Plain-text checkpoints:
//!
//! ```text
//! moodsense-lstm 1
//! input 19
//! hidden 4
//! relu output
//! config {"epochs":200,...}
//! W 16 19
//! <16 rows of 19 values>
//! U 16 4
//! ...
//! b 16 1
//! w_out 1 4
//! b_out 1 1
//! ```
//!
//! Values are written with the shortest representation that parses back to
//! the same `f64`, so a round trip is exact.

use std::fmt::Write as _;
use std::path::Path;

use super::lstm::{n_params, Lstm, ReluPlacement};
use super::train::TrainConfig;
use crate::error::{Error, Result};

const MAGIC: &str = "moodsense-lstm 1";

fn blocks(input: usize, hidden: usize) -> [(&'static str, usize, usize); 5] {
    [
        ("W", 4 * hidden, input),
        ("U", 4 * hidden, hidden),
        ("b", 4 * hidden, 1),
        ("w_out", 1, hidden),
        ("b_out", 1, 1),
    ]
}

pub fn write_checkpoint(path: &Path, model: &Lstm, config: &TrainConfig) -> Result<()> {
    let (d, h) = (model.input_dim(), model.hidden_dim());
    let mut out = String::new();
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(out, "input {d}").unwrap();
    writeln!(out, "hidden {h}").unwrap();
    writeln!(out, "relu {}", model.relu.as_str()).unwrap();
    writeln!(out, "config {}", serde_json::to_string(config)?).unwrap();
    let mut values = model.params.iter();
    for (name, rows, cols) in blocks(d, h) {
        writeln!(out, "{name} {rows} {cols}").unwrap();
        for _ in 0..rows {
            let row: Vec<String> = values.by_ref().take(cols).map(|v| v.to_string()).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(Lstm, TrainConfig)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |what: &str| Error::Checkpoint(format!("{}: {what}", path.display()));
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("not a checkpoint"));
    }
    let mut field = |key: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| bad("truncated header"))?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .map(str::to_owned)
            .ok_or_else(|| bad(&format!("expected `{key}`")))
    };
    let d: usize = field("input")?.parse().map_err(|_| bad("bad input size"))?;
    let h: usize = field("hidden")?.parse().map_err(|_| bad("bad hidden size"))?;
    let relu: ReluPlacement = field("relu")?.parse()?;
    let config: TrainConfig = serde_json::from_str(&field("config")?)?;

    let mut params = Vec::with_capacity(n_params(d, h));
    for (name, rows, cols) in blocks(d, h) {
        let header = lines.next().ok_or_else(|| bad("truncated"))?;
        if header != format!("{name} {rows} {cols}") {
            return Err(bad(&format!("expected block `{name} {rows} {cols}`, found `{header}`")));
        }
        for _ in 0..rows {
            let row = lines.next().ok_or_else(|| bad("truncated"))?;
            let vals: Vec<f64> = row
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| bad(&format!("bad value `{v}`"))))
                .collect::<Result<_>>()?;
            if vals.len() != cols {
                return Err(bad(&format!("block {name}: row has {} values, expected {cols}", vals.len())));
            }
            params.extend(vals);
        }
    }
    Ok((Lstm::from_params(d, h, relu, params)?, config))
}

/// `epoch,train_loss`, epochs counted from 1.
pub fn write_loss_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let mut w = crate::ingest::csv_writer(path)?;
    w.write_record(["epoch", "train_loss"]).map_err(|e| Error::csv(path, e))?;
    for (i, l) in trace.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string()])
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = Lstm::init_uniform(19, 4, ReluPlacement::Hidden, &mut rng);
        let cfg = TrainConfig {
            epochs: 7,
            patience: Some(3),
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        write_checkpoint(&p, &model, &cfg).unwrap();
        let (back, back_cfg) = read_checkpoint(&p).unwrap();
        assert_eq!(back, model);
        assert_eq!(back_cfg, cfg);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let model = Lstm::zeros(3, 2, ReluPlacement::Output);
        write_checkpoint(&p, &model, &TrainConfig::default()).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        std::fs::write(&p, text.replace("U 8 2", "U 8 3")).unwrap();
        assert!(matches!(read_checkpoint(&p), Err(Error::Checkpoint(_))));
        std::fs::write(&p, "hello\n").unwrap();
        assert!(matches!(read_checkpoint(&p), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn loss_trace_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        write_loss_trace(&p, &[2.5, 1.25]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "epoch,train_loss\n1,2.5\n2,1.25\n");
    }
}
