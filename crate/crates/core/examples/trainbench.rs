//! Rough training-throughput benchmark: sequences per second on a fixed corpus.

use std::time::Instant;

use aphasim_core::model::train::{train, TrainOptions};
use aphasim_core::optim::Optimizer;
use aphasim_core::model::{ArchKind, Model, ModelConfig};

fn main() {
    for arch in [ArchKind::Dense, ArchKind::Moe] {
        let cfg = match arch {
            ArchKind::Dense => ModelConfig::dense_default(64, 7),
            ArchKind::Moe => ModelConfig::moe_default(64, 7),
        };
        let mut model = Model::build(cfg).unwrap();
        let corpus: Vec<Vec<usize>> = (0..64)
            .map(|i| (0..10).map(|t| (i * 7 + t * 3) % 50 + 1).collect())
            .collect();
        let mut opts = TrainOptions {
            epochs: 1,
            batch_size: 8,
            optimizer: Optimizer::adamw(2e-3),
            shuffle_seed: 7,
        };
        let start = Instant::now();
        let report = train(&mut model, &corpus, &mut opts, None).unwrap();
        let dt = start.elapsed().as_secs_f64();
        println!(
            "{arch:?}: 64 seqs in {dt:.2}s ({:.1} seq/s), loss {:.4}",
            64.0 / dt,
            report.epoch_losses[0]
        );
    }
}
