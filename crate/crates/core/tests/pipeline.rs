mod common;

use std::time::Instant;

use adjscc::codec::{ArchSpec, Model};
use adjscc::training::{train, CheckpointCadence, SnrDistribution, TrainConfig};
use common::smooth_images;

fn overfit_config(steps: usize) -> TrainConfig {
    TrainConfig {
        snr_dist: SnrDistribution::Uniform { lo_db: 0.0, hi_db: 20.0 },
        learning_rate: 3e-4,
        batch_size: 8,
        epochs: steps,
        seed: 21,
        noiseless: true,
        checkpoint: CheckpointCadence::Never,
        ..TrainConfig::default()
    }
}

#[test]
fn overfits_eight_images_without_noise() {
    let data = smooth_images(8, 32, 3);
    let model = Model::<f32>::init(ArchSpec::preset("tiny", 16, true).unwrap(), 8).unwrap();
    let started = Instant::now();
    let (_, log) = train(model, &data, &overfit_config(500)).unwrap();
    let losses = &log.step_losses;
    assert_eq!(losses.len(), 500);
    let (first, last) = (losses[0], *losses.last().unwrap());
    println!("initial {first:.5} final {last:.5} in {:.1?}", started.elapsed());
    assert!(last < 0.1 * first, "final loss {last} vs initial {first}");

    let smoothed: Vec<f64> = losses.chunks(10).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    for (i, pair) in smoothed.windows(2).enumerate() {
        assert!(pair[1] <= pair[0], "window {} rose: {:?}", i + 1, pair);
    }
}
