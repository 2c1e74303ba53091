//! Trains the full method on the synthetic four-class set and reports how
//! often the generated image lands in its code's class.
//!
//! `cargo run --release --example synthetic [iterations]`

use ucgan::data::{make_synthetic_with, SyntheticSpec};
use ucgan::eval::{conditional_accuracy, GanEvaluator, OracleClassifier};
use ucgan::latent::{neighbor_purity, train_extractor, ClassifierConfig, ExtractorConfig};
use ucgan::training::{eval_seed, TrainConfig, TrainState};

fn main() -> ucgan::Result<()> {
    env_logger::init();
    let n_iter = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let data = make_synthetic_with(&SyntheticSpec {
        clutter: 0.75,
        clutter_patterns: 1000,
        ..SyntheticSpec::default()
    })?;

    let extractor = train_extractor(&data, &ExtractorConfig::default())?;
    let features = extractor.extract(data.images())?;
    let purity = neighbor_purity(&features, data.labels(), &[1, 2, 5])?;
    println!("extractor accuracy {:?}, code purity {purity:.3?}", extractor.accuracy);

    let oracle_cfg = ClassifierConfig {
        seed: 99,
        ..ClassifierConfig::default()
    };
    let oracle = OracleClassifier::train(&data, &oracle_cfg, 0.95)?;
    let cfg = TrainConfig {
        n_iter,
        eval_every: 250,
        ..TrainConfig::default()
    };
    let mut eval = GanEvaluator::new(&oracle, &data, &features, 512, eval_seed(&cfg))?;
    let mut state = TrainState::new(cfg.clone(), &data.image_shape(), extractor.feature_dim())?;
    state.run(&data.images_only(), &features, n_iter, Some(&mut eval))?;

    for s in &state.history.records {
        println!(
            "{:>5}  frechet {:>8.3}  accuracy {:.3}",
            s.iter,
            s.frechet.unwrap_or(f64::NAN),
            s.accuracy.unwrap_or(f64::NAN)
        );
    }
    let acc = conditional_accuracy(&state.generator, &features, &oracle, &data, 2048, eval_seed(&cfg))?;
    println!("conditional accuracy {acc:.3}");
    Ok(())
}
