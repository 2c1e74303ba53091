use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use ucgan::data::{make_synthetic_with, parse_idx, serialize_idx, Dataset};
use ucgan::eval::{
    border_effect_report, conditional_outcome, config_fingerprint, emit_curves, evaluate, robustness_sweep,
    GanEvaluator, OracleClassifier, SweepConfig,
};
use ucgan::latent::{export_embedding, neighbor_purity, train_extractor, FeatureExtractor, FeatureSet};
use ucgan::numerics::Tensor;
use ucgan::training::checkpoint::decode;
use ucgan::training::{eval_seed, load_checkpoint, run_ablation, save_checkpoint, Evaluator, TrainState};

use crate::config::{DataSource, FeatureSource, RunConfig};
use crate::error::CliError;
use crate::run_dir::{self, RunDir, Seeds};

/// Validated config plus the dataset it names. Everything that can fail
/// because of the invocation fails here, before any directory exists.
pub struct Prepared {
    pub config: RunConfig,
    pub dataset: Dataset,
}

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

pub fn load_dataset(config: &RunConfig) -> Result<Dataset, CliError> {
    let d = &config.data;
    let mut ds = match d.source {
        DataSource::Synthetic => make_synthetic_with(&d.synthetic)?,
        DataSource::Idx => {
            let images = read_input(d.idx.images.as_deref().expect("validated"))?;
            let labels = read_input(d.idx.labels.as_deref().expect("validated"))?;
            parse_idx(&images, &labels)?
        }
    };
    if let Some(n) = d.limit {
        ds = ds.truncated(n)?;
    }
    if let Some(side) = d.resize {
        ds = ds.resized(side)?;
    }
    Ok(ds)
}

pub fn prepare(config: RunConfig) -> Result<Prepared, CliError> {
    config.validate()?;
    let dataset = load_dataset(&config)?;
    if dataset.len() < config.train.batch_size {
        return Err(CliError::Config(format!(
            "train.batch_size: {} exceeds the {} available samples",
            config.train.batch_size,
            dataset.len()
        )));
    }
    Ok(Prepared { config, dataset })
}

impl Prepared {
    fn seeds(&self) -> Seeds {
        let c = &self.config;
        Seeds {
            data: (c.data.source == DataSource::Synthetic).then_some(c.data.synthetic.seed),
            extractor: c.extractor.classifier.seed,
            oracle: c.oracle.classifier.seed,
            train: c.train.seed,
            eval: eval_seed(&c.train),
        }
    }

    pub fn open(&self, command: &str) -> Result<RunDir, CliError> {
        RunDir::open(&self.config, command, self.seeds(), self.dataset.fingerprint())
    }
}

/// A stored artifact together with what it was built from, so a changed
/// config never silently reuses a stale one.
#[derive(Serialize, Deserialize)]
struct Cached<K, V> {
    key: K,
    dataset: String,
    value: V,
}

fn cached<K, V>(path: &Path, key: &K, dataset: &str, build: impl FnOnce() -> Result<V, CliError>) -> Result<V, CliError>
where
    K: Serialize + DeserializeOwned + PartialEq,
    V: Serialize + DeserializeOwned,
{
    if let Ok(text) = std::fs::read_to_string(path) {
        match serde_json::from_str::<Cached<K, V>>(&text) {
            Ok(c) if c.key == *key && c.dataset == dataset => return Ok(c.value),
            _ => log::info!("rebuilding stale {}", path.display()),
        }
    }
    let value = build()?;
    let stored = Cached {
        key,
        dataset: dataset.to_string(),
        value: &value,
    };
    let text = serde_json::to_string(&stored).map_err(ucgan::Error::from)?;
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))?;
    Ok(value)
}

fn build_extractor(p: &Prepared) -> Result<FeatureExtractor, CliError> {
    let cfg = p.config.extractor.config();
    let ex = if p.config.extractor.trained {
        train_extractor(&p.dataset, &cfg)?
    } else {
        FeatureExtractor::untrained(&p.dataset.image_shape(), p.dataset.num_classes(), &cfg)?
    };
    Ok(ex)
}

fn extractor(p: &Prepared, dir: &RunDir) -> Result<FeatureExtractor, CliError> {
    cached(
        &dir.path(run_dir::EXTRACTOR),
        &p.config.extractor,
        &p.dataset.fingerprint(),
        || build_extractor(p),
    )
}

fn oracle(p: &Prepared, dir: &RunDir) -> Result<OracleClassifier, CliError> {
    let o = &p.config.oracle;
    cached(&dir.path(run_dir::ORACLE), o, &p.dataset.fingerprint(), || {
        Ok(OracleClassifier::train(&p.dataset, &o.classifier, o.floor)?)
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn out(text: &str) {
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(text.as_bytes());
    let _ = stdout.flush();
}

pub fn ingest(p: Prepared) -> Result<(), CliError> {
    let dir = p.open("ingest")?;
    let ds = &p.dataset;
    let (images, labels) = serialize_idx(ds)?;
    let data_dir = dir.path("data");
    std::fs::create_dir_all(&data_dir).map_err(|e| CliError::io(&data_dir, e))?;
    for (name, bytes) in [("images-idx3-ubyte", &images), ("labels-idx1-ubyte", &labels)] {
        let path = data_dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    }
    let mut text = format!(
        "dataset {}\nsamples {}\nclasses {}\nshape {:?}\nfingerprint {}\n",
        ds.name,
        ds.len(),
        ds.num_classes(),
        ds.image_shape(),
        ds.fingerprint()
    );
    for c in 0..ds.num_classes() {
        text += &format!("class {c} {}\n", ds.labels().iter().filter(|&&l| l == c).count());
    }
    out(&text);
    dir.finalize()
}

pub fn stats(p: Prepared) -> Result<(), CliError> {
    let n = p.dataset.len();
    if let Some(&k) = p.config.stats.ks.iter().find(|&&k| k >= n) {
        return Err(CliError::Usage(format!("k = {k} needs more than {n} samples")));
    }
    let dir = p.open("stats")?;
    let labels = p.dataset.labels();
    let features = match p.config.stats.features {
        FeatureSource::Extractor => extractor(&p, &dir)?.extract(p.dataset.images())?,
        FeatureSource::Random => FeatureSet::random(labels, p.config.stats.random_dim, p.config.train.seed)?.features,
        FeatureSource::OneHot => FeatureSet::one_hot(labels, p.dataset.num_classes())?.features,
    };
    let purity = neighbor_purity(&features, labels, &p.config.stats.ks)?;
    let mut text = format!("{:<6} {:>8}\n", "k", "purity");
    for (k, v) in p.config.stats.ks.iter().zip(&purity) {
        text += &format!("{k:<6} {:>7.1}%\n", 100.0 * v);
    }
    out(&text);
    write_text(&dir.path("stats.txt"), &text)?;
    export_embedding(&features, Some(labels), None)?.save(&dir.path(run_dir::EMBEDDING))?;
    dir.finalize()
}

pub fn train_extractor_cmd(p: Prepared) -> Result<(), CliError> {
    let dir = p.open("train-extractor")?;
    let _ = std::fs::remove_file(dir.path(run_dir::EXTRACTOR));
    let ex = extractor(&p, &dir)?;
    let acc = ex
        .accuracy
        .map_or("untrained".to_string(), |a| format!("{:.2}%", 100.0 * a));
    out(&format!("held-out accuracy {acc}\nfeature dim {}\n", ex.feature_dim()));
    dir.finalize()
}

fn write_report(
    p: &Prepared,
    dir: &RunDir,
    state: &TrainState,
    features: &Tensor,
    oracle: &OracleClassifier,
) -> Result<(), CliError> {
    let report = evaluate(
        &state.generator,
        features,
        oracle,
        &p.dataset,
        p.config.eval.samples,
        eval_seed(&state.config),
        &config_fingerprint(&state.config)?,
    )?;
    let text = format!("iteration={}\n{}", state.iteration, report.to_kv());
    out(&text);
    write_text(&dir.path(run_dir::REPORT), &text)
}

pub fn train(p: Prepared, resume: bool) -> Result<(), CliError> {
    let dir = p.open("train")?;
    let extractor = extractor(&p, &dir)?;
    let oracle = oracle(&p, &dir)?;
    let features = extractor.extract(p.dataset.images())?;
    let images = p.dataset.images_only();
    let mut state = match dir.latest_checkpoint()?.filter(|_| resume) {
        Some(path) => {
            let s = load_checkpoint(&path)?;
            if s.config != p.config.train {
                return Err(CliError::Usage(format!(
                    "{} was written with a different train config",
                    path.display()
                )));
            }
            log::info!("resuming from {} at iteration {}", path.display(), s.iteration);
            s
        }
        None => TrainState::new(
            p.config.train.clone(),
            &p.dataset.image_shape(),
            extractor.feature_dim(),
        )?,
    };
    let mut eval = GanEvaluator::new(
        &oracle,
        &p.dataset,
        &features,
        p.config.eval.snapshot_samples,
        eval_seed(&state.config),
    )?;
    let every = p.config.eval.checkpoint_every;
    while !state.is_finished() {
        let next = (state.iteration / every + 1) * every;
        state.run(&images, &features, next, Some(&mut eval))?;
        save_checkpoint(&state, &dir.checkpoint_path(state.iteration))?;
    }
    emit_curves(&state.history, &dir.path(run_dir::CURVES))?;
    write_report(&p, &dir, &state, &features, &oracle)?;
    dir.finalize()
}

pub fn eval(p: Prepared, checkpoint: Option<PathBuf>) -> Result<(), CliError> {
    let path = match checkpoint {
        Some(c) => c,
        None => run_dir::latest_checkpoint(&p.config.run_dir().join(run_dir::CHECKPOINTS))?
            .ok_or_else(|| CliError::Usage(format!("no checkpoint under {}", p.config.run_dir().display())))?,
    };
    let state = decode(&read_input(&path)?)?;
    let dir = p.open("eval")?;
    let extractor = extractor(&p, &dir)?;
    let oracle = oracle(&p, &dir)?;
    let features = extractor.extract(p.dataset.images())?;
    write_report(&p, &dir, &state, &features, &oracle)?;
    dir.finalize()
}

pub fn ablate(p: Prepared) -> Result<(), CliError> {
    let dir = p.open("ablate")?;
    let extractor = extractor(&p, &dir)?;
    let oracle = oracle(&p, &dir)?;
    let features = extractor.extract(p.dataset.images())?;
    let seed = eval_seed(&p.config.train);
    let samples = p.config.eval.snapshot_samples;
    let report = run_ablation(&p.config.train, &p.dataset.images_only(), &features, || {
        let e: Box<dyn Evaluator> = Box::new(GanEvaluator::new(&oracle, &p.dataset, &features, samples, seed)?);
        Ok(e)
    })?;
    for row in &report.rows {
        emit_curves(&row.history, &dir.path(&format!("curves-{}.csv", row.prototype.name())))?;
    }
    let mut text = report.to_table();
    if let Some(r) = report.reference_frechet {
        text += &format!("reference frechet {r:.4}\n");
    }
    for row in report.rows.iter().filter(|r| r.error.is_some()) {
        text += &format!(
            "{} failed: {}\n",
            row.prototype.name(),
            row.error.as_deref().unwrap_or("")
        );
    }
    out(&text);
    write_text(&dir.path(run_dir::REPORT), &text)?;
    dir.finalize()
}

pub fn sweep(p: Prepared) -> Result<(), CliError> {
    let dir = p.open("sweep")?;
    let oracle = oracle(&p, &dir)?;
    let cfg = SweepConfig {
        extractor: p.config.extractor.config(),
        train: p.config.train.clone(),
        noise_seed: p.config.sweep.noise_seed,
        eval_samples: p.config.eval.samples,
    };
    let points = robustness_sweep(&p.config.sweep.levels, &p.dataset, &oracle, &cfg)?;
    let path = dir.path("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(ucgan::Error::from)?;
    w.write_record(["noise", "accuracy", "extractor_accuracy", "error"])
        .map_err(ucgan::Error::from)?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut text = format!("{:<6} {:>9}\n", "noise", "accuracy");
    for pt in &points {
        w.write_record([
            pt.noise.to_string(),
            cell(pt.accuracy),
            cell(pt.extractor_accuracy),
            pt.error.clone().unwrap_or_default(),
        ])
        .map_err(ucgan::Error::from)?;
        let acc = pt
            .accuracy
            .map_or("failed".to_string(), |a| format!("{:.1}%", 100.0 * a));
        text += &format!("{:<6} {acc:>9}\n", pt.noise);
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    out(&text);
    write_text(&dir.path(run_dir::REPORT), &text)?;
    dir.finalize()
}

/// Embedding of the extractor codes; with a checkpoint, each point is also
/// flagged by whether conditioning on it produced its own class.
pub fn export_embedding_cmd(p: Prepared, checkpoint: Option<PathBuf>) -> Result<(), CliError> {
    let state = checkpoint
        .map(|c| read_input(&c).and_then(|b| Ok(decode(&b)?)))
        .transpose()?;
    let dir = p.open("export-embedding")?;
    let extractor = extractor(&p, &dir)?;
    let features = extractor.extract(p.dataset.images())?;
    let labels = p.dataset.labels();
    let embedding = match state {
        None => export_embedding(&features, Some(labels), None)?,
        Some(state) => {
            let oracle = oracle(&p, &dir)?;
            let n = p.dataset.len();
            let outcome = conditional_outcome(
                &state.generator,
                &features,
                &oracle,
                &p.dataset,
                n,
                eval_seed(&state.config),
            )?;
            let mut flags = vec![false; n];
            for (&s, &ok) in outcome.sources.iter().zip(&outcome.success) {
                flags[s] = ok;
            }
            let report = border_effect_report(&features, labels, &flags)?;
            let s = &report.summary;
            let text = format!(
                "success_margin={}\nfailure_margin={}\ndegenerate={}\n",
                s.success_margin.map_or(String::new(), |v| v.to_string()),
                s.failure_margin.map_or(String::new(), |v| v.to_string()),
                s.degenerate
            );
            out(&text);
            write_text(&dir.path("border.txt"), &text)?;
            report.embedding
        }
    };
    embedding.save(&dir.path(run_dir::EMBEDDING))?;
    dir.finalize()
}
