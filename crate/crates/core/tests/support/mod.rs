//! Shared fixtures for the integration and acceptance suites.
#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ucgan::gan::{
    loss_adv, loss_diff, loss_discriminator, loss_generator, loss_minimax, loss_same, Discriminator, DiscriminatorKind,
    DiscriminatorSpec, Generator, GeneratorSpec, LossTerms, LossWeights,
};
use ucgan::numerics::gradcheck::{check_input, check_params, GradCheckConfig, GradCheckReport};
use ucgan::numerics::spectral::{matrix_dims, power_iteration};
use ucgan::numerics::{Graph, ParamStore, Tensor, Var};
use ucgan::Result;

pub mod oracle;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// One operation under test: inputs plus the recorded computation.
pub struct OpCase {
    pub name: String,
    pub inputs: Vec<Tensor>,
    pub build: Build,
}

fn case(name: &str, inputs: Vec<Tensor>, build: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static) -> OpCase {
    OpCase {
        name: name.to_string(),
        inputs,
        build: Box::new(build),
    }
}

/// Reduces an arbitrary output to a scalar with fixed random weights, so every
/// output coordinate receives a distinct upstream gradient.
fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let shape = g.value(out).shape().to_vec();
    let w = uniform(&mut rng(seed), &shape, -1.0, 1.0);
    let wv = g.input(w);
    let p = g.mul(out, wv)?;
    g.sum(p)
}

pub fn check_op(case: &OpCase, seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = (case.build)(&mut g, &vars)?;
    let loss = weighted_sum(&mut g, out, seed)?;
    let grads = g.backward(loss)?;
    let mut report = GradCheckReport::default();
    for (k, input) in case.inputs.iter().enumerate() {
        let analytic = grads
            .wrt(vars[k])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape().to_vec()));
        let eval = |probe: &Tensor| -> Result<f32> {
            let mut g = Graph::new();
            let vs: Vec<Var> = case
                .inputs
                .iter()
                .enumerate()
                .map(|(j, t)| g.input(if j == k { probe.clone() } else { t.clone() }))
                .collect();
            let out = (case.build)(&mut g, &vs)?;
            let l = weighted_sum(&mut g, out, seed)?;
            g.value(l).item()
        };
        let label = format!("{}#{k}", case.name);
        report.merge(check_input(
            &label,
            input,
            &analytic,
            eval,
            cfg,
            &mut rng(seed ^ k as u64),
        )?);
    }
    Ok(report)
}

/// Randomised instances of every differentiable layer and elementwise op.
pub fn layer_cases(seed: u64) -> Vec<OpCase> {
    let mut r = rng(seed);
    let b = r.random_range(1..=3usize);
    let c = r.random_range(1..=3usize);
    let o = r.random_range(1..=3usize);
    let h = r.random_range(3..=5usize);
    let w = r.random_range(3..=5usize);
    let inp = r.random_range(2..=5usize);
    let out = r.random_range(1..=4usize);
    let stride = r.random_range(1..=2usize);
    let pad = r.random_range(0..=1usize);
    let k = if r.random_bool(0.5) { 3 } else { 2 };
    let classes = r.random_range(2..=4usize);
    let labels: Vec<usize> = (0..b).map(|_| r.random_range(0..classes)).collect();
    let pool = 2usize;
    let (ph, pw) = (2 * r.random_range(1..=2usize), 2 * r.random_range(1..=2usize));

    let mut u = |shape: &[usize]| uniform(&mut r, shape, -1.0, 1.0);
    let affine_x = u(&[b, inp]);
    let affine_w = u(&[out, inp]);
    let affine_b = u(&[out]);
    let conv_x = u(&[b, c, h, w]);
    let conv_w = u(&[o, c, k, k]);
    let conv_b = u(&[o]);
    let act = u(&[b, c, h, w]);
    let act2 = u(&[b, c, h, w]);
    let act3 = u(&[b, o, h, w]);
    let logits = u(&[b, classes]);
    let pool_x = u(&[b, c, ph, pw]);
    let sn_w = u(&[out + 1, inp]);
    let mut pos = uniform(&mut rng(seed ^ 0x51), &[b, inp], 0.05, 0.95);
    pos.data_mut().iter_mut().for_each(|v| *v = v.max(0.05));

    vec![
        case("affine", vec![affine_x, affine_w, affine_b], |g, v| {
            g.affine(v[0], v[1], Some(v[2]))
        }),
        case("conv2d", vec![conv_x, conv_w, conv_b], move |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), stride, pad)
        }),
        case("leaky_relu", vec![act.clone()], |g, v| g.leaky_relu(v[0], 0.2)),
        case("sigmoid", vec![act.clone()], |g, v| g.sigmoid(v[0])),
        case("softmax", vec![logits.clone()], |g, v| g.softmax(v[0])),
        case("flatten", vec![act.clone()], |g, v| g.flatten(v[0])),
        case("reshape", vec![act.clone()], move |g, v| {
            g.reshape(v[0], &[b, c * h * w])
        }),
        case("concat_channels", vec![act2.clone(), act3], |g, v| {
            g.concat_channels(v[0], v[1])
        }),
        case("upsample", vec![act.clone()], |g, v| g.upsample(v[0], 2)),
        case("avg_pool", vec![pool_x], move |g, v| g.avg_pool(v[0], pool)),
        case("spectral_norm", vec![sn_w], |g, v| {
            let w = g.value(v[0]).clone();
            let (rows, cols) = matrix_dims(&w)?;
            let u0 = vec![1.0; rows];
            let est = power_iteration(w.data(), rows, cols, &u0, 200)?;
            g.spectral_norm(v[0], est.u, est.v, est.sigma)
        }),
        case("mul_add", vec![act.clone(), act2], |g, v| {
            let m = g.mul(v[0], v[1])?;
            let s = g.scale_shift(m, 1.5, -0.25)?;
            g.add(s, v[0])
        }),
        case("mean_sum", vec![act], |g, v| {
            let m = g.mean(v[0])?;
            let s = g.sum(v[0])?;
            g.mul(m, s)
        }),
        case("log_clamped", vec![pos], |g, v| g.log_clamped(v[0], 1e-7, 1.0 - 1e-7)),
        case("softmax_cross_entropy", vec![logits], move |g, v| {
            g.softmax_cross_entropy(v[0], &labels)
        }),
    ]
}

/// Small coupled/single discriminators and a generator for loss checks.
pub struct LossFixture {
    pub coupled: Discriminator,
    pub single: Discriminator,
    pub generator: Generator,
    pub a: Tensor,
    pub b: Tensor,
    pub z: Tensor,
    pub f: Tensor,
}

pub const FIXTURE_IMAGE: [usize; 3] = [1, 4, 4];

pub fn loss_fixture(seed: u64) -> LossFixture {
    let mut r = rng(seed);
    let spec = DiscriminatorSpec {
        width: 3,
        ..DiscriminatorSpec::default()
    };
    let mut coupled = Discriminator::new(DiscriminatorKind::Coupled, &spec, &FIXTURE_IMAGE, &mut r).unwrap();
    let mut single = Discriminator::new(DiscriminatorKind::Single, &spec, &FIXTURE_IMAGE, &mut r).unwrap();
    coupled.advance_power_iteration(30).unwrap();
    single.advance_power_iteration(30).unwrap();
    let gspec = GeneratorSpec {
        noise_dim: 3,
        hidden: 6,
        channels: 2,
    };
    let generator = Generator::new(&gspec, 2, &FIXTURE_IMAGE, &mut r).unwrap();
    let bsz = r.random_range(2..=3usize);
    LossFixture {
        a: uniform(&mut r, &[bsz, 1, 4, 4], 0.0, 1.0),
        b: uniform(&mut r, &[bsz, 1, 4, 4], 0.0, 1.0),
        z: uniform(&mut r, &[bsz, 3], -1.0, 1.0),
        f: uniform(&mut r, &[bsz, 2], -1.0, 1.0),
        coupled,
        single,
        generator,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Adv,
    Same,
    Diff,
    Weighted,
    Generator,
    MinimaxDisc,
    MinimaxGen,
}

pub const LOSS_KINDS: [LossKind; 7] = [
    LossKind::Adv,
    LossKind::Same,
    LossKind::Diff,
    LossKind::Weighted,
    LossKind::Generator,
    LossKind::MinimaxDisc,
    LossKind::MinimaxGen,
];

fn with_params(d: &Discriminator, p: &ParamStore) -> Discriminator {
    Discriminator {
        params: p.clone(),
        ..d.clone()
    }
}

fn with_gen_params(gen: &Generator, p: &ParamStore) -> Generator {
    Generator {
        params: p.clone(),
        ..gen.clone()
    }
}

/// Records `kind` with discriminator/generator parameters trainable as appropriate.
#[allow(clippy::too_many_arguments)]
fn record(
    kind: LossKind,
    fx: &LossFixture,
    g: &mut Graph,
    d: &Discriminator,
    s: &Discriminator,
    gen: &Generator,
    av: Var,
    bv: Var,
) -> Result<Var> {
    let w = LossWeights {
        adv: 0.7,
        same: 1.3,
        diff: 0.4,
        ..LossWeights::default()
    };
    match kind {
        LossKind::Adv => loss_adv(g, d, av, bv, true),
        LossKind::Same => loss_same(g, d, av, bv, true),
        LossKind::Diff => loss_diff(g, d, av, bv, true),
        LossKind::Weighted => {
            let terms = LossTerms {
                adv: Some(loss_adv(g, d, av, bv, true)?),
                same: Some(loss_same(g, d, bv, av, true)?),
                diff: Some(loss_diff(g, d, av, av, true)?),
            };
            loss_discriminator(g, &w, &terms)
        }
        LossKind::Generator => {
            let fake = gen.forward(g, &fx.z, &fx.f, true)?;
            loss_generator(g, d, av, fake)
        }
        LossKind::MinimaxDisc => Ok(loss_minimax(g, s, av, bv, true)?.0),
        LossKind::MinimaxGen => {
            let fake = gen.forward(g, &fx.z, &fx.f, true)?;
            Ok(loss_minimax(g, s, av, fake, false)?.1)
        }
    }
}

/// Checks a loss against finite differences in the trainable parameters and both image inputs.
pub fn check_loss(kind: LossKind, seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let fx = loss_fixture(seed);
    let (d, s, gen) = (&fx.coupled, &fx.single, &fx.generator);
    let mut g = Graph::new();
    let av = g.variable(fx.a.clone());
    let bv = g.variable(fx.b.clone());
    let loss = record(kind, &fx, &mut g, d, s, gen, av, bv)?;
    let grads = g.backward(loss)?;
    let mut report = GradCheckReport::default();
    let generator_side = matches!(kind, LossKind::Generator | LossKind::MinimaxGen);

    let scalar = |d: &Discriminator, s: &Discriminator, gen: &Generator, a: &Tensor, b: &Tensor| -> Result<f32> {
        let mut g = Graph::new();
        let av = g.input(a.clone());
        let bv = g.input(b.clone());
        let l = record(kind, &fx, &mut g, d, s, gen, av, bv)?;
        g.value(l).item()
    };

    if generator_side {
        let analytic = grads.for_params(&gen.params);
        report.merge(check_params(
            &gen.params,
            &analytic,
            |p| scalar(d, s, &with_gen_params(gen, p), &fx.a, &fx.b),
            cfg,
            &mut rng(seed),
        )?);
    } else {
        let disc = if kind == LossKind::MinimaxDisc { s } else { d };
        let analytic = grads.for_params(&disc.params);
        report.merge(check_params(
            &disc.params,
            &analytic,
            |p| {
                if kind == LossKind::MinimaxDisc {
                    scalar(d, &with_params(s, p), gen, &fx.a, &fx.b)
                } else {
                    scalar(&with_params(d, p), s, gen, &fx.a, &fx.b)
                }
            },
            cfg,
            &mut rng(seed),
        )?);
    }
    let zeros = Tensor::zeros(fx.a.shape().to_vec());
    let ga = grads.wrt(av).cloned().unwrap_or_else(|| zeros.clone());
    report.merge(check_input(
        "a",
        &fx.a,
        &ga,
        |t| scalar(d, s, gen, t, &fx.b),
        cfg,
        &mut rng(seed + 1),
    )?);
    if kind != LossKind::Generator {
        let gb = grads.wrt(bv).cloned().unwrap_or(zeros);
        report.merge(check_input(
            "b",
            &fx.b,
            &gb,
            |t| scalar(d, s, gen, &fx.a, t),
            cfg,
            &mut rng(seed + 2),
        )?);
    }
    Ok(report)
}

/// Outcome of the randomised gradient suite.
pub struct SuiteSummary {
    pub cases: usize,
    pub coordinates: usize,
    pub failures: Vec<String>,
}

pub fn gradient_suite(layer_rounds: u64, loss_rounds: u64) -> SuiteSummary {
    let cfg = GradCheckConfig::default();
    let mut summary = SuiteSummary {
        cases: 0,
        coordinates: 0,
        failures: Vec::new(),
    };
    let mut absorb = |name: String, r: Result<GradCheckReport>| {
        summary.cases += 1;
        match r {
            Ok(rep) => {
                summary.coordinates += rep.checked;
                if !rep.passed() {
                    summary.failures.push(format!(
                        "{name}: {} failures, {} skipped of {}: {:?}",
                        rep.failures.len(),
                        rep.skipped_nonsmooth,
                        rep.checked,
                        rep.failures.first()
                    ));
                }
            }
            Err(e) => summary.failures.push(format!("{name}: {e}")),
        }
    };
    for round in 0..layer_rounds {
        for c in layer_cases(1000 + round) {
            let r = check_op(&c, round, &cfg);
            absorb(format!("{} (round {round})", c.name), r);
        }
    }
    for round in 0..loss_rounds {
        for kind in LOSS_KINDS {
            absorb(
                format!("{kind:?} (round {round})"),
                check_loss(kind, 2000 + round, &cfg),
            );
        }
    }
    summary
}
