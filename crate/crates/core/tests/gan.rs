mod support;

use support::{rng, uniform};
use ucgan::gan::*;
use ucgan::numerics::{Graph, Tensor};
use ucgan::Error;

const SHAPE: [usize; 3] = [1, 4, 4];
const LOG_HALF: f32 = -std::f32::consts::LN_2;

fn half_discriminator(kind: DiscriminatorKind) -> Discriminator {
    let spec = DiscriminatorSpec {
        width: 4,
        spectral_norm: false,
        zero_final: true,
    };
    Discriminator::new(kind, &spec, &SHAPE, &mut rng(1)).unwrap()
}

fn pair() -> (Tensor, Tensor) {
    let mut r = rng(2);
    (
        uniform(&mut r, &[3, 1, 4, 4], 0.0, 1.0),
        uniform(&mut r, &[3, 1, 4, 4], 0.0, 1.0),
    )
}

fn close(a: f32, b: f32) {
    assert!((a - b).abs() < 1e-6, "{a} vs {b}");
}

#[test]
fn zeroed_final_layer_outputs_one_half() {
    let (a, b) = pair();
    let d = half_discriminator(DiscriminatorKind::Coupled);
    assert!(d.discriminate(&a, Some(&b)).unwrap().iter().all(|&p| p == 0.5));
    let s = half_discriminator(DiscriminatorKind::Single);
    assert!(s.discriminate(&a, None).unwrap().iter().all(|&p| p == 0.5));
}

#[test]
fn zeroed_final_layer_conflicts_with_spectral_norm() {
    let spec = DiscriminatorSpec {
        zero_final: true,
        spectral_norm: true,
        ..DiscriminatorSpec::default()
    };
    assert!(Discriminator::new(DiscriminatorKind::Coupled, &spec, &SHAPE, &mut rng(0)).is_err());
}

#[test]
fn every_term_is_log_half_at_the_uninformative_point() {
    let (a, b) = pair();
    let d = half_discriminator(DiscriminatorKind::Coupled);
    let mut g = Graph::new();
    let (av, bv) = (g.input(a.clone()), g.input(b.clone()));
    let terms = LossTerms {
        adv: Some(loss_adv(&mut g, &d, av, bv, true).unwrap()),
        same: Some(loss_same(&mut g, &d, av, bv, true).unwrap()),
        diff: Some(loss_diff(&mut g, &d, av, bv, true).unwrap()),
    };
    for t in [terms.adv, terms.same, terms.diff] {
        close(g.value(t.unwrap()).item().unwrap(), LOG_HALF);
    }
    let total = loss_discriminator(&mut g, &LossWeights::default(), &terms).unwrap();
    close(g.value(total).item().unwrap(), 3.0 * LOG_HALF);
    assert!((g.value(total).item().unwrap() - (-2.0794)).abs() < 1e-4);
    let gen = loss_generator(&mut g, &d, av, bv).unwrap();
    close(g.value(gen).item().unwrap(), -LOG_HALF);

    let s = half_discriminator(DiscriminatorKind::Single);
    let (disc, gen) = loss_minimax(&mut g, &s, av, bv, true).unwrap();
    close(g.value(disc).item().unwrap(), 2.0 * LOG_HALF);
    close(g.value(gen).item().unwrap(), -LOG_HALF);
}

#[test]
fn prototype_a_weights_reduce_to_the_adversarial_term() {
    let terms = LossTerms {
        adv: Some(-0.4),
        same: Some(-1.1),
        diff: Some(-2.3),
    };
    let a = LossWeights {
        adv: 1.5,
        same: 0.0,
        diff: 0.0,
        ..LossWeights::default()
    };
    assert!((combine_terms(&a, &terms).unwrap() - 1.5 * -0.4).abs() < 1e-12);
    let none = LossWeights {
        use_adv: false,
        use_same: false,
        use_diff: false,
        ..LossWeights::default()
    };
    assert!(matches!(combine_terms(&none, &terms), Err(Error::InvalidArgument(_))));
    let zero = LossWeights {
        adv: 0.0,
        same: 0.0,
        diff: 0.0,
        ..LossWeights::default()
    };
    assert!(zero.validate().is_err());
}

#[test]
fn saturated_discriminator_still_gives_finite_losses() {
    let spec = DiscriminatorSpec::default();
    let mut d = Discriminator::new(DiscriminatorKind::Coupled, &spec, &SHAPE, &mut rng(3)).unwrap();
    d.advance_power_iteration(20).unwrap();
    let mut r = rng(4);
    let floor = PROB_FLOOR.ln();
    for scale in [1.0, 1e3, 1e6] {
        let a = uniform(&mut r, &[5, 1, 4, 4], -scale, scale);
        let b = uniform(&mut r, &[5, 1, 4, 4], -scale, scale);
        assert!(d
            .discriminate(&a, Some(&b))
            .unwrap()
            .iter()
            .all(|p| (0.0..=1.0).contains(p)));
        let mut g = Graph::new();
        let (av, bv) = (g.input(a), g.input(b));
        for l in [
            loss_same(&mut g, &d, av, bv, true).unwrap(),
            loss_diff(&mut g, &d, av, bv, true).unwrap(),
            loss_generator(&mut g, &d, av, bv).unwrap(),
        ] {
            let v = g.value(l).item().unwrap();
            assert!(v.is_finite() && v.abs() <= -floor + 1e-3, "{v} at scale {scale}");
        }
    }
}

#[test]
fn pair_order_matters() {
    let (a, b) = pair();
    let mut d = Discriminator::new(
        DiscriminatorKind::Coupled,
        &DiscriminatorSpec::default(),
        &SHAPE,
        &mut rng(5),
    )
    .unwrap();
    d.advance_power_iteration(20).unwrap();
    assert_ne!(
        d.discriminate(&a, Some(&b)).unwrap(),
        d.discriminate(&b, Some(&a)).unwrap()
    );
}

#[test]
fn each_player_gets_no_gradient_from_the_others_loss() {
    let (a, _) = pair();
    let mut r = rng(6);
    let d = Discriminator::new(
        DiscriminatorKind::Coupled,
        &DiscriminatorSpec::default(),
        &SHAPE,
        &mut r,
    )
    .unwrap();
    let gen = Generator::new(
        &GeneratorSpec {
            noise_dim: 3,
            hidden: 8,
            channels: 2,
        },
        2,
        &SHAPE,
        &mut r,
    )
    .unwrap();
    let z = uniform(&mut r, &[3, 3], -1.0, 1.0);
    let f = uniform(&mut r, &[3, 2], -1.0, 1.0);

    let mut g = Graph::new();
    let anchor = g.input(a.clone());
    let fake = gen.forward(&mut g, &z, &f, true).unwrap();
    let l = loss_generator(&mut g, &d, anchor, fake).unwrap();
    let grads = g.backward(l).unwrap();
    assert!(grads
        .for_params(&d.params)
        .iter()
        .all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
    assert!(grads
        .for_params(&gen.params)
        .iter()
        .any(|(_, t)| t.data().iter().any(|&v| v != 0.0)));

    let mut g = Graph::new();
    let anchor = g.input(a);
    let fake = g.input(gen.generate(&z, &f).unwrap());
    let l = loss_adv(&mut g, &d, anchor, fake, true).unwrap();
    let grads = g.backward(l).unwrap();
    assert!(grads
        .for_params(&gen.params)
        .iter()
        .all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
    assert!(grads
        .for_params(&d.params)
        .iter()
        .any(|(_, t)| t.data().iter().any(|&v| v != 0.0)));
}

#[test]
fn generator_outputs_images_in_range_and_is_deterministic() {
    let mut r = rng(8);
    let gen = Generator::new(&GeneratorSpec::default(), 5, &[3, 8, 6], &mut r).unwrap();
    let z = uniform(&mut r, &[4, 16], -2.0, 2.0);
    let f = uniform(&mut r, &[4, 5], -2.0, 2.0);
    let x = gen.generate(&z, &f).unwrap();
    assert_eq!(x.shape(), &[4, 3, 8, 6]);
    assert!(x.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert_eq!(x, gen.generate(&z, &f).unwrap());
    let rep = gen
        .generate(&z.select_rows(&[1, 1]).unwrap(), &f.select_rows(&[1, 1]).unwrap())
        .unwrap();
    assert_eq!(rep.row(0), rep.row(1));
    assert!(gen.generate(&z, &f.select_rows(&[0, 1, 2]).unwrap()).is_err());
}

#[test]
fn unconditional_generator_ignores_codes() {
    let mut r = rng(9);
    let gen = Generator::unconditional(&GeneratorSpec::default(), 5, &[1, 4, 4], &mut r).unwrap();
    let z = uniform(&mut r, &[2, 16], -1.0, 1.0);
    let f1 = uniform(&mut r, &[2, 5], -1.0, 1.0);
    let f2 = uniform(&mut r, &[2, 5], -1.0, 1.0);
    assert_eq!(gen.generate(&z, &f1).unwrap(), gen.generate(&z, &f2).unwrap());
    assert!(gen.generate(&z, &Tensor::zeros([2, 4])).is_err());
}
