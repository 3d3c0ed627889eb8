use diffcore::{Graph, Rng, Tensor, Var};
use ivus_core::losses::{combined_g_loss, d_loss, g_adv_loss, l1_loss, l2_loss, rec_loss, LossWeights, RecMode};

const LN2: f64 = std::f64::consts::LN_2;

fn grid(g: &mut Graph<f64>, values: Vec<f64>) -> Var {
    let n = values.len();
    g.constant(Tensor::new(vec![1, 1, 1, n], values).unwrap())
}

fn scalar(g: &Graph<f64>, v: Var) -> f64 {
    g.value(v).item()
}

#[test]
fn discriminator_loss_at_chance_is_two_ln2() {
    let mut g = Graph::new();
    let r = grid(&mut g, vec![0.5; 16]);
    let f = grid(&mut g, vec![0.5; 16]);
    let l = d_loss(&mut g, r, f).unwrap();
    assert!((scalar(&g, l) - 2.0 * LN2).abs() < 1e-12);
}

#[test]
fn discriminator_loss_vanishes_at_optimum() {
    let mut g = Graph::new();
    let r = grid(&mut g, vec![1.0; 4]);
    let f = grid(&mut g, vec![0.0; 4]);
    let l = d_loss(&mut g, r, f).unwrap();
    assert!(scalar(&g, l).abs() < 1e-12);
}

#[test]
fn discriminator_loss_swap_symmetry() {
    let mut rng = Rng::new(1);
    for _ in 0..20 {
        let real: Vec<f64> = (0..6).map(|_| rng.uniform_in(0.01, 0.99)).collect();
        let fake: Vec<f64> = (0..6).map(|_| rng.uniform_in(0.01, 0.99)).collect();
        let mut g = Graph::new();
        let (r, f) = (grid(&mut g, real.clone()), grid(&mut g, fake.clone()));
        let a = d_loss(&mut g, r, f).unwrap();
        let r2 = grid(&mut g, fake.iter().map(|p| 1.0 - p).collect());
        let f2 = grid(&mut g, real.iter().map(|p| 1.0 - p).collect());
        let b = d_loss(&mut g, r2, f2).unwrap();
        assert!((scalar(&g, a) - scalar(&g, b)).abs() < 1e-12);
    }
}

#[test]
fn generator_adversarial_loss() {
    let mut g = Graph::new();
    let f = grid(&mut g, vec![0.5; 9]);
    let l = g_adv_loss(&mut g, f).unwrap();
    assert!((scalar(&g, l) - LN2).abs() < 1e-12);
    let one = grid(&mut g, vec![1.0; 3]);
    let l = g_adv_loss(&mut g, one).unwrap();
    assert!(scalar(&g, l).abs() < 1e-12);
    // Clamp floor keeps a zero probability finite.
    let zero = grid(&mut g, vec![0.0; 3]);
    let l = g_adv_loss(&mut g, zero).unwrap();
    assert!(scalar(&g, l).is_finite() && scalar(&g, l) > 0.0);
}

#[test]
fn generator_adversarial_loss_decreases_in_each_cell() {
    let mut rng = Rng::new(2);
    for _ in 0..50 {
        let base: Vec<f64> = (0..5).map(|_| rng.uniform_in(0.01, 0.9)).collect();
        let cell = rng.below(5);
        let mut raised = base.clone();
        raised[cell] += rng.uniform_in(0.001, 0.09);
        let mut g = Graph::new();
        let (a, b) = (grid(&mut g, base), grid(&mut g, raised));
        let (la, lb) = (g_adv_loss(&mut g, a).unwrap(), g_adv_loss(&mut g, b).unwrap());
        assert!(scalar(&g, lb) < scalar(&g, la));
    }
}

#[test]
fn reconstruction_examples() {
    let mut g = Graph::new();
    let v = grid(&mut g, vec![0.0, 0.0]);
    let v_hat = grid(&mut g, vec![1.0, -1.0]);
    let (l1, l2) = (l1_loss(&mut g, v, v_hat).unwrap(), l2_loss(&mut g, v, v_hat).unwrap());
    assert_eq!((scalar(&g, l1), scalar(&g, l2)), (1.0, 1.0));
    let same = l1_loss(&mut g, v_hat, v_hat).unwrap();
    assert_eq!(scalar(&g, same), 0.0);
    let other = grid(&mut g, vec![0.0; 3]);
    assert!(l1_loss(&mut g, v, other).is_err());
    assert!(l2_loss(&mut g, v, other).is_err());
}

#[test]
fn l2_versus_l1_by_residual_size() {
    let mut rng = Rng::new(3);
    for small in [true, false] {
        for _ in 0..50 {
            let res: Vec<f64> = (0..8)
                .map(|_| {
                    let m = if small { rng.uniform_in(0.0, 1.0) } else { rng.uniform_in(1.0, 3.0) };
                    if rng.bernoulli(0.5) { m } else { -m }
                })
                .collect();
            let mut g = Graph::new();
            let v = grid(&mut g, vec![0.0; 8]);
            let v_hat = grid(&mut g, res);
            let l1 = l1_loss(&mut g, v, v_hat).unwrap();
            let l2 = l2_loss(&mut g, v, v_hat).unwrap();
            let (l1, l2) = (scalar(&g, l1), scalar(&g, l2));
            if small {
                assert!(l2 <= l1);
            } else {
                assert!(l2 >= l1);
            }
        }
    }
}

#[test]
fn mixed_reconstruction_splits_by_share() {
    let mut g = Graph::new();
    let v = grid(&mut g, vec![0.0, 0.0]);
    let v_hat = grid(&mut g, vec![2.0, 0.0]);
    let w = LossWeights {
        l1_share: 0.25,
        ..LossWeights::new(1.0, 1.0, RecMode::L1PlusL2)
    };
    let r = rec_loss(&mut g, v, v_hat, &w).unwrap();
    // L1 = 1, L2 = 2.
    assert!((scalar(&g, r) - (0.25 * 1.0 + 0.75 * 2.0)).abs() < 1e-12);
}

#[test]
fn combined_loss_special_cases() {
    let mut g = Graph::new();
    let v = grid(&mut g, vec![0.3, -0.7, 1.0]);
    let s = grid(&mut g, vec![0.5; 4]);
    let rec_only = combined_g_loss(&mut g, None, v, v, &[], &LossWeights::new(0.0, 100.0, RecMode::L1)).unwrap();
    assert_eq!(scalar(&g, rec_only.total), 0.0);
    assert!(rec_only.adv.is_none());
    let both = combined_g_loss(&mut g, Some(s), v, v, &[], &LossWeights::default()).unwrap();
    assert!((scalar(&g, both.total) - LN2).abs() < 1e-12);
    assert!(combined_g_loss(&mut g, Some(s), v, v, &[], &LossWeights::new(0.0, 0.0, RecMode::L1)).is_err());
    assert!(combined_g_loss(&mut g, None, v, v, &[], &LossWeights::default()).is_err());
}

#[test]
fn combined_loss_reduces_exactly_to_its_terms() {
    let mut rng = Rng::new(4);
    let mut g = Graph::new();
    let s = grid(&mut g, (0..4).map(|_| rng.uniform_in(0.1, 0.9)).collect());
    let v = grid(&mut g, (0..6).map(|_| rng.uniform_in(-1.0, 1.0)).collect());
    let v_hat = grid(&mut g, (0..6).map(|_| rng.uniform_in(-1.0, 1.0)).collect());
    let adv_only = combined_g_loss(&mut g, Some(s), v, v_hat, &[], &LossWeights::new(1.0, 0.0, RecMode::L1)).unwrap();
    let adv = g_adv_loss(&mut g, s).unwrap();
    assert_eq!(scalar(&g, adv_only.total), scalar(&g, adv));
    assert!(adv_only.rec.is_none());
    for mode in [RecMode::L1, RecMode::L2] {
        let w = LossWeights::new(0.0, 7.0, mode);
        let c = combined_g_loss(&mut g, None, v, v_hat, &[], &w).unwrap();
        let r = rec_loss(&mut g, v, v_hat, &w).unwrap();
        assert_eq!(scalar(&g, c.total), 7.0 * scalar(&g, r));
    }
}

#[test]
fn intermediate_supervision_is_the_mean() {
    let mut g = Graph::new();
    let v = grid(&mut g, vec![0.0; 2]);
    let p1 = grid(&mut g, vec![1.0, 1.0]);
    let p2 = grid(&mut g, vec![0.5, 0.5]);
    let w = LossWeights::new(0.0, 10.0, RecMode::L1);
    let c = combined_g_loss(&mut g, None, v, p2, &[p1, p2], &w).unwrap();
    assert!((scalar(&g, c.total) - 10.0 * 0.75).abs() < 1e-12);
}

#[test]
fn scaling_both_weights_scales_loss_and_gradient() {
    let mut rng = Rng::new(5);
    let s0: Vec<f64> = (0..4).map(|_| rng.uniform_in(0.1, 0.9)).collect();
    let h0: Vec<f64> = (0..6).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let v0: Vec<f64> = (0..6).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let run = |k: f64| {
        let mut g = Graph::<f64>::new();
        let s = g.param(Tensor::new(vec![1, 1, 1, 4], s0.clone()).unwrap());
        let h = g.param(Tensor::new(vec![1, 1, 1, 6], h0.clone()).unwrap());
        let v = g.constant(Tensor::new(vec![1, 1, 1, 6], v0.clone()).unwrap());
        let w = LossWeights::new(k * 1.0, k * 3.0, RecMode::L2);
        let l = combined_g_loss(&mut g, Some(s), v, h, &[], &w).unwrap();
        g.backward(l.total).unwrap();
        let grad: Vec<f64> = [s, h].iter().flat_map(|&x| g.grad(x).unwrap().into_data()).collect();
        (g.value(l.total).item(), grad)
    };
    let (l1, g1) = run(1.0);
    let k = 4.0;
    let (lk, gk) = run(k);
    assert!((lk - k * l1).abs() < 1e-12 * lk.abs().max(1.0));
    for (a, b) in g1.iter().zip(&gk) {
        assert!((b - k * a).abs() < 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn weights_validation() {
    assert!(LossWeights::new(-1.0, 1.0, RecMode::L1).validate().is_err());
    assert!(LossWeights::new(1.0, f64::NAN, RecMode::L1).validate().is_err());
    assert!(LossWeights::default().validate().is_ok());
    assert_eq!(LossWeights::default().eta(), 100.0);
    for m in [RecMode::L1, RecMode::L2, RecMode::L1PlusL2] {
        assert_eq!(m.name().parse::<RecMode>().unwrap(), m);
    }
}
