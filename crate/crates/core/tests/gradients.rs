use powerline_core::losses::gradcheck::{check_composite, near_tie_cells};
use powerline_core::losses::{composite_loss, composite_loss_terms, ldat, malis_loss};
use powerline_core::{DistanceMask, Grid, LossConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pred_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> DistanceMask {
    DistanceMask::new(
        Grid::from_fn(w, h, |_, _| rng.random_range(0.01..0.99)),
        128,
    )
    .unwrap()
}

fn gt_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, zero_p: f64) -> DistanceMask {
    let g = Grid::from_fn(w, h, |_, _| {
        if rng.random::<f64>() < zero_p {
            0.0
        } else {
            rng.random_range(1..=128) as f64 / 128.0
        }
    });
    DistanceMask::new(g, 128).unwrap()
}

#[test]
fn fd_agrees_across_flag_combinations_and_windows() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..24 {
        let (w, h) = (rng.random_range(3..12), rng.random_range(3..12));
        let cfg = LossConfig {
            use_lif_weights: case % 2 == 0,
            use_malis: case % 3 != 0,
            malis_window: [3, 4, 16][case % 3],
            lambda: rng.random_range(0.0..1.0),
            ..LossConfig::default()
        };
        let (pc, pp) = (pred_mask(&mut rng, w, h), pred_mask(&mut rng, w, h));
        let (gc, gp) = (gt_mask(&mut rng, w, h, 0.3), gt_mask(&mut rng, w, h, 0.2));
        let rep = check_composite(&pc, &pp, &gc, &gp, &cfg, 1e-4, None).unwrap();
        assert!(rep.checked > 0);
        assert!(rep.max_rel_error < 1e-3, "case {case}: {rep:?}");
    }
}

#[test]
fn terms_add_up() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let cfg = LossConfig::default();
    for _ in 0..20 {
        let (pc, pp) = (pred_mask(&mut rng, 9, 7), pred_mask(&mut rng, 9, 7));
        let (gc, gp) = (gt_mask(&mut rng, 9, 7, 0.3), gt_mask(&mut rng, 9, 7, 0.3));
        let (v, t) = composite_loss_terms(&pc, &pp, &gc, &gp, &cfg).unwrap();
        let expect = ldat(&pc, &gc, &cfg).unwrap().scalar
            + ldat(&pp, &gp, &cfg).unwrap().scalar
            + cfg.lambda * malis_loss(&pc, &gc, &cfg).unwrap().scalar;
        assert!((v.scalar - expect).abs() <= 1e-12 * expect.abs());
        assert!((t.total - v.scalar).abs() <= 1e-12 * expect.abs());
    }
}

#[test]
fn zero_lambda_equals_malis_off() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (pc, pp) = (pred_mask(&mut rng, 8, 8), pred_mask(&mut rng, 8, 8));
    let (gc, gp) = (gt_mask(&mut rng, 8, 8, 0.3), gt_mask(&mut rng, 8, 8, 0.3));
    let a = composite_loss(
        &pc,
        &pp,
        &gc,
        &gp,
        &LossConfig {
            lambda: 0.0,
            ..LossConfig::default()
        },
    )
    .unwrap();
    let b = composite_loss(
        &pc,
        &pp,
        &gc,
        &gp,
        &LossConfig {
            use_malis: false,
            ..LossConfig::default()
        },
    )
    .unwrap();
    assert_eq!(a.scalar, b.scalar);
    assert_eq!(a.grad_cables, b.grad_cables);
}

#[test]
fn pred_equal_gt_has_zero_ldat_and_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let g = gt_mask(&mut rng, 10, 10, 0.4);
    let cfg = LossConfig::default();
    let t = ldat(&g, &g, &cfg).unwrap();
    assert_eq!(t.scalar, 0.0);
    assert!(t.grad.as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn malis_gradient_sums_to_per_pair_derivative() {
    // Shifting every prediction by the same small amount moves every affinity
    // by that amount, so the directional derivative is the gradient sum.
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let cfg = LossConfig::default();
    for _ in 0..20 {
        let p = pred_mask(&mut rng, 6, 6);
        let g = gt_mask(&mut rng, 6, 6, 0.25);
        if near_tie_cells(p.values(), cfg.malis_window, 1e-3)
            .as_slice()
            .iter()
            .any(|&t| t)
        {
            continue;
        }
        let t = malis_loss(&p, &g, &cfg).unwrap();
        let h = 1e-6;
        let shift = |d: f64| {
            let v = p.values().map(|x| x + d);
            malis_loss(&DistanceMask::new(v, 128).unwrap(), &g, &cfg)
                .unwrap()
                .scalar
        };
        let numeric = (shift(h) - shift(-h)) / (2.0 * h);
        let analytic: f64 = t.grad.as_slice().iter().sum();
        assert!((numeric - analytic).abs() < 1e-6 * analytic.abs().max(1.0));
    }
}
