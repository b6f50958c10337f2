use ndarray::Array2;
use omnet_core::agent::{combine_td_target, Agent, SacConfig};
use omnet_core::bits::BitMask;
use omnet_core::diagnostics::{normalized_score, VisitationGrid};
use omnet_core::env::Environment;
use omnet_core::mask::{apply_mask, masked_backward_batch, masked_forward_batch, sample_masks, MaskSet};
use omnet_core::maze::{MazeConfig, MazeEnv, Segment};
use omnet_core::nn::{init_params, Activation, AdamConfig, AdamState, LayerSpec};
use omnet_core::strategy::ModeSpec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn activation() -> impl Strategy<Value = Activation> {
    prop_oneof![Just(Activation::Relu), Just(Activation::Tanh), Just(Activation::Identity)]
}

/// Up to three layers of at most 16 units.
fn net_specs() -> impl Strategy<Value = Vec<LayerSpec>> {
    (1usize..=6, prop::collection::vec((1usize..=16, activation(), any::<bool>()), 1..=3)).prop_map(|(din, layers)| {
        let mut prev = din;
        layers
            .into_iter()
            .map(|(out, act, ln)| {
                let s = LayerSpec::new(prev, out, act, ln);
                prev = out;
                s
            })
            .collect()
    })
}

fn inputs(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-2.0..2.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masked_forward_matches_materialized(specs in net_specs(), sparsity in 0.0f64..0.95, seed in any::<u64>()) {
        let params = init_params(&specs, seed).unwrap();
        let masks = sample_masks(params.layout(), 2, sparsity, seed ^ 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = inputs(&mut rng, 3, specs[0].input_dim);
        for m in masks.masks() {
            let (a, _) = masked_forward_batch(&params, m, x.view()).unwrap();
            let (b, _) = apply_mask(&params, m).unwrap().forward_batch(x.view()).unwrap();
            let bits = |v: &Array2<f64>| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a), bits(&b));
        }
    }

    #[test]
    fn masked_gradient_vanishes_off_mask(specs in net_specs(), seed in any::<u64>()) {
        let params = init_params(&specs, seed).unwrap();
        let masks = sample_masks(params.layout(), 1, 0.5, seed).unwrap();
        let m = masks.mask(0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = inputs(&mut rng, 2, specs[0].input_dim);
        let (out, trace) = masked_forward_batch(&params, m, x.view()).unwrap();
        let g = out.mapv(|_| rng.gen_range(-1.0..1.0));
        let bp = masked_backward_batch(&params, m, &trace, g.view()).unwrap();
        for (j, v) in bp.params.iter().enumerate() {
            if !m.get(j) {
                prop_assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn masked_adam_isolates_inactive_indices(n in 1usize..200, seed in any::<u64>(), steps in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = BitMask::from_bools(&(0..n).map(|_| rng.gen_bool(0.5)).collect::<Vec<_>>());
        let mut theta: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut adam = AdamState::new(n, AdamConfig::default());
        for j in 0..n {
            adam.m[j] = rng.gen_range(-0.1..0.1);
            adam.v[j] = rng.gen_range(0.0..0.1);
        }
        let before = (theta.clone(), adam.m.clone(), adam.v.clone());
        for _ in 0..steps {
            let grad: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let touched = adam.step(&mut theta, &grad, Some(&mask)).unwrap();
            prop_assert_eq!(touched, mask.count_ones());
        }
        for j in (0..n).filter(|&j| !mask.get(j)) {
            prop_assert_eq!(theta[j].to_bits(), before.0[j].to_bits());
            prop_assert_eq!(adam.m[j].to_bits(), before.1[j].to_bits());
            prop_assert_eq!(adam.v[j].to_bits(), before.2[j].to_bits());
        }
        prop_assert_eq!(adam.t, steps as u64);
    }

    #[test]
    fn layer_norm_outputs_are_standardized(width in 2usize..16, seed in any::<u64>()) {
        let spec = [LayerSpec::new(3, width, Activation::Identity, true)];
        let params = init_params(&spec, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = inputs(&mut rng, 4, 3);
        let (_, trace) = params.forward_batch(x.view()).unwrap();
        let z = trace.normalized(0).unwrap();
        for row in z.rows() {
            let mean = row.sum() / width as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / width as f64;
            prop_assert!(mean.abs() < 1e-9);
            // exactly zero for a degenerate row, unit variance otherwise
            prop_assert!(var.abs() < 1e-9 || (var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn mask_set_round_trips(count in 1usize..6, len_seed in any::<u64>(), sparsity in 0.0f64..0.99) {
        let spec = [LayerSpec::new(1 + (len_seed % 7) as usize, 1 + (len_seed % 13) as usize, Activation::Relu, len_seed % 2 == 0)];
        let params = init_params(&spec, len_seed).unwrap();
        let set = sample_masks(params.layout(), count, sparsity, len_seed).unwrap();
        let back = MaskSet::from_bytes(&set.to_bytes()).unwrap();
        prop_assert_eq!(&back, &set);
        let bytes = set.to_bytes();
        prop_assert!(MaskSet::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn mask_sets_are_prefix_stable(seed in any::<u64>(), sparsity in 0.0f64..0.9) {
        let spec = [LayerSpec::new(4, 9, Activation::Relu, true), LayerSpec::new(9, 2, Activation::Identity, false)];
        let params = init_params(&spec, 0).unwrap();
        let two = sample_masks(params.layout(), 2, sparsity, seed).unwrap();
        let five = sample_masks(params.layout(), 5, sparsity, seed).unwrap();
        prop_assert_eq!(two.masks(), &five.masks()[..2]);
    }

    #[test]
    fn td_target_is_below_every_member(
        estimates in prop::collection::vec(-50.0f64..50.0, 1..6),
        reward in -5.0f64..5.0,
        done in any::<bool>(),
        gamma in 0.5f64..0.999,
    ) {
        let y = combine_td_target(reward, done, gamma, &estimates, 0.0, 0.0);
        for &q in &estimates {
            prop_assert!(y <= combine_td_target(reward, done, gamma, &[q], 0.0, 0.0));
        }
    }

    #[test]
    fn normalized_score_is_scale_invariant(
        returns in prop::collection::vec(0.0f64..200.0, 1..8),
        best in 1.0f64..200.0,
        c in 0.01f64..100.0,
    ) {
        let a = normalized_score(&returns, best).unwrap();
        let scaled: Vec<f64> = returns.iter().map(|r| r * c).collect();
        let b = normalized_score(&scaled, best * c).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn grid_total_counts_recorded_positions(points in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 0..300)) {
        let mut grid = VisitationGrid::default();
        for &(x, y) in &points {
            let (i, j) = grid.record(x, y).unwrap();
            prop_assert!(i < 30 && j < 30);
        }
        prop_assert_eq!(grid.total(), points.len() as u64);
        prop_assert!(grid.covered() <= points.len());
    }
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Independent proper-or-touching segment intersection test.
fn crosses(p: [f64; 2], q: [f64; 2], s: &Segment) -> bool {
    let (a, b) = (s.a, s.b);
    let d1 = orient(a, b, p);
    let d2 = orient(a, b, q);
    let d3 = orient(p, q, a);
    let d4 = orient(p, q, b);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn maze_never_crosses_walls(seed in any::<u64>(), actions in prop::collection::vec((-0.5f64..0.5, -0.5f64..0.5), 1..60)) {
        let cfg = MazeConfig::default();
        let walls = cfg.walls.clone();
        let mut env = MazeEnv::new(cfg, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        env.reset(&mut rng);
        for (ax, ay) in actions {
            let before = env.true_state();
            let r = env.step(&[ax, ay]).unwrap();
            let after = env.true_state();
            prop_assert!((0.0..=1.0).contains(&after[0]) && (0.0..=1.0).contains(&after[1]));
            prop_assert!((after[0] - before[0]).abs() <= 0.2 + 1e-12);
            prop_assert!((after[1] - before[1]).abs() <= 0.2 + 1e-12);
            for w in &walls {
                prop_assert!(!crosses([before[0], before[1]], [after[0], after[1]], w));
            }
            if r.finished() {
                break;
            }
        }
    }
}

#[test]
fn agents_with_equal_seeds_act_identically() {
    let sac = SacConfig {
        batch_size: 8,
        critic_hidden: vec![8],
        actor_hidden: vec![8],
        actor: ModeSpec::omnet(3, 0.5),
        ..SacConfig::default()
    };
    let mut a = Agent::new(sac.clone(), 2, 2, 0.2, 11).unwrap();
    let mut b = Agent::new(sac, 2, 2, 0.2, 11).unwrap();
    for i in 0..3 {
        let obs = [0.1 * i as f64, 0.5];
        assert_eq!(a.act_subnet(&obs, Some(i), false).unwrap(), b.act_subnet(&obs, Some(i), false).unwrap());
    }
}
