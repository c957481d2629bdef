use proptest::prelude::*;

use steinrule::nn::softmax_cross_entropy;
use steinrule::risk::{js_plus_coefficient, paired_risks, risk_curve, risk_difference, Estimator};
use steinrule::stein::{shrink_factor, sigma2_global, stein_estimate, ShrinkageConfig};
use steinrule::tensor::{GroupKind, ParamGroup, ParamVector, Rng};
use steinrule::{OptimConfig, Optimizer, OptimizerKind, ShrinkScope};

fn vec_of(dim: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, dim)
}

fn groups(dim: usize) -> Vec<ParamGroup> {
    vec![
        ParamGroup::new("conv.weight", dim, GroupKind::ConvWeight),
        ParamGroup::new("fc.weight", dim + 1, GroupKind::DenseWeight),
        ParamGroup::new("fc.bias", 2, GroupKind::Bias),
    ]
}

fn noisy_grads(rng: &mut Rng, params: &[ParamVector]) -> Vec<ParamVector> {
    params
        .iter()
        .map(|p| {
            let noisy: Vec<f64> = p.iter().map(|x| x + 0.5 * rng.normal()).collect();
            ParamVector::new(noisy).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn equal_seeds_give_identical_streams(seed in any::<u64>(), idx in any::<u64>()) {
        let (mut a, mut b) = (Rng::new(seed), Rng::new(seed));
        for _ in 0..50 {
            prop_assert_eq!(a.next_u64(), b.next_u64());
            prop_assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
        prop_assert_eq!(Rng::derive_seed(seed, idx), Rng::derive_seed(seed, idx));
        let mut xs: Vec<u32> = (0..40).collect();
        let mut ys = xs.clone();
        Rng::new(seed).shuffle(&mut xs);
        Rng::new(seed).shuffle(&mut ys);
        prop_assert_eq!(xs, ys);
    }

    #[test]
    fn coefficient_is_never_negative(p in 3usize..1000, sigma2 in 0.0..100.0f64, d_n in 0.0..1e4f64,
                                     floor in prop::sample::select(vec![0.0, 0.1])) {
        let cfg = ShrinkageConfig { clip_floor: floor, ..ShrinkageConfig::default() };
        let r = shrink_factor(p, sigma2, d_n, &cfg).unwrap();
        prop_assert!(r.c_clipped >= 0.0);
        prop_assert!(r.c_clipped <= 1.0);
        prop_assert!(js_plus_coefficient(p, sigma2, d_n) >= 0.0);
    }

    #[test]
    fn variance_estimate_is_non_negative((m, v) in (1usize..50).prop_flat_map(|d| (vec_of(d, -3.0, 3.0), vec_of(d, 0.0, 4.0)))) {
        let s = sigma2_global(&ParamVector::new(m).unwrap(), &ParamVector::new(v).unwrap()).unwrap();
        prop_assert!(s >= 0.0);
    }

    #[test]
    fn shrunk_deviation_is_a_non_negative_multiple((g, m) in (3usize..40).prop_flat_map(|d| (vec_of(d, -5.0, 5.0), vec_of(d, -5.0, 5.0))),
                                                   c in 0.0..=1.0f64) {
        let (g, m) = (ParamVector::new(g).unwrap(), ParamVector::new(m).unwrap());
        let out = stein_estimate(&g, &m, c).unwrap();
        for ((o, gj), mj) in out.iter().zip(g.iter()).zip(m.iter()) {
            let full = gj - mj;
            prop_assert!(((o - mj) - c * full).abs() <= 1e-12 * (1.0 + full.abs()));
        }
    }

    #[test]
    fn sr_adam_without_scope_replays_adam(seed in any::<u64>(), dim in 3usize..20, tau in 0u64..5) {
        let gs = groups(dim);
        let mut rng = Rng::new(seed);
        let init: Vec<ParamVector> = gs.iter().map(|g| steinrule::tensor::gauss_vec(&mut rng, g.dim, 0.0, 1.0).unwrap()).collect();
        let sr_cfg = OptimConfig { scope: ShrinkScope::None, bias_correction: true, tau, ..OptimConfig::sr_adam() };
        let mut adam = Optimizer::new(OptimizerKind::Adam, OptimConfig::adam(), &gs).unwrap();
        let mut sr = Optimizer::new(OptimizerKind::SrAdam, sr_cfg, &gs).unwrap();
        let (mut pa, mut ps) = (init.clone(), init);
        for _ in 0..30 {
            let grads = noisy_grads(&mut rng, &pa);
            adam.step(&mut pa, &grads).unwrap();
            sr.step(&mut ps, &grads).unwrap();
            for (a, b) in pa.iter().zip(&ps) {
                prop_assert_eq!(a.max_abs_diff(b).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn exact_gradients_descend(kind in prop::sample::select(OptimizerKind::ALL.to_vec()),
                               theta in vec_of(8, 0.5, 5.0)) {
        let gs = vec![ParamGroup::new("conv.weight", theta.len(), GroupKind::ConvWeight)];
        let cfg = OptimConfig { alpha: 1e-3, ..kind.default_config() };
        let mut opt = Optimizer::new(kind, cfg, &gs).unwrap();
        let mut params = vec![ParamVector::new(theta).unwrap()];
        let mut j = 0.5 * steinrule::tensor::sq_norm(&params[0]);
        for _ in 0..40 {
            let grads = params.clone();
            opt.step(&mut params, &grads).unwrap();
            let next = 0.5 * steinrule::tensor::sq_norm(&params[0]);
            prop_assert!(next < j, "{kind}: J went from {j} to {next}");
            j = next;
        }
    }

    #[test]
    fn softmax_gradient_rows_sum_to_zero(logits in vec_of(4 * 5, -20.0, 20.0),
                                         labels in prop::collection::vec(0usize..5, 4)) {
        let (_, dl, _) = softmax_cross_entropy(&logits, &labels, 5, 0.25);
        for row in dl.chunks(5) {
            let s: f64 = row.iter().sum();
            prop_assert!(s.abs() < 1e-12);
        }
    }
}

#[test]
fn common_random_numbers_are_shared() {
    let mu = ParamVector::new(vec![1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let both = paired_risks(&[Estimator::Ue, Estimator::Ue], 1.0, &mu, 5000, 3).unwrap();
    assert_eq!(both[0].mse.to_bits(), both[1].mse.to_bits());
    let alone = risk_curve(&[Estimator::Ue], 5, 1.0, &[1.0], 5000, 3).unwrap();
    let paired = risk_curve(&[Estimator::JsPlus, Estimator::Ue], 5, 1.0, &[1.0], 5000, 3).unwrap();
    assert_eq!(alone[0].mse.to_bits(), paired[1].mse.to_bits());
}

#[test]
fn dominance_is_strict_at_the_origin() {
    for p in [3, 5, 10, 25] {
        let mu = ParamVector::zeros(p).unwrap();
        let d = risk_difference(Estimator::Ue, Estimator::JsPlus, 1.0, &mu, 20_000, p as u64).unwrap();
        assert!(d.mean > 10.0 * d.std_err, "p = {p}: {} vs se {}", d.mean, d.std_err);
    }
}

#[test]
fn no_estimator_beats_the_minimax_risk_everywhere() {
    let grid = [0.0, 1.0, 2.0, 4.0, 8.0, 16.0];
    let rows = risk_curve(
        &[Estimator::Ue, Estimator::Js, Estimator::JsPlus],
        6,
        1.0,
        &grid,
        20_000,
        8,
    )
    .unwrap();
    for est in [Estimator::Ue, Estimator::Js, Estimator::JsPlus] {
        let worst = rows
            .iter()
            .filter(|r| r.estimator == est)
            .max_by(|a, b| a.mse.total_cmp(&b.mse))
            .unwrap();
        assert!(worst.mse >= 6.0 - 3.0 * worst.std_err, "{est}: max risk {}", worst.mse);
    }
}

#[test]
fn p_two_makes_js_plus_the_identity() {
    for norm_sq in [0.0, 0.1, 1.0, 50.0] {
        assert_eq!(js_plus_coefficient(2, 1.0, norm_sq), 1.0);
    }
}
