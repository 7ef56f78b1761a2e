use proptest::prelude::*;
use proptest::test_runner::RngSeed;

use etcphd::combinatorics::{bell_number, partitions_of, subpartitions_of};
use etcphd::harness::verify::{micro_scenario, standard_scenario};
use etcphd::oracle::{assignment_likelihood, multi_target_likelihood};
use etcphd::statespace::{missed_detection_mass, normalize_intensity};
use etcphd::{
    CardinalityPgf, CorrectorOptions, EnumerationCap, IntensityGrid, LabelSet, Partition, SensorModel, StateGrid,
};

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

fn finite_pgf() -> impl Strategy<Value = CardinalityPgf> {
    prop::collection::vec(0.05f64..1.0, 1..8).prop_map(|raw| {
        let total: f64 = raw.iter().sum();
        CardinalityPgf::finite(raw.iter().map(|v| v / total).collect()).expect("normalized")
    })
}

/// `i`-th central difference of `f` at `x` with step `h`.
fn central_difference(f: &dyn Fn(f64) -> f64, x: f64, i: usize, h: f64) -> f64 {
    let mut binom = 1.0;
    let mut acc = 0.0;
    for k in 0..=i {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * binom * f(x + (i as f64 / 2.0 - k as f64) * h);
        binom = binom * (i - k) as f64 / (k + 1) as f64;
    }
    acc / h.powi(i as i32)
}

/// Ridders' extrapolation of central differences over shrinking steps,
/// returning the estimate with the smallest internal error.
fn ridders(f: &dyn Fn(f64) -> f64, x: f64, i: usize, h0: f64) -> f64 {
    const SHRINK: f64 = 1.4;
    const STEPS: usize = 14;
    // early tableau entries can agree by accident
    const MIN_STEPS: usize = 4;
    let mut table = vec![vec![0.0; STEPS]; STEPS];
    let mut h = h0;
    let mut best = central_difference(f, x, i, h);
    let mut err = f64::INFINITY;
    table[0][0] = best;
    for k in 1..STEPS {
        h /= SHRINK;
        table[0][k] = central_difference(f, x, i, h);
        let mut fac = SHRINK * SHRINK;
        for j in 1..=k {
            table[j][k] = (table[j - 1][k] * fac - table[j - 1][k - 1]) / (fac - 1.0);
            fac *= SHRINK * SHRINK;
            let e = (table[j][k] - table[j - 1][k])
                .abs()
                .max((table[j][k] - table[j - 1][k - 1]).abs());
            if e <= err {
                err = e;
                best = table[j][k];
            }
        }
        if k >= MIN_STEPS && (table[k][k] - table[k - 1][k - 1]).abs() >= 2.0 * err {
            break;
        }
    }
    best
}

/// Maps a cell of the original labels to the labels of `z.permuted(order)`.
fn relabel(cell: LabelSet, order: &[usize]) -> LabelSet {
    let bits = order
        .iter()
        .enumerate()
        .filter(|(_, &old)| cell.iter().any(|l| l == old))
        .fold(0u32, |acc, (new, _)| acc | 1 << new);
    LabelSet::from_bits(bits)
}

proptest! {
    #![proptest_config(ProptestConfig {
        failure_persistence: None,
        rng_seed: RngSeed::Fixed(0x5eed),
        ..ProptestConfig::default()
    })]

    #[test]
    fn pgf_is_one_at_one(g in finite_pgf()) {
        prop_assert!((g.eval(1.0) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn derivatives_at_zero_recover_probabilities(g in finite_pgf()) {
        let mut fact = 1.0;
        for n in 0..=g.max_support().unwrap_or(0) {
            if n > 0 {
                fact *= n as f64;
            }
            // one multiply and one divide by n!: at most one rounding each
            prop_assert!(close(g.derivative_at_zero(n) / fact, g.prob(n), 2.0 * f64::EPSILON));
        }
    }

    #[test]
    fn zeta_matches_finite_differences(g in finite_pgf(), x0 in 0.2f64..1.0) {
        let log_g = |x: f64| g.eval(x).ln();
        let zetas = g.zetas_at(x0, 4).unwrap();
        for i in 1..=4 {
            let fd = ridders(&log_g, x0, i, 0.4 * x0 / i as f64);
            let scale = zetas[i - 1].abs().max(1.0);
            prop_assert!((fd - zetas[i - 1]).abs() <= 1e-5 * scale, "order {}: {} vs {}", i, fd, zetas[i - 1]);
        }
    }

    #[test]
    fn poisson_zeta_is_flat(rate in 0.1f64..10.0, i in 1usize..6) {
        let g = CardinalityPgf::Poisson(rate);
        let at0 = g.zeta_at(0.0, i).unwrap();
        for x0 in [0.1, 0.3, 0.5, 0.9, 1.0] {
            prop_assert!((g.zeta_at(x0, i).unwrap() - at0).abs() <= 1e-12);
        }
    }

    #[test]
    fn partitions_cover_and_count(bits in 0u32..256) {
        let ground = LabelSet::from_bits(bits);
        let cap = EnumerationCap::default();
        let first = partitions_of(ground, cap).unwrap();
        prop_assert_eq!(first.len() as u64, bell_number(ground.len()).unwrap());
        prop_assert!(first.iter().all(|p| p.is_partition_of(ground)));
        prop_assert_eq!(&first, &partitions_of(ground, cap).unwrap());
        for p in first.iter().take(20) {
            for &w in p.cells() {
                let subs = subpartitions_of(w).unwrap();
                prop_assert_eq!(subs.len() as u64, bell_number(w.len()).unwrap());
                prop_assert_eq!(subs, partitions_of(w, cap).unwrap());
            }
        }
    }

    #[test]
    fn bracket_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let s = micro_scenario(seed);
        let (_, p) = normalize_intensity(&s.prior.intensity, &s.grid).unwrap();
        let f = |x: usize| (x as f64 + 1.0).sqrt();
        let g = |x: usize| (x as f64 * 0.7).cos();
        let lhs = p.bracket(|x| a * f(x) + b * g(x)).unwrap();
        let rhs = a * p.bracket(f).unwrap() + b * p.bracket(g).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn phi_decreases_with_detection(seed in any::<u64>(), lift in prop::collection::vec(0.0f64..1.0, 4)) {
        let s = micro_scenario(seed);
        let (_, p) = normalize_intensity(&s.prior.intensity, &s.grid).unwrap();
        let sensor = &s.sensor;
        let raised: Vec<f64> = sensor.p_d.iter().zip(&lift).map(|(d, u)| d + u * (1.0 - d)).collect();
        let higher = SensorModel::new(
            raised,
            sensor.clutter_cardinality.clone(),
            sensor.measurement_cardinality.clone(),
            sensor.kernel.clone(),
        )
        .unwrap();
        let lo = missed_detection_mass(&p, sensor).unwrap();
        let hi = missed_detection_mass(&p, &higher).unwrap();
        prop_assert!(hi <= lo + 1e-15, "{} > {}", hi, lo);
    }

    #[test]
    fn update_is_invariant_under_relabeling(seed in any::<u64>(), shuffle in any::<u64>()) {
        let s = standard_scenario(seed);
        let n = s.measurements.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut state = shuffle;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (state >> 33) as usize % (i + 1));
        }
        let mut t = s.clone();
        t.measurements = s.measurements.permuted(&order);
        let a = s.step(CorrectorOptions::default()).unwrap();
        let b = t.step(CorrectorOptions::default()).unwrap();
        for (x, y) in a.intensity.values().iter().zip(b.intensity.values()) {
            prop_assert!(close(*x, *y, 1e-12), "{} vs {}", x, y);
        }
        for cell in &a.coefficients.beta {
            let other = b.coefficients.beta_of(relabel(cell.cell, &order));
            prop_assert!(close(cell.value, other, 1e-12));
        }
        for w in &a.coefficients.omega {
            let mapped = Partition::new(w.partition.cells().iter().map(|&c| relabel(c, &order)).collect());
            let other = b.coefficients.omega.iter().find(|o| o.partition == mapped).unwrap();
            prop_assert!(close(w.value, other.value, 1e-12));
        }
    }

    #[test]
    fn oracle_likelihood_is_symmetric(seed in any::<u64>(), tuple in prop::collection::vec(0usize..4, 0..4)) {
        let s = micro_scenario(seed);
        let g = s.grid.len();
        let tuple: Vec<usize> = tuple.into_iter().map(|x| x % g).collect();
        let base = multi_target_likelihood(&s.measurements, &tuple, &s.sensor).unwrap();
        let mut reversed = tuple.clone();
        reversed.reverse();
        let mut rotated = tuple.clone();
        rotated.rotate_left(1.min(tuple.len()));
        for other in [reversed, rotated] {
            let v = multi_target_likelihood(&s.measurements, &other, &s.sensor).unwrap();
            prop_assert!((v - base).abs() <= 1e-12 * base.abs().max(1e-300));
        }
    }

    #[test]
    fn likelihood_enumerations_agree(seed in any::<u64>(), tuple in prop::collection::vec(0usize..4, 0..4)) {
        let s = micro_scenario(seed);
        let g = s.grid.len();
        let tuple: Vec<usize> = tuple.into_iter().map(|x| x % g).collect();
        let a = multi_target_likelihood(&s.measurements, &tuple, &s.sensor).unwrap();
        let b = assignment_likelihood(&s.measurements, &tuple, &s.sensor).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300), "{} vs {}", a, b);
    }
}

#[test]
fn no_detection_keeps_prior_on_random_grids() {
    for seed in 0..50 {
        let mut s = micro_scenario(seed);
        let g = s.grid.len();
        s.sensor = SensorModel::new(
            vec![0.0; g],
            s.sensor.clutter_cardinality.clone(),
            s.sensor.measurement_cardinality.clone(),
            s.sensor.kernel.clone(),
        )
        .unwrap();
        let r = s.step(CorrectorOptions::default()).unwrap();
        for (x, y) in r.intensity.values().iter().zip(s.prior.intensity.values()) {
            assert!((x - y).abs() <= 1e-12 * y.max(1.0), "seed {seed}: {x} vs {y}");
        }
        for (n, p) in r.cardinality.iter().enumerate() {
            assert!((p - s.prior.cardinality.prob(n)).abs() <= 1e-12, "seed {seed}, n = {n}");
        }
    }
}

#[test]
fn grid_weights_scale_out_of_the_update() {
    // doubling every weight and halving the intensity leaves the posterior mass unchanged
    let s = micro_scenario(3);
    let mut t = s.clone();
    t.grid = StateGrid::with_weights(s.grid.weights().iter().map(|w| 2.0 * w).collect()).unwrap();
    t.prior.intensity = IntensityGrid::new(s.prior.intensity.values().iter().map(|v| v / 2.0).collect()).unwrap();
    let a = s.step(CorrectorOptions::default()).unwrap();
    let b = t.step(CorrectorOptions::default()).unwrap();
    assert!((a.diagnostics.mean_from_intensity - b.diagnostics.mean_from_intensity).abs() <= 1e-12);
    for (x, y) in a.cardinality.iter().zip(&b.cardinality) {
        assert!((x - y).abs() <= 1e-12);
    }
}
