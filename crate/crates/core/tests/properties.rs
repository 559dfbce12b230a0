use gammacell_core::cell::{cell_energy, oracle_1d_homog, CellJob};
use gammacell_core::density::{
    dist_so, equivalence_metric, polar_correction, random_rotation, Density, DensitySpec, EquivalenceOptions,
};
use gammacell_core::envelope::{convexify_1d, laminate, LaminateOptions};
use gammacell_core::grid::Grid;
use gammacell_core::minimize::SolveOptions;
use gammacell_core::rigidity::{deformation_samples, rigidity_ratio};
use gammacell_core::{Mat, Sequential};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mat2() -> impl Strategy<Value = Mat> {
    prop::array::uniform4(-2.0f64..2.0).prop_map(|e| Mat::from_row_major(2, &e).unwrap())
}

fn mat3() -> impl Strategy<Value = Mat> {
    prop::array::uniform9(-2.0f64..2.0).prop_map(|e| Mat::from_row_major(3, &e).unwrap())
}

fn families(n: usize) -> Vec<DensitySpec> {
    let u = Mat::diag(&vec![0.5; n]);
    vec![
        DensitySpec::constant_p_norm(n, 2.0),
        DensitySpec::two_phase_p_norm(n, 3.0, 1.0, 4.0),
        DensitySpec::single_well(n, 2.0),
        DensitySpec::single_well(n, 1.5).with_layers(1.0, 3.0),
        DensitySpec::multi_well(n, 2.0, 0.2, vec![Mat::zeros(n), u]),
        DensitySpec::linearized_multi_well(n, 2.0, vec![Mat::zeros(n), u]),
    ]
}

fn quick(seed: u64) -> SolveOptions {
    SolveOptions {
        n_starts: 2,
        max_iter: 2000,
        seed,
        ..SolveOptions::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eval_is_pure(m in mat2(), x0 in 0.0f64..1.0, x1 in 0.0f64..1.0) {
        for spec in families(2) {
            let a = spec.eval(&[x0, x1], &m).unwrap();
            let b = spec.eval(&[x0, x1], &m).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn nonlinear_families_are_frame_indifferent(m in mat3(), seed in any::<u64>()) {
        let r = random_rotation(3, &mut ChaCha8Rng::seed_from_u64(seed));
        for spec in families(3).into_iter().filter(|s| s.kind.is_nonlinear_elastic()) {
            let a = spec.eval(&[0.3, 0.6, 0.2], &m).unwrap();
            let b = spec.eval(&[0.3, 0.6, 0.2], &r.matmul(&m)).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()), "{:?}: {a} vs {b}", spec.kind);
        }
    }

    #[test]
    fn growth_sandwich(m in mat2(), x0 in 0.0f64..1.0) {
        for spec in families(2) {
            let beta = spec.bounds().beta;
            let v = spec.eval(&[x0, 0.5], &m).unwrap();
            let p = spec.exponent();
            prop_assert!(v >= -beta && v <= beta * (m.norm().powf(p) + 1.0), "{:?}: {v}", spec.kind);
        }
    }

    #[test]
    fn dist_so_is_biinvariant(m in mat3(), s1 in any::<u64>(), s2 in any::<u64>()) {
        prop_assume!(m.det() >= 0.0);
        let q = random_rotation(3, &mut ChaCha8Rng::seed_from_u64(s1));
        let p = random_rotation(3, &mut ChaCha8Rng::seed_from_u64(s2));
        let a = dist_so(&m);
        let b = dist_so(&q.matmul(&m).matmul(&p));
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a));
    }

    #[test]
    fn polar_correction_is_quadratic(m in mat2()) {
        prop_assume!(m.norm() > 1e-3);
        for d in [1e-4, 1e-3, 1e-2, 1e-1] {
            let q = polar_correction(&m, d).unwrap().norm();
            prop_assert!(q <= 2.0 * (d * m.norm()).powi(2) + 1e-15, "delta={d}: {q}");
        }
    }

    #[test]
    fn equivalence_metric_is_a_pseudometric(t in 0.5f64..2.0, r in 0.25f64..1.0) {
        let f = DensitySpec::single_well(2, 2.0).with_layers(1.0, 2.0);
        let g = DensitySpec::constant_p_norm(2, 2.0);
        let opts = EquivalenceOptions { radius: r, half_width: t, nx: 2, n_mat: 4, sym_only: false };
        prop_assert_eq!(equivalence_metric(&f, &f, &opts).unwrap(), 0.0);
        let fg = equivalence_metric(&f, &g, &opts).unwrap();
        prop_assert_eq!(fg, equivalence_metric(&g, &f, &opts).unwrap());
        let wider = EquivalenceOptions { radius: r + 0.5, ..opts };
        prop_assert!(equivalence_metric(&f, &g, &wider).unwrap() >= fg);
    }

    #[test]
    fn hull_lies_below_samples_and_is_convex(ys in prop::collection::vec(-5.0f64..5.0, 3..40)) {
        let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64 * 0.1).collect();
        let h = convexify_1d(&xs, &ys).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            prop_assert!(h.eval(*x).unwrap() <= y + 1e-12);
        }
        let slopes: Vec<f64> = h.vertices.windows(2).map(|w| (w[1][1] - w[0][1]) / (w[1][0] - w[0][0])).collect();
        prop_assert!(slopes.windows(2).all(|s| s[1] >= s[0] - 1e-9));
    }

    #[test]
    fn oracle_is_a_power_mean(a0 in 0.5f64..5.0, a1 in 0.5f64..5.0, t in 0.0f64..1.0) {
        let h = oracle_1d_homog(&[a0, a1], &[t, 1.0 - t], 2.0, 1.0).unwrap();
        let harmonic = 1.0 / (t / a0 + (1.0 - t) / a1);
        prop_assert!((h - harmonic).abs() <= 1e-12 * harmonic);
        prop_assert!(h <= t * a0 + (1.0 - t) * a1 + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn affine_fields_reproduce_the_density(a in mat2(), x in mat2()) {
        let grid = Grid::new(2, 1, 4).unwrap().unconstrained();
        for spec in families(2).into_iter().filter(|s| s.is_x_independent()) {
            let field = grid.affine_field(&a, false);
            let e = grid.assemble_energy(&spec, &x, field.values(), false).unwrap();
            let want = spec.eval(&[0.5, 0.5], &(x + a)).unwrap();
            prop_assert!((e - want).abs() <= 1e-12 * (1.0 + want.abs()), "{:?}: {e} vs {want}", spec.kind);
        }
    }

    #[test]
    fn masked_gradient_entries_vanish(x in mat2(), seed in any::<u64>()) {
        let grid = Grid::new(2, 2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..grid.num_dofs()).map(|_| rand::Rng::random_range(&mut rng, -0.5..0.5)).collect();
        let field = grid.field_from_values(values).unwrap();
        for spec in families(2) {
            let sym = spec.kind.is_linearized();
            let g = grid.assemble_gradient(&spec, &x, field.values(), sym).unwrap();
            for (node, &masked) in grid.mask().iter().enumerate() {
                if masked {
                    prop_assert!(g[2 * node..2 * node + 2].iter().all(|v| *v == 0.0));
                }
            }
        }
    }

    #[test]
    fn cell_values_are_bounded_and_reproducible(v in -1.5f64..1.5, seed in 0u64..1000) {
        let spec = DensitySpec::scalar_double_well(2.0);
        let job = CellJob::new(spec, Mat::diag(&[v]), 1, 16).with_opts(quick(seed));
        let a = cell_energy(&job).unwrap();
        let b = cell_energy(&job).unwrap();
        prop_assert_eq!(a.m_value.to_bits(), b.m_value.to_bits());
        prop_assert!(a.m_value >= 0.0);
        prop_assert!(a.m_value <= a.upper_bound + 1e-10);
    }

    #[test]
    fn rigidity_ratio_is_at_least_one(seed in any::<u64>()) {
        let grid = Grid::new(2, 1, 4).unwrap().unconstrained();
        let samples = deformation_samples(&grid, 4, &[0.05, 0.3], seed).unwrap();
        for s in &samples[1..] {
            let r = rigidity_ratio(&grid, core::slice::from_ref(s), 2.0, &Sequential).unwrap();
            prop_assert!(r.skipped == 1 || r.value >= 1.0 - 1e-9, "{}", r.value);
        }
    }
}

#[test]
fn tiling_does_not_raise_the_cell_value() {
    let spec = DensitySpec::scalar_double_well(2.0).with_layers(1.0, 2.0);
    let x = Mat::diag(&[0.4]);
    let m = |k| cell_energy(&CellJob::new(spec.clone(), x, k, 16).with_opts(quick(3))).unwrap();
    let (a, b) = (m(1), m(2));
    assert!(b.m_value <= a.m_value + 10.0 * 1e-8 * (1.0 + a.m_value.abs()));
}

#[test]
fn phase_order_does_not_matter_in_1d() {
    use gammacell_core::density::PhaseBox;
    let x = Mat::diag(&[1.0]);
    let a = DensitySpec::two_phase_p_norm(1, 2.0, 1.0, 4.0).with_phases(4.0, vec![PhaseBox::new(vec![0.0, 0.5], 1.0)]);
    let b = DensitySpec::two_phase_p_norm(1, 2.0, 1.0, 4.0).with_phases(1.0, vec![PhaseBox::new(vec![0.5, 1.0], 4.0)]);
    let va = cell_energy(&CellJob::new(a, x, 2, 32).with_opts(quick(0))).unwrap().m_value;
    let vb = cell_energy(&CellJob::new(b, x, 2, 32).with_opts(quick(0))).unwrap().m_value;
    assert!((va - vb).abs() <= 1e-8 * va, "{va} vs {vb}");
    assert!((va - 1.6).abs() < 1e-6, "{va}");
}

#[test]
fn laminate_is_nonincreasing_in_depth() {
    let spec = DensitySpec::scalar_double_well(2.0);
    let x = Mat::diag(&[0.3]);
    let mut prev = spec.eval(&[0.0], &x).unwrap();
    for depth in 1..=3 {
        let opts = LaminateOptions {
            depth,
            spacing: 0.1,
            half_width: 20,
            ..LaminateOptions::default()
        };
        let v = laminate(&spec, &x, &opts, &Sequential).unwrap().value;
        assert!(v <= prev, "depth {depth}: {v} > {prev}");
        prev = v;
    }
}
