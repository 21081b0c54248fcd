use nalgebra::DMatrix;
use proptest::prelude::*;

use slotprov::analysis::{
    check_independence, contrast_variant_of, pixel_index_sets, rows_rank, slot_jacobian_blocks, ContrastVariant, Dependence,
    ANALYTIC_RANK_TOLERANCE, DEFAULT_INDEX_THRESHOLD,
};
use slotprov::metrics::{sis, ReadoutConfig, SisSplit};
use slotprov::synth::{
    build_generator, sample_latents, sample_wishart_covariance, GeneratorParams, GeneratorSpec, LatentBatch,
    LatentDistribution, SlotLayout,
};

fn layout_and_jacobian() -> impl Strategy<Value = (SlotLayout, DMatrix<f64>)> {
    (2usize..5, 1usize..4, 1usize..12).prop_flat_map(|(k, m, n)| {
        prop::collection::vec(-3.0f64..3.0, n * k * m)
            .prop_map(move |v| (SlotLayout::new(k, m), DMatrix::from_row_slice(n, k * m, &v)))
    })
}

fn permute_rows(jac: &DMatrix<f64>, order: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(jac.nrows(), jac.ncols(), |i, j| jac[(order[i], j)])
}

fn permute_slots(z: &LatentBatch, order: &[usize]) -> LatentBatch {
    let m = z.layout.slot_dim;
    let data = DMatrix::from_fn(z.data.nrows(), z.data.ncols(), |i, c| z.data[(i, order[c / m] * m + c % m)]);
    LatentBatch::new(data, z.layout).unwrap()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn contrast_variants_ignore_pixel_order((layout, jac) in layout_and_jacobian(), seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..jac.nrows()).collect();
        let n = order.len();
        for i in (1..n).rev() {
            order.swap(i, (seed.wrapping_mul(i as u64 + 7) % (i as u64 + 1)) as usize);
        }
        let shuffled = permute_rows(&jac, &order);
        for variant in ContrastVariant::ALL {
            let a = contrast_variant_of(&jac, layout, variant).unwrap();
            let b = contrast_variant_of(&shuffled, layout, variant).unwrap();
            prop_assert!(close(a, b, 1e-12), "{variant}: {a} vs {b}");
        }
    }

    #[test]
    fn contrast_scales_with_the_jacobian((layout, jac) in layout_and_jacobian(), c in 0.01f64..100.0) {
        let scaled = &jac * c;
        for (variant, power) in
            [(ContrastVariant::Raw, 2), (ContrastVariant::SlotNormalized, 2), (ContrastVariant::GradientNormalized, 1)]
        {
            let a = contrast_variant_of(&jac, layout, variant).unwrap();
            let b = contrast_variant_of(&scaled, layout, variant).unwrap();
            prop_assert!(close(a * c.powi(power), b, 1e-10), "{variant}: {a} * {c}^{power} vs {b}");
        }
        let a = contrast_variant_of(&jac, layout, ContrastVariant::ScaleNormalized).unwrap();
        let b = contrast_variant_of(&scaled, layout, ContrastVariant::ScaleNormalized).unwrap();
        prop_assert!(close(a, b, 1e-10));
    }

    #[test]
    fn contrast_is_non_negative((layout, jac) in layout_and_jacobian()) {
        for variant in ContrastVariant::ALL {
            prop_assert!(contrast_variant_of(&jac, layout, variant).unwrap() >= 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generator_jacobians_are_compositional(slots in 2usize..5, slot_dim in 1usize..4, seed in 0u64..1000) {
        let gen = build_generator(slots, slot_dim, 20, seed, 10.0).unwrap();
        let z = sample_latents(5, &LatentDistribution::independent(gen.layout()), seed).unwrap();
        for i in 0..z.len() {
            let point = z.row(i);
            let jac = gen.jacobian(&point);
            let sets = pixel_index_sets(&slot_jacobian_blocks(&gen, &point, gen.layout()).unwrap(), DEFAULT_INDEX_THRESHOLD).unwrap();
            prop_assert!(sets.is_disjoint());
            for variant in ContrastVariant::ALL {
                prop_assert!(contrast_variant_of(&jac, gen.layout(), variant).unwrap() <= 1e-12);
            }
            for k in 0..slots {
                let rank = rows_rank(&jac, sets.slot(k), ANALYTIC_RANK_TOLERANCE).unwrap().rank;
                prop_assert!(rank <= slot_dim);
            }
        }
    }

    #[test]
    fn sub_mechanisms_of_different_slots_are_independent(seed in 0u64..1000, a in 1usize..20, b in 1usize..20) {
        let gen = build_generator(3, 2, 20, seed, 10.0).unwrap();
        let z = sample_latents(1, &LatentDistribution::independent(gen.layout()), seed).unwrap();
        let jac = gen.jacobian(&z.row(0));
        let slot = (seed % 3) as usize;
        let inside: Vec<usize> = gen.pixel_range(slot).take(a).collect();
        let outside: Vec<usize> = (0..gen.pixels()).filter(|p| !gen.pixel_range(slot).contains(p)).step_by(b).collect();
        let check = check_independence(&inside, &outside, &jac, ANALYTIC_RANK_TOLERANCE).unwrap();
        prop_assert_eq!(check.verdict, Dependence::Independent);
    }

    #[test]
    fn wishart_draws_are_symmetric_psd(dim in 1usize..10, extra in 0usize..5, seed in any::<u64>()) {
        let cov = sample_wishart_covariance(dim, dim + extra, seed).unwrap();
        prop_assert_eq!(&cov, &cov.transpose());
        let eig = cov.clone().symmetric_eigen();
        prop_assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-10 * eig.eigenvalues.amax()));
        prop_assert_eq!(cov, sample_wishart_covariance(dim, dim + extra, seed).unwrap());
    }

    #[test]
    fn generator_files_round_trip(slots in 1usize..5, slot_dim in 1usize..4, slot_out in 4usize..12, seed in any::<u64>()) {
        let params = GeneratorParams::new(slots, slot_dim, slot_out);
        let gen = GeneratorSpec::build(&params, seed).unwrap();
        prop_assert_eq!(&gen, &GeneratorSpec::build(&params, seed).unwrap());
        let mut bytes = Vec::new();
        gen.write_binary(&mut bytes).unwrap();
        prop_assert_eq!(&GeneratorSpec::read_binary(bytes.as_slice()).unwrap(), &gen);
        prop_assert_eq!(&GeneratorSpec::from_text(&gen.to_text()).unwrap(), &gen);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn sis_scores_stay_in_range(slots in 2usize..4, slot_dim in 1usize..3, seed in 0u64..1000) {
        let layout = SlotLayout::new(slots, slot_dim);
        let dist = LatentDistribution::independent(layout);
        let z = sample_latents(90, &dist, seed).unwrap();
        let noise = sample_latents(90, &dist, seed + 1).unwrap();
        let half = LatentBatch::new(&z.data * 0.5 + &noise.data, layout).unwrap();
        for z_hat in [&z, &noise, &half] {
            let report = sis(&z, z_hat, &SisSplit::contiguous(30, 30, 30), &ReadoutConfig::default()).unwrap();
            prop_assert!((0.0..=1.0).contains(&report.s1), "s1 {}", report.s1);
            prop_assert!((0.0..=1.0).contains(&report.s2), "s2 {}", report.s2);
            prop_assert!((-1.0..=1.0).contains(&report.sis), "sis {}", report.sis);
        }
    }

    #[test]
    fn sis_ignores_slot_order(seed in 0u64..1000, rotate in 1usize..3) {
        let layout = SlotLayout::new(3, 2);
        let dist = LatentDistribution::independent(layout);
        let z = sample_latents(150, &dist, seed).unwrap();
        let noise = sample_latents(150, &dist, seed + 1).unwrap();
        let z_hat = LatentBatch::new(z.data.map(|v| v.tanh()) + noise.data * 0.3, layout).unwrap();
        let order: Vec<usize> = (0..3).map(|k| (k + rotate) % 3).collect();
        let split = SisSplit::contiguous(50, 50, 50);
        let a = sis(&z, &z_hat, &split, &ReadoutConfig::default()).unwrap();
        let b = sis(&z, &permute_slots(&z_hat, &order), &split, &ReadoutConfig::default()).unwrap();
        prop_assert!((a.sis - b.sis).abs() <= 1e-12, "{} vs {}", a.sis, b.sis);
        prop_assert!((a.s1 - b.s1).abs() <= 1e-12);
        for k in 0..3 {
            prop_assert_eq!(order[b.permutation[k]], a.permutation[k]);
        }
    }
}

#[test]
fn sis_absorbs_per_slot_reparameterization() {
    let layout = SlotLayout::new(3, 2);
    let z = sample_latents(5000, &LatentDistribution::independent(layout), 11).unwrap();
    let split = SisSplit::contiguous(2000, 1000, 2000);
    let base = sis(&z, &z, &split, &ReadoutConfig::default()).unwrap();
    // Within each slot: an invertible linear mix followed by a monotone warp.
    let warped = DMatrix::from_fn(z.data.nrows(), z.data.ncols(), |i, c| {
        let slot = c / 2;
        let (a, b) = (z.data[(i, 2 * slot)], z.data[(i, 2 * slot + 1)]);
        let mixed = if c % 2 == 0 { a + 0.5 * b } else { b - 0.3 * a };
        mixed + 0.5 * mixed.tanh() + 0.1 * mixed.powi(3)
    });
    let reparam = sis(&z, &LatentBatch::new(warped, layout).unwrap(), &split, &ReadoutConfig::default()).unwrap();
    assert!(base.sis >= 0.99, "ground truth against itself: {}", base.sis);
    assert!((base.sis - reparam.sis).abs() < 0.05, "{} vs {}", base.sis, reparam.sis);
}
