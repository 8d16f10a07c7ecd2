use proptest::prelude::*;

use pwrd::diagnostics::{decide_from_responses, information_criteria};
use pwrd::distortion::{global_distortion, regionwise_distortion, FieldArray};
use pwrd::field::{
    build_covariance_matrix, region_spectrum, CovarianceKernel, Lattice, Partition, PiecewiseField, RegionSpec,
    SpectrumMethod, SpectrumOptions,
};
use pwrd::sampler::{sample_field, SampleBatch};
use pwrd::tiling::{cluster_tiles, fit_region_models, tile_descriptors, tile_partition, ClusterConfig};
use pwrd::waterfill::solve_spectra;

fn kernel() -> impl Strategy<Value = CovarianceKernel> {
    prop_oneof![
        (0.1f64..10.0).prop_map(CovarianceKernel::white),
        (0.1f64..10.0, 0.2f64..8.0).prop_map(|(v, l)| CovarianceKernel::exponential(v, l)),
        (0.1f64..10.0, 0.2f64..3.0).prop_map(|(v, l)| CovarianceKernel::squared_exponential(v, l)),
    ]
}

fn sites() -> impl Strategy<Value = Vec<Vec<i64>>> {
    proptest::collection::btree_set((0i64..12, 0i64..12), 1..=64)
        .prop_map(|s| s.into_iter().map(|(a, b)| vec![a, b]).collect())
}

fn spectra() -> impl Strategy<Value = Vec<Vec<f64>>> {
    proptest::collection::vec(proptest::collection::vec(0.01f64..20.0, 1..20), 1..=4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariance_matrices_are_symmetric_psd(k in kernel(), s in sites()) {
        let m = build_covariance_matrix(&k, &s).unwrap();
        prop_assert_eq!(&m, &m.transpose());
        let min = m.symmetric_eigen().eigenvalues.min();
        prop_assert!(min >= -1e-9 * k.variance(), "min eigenvalue {}", min);
    }

    #[test]
    fn dense_spectrum_sum_is_trace(k in kernel(), s in sites()) {
        let sites: Vec<Vec<usize>> = s.iter().map(|c| c.iter().map(|&v| v as usize).collect()).collect();
        let spec = region_spectrum(&k, &sites, SpectrumMethod::Dense, 4096).unwrap();
        let trace = k.variance() * sites.len() as f64;
        prop_assert!((spec.iter().sum::<f64>() - trace).abs() <= 1e-8 * trace);
    }

    #[test]
    fn weights_are_site_fractions(a in 2usize..12, b in 2usize..12, r in 1usize..5, seed in 0u64..1000) {
        let l = Lattice::new(vec![a, b]).unwrap();
        let r = r.min(a * b);
        // every region gets at least one site, the rest pseudo-random
        let p = Partition::from_fn(&l, r, |c| {
            let i = c[0] * b + c[1];
            if i < r { i } else { ((i as u64 * 2654435761 + seed) % r as u64) as usize }
        })
        .unwrap();
        let w = p.weights();
        let sizes = p.sizes();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (wi, ni) in w.iter().zip(sizes) {
            prop_assert_eq!(*wi, ni as f64 / (a * b) as f64);
        }
    }

    #[test]
    fn distortion_decomposes_over_regions(
        vals in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3, 0usize..3), 36),
    ) {
        let l = Lattice::new(vec![6, 6]).unwrap();
        let mut labels: Vec<usize> = vals.iter().map(|v| v.2).collect();
        labels[..3].copy_from_slice(&[0, 1, 2]);
        let p = Partition::new(&l, labels, 3).unwrap();
        let x = FieldArray::new(l.clone(), vals.iter().map(|v| v.0).collect()).unwrap();
        let y = FieldArray::new(l, vals.iter().map(|v| v.1).collect()).unwrap();
        let d = global_distortion(&x, &y).unwrap();
        let parts = regionwise_distortion(&x, &y, &p).unwrap();
        let recon: f64 = parts.iter().zip(p.weights()).map(|(d, w)| d * w).sum();
        prop_assert!((recon - d).abs() <= 1e-12 * d.max(1.0));
        prop_assert_eq!(d, global_distortion(&y, &x).unwrap());
        prop_assert!(d >= 0.0);
        prop_assert_eq!(global_distortion(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn water_filling_is_scale_covariant(s in spectra(), frac in 0.1f64..0.9, c in 0.01f64..100.0) {
        let n: usize = s.iter().map(Vec::len).sum();
        let w: Vec<f64> = s.iter().map(|v| v.len() as f64 / n as f64).collect();
        let dmax: f64 = s.iter().zip(&w).map(|(v, w)| w * v.iter().sum::<f64>() / v.len() as f64).sum();
        let d = frac * dmax;
        let a = solve_spectra(&s, &w, d).unwrap();
        let scaled: Vec<Vec<f64>> = s.iter().map(|v| v.iter().map(|x| x * c).collect()).collect();
        let b = solve_spectra(&scaled, &w, c * d).unwrap();
        prop_assert!((a.rate_pw - b.rate_pw).abs() <= 1e-9 * a.rate_pw.max(1e-3));
        prop_assert_eq!(a.dispersion, b.dispersion);
        prop_assert!((b.theta_star - c * a.theta_star).abs() <= 1e-9 * c * a.theta_star);
    }

    #[test]
    fn single_region_field_matches_plain_water_filling(v in 0.1f64..5.0, l in 0.3f64..4.0, frac in 0.05f64..0.95) {
        let f = PiecewiseField::homogeneous(
            Lattice::new(vec![8, 8]).unwrap(),
            0.0,
            CovarianceKernel::exponential(v, l),
            SpectrumOptions::bccb(),
        )
        .unwrap();
        let spec = vec![f.regions[0].spectrum.clone()];
        let d = frac * spec[0].iter().sum::<f64>() / 64.0;
        let a = pwrd::waterfill::solve_water_level(&f, d).unwrap();
        let b = solve_spectra(&spec, &[1.0], d).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn criteria_identities(log_l in -1e6f64..1e6, q in 0usize..500, n in 1usize..100_000) {
        let (aic, bic) = information_criteria(log_l, q, n as f64);
        prop_assert!((aic - (2.0 * q as f64 - 2.0 * log_l)).abs() <= 1e-9 * aic.abs().max(1.0));
        prop_assert!((bic - (q as f64 * (n as f64).ln() - 2.0 * log_l)).abs() <= 1e-9 * bic.abs().max(1.0));
    }

    #[test]
    fn tiles_and_margin_cover_the_lattice(a in 2usize..40, b in 2usize..40, k in 2usize..20) {
        prop_assume!(k <= a.min(b));
        let l = Lattice::new(vec![a, b]).unwrap();
        let g = tile_partition(&l, k).unwrap();
        let mut hit = vec![0u8; l.n()];
        for t in &g.tiles {
            for s in t.sites(&l) {
                hit[s] += 1;
            }
        }
        prop_assert!(hit.iter().all(|&h| h <= 1));
        prop_assert_eq!(hit.iter().filter(|&&h| h == 0).count(), g.margin_sites());
        for (s, &h) in hit.iter().enumerate() {
            let t = g.tile_of(s);
            prop_assert!(t < g.n_tau());
            if h == 1 {
                prop_assert!(g.tiles[t].sites(&l).contains(&s));
            }
        }
    }

    #[test]
    fn rejection_fraction_is_a_probability(
        y in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 8), 1..20),
        alpha in 0.001f64..0.5,
    ) {
        let r = decide_from_responses(&y, alpha, 0.05).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.pi_hat));
        prop_assert!(r.excluded.len() + r.p_values.len() <= y.len());
    }
}

/// c(h) = Σ_m σ² exp(−‖h + m∘shape‖/ℓ).
fn periodized(var: f64, ell: f64, h: [i64; 2], shape: [i64; 2]) -> f64 {
    let mut s = 0.0;
    for a in -12i64..=12 {
        for b in -12i64..=12 {
            let x = (h[0] + a * shape[0]) as f64;
            let y = (h[1] + b * shape[1]) as f64;
            s += var * (-(x * x + y * y).sqrt() / ell).exp();
        }
    }
    s
}

fn z_score(per_t: &[f64], truth: f64) -> f64 {
    let n = per_t.len() as f64;
    let m = per_t.iter().sum::<f64>() / n;
    let sd = (per_t.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    (m - truth).abs() / (sd / n.sqrt())
}

#[test]
fn sampled_moments_match_the_model() {
    let regions = [(0.0, 1.0, 2.0), (2.0, 4.0, 1.5)];
    let l = Lattice::new(vec![16, 16]).unwrap();
    let p = Partition::from_fn(&l, 2, |c| usize::from(c[1] >= 8)).unwrap();
    let specs = regions
        .iter()
        .map(|&(m, v, e)| RegionSpec { mean: m, kernel: CovarianceKernel::exponential(v, e) })
        .collect();
    let f = PiecewiseField::build(l, p, specs, SpectrumOptions::bccb()).unwrap();
    let batch = sample_field(&f, 500, 17, None).unwrap();
    let at = |t: usize, i: usize, j: usize| batch.fields[t].values[i * 16 + j];
    let mut worst: f64 = 0.0;
    for (r, &(m, v, e)) in regions.iter().enumerate() {
        let cols = 8 * r..8 * r + 8;
        let means: Vec<f64> = (0..500)
            .map(|t| (0..16).flat_map(|i| cols.clone().map(move |j| (i, j))).map(|(i, j)| at(t, i, j)).sum::<f64>() / 128.0)
            .collect();
        worst = worst.max(z_score(&means, m));
        for h0 in -3i64..=3 {
            for h1 in 0i64..=3 {
                if h0 * h0 + h1 * h1 > 9 || (h1 == 0 && h0 < 0) {
                    continue;
                }
                let per_t: Vec<f64> = (0..500)
                    .map(|t| {
                        let mut acc = 0.0;
                        let mut cnt = 0;
                        for i in 0..16i64 {
                            for j in cols.clone() {
                                let (ii, jj) = (i + h0, j as i64 + h1);
                                if (0..16).contains(&ii) && cols.contains(&(jj as usize)) {
                                    acc += (at(t, i as usize, j) - m) * (at(t, ii as usize, jj as usize) - m);
                                    cnt += 1;
                                }
                            }
                        }
                        acc / cnt as f64
                    })
                    .collect();
                let z = z_score(&per_t, periodized(v, e, [h0, h1], [16, 8]));
                worst = worst.max(z);
            }
        }
    }
    assert!(worst <= 4.0, "worst z {worst}");
    // independent regions: adjacent sites across the boundary are uncorrelated
    let cross: Vec<f64> = (0..500)
        .map(|t| (0..16).map(|i| (at(t, i, 7) - regions[0].0) * (at(t, i, 8) - regions[1].0)).sum::<f64>() / 16.0)
        .collect();
    assert!(z_score(&cross, 0.0) <= 4.0);
}

#[test]
fn fit_pipeline_is_deterministic() {
    let l = Lattice::new(vec![32, 32]).unwrap();
    let p = Partition::from_fn(&l, 2, |c| usize::from(c[0] >= 16)).unwrap();
    let specs = vec![
        RegionSpec { mean: 0.0, kernel: CovarianceKernel::exponential(1.0, 2.0) },
        RegionSpec { mean: 0.0, kernel: CovarianceKernel::exponential(6.0, 2.0) },
    ];
    let f = PiecewiseField::build(l.clone(), p, specs, SpectrumOptions::bccb().tiled(8)).unwrap();
    let run = || {
        let b = sample_field(&f, 6, 3, None).unwrap();
        let g = tile_partition(&l, 8).unwrap();
        let d = tile_descriptors(&b, &g).unwrap();
        let c = cluster_tiles(&b, &g, &d, &ClusterConfig { k_range: vec![1, 2, 3], ..Default::default() }).unwrap();
        let m = fit_region_models(&b, &g, &c.labels, c.k).unwrap();
        (c, m)
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fitted_fields_are_valid_on_any_lattice(
        a in 6usize..40,
        b in 6usize..40,
        k in 2usize..13,
        ell in 0.3f64..8.0,
        seed in 0u64..1000,
    ) {
        prop_assume!(k <= a.min(b));
        let l = Lattice::new(vec![a, b]).unwrap();
        let f = PiecewiseField::homogeneous(l.clone(), 0.0, CovarianceKernel::exponential(1.0, ell), SpectrumOptions::bccb())
            .unwrap();
        let batch = sample_field(&f, 4, seed, None).unwrap();
        let g = tile_partition(&l, k).unwrap();
        let labels: Vec<usize> = (0..g.n_tau()).map(|i| usize::from(g.n_tau() > 1 && i % 2 == 1)).collect();
        let regions = 1 + usize::from(g.n_tau() > 1);
        let fit = fit_region_models(&batch, &g, &labels, regions).unwrap();
        let report = pwrd::field::validate_field(&fit);
        prop_assert!(report.is_valid(), "{:?}", report);
    }
}

fn two_variance_batch(seed: u64) -> (SampleBatch, pwrd::tiling::TileGrid, Vec<usize>) {
    let l = Lattice::new(vec![64, 64]).unwrap();
    let p = Partition::from_fn(&l, 2, |c| usize::from(c[0] >= 32)).unwrap();
    let specs = vec![
        RegionSpec { mean: 0.0, kernel: CovarianceKernel::exponential(1.0, 2.0) },
        RegionSpec { mean: 0.0, kernel: CovarianceKernel::exponential(9.0, 2.0) },
    ];
    let f = PiecewiseField::build(l.clone(), p, specs, SpectrumOptions::bccb().tiled(16)).unwrap();
    let g = tile_partition(&l, 16).unwrap();
    let truth = g.tiles.iter().map(|t| usize::from(t.origin[0] >= 32)).collect();
    (sample_field(&f, 10, seed, None).unwrap(), g, truth)
}

#[test]
fn variance_descriptors_separate_two_regions() {
    let (b, g, truth) = two_variance_batch(21);
    let x: Vec<f64> = tile_descriptors(&b, &g).unwrap().iter().map(|d| d.variance.ln()).collect();
    let mut sil = 0.0;
    for i in 0..x.len() {
        let avg = |same: bool| {
            let v: Vec<f64> =
                (0..x.len()).filter(|&j| j != i && (truth[j] == truth[i]) == same).map(|j| (x[i] - x[j]).abs()).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let (a, bb) = (avg(true), avg(false));
        sil += (bb - a) / a.max(bb);
    }
    sil /= x.len() as f64;
    assert!(sil > 0.5, "silhouette {sil}");
}

#[test]
fn white_tiles_have_no_lag_correlation() {
    let l = Lattice::new(vec![64, 64]).unwrap();
    let f = PiecewiseField::homogeneous(l.clone(), 1.0, CovarianceKernel::white(2.0), SpectrumOptions::bccb()).unwrap();
    let g = tile_partition(&l, 16).unwrap();
    // each feature averages 2 axes × 256 sites × 10 realizations of unit-variance products
    let se = 1.0 / (2.0 * 256.0 * 10.0f64).sqrt();
    let mut feats = Vec::new();
    for seed in 0..20 {
        let b = sample_field(&f, 10, 100 + seed, None).unwrap();
        feats.extend(tile_descriptors(&b, &g).unwrap().iter().flat_map(|d| d.autocov_features));
    }
    let beyond = feats.iter().filter(|v| v.abs() > 4.0 * se).count();
    let sd = (feats.iter().map(|v| v * v).sum::<f64>() / feats.len() as f64).sqrt();
    assert!(beyond <= 1, "{beyond} of {} features beyond 4 SE", feats.len());
    assert!((sd / se - 1.0).abs() < 0.1, "spread {sd} vs SE {se}");
}

#[test]
fn white_fit_reproduces_the_classical_rate() {
    let l = Lattice::new(vec![64, 64]).unwrap();
    let f = PiecewiseField::homogeneous(l.clone(), 0.0, CovarianceKernel::white(3.0), SpectrumOptions::bccb()).unwrap();
    let b = sample_field(&f, 10, 2, None).unwrap();
    let g = tile_partition(&l, 16).unwrap();
    let fit = fit_region_models(&b, &g, &vec![0; g.n_tau()], 1).unwrap();
    let all: Vec<f64> = b.fields.iter().flat_map(|x| x.values.iter().copied()).collect();
    let m = all.iter().sum::<f64>() / all.len() as f64;
    let var = all.iter().map(|v| (v - m).powi(2)).sum::<f64>() / all.len() as f64;
    let d = 0.3;
    let r = pwrd::waterfill::solve_water_level(&fit, d).unwrap().rate_bits();
    assert!((r - 0.5 * (var / d).log2()).abs() < 0.02, "{r} vs {}", 0.5 * (var / d).log2());
}
