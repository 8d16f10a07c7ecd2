use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;

use pwrd::bounds::{bound_curve_csv, bound_point, scale_field, BoundConfig, BoundPoint, GammaPolicy, McConfig};
use pwrd::diagnostics::{
    empirical_second_order, gaussianity_decision, model_selection, radial_profile_csv, Candidate, ProbeConfig,
    SecondOrderConfig,
};
use pwrd::field::{PiecewiseField, SpectrumMethod};
use pwrd::io::{model_to_json, read_batch, read_model, write_batch, Dtype};
use pwrd::sampler::sample_field;
use pwrd::tiling::{cluster_tiles, fit_region_models, label_map_pgm, tile_descriptors, tile_partition, ClusterConfig};
use pwrd::waterfill::{rd_curve, rd_curve_csv, RdPoint};
use pwrd::Error;

use crate::config::{to_json, write_resolved};
use crate::svg::{line_chart, Series};
use crate::{BoundsOpts, DiagnoseOpts, FitOpts, SampleOpts};

fn required<T: Clone>(v: &Option<T>, name: &str) -> Result<T> {
    v.clone().ok_or_else(|| Error::Config(format!("missing required option --{name}")).into())
}

fn out_dir(out: &Option<PathBuf>) -> Result<PathBuf> {
    let dir = required(out, "out")?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Apply optional spectrum overrides to a loaded model.
fn override_spectrum(field: PiecewiseField, method: &Option<String>, tile: Option<usize>) -> Result<PiecewiseField> {
    if method.is_none() && tile.is_none() {
        return Ok(field);
    }
    let mut opts = field.options();
    if let Some(m) = method {
        opts.method = m.parse::<SpectrumMethod>()?;
    }
    if tile.is_some() {
        opts.tile = tile;
    }
    Ok(PiecewiseField::build(field.lattice.clone(), field.partition.clone(), field.specs(), opts)?)
}

pub fn sample(mut o: SampleOpts) -> Result<()> {
    let model_path = required(&o.model, "model")?;
    let count = *o.count.get_or_insert(1);
    let seed = *o.seed.get_or_insert(0);
    let dtype: Dtype = o.dtype.get_or_insert_with(|| "float64".into()).parse()?;
    let field = override_spectrum(read_model(&model_path)?, &o.method, o.tile)?;
    let dir = out_dir(&o.out)?;
    let batch = sample_field(&field, count, seed, o.padding)?;
    write_batch(&dir, &batch, dtype)?;
    write_resolved(&dir, "sample", &o)
}

#[derive(Serialize)]
struct FitReport<'a> {
    tile: usize,
    n_tau: usize,
    margin_sites: usize,
    #[serde(rename = "K")]
    k: usize,
    tile_labels: &'a [usize],
    trace: &'a [pwrd::tiling::KScore],
    skipped: &'a [usize],
    descriptors: &'a [pwrd::tiling::TileDescriptor],
}

pub fn fit(mut o: FitOpts) -> Result<()> {
    let input = required(&o.input, "input")?;
    let k = *o.tile.get_or_insert(16);
    let defaults = ClusterConfig::default();
    let cfg = ClusterConfig {
        k_range: o.k_range.get_or_insert(defaults.k_range).clone(),
        restarts: *o.restarts.get_or_insert(defaults.restarts),
        max_iter: defaults.max_iter,
        seed: *o.seed.get_or_insert(defaults.seed),
    };
    let batch = read_batch(&input)?;
    let grid = tile_partition(batch.lattice(), k)?;
    let desc = tile_descriptors(&batch, &grid)?;
    let clustering = cluster_tiles(&batch, &grid, &desc, &cfg)?;
    let field = fit_region_models(&batch, &grid, &clustering.labels, clustering.k)?;
    let dir = out_dir(&o.out)?;
    let metadata = json!({
        "source": input.display().to_string(),
        "realizations": batch.len(),
        "tile": k,
        "K": clustering.k,
        "selection": "BIC over k-means clusterings of tile descriptors, n_eff = T",
        "descriptors": "tile mean, log variance, lag-1 autocovariance ratios along the axes",
        "region_model": "pooled circular autocovariance of the region's tiles, tabulated with compact support",
        "margin": "sites outside whole tiles take the label of the nearest tile",
        "trace": clustering.trace,
    });
    write(&dir.join("model.json"), model_to_json(&field, Some(metadata)))?;
    write(&dir.join("labels.pgm"), label_map_pgm(&field.lattice, &field.partition))?;
    let report = FitReport {
        tile: k,
        n_tau: grid.n_tau(),
        margin_sites: grid.margin_sites(),
        k: clustering.k,
        tile_labels: &clustering.labels,
        trace: &clustering.trace,
        skipped: &clustering.skipped,
        descriptors: &desc,
    };
    write(&dir.join("fit_report.json"), to_json(&report))?;
    write_resolved(&dir, "fit", &o)
}

pub fn diagnose(mut o: DiagnoseOpts) -> Result<()> {
    let input = required(&o.input, "input")?;
    let pdef = ProbeConfig::default();
    let sdef = SecondOrderConfig::default();
    let pcfg = ProbeConfig {
        probes: *o.probes.get_or_insert(pdef.probes),
        support: o.support,
        alpha: *o.alpha.get_or_insert(pdef.alpha),
        delta: *o.delta.get_or_insert(pdef.delta),
    };
    let scfg = SecondOrderConfig {
        stationarity_threshold: *o.stationarity_threshold.get_or_insert(sdef.stationarity_threshold),
        isotropy_threshold: *o.isotropy_threshold.get_or_insert(sdef.isotropy_threshold),
    };
    let seed = *o.seed.get_or_insert(0);
    let batch = read_batch(&input)?;

    let second = empirical_second_order(&batch, &scfg)?;
    let probes = gaussianity_decision(&batch, &pcfg, seed)?;

    let model = o.model.as_deref().map(read_model).transpose()?;
    let tile = o.tile.or(model.as_ref().and_then(|m| m.tile));
    let mut candidates = Vec::new();
    if let Some(m) = &model {
        if m.lattice.dims() != batch.lattice().dims() {
            return Err(Error::ShapeMismatch(format!(
                "model lattice {:?} but data lattice {:?}",
                m.lattice.dims(),
                batch.lattice().dims()
            ))
            .into());
        }
        candidates.push(Candidate::PiecewiseGrf { partition: m.partition.clone(), tile });
    }
    candidates.extend([
        Candidate::GlobalGrf { tile },
        Candidate::Grp1d,
        Candidate::IidGaussian,
        Candidate::Laplace,
        Candidate::Poisson,
    ]);
    let scores = model_selection(&batch, &candidates)?;

    let dir = out_dir(&o.out)?;
    let report = json!({
        "probe_report": probes,
        "second_order": {
            "stationarity": second.stationarity,
            "isotropy": second.isotropy,
            "radial_profile": second.radial_profile,
        },
        "model_scores": scores,
    });
    write(&dir.join("diagnostics.json"), to_json(&report))?;
    write(&dir.join("radial_profile.csv"), radial_profile_csv(&second.radial_profile))?;
    write_resolved(&dir, "diagnose", &o)
}

#[derive(Serialize)]
struct BoundDetail {
    n: usize,
    status: String,
    rate_pw_bits: Option<f64>,
    regimes: Vec<&'static str>,
    mc_samples: usize,
    inner_samples: usize,
}

const BOUND_COLUMNS: usize = 9;

fn infeasible_row(n: usize, epsilon: f64, d: f64, seed: u64) -> String {
    let mut cells = vec![n.to_string()];
    cells.extend(std::iter::repeat(String::new()).take(5));
    cells.extend([epsilon.to_string(), d.to_string(), seed.to_string()]);
    debug_assert_eq!(cells.len(), BOUND_COLUMNS);
    cells.join(",") + "\n"
}

pub fn bounds(mut o: BoundsOpts) -> Result<()> {
    let model_path = required(&o.model, "model")?;
    let d = required(&o.d, "d")?;
    let epsilon = *o.epsilon.get_or_insert(0.05);
    let d_grid = o.d_grid.get_or_insert_with(|| vec![d]).clone();
    let mut scales = o.scales.get_or_insert_with(|| vec![1]).clone();
    scales.sort_unstable();
    scales.dedup();
    if scales.contains(&0) {
        return Err(Error::Config("scales must be positive".into()).into());
    }
    let mdef = McConfig::default();
    let bdef = BoundConfig::default();
    let config = BoundConfig {
        mc: McConfig {
            mc_samples: *o.mc_samples.get_or_insert(mdef.mc_samples),
            inner_samples: *o.inner_samples.get_or_insert(mdef.inner_samples),
            exact_limit: *o.exact_limit.get_or_insert(mdef.exact_limit),
            seed: *o.seed.get_or_insert(mdef.seed),
        },
        gamma: match &o.gammas {
            Some(g) => GammaPolicy::Fixed(g.clone()),
            None => GammaPolicy::Default,
        },
        tol_bits: *o.tol_bits.get_or_insert(bdef.tol_bits),
        approx_only: *o.approx_only.get_or_insert(false),
    };
    let svg = *o.svg.get_or_insert(false);
    let base = override_spectrum(read_model(&model_path)?, &o.method, o.tile)?;

    let rd = rd_curve(&base, &d_grid, epsilon)?;

    let mut csv = String::from(pwrd::bounds::BOUND_CSV_HEADER);
    csv.push('\n');
    let mut points: Vec<BoundPoint> = Vec::new();
    let mut details = Vec::new();
    for &s in &scales {
        let field = scale_field(&base, s)?;
        let n = field.n();
        match bound_point(&field, d, epsilon, &config) {
            Ok(p) => {
                let row = bound_curve_csv(std::slice::from_ref(&p));
                csv.push_str(row.lines().nth(1).unwrap_or_default());
                csv.push('\n');
                details.push(BoundDetail {
                    n,
                    status: "ok".into(),
                    rate_pw_bits: Some(p.rate_pw),
                    regimes: p.regimes.iter().map(|r| r.as_str()).collect(),
                    mc_samples: p.mc_samples,
                    inner_samples: p.inner_samples,
                });
                points.push(p);
            }
            Err(e @ Error::DistortionOutOfRange { .. }) => {
                csv.push_str(&infeasible_row(n, epsilon, d, config.mc.seed));
                details.push(BoundDetail {
                    n,
                    status: format!("infeasible: {e}"),
                    rate_pw_bits: None,
                    regimes: Vec::new(),
                    mc_samples: 0,
                    inner_samples: 0,
                });
            }
            Err(e) => return Err(e.into()),
        }
    }

    let dir = out_dir(&o.out)?;
    write(&dir.join("rd_curve.csv"), rd_curve_csv(&rd))?;
    write(&dir.join("bounds.csv"), csv)?;
    write(&dir.join("bounds_detail.json"), to_json(&details))?;
    if svg {
        write(&dir.join("rd_curve.svg"), rd_svg(&rd))?;
        write(&dir.join("bounds.svg"), bounds_svg(&points, config.approx_only))?;
    }
    write_resolved(&dir, "bounds", &o)
}

fn rd_svg(rd: &[RdPoint]) -> String {
    let pts = |f: fn(&RdPoint) -> Option<f64>| rd.iter().filter_map(|p| f(p).map(|y| (p.d, y))).collect();
    line_chart(
        "Rate-distortion",
        "D",
        "bits per site",
        false,
        &[
            Series { name: "R(D)", points: pts(|p| p.rate_bits) },
            Series { name: "second order", points: pts(|p| p.second_order_bits) },
        ],
    )
}

fn bounds_svg(points: &[BoundPoint], approx_only: bool) -> String {
    let pts = |f: fn(&BoundPoint) -> f64| points.iter().map(|p| (p.n as f64, f(p))).collect();
    let mut series = vec![
        Series { name: "R(D)", points: pts(|p| p.rate_pw) },
        Series { name: "approximation", points: pts(|p| p.rate_approx) },
    ];
    if !approx_only {
        series.push(Series { name: "converse", points: pts(|p| p.rate_conv) });
        series.push(Series { name: "achievability", points: pts(|p| p.rate_ach) });
    }
    line_chart("Finite-blocklength rates", "n", "bits per site", true, &series)
}
