//! Wall-clock benchmarks reported as medians over repetitions.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::alignment::{align_with, AlignmentConfig, Overlap};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::loss::{finite_difference_gradient, total_gradient, LossConfig};
use crate::metrics::{entropic_gw, spectral_invariants, SpectrumOrder};
use crate::rotation::{rotate_spectrum, UnitQuaternion};
use crate::zernike::{project_moments, ZernikeBasis};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub operation: String,
    /// Name of the swept parameter (`n`, `l_max`, `eps`, `iterations`).
    pub parameter: String,
    pub value: f64,
    /// Secondary fixed parameter, when the sweep is two-dimensional.
    pub context: String,
    pub repetitions: usize,
    pub median_ms: f64,
    /// Median absolute deviation.
    pub mad_ms: f64,
    /// Alignment iterations executed per repetition, where meaningful.
    pub alignment_iterations: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchSuite {
    /// Projection and post-projection loss cost versus `N` and `ℓ_max`.
    Loss,
    /// Entropic GW versus `N` and `ε`.
    GromovWasserstein,
    /// Trispectrum versus `ℓ_max`.
    Trispectrum,
    /// Per-step implicit versus finite-difference gradient cost versus the
    /// alignment iteration budget.
    Gradient,
}

impl BenchSuite {
    pub const ALL: [BenchSuite; 4] = [
        BenchSuite::Loss,
        BenchSuite::GromovWasserstein,
        BenchSuite::Trispectrum,
        BenchSuite::Gradient,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchSuite::Loss => "loss",
            BenchSuite::GromovWasserstein => "gw",
            BenchSuite::Trispectrum => "trispectrum",
            BenchSuite::Gradient => "gradient",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown bench suite '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    /// Timed repetitions; one extra warm-up run is discarded.
    pub repetitions: usize,
    /// Allow rayon to use every core instead of a single worker.
    pub parallel: bool,
    pub loss_sizes: Vec<usize>,
    pub loss_l_max: Vec<usize>,
    pub gw_sizes: Vec<usize>,
    pub gw_eps: Vec<f64>,
    /// `ε` used for the size sweep and size used for the `ε` sweep.
    pub gw_fixed_eps: f64,
    pub gw_fixed_size: usize,
    pub trispectrum_l_max: Vec<usize>,
    pub gradient_budgets: Vec<usize>,
    pub gradient_points: usize,
    pub gradient_l_max: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            repetitions: 5,
            parallel: false,
            loss_sizes: vec![1_000, 10_000, 50_000],
            loss_l_max: vec![4, 6, 8, 10],
            gw_sizes: vec![50, 100, 200],
            gw_eps: vec![1.0, 0.5, 0.25],
            gw_fixed_eps: 0.5,
            gw_fixed_size: 100,
            trispectrum_l_max: vec![2, 4, 6, 8],
            gradient_budgets: vec![50, 100, 200, 400],
            gradient_points: 20,
            gradient_l_max: 4,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("bench: {m}")));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        if self.loss_sizes.contains(&0) || self.gw_sizes.contains(&0) || self.gw_fixed_size == 0 {
            return bad("cloud sizes must be positive");
        }
        if !self
            .gw_eps
            .iter()
            .chain([&self.gw_fixed_eps])
            .all(|&e| e > 0.0 && e.is_finite())
        {
            return bad("GW regularizations must be positive");
        }
        if self.gradient_budgets.contains(&0) || self.gradient_points == 0 {
            return bad("gradient budgets and point count must be positive");
        }
        Ok(())
    }
}

/// Median and median absolute deviation of `f`'s wall time in ms, after
/// one discarded warm-up call.
pub fn time_ms<F: FnMut() -> Result<()>>(repetitions: usize, mut f: F) -> Result<(f64, f64)> {
    f()?;
    let mut t = Vec::with_capacity(repetitions);
    for _ in 0..repetitions.max(1) {
        let start = Instant::now();
        f()?;
        t.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let med = median(&mut t);
    let mut dev: Vec<f64> = t.iter().map(|x| (x - med).abs()).collect();
    Ok((med, median(&mut dev)))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares slope of `median_ms` against `value` for one operation.
pub fn fit_slope(records: &[BenchRecord], operation: &str) -> Option<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.operation == operation)
        .map(|r| (r.value, r.median_ms))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

struct Recorder<'a> {
    cfg: &'a BenchConfig,
    out: Vec<BenchRecord>,
}

impl Recorder<'_> {
    fn run<F: FnMut() -> Result<()>>(
        &mut self,
        operation: &str,
        parameter: &str,
        value: f64,
        context: String,
        alignment_iterations: Option<usize>,
        f: F,
    ) -> Result<()> {
        let (median_ms, mad_ms) = time_ms(self.cfg.repetitions, f)?;
        self.out.push(BenchRecord {
            operation: operation.into(),
            parameter: parameter.into(),
            value,
            context,
            repetitions: self.cfg.repetitions.max(1),
            median_ms,
            mad_ms,
            alignment_iterations,
        });
        Ok(())
    }
}

/// A fixed-budget alignment: the convergence test never fires.
fn budget_alignment(iterations: usize) -> AlignmentConfig {
    AlignmentConfig {
        convergence_threshold: f64::MIN_POSITIVE,
        max_iterations: iterations,
        ..Default::default()
    }
}

fn loss_suite(rec: &mut Recorder) -> Result<()> {
    let seed = rec.cfg.seed;
    let rot =
        UnitQuaternion::from_axis_angle(&nalgebra::Vector3::new(1.0, 2.0, 3.0).normalize(), 0.7)?;
    for &l in &rec.cfg.loss_l_max.clone() {
        let basis = ZernikeBasis::new(l, l)?;
        for &n in &rec.cfg.loss_sizes.clone() {
            let cloud = fixtures::bunny(n, seed)?;
            let normalized = cloud.normalize_self()?;
            let ctx = format!("l_max={l}");
            rec.run("projection", "n", n as f64, ctx.clone(), None, || {
                project_moments(&basis, &normalized).map(drop)
            })?;
            let c_evol = project_moments(&basis, &normalized)?;
            let c_target = project_moments(&basis, &cloud.rotate(&rot).normalize_self()?)?;
            let cfg = budget_alignment(200);
            rec.run(
                "loss_post_projection",
                "n",
                n as f64,
                ctx,
                Some(200),
                || {
                    let overlap = Overlap::new(&c_evol, &c_target)?;
                    let a = align_with(&overlap, &UnitQuaternion::identity(), &cfg)?;
                    let aligned = rotate_spectrum(&c_evol, &overlap.table().eval(&a.q_star))?;
                    std::hint::black_box(c_target.sub(&aligned).norm_squared());
                    Ok(())
                },
            )?;
        }
    }
    Ok(())
}

fn gw_suite(rec: &mut Recorder) -> Result<()> {
    let seed = rec.cfg.seed;
    let pair = |n: usize| -> Result<_> {
        let x = fixtures::bunny(n, seed)?;
        let y = fixtures::subsample(&fixtures::bunny(2 * n, seed + 1)?, n, seed)?;
        Ok((x, y))
    };
    let eps = rec.cfg.gw_fixed_eps;
    for &n in &rec.cfg.gw_sizes.clone() {
        let (x, y) = pair(n)?;
        rec.run("gw", "n", n as f64, format!("eps={eps}"), None, || {
            entropic_gw(&x, &y, eps, 5000).map(drop)
        })?;
    }
    let n = rec.cfg.gw_fixed_size;
    let (x, y) = pair(n)?;
    for &e in &rec.cfg.gw_eps.clone() {
        rec.run("gw", "eps", e, format!("n={n}"), None, || {
            entropic_gw(&x, &y, e, 5000).map(drop)
        })?;
    }
    Ok(())
}

fn trispectrum_suite(rec: &mut Recorder) -> Result<()> {
    let cloud = fixtures::bunny(2000, rec.cfg.seed)?.normalize_self()?;
    for &l in &rec.cfg.trispectrum_l_max.clone() {
        let m = project_moments(&ZernikeBasis::new(l, l)?, &cloud)?;
        rec.run(
            "trispectrum",
            "l_max",
            l as f64,
            String::new(),
            None,
            || {
                std::hint::black_box(spectral_invariants(&m, SpectrumOrder::Trispectrum));
                Ok(())
            },
        )?;
    }
    Ok(())
}

fn gradient_suite(rec: &mut Recorder) -> Result<()> {
    let seed = rec.cfg.seed;
    let n = rec.cfg.gradient_points;
    let l = rec.cfg.gradient_l_max;
    let basis = ZernikeBasis::new(2 * l, l)?;
    let target = fixtures::bunny(200, seed)?.normalize_self()?;
    let c_target = project_moments(&basis, &target)?;
    let cloud = fixtures::add_noise(&fixtures::ellipsoid(n, [1.5, 1.0, 0.8], seed)?, 0.05, seed)?;
    let ctx = format!("n={n},l_max={l}");
    for &budget in &rec.cfg.gradient_budgets.clone() {
        let loss_cfg = LossConfig {
            alignment: budget_alignment(budget),
            multi_start: 1,
            ..Default::default()
        };
        rec.run(
            "implicit_gradient",
            "iterations",
            budget as f64,
            ctx.clone(),
            Some(budget),
            || total_gradient(&basis, &cloud, &c_target, target.scale, &loss_cfg, None).map(drop),
        )?;
        let evaluations = 1 + 6 * n;
        rec.run(
            "fd_gradient",
            "iterations",
            budget as f64,
            ctx.clone(),
            Some(evaluations * budget),
            || {
                finite_difference_gradient(
                    &basis,
                    &cloud,
                    &c_target,
                    target.scale,
                    &loss_cfg,
                    1e-5,
                    None,
                    false,
                )
                .map(drop)
            },
        )?;
    }
    Ok(())
}

/// Runs the selected suites, on a single worker unless `cfg.parallel`.
pub fn runtime_bench(suites: &[BenchSuite], cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    cfg.validate()?;
    let threads = if cfg.parallel { 0 } else { 1 };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| {
        let mut rec = Recorder {
            cfg,
            out: Vec::new(),
        };
        for s in suites {
            match s {
                BenchSuite::Loss => loss_suite(&mut rec)?,
                BenchSuite::GromovWasserstein => gw_suite(&mut rec)?,
                BenchSuite::Trispectrum => trispectrum_suite(&mut rec)?,
                BenchSuite::Gradient => gradient_suite(&mut rec)?,
            }
        }
        Ok(rec.out)
    })
}

/// CSV keyed by `(operation, parameter, value, context)`.
pub fn bench_csv(records: &[BenchRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)
            .map_err(|e| Error::InvalidConfig(format!("csv: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidConfig(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(op: &str, v: f64, t: f64) -> BenchRecord {
        BenchRecord {
            operation: op.into(),
            parameter: "x".into(),
            value: v,
            context: String::new(),
            repetitions: 5,
            median_ms: t,
            mad_ms: 0.0,
            alignment_iterations: None,
        }
    }

    #[test]
    fn median_and_slope() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        let r = vec![
            rec("a", 1.0, 3.0),
            rec("a", 2.0, 5.0),
            rec("a", 3.0, 7.0),
            rec("b", 1.0, 0.0),
        ];
        assert!((fit_slope(&r, "a").unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(fit_slope(&r, "b"), None);
    }

    #[test]
    fn timing_is_positive_and_csv_has_header() {
        let (m, d) = time_ms(3, || {
            std::hint::black_box((0..10_000).map(|i| i as f64).sum::<f64>());
            Ok(())
        })
        .unwrap();
        assert!(m > 0.0 && d >= 0.0);
        let csv = bench_csv(&[rec("a", 1.0, 2.0)]).unwrap();
        assert!(csv.starts_with("operation,parameter,value,context,repetitions,median_ms,mad_ms"));
    }

    #[test]
    fn suite_names_round_trip() {
        for s in BenchSuite::ALL {
            assert_eq!(BenchSuite::parse(s.name()).unwrap(), s);
        }
        assert!(BenchSuite::parse("nope").is_err());
    }
}
