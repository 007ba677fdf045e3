//! Wall-clock harness for standard TCAV versus the affine-tail fast path.
//!
//! A pipeline run has two timed phases: CAV training and sensitivity
//! scoring. The standard path scores by one logit gradient per evaluation
//! sample; the fast path takes one inner product per CAV and never sees
//! the evaluation samples. Timings use [`Instant`] and run single-threaded.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;

use etcav_core::cav::{extract_cav_runs, CavBundle, CavOptions};
use etcav_core::network::{LayerIndex, MlpArch, NetworkSpec};
use etcav_core::synthdata::ConceptProbeSet;
use etcav_core::tcav::stats::{mean, std_dev};
use etcav_core::tcav::{etcav_scores, standard_scores, Method};
use etcav_core::{seed, Error, Result};

/// Repeats below this count get a noise warning.
pub const RECOMMENDED_REPEATS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchRecord {
    pub method: Method,
    /// Layer of interest; the fast path may train and score at the boundary.
    pub layer: LayerIndex,
    pub n_eval: usize,
    pub model_params: usize,
    pub cav_train_ns: u64,
    pub sensitivity_ns: u64,
    pub total_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    CavTrain,
    Sensitivity,
    Total,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::CavTrain, Phase::Sensitivity, Phase::Total];

    pub fn name(self) -> &'static str {
        match self {
            Phase::CavTrain => "cav_train",
            Phase::Sensitivity => "sensitivity",
            Phase::Total => "total",
        }
    }

    pub fn of(self, r: &BenchRecord) -> u64 {
        match self {
            Phase::CavTrain => r.cav_train_ns,
            Phase::Sensitivity => r.sensitivity_ns,
            Phase::Total => r.total_ns,
        }
    }
}

fn elapsed_ns(start: Instant) -> u64 {
    u64::try_from(start.elapsed().as_nanos()).unwrap_or(u64::MAX)
}

/// One pipeline configuration to time.
#[derive(Debug, Clone, Copy)]
pub struct Job<'a> {
    pub net: &'a NetworkSpec,
    pub layer: LayerIndex,
    pub probe: &'a ConceptProbeSet,
    pub k: usize,
    pub method: Method,
}

impl Job<'_> {
    fn once(&self, cav: &CavOptions) -> Result<BenchRecord> {
        let net = self.net;
        let cav_layer = match self.method {
            Method::Standard => self.layer,
            Method::Etcav if net.tail_is_affine(self.layer) => self.layer,
            Method::Etcav => net.find_affine_tail()?,
        };
        let samples = self.probe.evaluation_for(self.k)?;
        let start = Instant::now();
        let bundles = extract_cav_runs(net, cav_layer, self.probe, cav)?.bundles;
        let cav_train_ns = elapsed_ns(start);
        let start = Instant::now();
        let scores = match self.method {
            Method::Standard => standard_scores(net, self.layer, samples, self.k, &bundles, false)?,
            Method::Etcav => etcav_scores(net, cav_layer, self.k, &bundles)?,
        };
        let sensitivity_ns = elapsed_ns(start);
        std::hint::black_box(scores);
        Ok(BenchRecord {
            method: self.method,
            layer: self.layer,
            n_eval: samples.len(),
            model_params: net.param_count(),
            cav_train_ns,
            sensitivity_ns,
            total_ns: cav_train_ns + sensitivity_ns,
        })
    }
}

/// Times every job once for warm-up, then `repeats` rounds that each run
/// all jobs in a shuffled order, so slow drift of the machine and the
/// cache state left by the previous job spread evenly over the jobs. The
/// order is seeded from `cav.seed`. Returns the records per job. Refuses
/// parallel options.
///
/// The fast path trains its CAVs at `layer` when the tail after it is
/// affine, and at the affine-tail boundary otherwise.
pub fn time_interleaved(jobs: &[Job], cav: &CavOptions, repeats: usize) -> Result<Vec<Vec<BenchRecord>>> {
    if repeats == 0 {
        return Err(Error::Input("benchmark needs at least one repeat".into()));
    }
    if cav.parallel {
        return Err(Error::Precondition(
            "benchmarks run single-threaded; disable parallel mode".into(),
        ));
    }
    for job in jobs {
        job.once(cav)?;
    }
    let mut out = vec![Vec::with_capacity(repeats); jobs.len()];
    let mut order: Vec<usize> = (0..jobs.len()).collect();
    let mut rng = seed::rng(seed::stream_seed(cav.seed, "bench/order"));
    for _ in 0..repeats {
        order.shuffle(&mut rng);
        for &i in &order {
            out[i].push(jobs[i].once(cav)?);
        }
    }
    Ok(out)
}

/// Times both methods on every `(net, layer, probe)` target in one
/// interleaved schedule; returns the standard and fast-path records.
pub fn time_both(
    targets: &[(&NetworkSpec, LayerIndex, &ConceptProbeSet)],
    k: usize,
    cav: &CavOptions,
    repeats: usize,
) -> Result<(Vec<BenchRecord>, Vec<BenchRecord>)> {
    let jobs: Vec<Job> = targets
        .iter()
        .flat_map(|&(net, layer, probe)| {
            [Method::Standard, Method::Etcav].map(|method| Job {
                net,
                layer,
                probe,
                k,
                method,
            })
        })
        .collect();
    let (mut standard, mut fast) = (Vec::new(), Vec::new());
    for records in time_interleaved(&jobs, cav, repeats)? {
        match records.first().map(|r| r.method) {
            Some(Method::Standard) => standard.extend(records),
            _ => fast.extend(records),
        }
    }
    Ok((standard, fast))
}

/// Times one pipeline configuration; see [`time_interleaved`].
pub fn time_pipeline(
    net: &NetworkSpec,
    layer: LayerIndex,
    probe: &ConceptProbeSet,
    k: usize,
    method: Method,
    cav: &CavOptions,
    repeats: usize,
) -> Result<Vec<BenchRecord>> {
    let job = Job {
        net,
        layer,
        probe,
        k,
        method,
    };
    Ok(time_interleaved(&[job], cav, repeats)?.remove(0))
}

/// Times the scoring phase alone for fixed bundles: the standard path
/// over `samples`, the fast path at `bundles[0].layer`.
pub fn time_scoring(
    net: &NetworkSpec,
    layer: LayerIndex,
    samples: &[etcav_core::Tensor],
    k: usize,
    bundles: &[CavBundle],
    method: Method,
    repeats: usize,
) -> Result<Vec<u64>> {
    if repeats == 0 {
        return Err(Error::Input("benchmark needs at least one repeat".into()));
    }
    let Some(first) = bundles.first() else {
        return Err(Error::Input("scoring benchmark needs at least one bundle".into()));
    };
    let once = || -> Result<u64> {
        let start = Instant::now();
        let scores = match method {
            Method::Standard => standard_scores(net, layer, samples, k, bundles, false)?,
            Method::Etcav => etcav_scores(net, first.layer, k, bundles)?,
        };
        let ns = elapsed_ns(start);
        std::hint::black_box(scores);
        Ok(ns)
    };
    once()?;
    (0..repeats).map(|_| once()).collect()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// `(t_std − t_e) / t_std`.
pub fn speedup(t_standard: f64, t_etcav: f64) -> f64 {
    (t_standard - t_etcav) / t_standard
}

#[derive(Debug, Clone, PartialEq)]
pub struct Speedup {
    pub layer: LayerIndex,
    pub n_eval: usize,
    pub standard_total_ns: f64,
    pub etcav_total_ns: f64,
    /// Speedup of total time, CAV training included.
    pub inclusive: f64,
    /// Speedup of the sensitivity phase alone.
    pub exclusive: f64,
}

/// Per `(layer, n_eval)` speedups from median times over repeats.
pub fn speedup_report(standard: &[BenchRecord], etcav: &[BenchRecord]) -> Result<Vec<Speedup>> {
    let std_groups = group(standard, Method::Standard)?;
    let fast_groups = group(etcav, Method::Etcav)?;
    if !std_groups.keys().eq(fast_groups.keys()) {
        let missing: Vec<_> = std_groups
            .keys()
            .filter(|k| !fast_groups.contains_key(k))
            .chain(fast_groups.keys().filter(|k| !std_groups.contains_key(k)))
            .collect();
        return Err(Error::Input(format!("unmatched (layer, n_eval) pairs: {missing:?}")));
    }
    if std_groups.is_empty() {
        return Err(Error::Input("no benchmark records".into()));
    }
    Ok(std_groups
        .iter()
        .map(|(&(layer, n_eval), s)| {
            let e = &fast_groups[&(layer, n_eval)];
            let med = |rs: &[&BenchRecord], p: Phase| median(&rs.iter().map(|r| p.of(r) as f64).collect::<Vec<_>>());
            let (st, et) = (med(s, Phase::Total), med(e, Phase::Total));
            Speedup {
                layer,
                n_eval,
                standard_total_ns: st,
                etcav_total_ns: et,
                inclusive: speedup(st, et),
                exclusive: speedup(med(s, Phase::Sensitivity), med(e, Phase::Sensitivity)),
            }
        })
        .collect())
}

fn group(records: &[BenchRecord], method: Method) -> Result<BTreeMap<(LayerIndex, usize), Vec<&BenchRecord>>> {
    let mut out: BTreeMap<_, Vec<_>> = BTreeMap::new();
    for r in records {
        if r.method != method {
            return Err(Error::Input(format!(
                "{} record passed as {}",
                r.method.name(),
                method.name()
            )));
        }
        out.entry((r.layer, r.n_eval)).or_default().push(r);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPoint {
    pub n_eval: usize,
    pub median_ns: f64,
    pub mean_ns: f64,
    pub std_ns: f64,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    /// Sorted by `n_eval`.
    pub series: Vec<SeriesPoint>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_se: f64,
    /// Set when any point has fewer than [`RECOMMENDED_REPEATS`] samples.
    pub noise_warning: Option<String>,
}

impl ScalingReport {
    /// `|slope| ≤ 2·SE`.
    pub fn slope_indistinguishable_from_zero(&self) -> bool {
        self.slope.abs() <= 2.0 * self.slope_se
    }
}

/// Ordinary least squares of time against `n_eval` over every
/// observation; each point contributes all of its repeats.
///
/// A perfect fit, constant series included, has `r² = 1`.
pub fn scaling_fit(points: &[(usize, Vec<f64>)]) -> Result<ScalingReport> {
    let mut series: Vec<SeriesPoint> = points
        .iter()
        .map(|(n, times)| {
            if times.is_empty() {
                return Err(Error::Input(format!("no timings at n_eval = {n}")));
            }
            Ok(SeriesPoint {
                n_eval: *n,
                median_ns: median(times),
                mean_ns: mean(times),
                std_ns: std_dev(times),
                repeats: times.len(),
            })
        })
        .collect::<Result<_>>()?;
    series.sort_by_key(|p| p.n_eval);
    let mut distinct: Vec<usize> = series.iter().map(|p| p.n_eval).collect();
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(Error::InsufficientData {
            what: "distinct n_eval values for a scaling fit".into(),
            requested: 4,
            available: distinct.len(),
        });
    }

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (n, times) in points {
        xs.extend(std::iter::repeat_n(*n as f64, times.len()));
        ys.extend(times);
    }
    let n = xs.len() as f64;
    let (mx, my) = (mean(&xs), mean(&ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else if ss_res == 0.0 { 1.0 } else { 0.0 };
    let slope_se = (ss_res / (n - 2.0) / sxx).sqrt();

    let min_repeats = series.iter().map(|p| p.repeats).min().unwrap_or(0);
    let noise_warning = (min_repeats < RECOMMENDED_REPEATS).then(|| {
        format!("only {min_repeats} repeat(s) per point; timings below {RECOMMENDED_REPEATS} repeats are noisy")
    });
    Ok(ScalingReport {
        series,
        slope,
        intercept,
        r_squared,
        slope_se,
        noise_warning,
    })
}

/// Groups one phase of `records` by `n_eval` for [`scaling_fit`].
pub fn phase_series(records: &[BenchRecord], phase: Phase) -> Vec<(usize, Vec<f64>)> {
    let mut by_n: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records {
        by_n.entry(r.n_eval).or_default().push(phase.of(r) as f64);
    }
    by_n.into_iter().collect()
}

/// The desk MLP with every hidden width multiplied by `factor`.
pub fn widened(arch: &MlpArch, factor: usize) -> MlpArch {
    MlpArch {
        hidden: arch.hidden.iter().map(|w| w * factor).collect(),
        ..arch.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapPoint {
    pub model_params: usize,
    pub standard_ns: f64,
    pub etcav_ns: f64,
}

impl GapPoint {
    pub fn gap_ns(&self) -> f64 {
        self.standard_ns - self.etcav_ns
    }
}

/// Median `phase` time per method for each model size.
///
/// At the boundary both paths train the same CAVs from the same seeds, so
/// the training term cancels in the gap; [`Phase::Sensitivity`] measures
/// the gap without timing that shared work twice.
pub fn gap_series(standard: &[BenchRecord], etcav: &[BenchRecord], phase: Phase) -> Result<Vec<GapPoint>> {
    let by_params = |rs: &[BenchRecord]| {
        let mut m: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in rs {
            m.entry(r.model_params).or_default().push(phase.of(r) as f64);
        }
        m
    };
    let (s, e) = (by_params(standard), by_params(etcav));
    if !s.keys().eq(e.keys()) {
        return Err(Error::Input("standard and fast records cover different model sizes".into()));
    }
    Ok(s
        .iter()
        .map(|(&p, ts)| GapPoint {
            model_params: p,
            standard_ns: median(ts),
            etcav_ns: median(&e[&p]),
        })
        .collect())
}

/// `true` when each gap is strictly larger than the previous one.
pub fn gap_is_increasing(points: &[GapPoint]) -> bool {
    points.windows(2).all(|w| w[1].gap_ns() > w[0].gap_ns())
}

/// Long-format CSV: one row per record and phase.
pub fn records_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from("method,layer,n_eval,params,phase,ns\n");
    for r in records {
        for p in Phase::ALL {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.method.name(),
                r.layer,
                r.n_eval,
                r.model_params,
                p.name(),
                p.of(r)
            );
        }
    }
    out
}

pub fn scaling_csv(method: Method, report: &ScalingReport) -> String {
    let mut out = String::from("method,n_eval,median_ns,mean_ns,std_ns,repeats\n");
    for p in &report.series {
        let _ = writeln!(
            out,
            "{},{},{:.1},{:.1},{:.1},{}",
            method.name(),
            p.n_eval,
            p.median_ns,
            p.mean_ns,
            p.std_ns,
            p.repeats
        );
    }
    out
}

pub fn speedup_csv(rows: &[Speedup]) -> String {
    let mut out = String::from("layer,n_eval,standard_ns,etcav_ns,speedup_inclusive,speedup_exclusive\n");
    for s in rows {
        let _ = writeln!(
            out,
            "{},{},{:.1},{:.1},{:.6},{:.6}",
            s.layer, s.n_eval, s.standard_total_ns, s.etcav_total_ns, s.inclusive, s.exclusive
        );
    }
    out
}

/// Two columns: parameter count and time gap in nanoseconds.
pub fn gap_plot_data(points: &[GapPoint]) -> String {
    let mut out = String::from("# params delta_ns\n");
    for p in points {
        let _ = writeln!(out, "{} {:.1}", p.model_params, p.gap_ns());
    }
    out
}
