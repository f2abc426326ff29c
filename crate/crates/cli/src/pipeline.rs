//! The experiment phases: reduced-model construction, design optimization,
//! held-out evaluation and exact-operator validation.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use oeduu::counters::SolveCounter;
use oeduu::darcy::draw_sample;
use oeduu::grid::Grid;
use oeduu::objective::{SaaProblem, SampleTerm};
use oeduu::prior::PriorModel;
use oeduu::reduction::cluster::{default_probe_bumps, probe_field};
use oeduu::reduction::{
    cluster_bases, cluster_samples, exact_gramians, reduce_with_bases, sketch_samples, Clustering, CompositeSpectra,
    ReducedModels, ReductionParams, Sketch,
};
use oeduu::sparsify::{continuation_alpha_search, AlphaTrial, StageRecord};
use oeduu::transport::{ForwardOperator, SensorNetwork};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::{
    read_json, read_rows, write_json, write_rows, BasisSize, PhaseRecord, RomArchive, RomMeta, RunManifest, SampleInfo,
    DESIGN_DIR, EVAL_DIR, EVAL_ROM_DIR, ROM_DIR, VALIDATE_DIR,
};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::seeds;

/// Priors, sensors and a solve counter shared by every PDE object.
pub struct Problem {
    pub config: ExperimentConfig,
    pub grid: Grid,
    pub prior: PriorModel,
    pub theta_prior: PriorModel,
    pub sensors: Arc<SensorNetwork>,
    pub counter: SolveCounter,
}

impl Problem {
    pub fn new(config: &ExperimentConfig) -> CliResult<Self> {
        config.validate()?;
        let counter = SolveCounter::new();
        Ok(Self {
            config: config.clone(),
            grid: config.grid(),
            prior: config.parameter_prior()?.with_counter(counter.clone()),
            theta_prior: config.theta_prior()?.with_counter(counter.clone()),
            sensors: Arc::new(config.sensor_network()?),
            counter,
        })
    }

    /// Forward operators of the uncertainty samples drawn from `seeds`. The
    /// field draw and the pressure solve count as one solve each.
    pub fn forwards(&self, seeds: &[u64]) -> CliResult<Vec<ForwardOperator>> {
        let range = (self.config.darcy.t0_min, self.config.darcy.t0_max);
        let out = seeds
            .par_iter()
            .map(|&seed| {
                let sample = draw_sample(&self.theta_prior, range, seed)?;
                self.counter.add(2);
                let f = ForwardOperator::new(self.grid, Arc::new(sample), self.config.transport.clone(), self.sensors.clone())?;
                Ok(f.with_counter(self.counter.clone()))
            })
            .collect::<oeduu::Result<Vec<_>>>()?;
        Ok(out)
    }

    pub fn pde_solves(&self) -> u64 {
        self.counter.get()
    }
}

/// Which sample family a reduced model is built for.
#[derive(Debug, Clone)]
pub struct RomSpec {
    pub sample_tag: &'static str,
    pub sketch_tag: &'static str,
    pub kmeans_tag: &'static str,
    pub n: usize,
    pub mu: f64,
    pub clusters: usize,
    pub r_sketch: usize,
    /// Tolerances and cluster counts whose basis sizes are reported.
    pub report_mu: Vec<f64>,
    pub report_clusters: Vec<usize>,
}

impl RomSpec {
    pub fn saa(cfg: &ExperimentConfig) -> Self {
        Self {
            sample_tag: seeds::SAA,
            sketch_tag: seeds::SAA_SKETCH,
            kmeans_tag: seeds::SAA_KMEANS,
            n: cfg.experiment.n_saa,
            mu: cfg.reduction.mu,
            clusters: cfg.reduction.clusters,
            r_sketch: cfg.reduction.r_sketch,
            report_mu: cfg.reduction.report_mu.clone(),
            report_clusters: cfg.reduction.report_clusters.clone(),
        }
    }

    pub fn evaluation(cfg: &ExperimentConfig) -> Self {
        Self {
            sample_tag: seeds::EVAL,
            sketch_tag: seeds::EVAL_SKETCH,
            kmeans_tag: seeds::EVAL_KMEANS,
            n: cfg.evaluation.n_eval,
            mu: cfg.evaluation.mu,
            clusters: cfg.evaluation.clusters,
            r_sketch: cfg.evaluation.r_sketch,
            report_mu: Vec::new(),
            report_clusters: Vec::new(),
        }
    }
}

/// Sampled forwards with their sketches, reusable for several truncations.
pub struct SketchedSamples {
    pub seeds: Vec<u64>,
    pub forwards: Vec<ForwardOperator>,
    pub sketches: Vec<Sketch>,
}

pub fn sketch_family(problem: &Problem, spec: &RomSpec) -> CliResult<SketchedSamples> {
    let master = problem.config.seed;
    let seeds = seeds::sample_seeds(master, spec.sample_tag, spec.n);
    let forwards = problem.forwards(&seeds)?;
    let sketches = sketch_samples(&forwards, &problem.prior, spec.r_sketch, seeds::stream(master, spec.sketch_tag, 0))?;
    Ok(SketchedSamples { seeds, forwards, sketches })
}

pub fn clustering(problem: &Problem, spec: &RomSpec, forwards: &[ForwardOperator], l: usize) -> CliResult<Clustering> {
    if l == 1 {
        return Ok(Clustering { assignments: vec![0; forwards.len()], centroids: vec![Vec::new()], iterations: 0 });
    }
    let probe = probe_field(&problem.grid, &default_probe_bumps(&problem.grid));
    Ok(cluster_samples(forwards, &probe, l, seeds::stream(problem.config.seed, spec.kmeans_tag, 0))?)
}

/// Basis sizes of every cluster for each tolerance in `mus`.
pub fn basis_sizes(sketches: &[Sketch], clustering: &Clustering, mus: &[f64], common_k: bool, cfg: &ExperimentConfig) -> CliResult<Vec<BasisSize>> {
    let mut out = Vec::new();
    for c in 0..clustering.n_clusters() {
        let members = clustering.members(c);
        let refs: Vec<&Sketch> = members.iter().map(|&i| &sketches[i]).collect();
        let spectra = CompositeSpectra::new(&refs)?;
        for &mu in mus {
            let b = spectra.truncate(mu, cfg.reduction.truncation, common_k)?;
            out.push(BasisSize {
                mu,
                clusters: clustering.n_clusters(),
                cluster: c,
                members: members.len(),
                k: b.k,
                k_range: b.q.ncols(),
                k_corange: b.q_hat.ncols(),
            });
        }
    }
    Ok(out)
}

/// Samples, sketches, clusters and reduces one sample family and returns the
/// factored Gramians of every sample.
pub fn build_rom(problem: &Problem, spec: &RomSpec) -> CliResult<RomArchive> {
    let cfg = &problem.config;
    let fam = sketch_family(problem, spec)?;
    let mut sizes = Vec::new();
    for &l in &spec.report_clusters {
        if l == spec.clusters {
            continue;
        }
        let cl = clustering(problem, spec, &fam.forwards, l)?;
        sizes.extend(basis_sizes(&fam.sketches, &cl, &spec.report_mu, cfg.reduction.common_k, cfg)?);
    }
    let cl = clustering(problem, spec, &fam.forwards, spec.clusters)?;
    let mut mus = vec![spec.mu];
    mus.extend(spec.report_mu.iter().copied().filter(|&m| m != spec.mu));
    sizes.extend(basis_sizes(&fam.sketches, &cl, &mus, cfg.reduction.common_k, cfg)?);
    sizes.sort_by(|a, b| (a.clusters, a.cluster).cmp(&(b.clusters, b.cluster)).then(b.mu.total_cmp(&a.mu)));

    let params = ReductionParams { mu: spec.mu, clusters: spec.clusters, r_sketch: spec.r_sketch, ..cfg.reduction.params() };
    let bases = cluster_bases(&fam.sketches, &cl, &problem.prior, &params)?;
    let models = reduce_with_bases(&fam.forwards, &problem.prior, &fam.sketches, &cl, &bases, params.mode)?;
    let rm = ReducedModels { models, bases, clustering: cl };
    let gramians = rm.low_rank_gramians(cfg.reduction.gramian_tol)?;
    let samples = fam
        .forwards
        .iter()
        .zip(&fam.seeds)
        .zip(&gramians)
        .enumerate()
        .map(|(i, ((f, &seed), g))| SampleInfo {
            index: i,
            seed,
            t0: f.sample.t0,
            cluster: rm.clustering.assignments[i],
            rank: g.rank(),
        })
        .collect();
    let meta = RomMeta {
        sigma: cfg.noise.sigma,
        s: problem.sensors.len(),
        r: cfg.transport.obs_times.len(),
        obs_times: cfg.transport.obs_times.clone(),
        mu: spec.mu,
        clusters: spec.clusters,
        pde_solves: problem.pde_solves(),
    };
    Ok(RomArchive { meta, samples, gramians, basis_sizes: sizes })
}

/// Which observation times a design problem uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    Reduced,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Reduced => "reduced",
        }
    }

    pub fn all(cfg: &ExperimentConfig) -> Vec<Variant> {
        if cfg.experiment.reduced_obs_times.is_empty() {
            vec![Variant::Full]
        } else {
            vec![Variant::Full, Variant::Reduced]
        }
    }
}

/// SAA problem of `rom` restricted to the observation times of `variant`.
pub fn variant_problem(cfg: &ExperimentConfig, rom: &RomArchive, variant: Variant) -> CliResult<SaaProblem> {
    let (s, r) = (rom.meta.s, rom.meta.r);
    match variant {
        Variant::Full => Ok(SaaProblem::low_rank(rom.gramians.clone(), rom.meta.sigma, s, r)?),
        Variant::Reduced => {
            let times: Vec<usize> = cfg
                .experiment
                .reduced_obs_times
                .iter()
                .map(|t| {
                    rom.meta
                        .obs_times
                        .iter()
                        .position(|o| o == t)
                        .ok_or_else(|| CliError::Config(format!("experiment.reduced_obs_times: {t} not in the archive")))
                })
                .collect::<CliResult<_>>()?;
            let rows: Vec<usize> = times.iter().flat_map(|&t| (0..s).map(move |l| t * s + l)).collect();
            let terms = rom.gramians.iter().map(|g| g.restrict_rows(&rows)).collect::<oeduu::Result<Vec<_>>>()?;
            Ok(SaaProblem::low_rank(terms, rom.meta.sigma, s, times.len())?)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Oeduu,
    Deterministic,
    /// All sensors on; evaluation reference only.
    AllOnes,
}

/// One optimized design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRecord {
    pub design_id: usize,
    pub method: Method,
    pub variant: Variant,
    /// SAA sample a deterministic design was computed for.
    pub sample: Option<usize>,
    pub gamma: f64,
    pub nnz: usize,
    /// Sample-average objective of the binary design on its own samples.
    pub phi_n: f64,
    /// `l1` scale of the kept continuation run.
    pub alpha: f64,
    pub alpha_trials: usize,
    /// Stages of the kept run.
    pub stages: usize,
    pub converged: bool,
    pub evaluations: u64,
    /// PDE solves observed while this continuation ran.
    pub pde_solves: u64,
    /// Weights as a 0/1 string, sensor 0 first.
    pub design: String,
}

impl DesignRecord {
    pub fn weights(&self) -> Vec<f64> {
        self.design.chars().map(|c| if c == '1' { 1.0 } else { 0.0 }).collect()
    }
}

pub fn design_string(w: &[f64]) -> String {
    w.iter().map(|&v| if v >= 0.5 { '1' } else { '0' }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLine {
    pub design_id: usize,
    #[serde(flatten)]
    pub stage: StageRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLine {
    pub design_id: usize,
    pub alpha: f64,
    pub l1_norm: f64,
    pub nnz: usize,
    pub objective: f64,
    pub stages: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub design_id: usize,
    pub sensor: usize,
    pub x: f64,
    pub y: f64,
    pub weight: f64,
    pub relaxed: f64,
}

#[derive(Debug, Clone, Default)]
pub struct DesignSet {
    pub designs: Vec<DesignRecord>,
    pub stages: Vec<StageLine>,
    pub trials: Vec<TrialLine>,
    pub relaxed: Vec<Vec<f64>>,
}

/// Which design families `optimize` computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Methods {
    pub oeduu: bool,
    pub deterministic: bool,
}

impl Methods {
    pub const BOTH: Methods = Methods { oeduu: true, deterministic: true };
}

struct Job {
    method: Method,
    variant: Variant,
    sample: Option<usize>,
    gamma: f64,
}

/// Runs the continuation for every `gamma` of the grid, for the OEDUU problem
/// and for each deterministic sample, in every observation variant. The PDE
/// counter is read around each run to certify that none is solved.
pub fn optimize(cfg: &ExperimentConfig, rom: &RomArchive, methods: Methods, counter: &SolveCounter) -> CliResult<DesignSet> {
    let mut jobs = Vec::new();
    let mut problems = Vec::new();
    for variant in Variant::all(cfg) {
        problems.push((variant, variant_problem(cfg, rom, variant)?));
        if methods.oeduu {
            for &gamma in &cfg.experiment.gamma_grid {
                jobs.push(Job { method: Method::Oeduu, variant, sample: None, gamma });
            }
        }
        if methods.deterministic {
            for i in 0..cfg.experiment.deterministic_samples.min(rom.samples.len()) {
                for &gamma in &cfg.experiment.gamma_grid {
                    jobs.push(Job { method: Method::Deterministic, variant, sample: Some(i), gamma });
                }
            }
        }
    }
    let results = jobs
        .par_iter()
        .enumerate()
        .map(|(id, job)| {
            let base = &problems.iter().find(|(v, _)| *v == job.variant).expect("variant built").1;
            let problem = match job.sample {
                Some(i) => base.subset(&[i])?,
                None => base.clone(),
            };
            let before = counter.get();
            let search = continuation_alpha_search(&problem, &cfg.continuation_options(job.gamma), &cfg.alpha_search())?;
            let res = search.result;
            let pde_solves = counter.get() - before;
            log::info!(
                "design {id}: {:?} {} sample {:?} gamma {} -> nnz {} in {} stages",
                job.method,
                job.variant.name(),
                job.sample,
                job.gamma,
                res.nnz,
                res.stages.len()
            );
            let record = DesignRecord {
                design_id: id,
                method: job.method,
                variant: job.variant,
                sample: job.sample,
                gamma: job.gamma,
                nnz: res.nnz,
                phi_n: res.objective,
                alpha: search.alpha,
                alpha_trials: search.trials.len(),
                stages: res.stages.len(),
                converged: res.converged,
                evaluations: problem.evaluations(),
                pde_solves,
                design: design_string(&res.w),
            };
            let stages = res.stages.into_iter().map(|stage| StageLine { design_id: id, stage }).collect::<Vec<_>>();
            let trials = search
                .trials
                .into_iter()
                .map(|t: AlphaTrial| TrialLine { design_id: id, alpha: t.alpha, l1_norm: t.l1_norm, nnz: t.nnz, objective: t.objective, stages: t.stages }).collect::<Vec<_>>();
            Ok((record, stages, trials, res.relaxed))
        })
        .collect::<oeduu::Result<Vec<_>>>()?;
    let mut set = DesignSet::default();
    for (r, s, t, w) in results {
        set.designs.push(r);
        set.stages.extend(s);
        set.trials.extend(t);
        set.relaxed.push(w);
    }
    Ok(set)
}

pub fn write_designs(dir: &Path, set: &DesignSet, sensors: &SensorNetwork) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    write_rows(&dir.join("designs.csv"), &set.designs)?;
    let mut f = std::io::BufWriter::new(fs::File::create(dir.join("stages.jsonl"))?);
    for line in &set.stages {
        serde_json::to_writer(&mut f, line)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    write_rows(&dir.join("alpha_trials.csv"), &set.trials)?;
    let mut rows = Vec::new();
    for (d, relaxed) in set.designs.iter().zip(&set.relaxed) {
        for (l, (w, &rw)) in d.weights().iter().zip(relaxed).enumerate() {
            let (x, y) = sensors.locations[l];
            rows.push(WeightRow { design_id: d.design_id, sensor: l, x, y, weight: *w, relaxed: rw });
        }
    }
    write_rows(&dir.join("design_weights.csv"), &rows)
}

pub fn read_designs(dir: &Path) -> CliResult<Vec<DesignRecord>> {
    let path = dir.join("designs.csv");
    if !path.exists() {
        return Err(CliError::Archive(format!("no designs in {}", dir.display())));
    }
    read_rows(&path)
}

/// Held-out statistics of one design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSummary {
    pub design_id: usize,
    pub method: Method,
    pub variant: Variant,
    pub sample: Option<usize>,
    pub gamma: f64,
    pub nnz: usize,
    /// Mean of `-tr K` over the held-out samples.
    pub mean: f64,
    /// `-tr K` at `EvaluationConfig::percentiles`.
    pub percentiles: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerSampleRow {
    pub design_id: usize,
    pub eval_sample: usize,
    pub neg_trace: f64,
}

/// OEDUU against the deterministic designs at one sensor budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetComparison {
    pub variant: Variant,
    pub budget: usize,
    pub oeduu_design: usize,
    pub oeduu_mean: f64,
    /// Deterministic designs compared (one per covering sample).
    pub deterministic_count: usize,
    pub deterministic_median: f64,
    pub deterministic_best: f64,
    /// `(median - oeduu) / |median|`; positive when OEDUU is better.
    pub relative_advantage: f64,
    pub oeduu_wins: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantComparison {
    pub variant: Variant,
    pub budgets: usize,
    pub wins: usize,
    pub win_fraction: f64,
    pub mean_relative_advantage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub percentile_levels: Vec<f64>,
    pub summaries: Vec<DesignSummary>,
    pub per_sample: Vec<PerSampleRow>,
    pub budgets: Vec<BudgetComparison>,
    pub variants: Vec<VariantComparison>,
}

/// Linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    percentile(&v, 50.0)
}

/// Adds the all-ones reference design of every variant.
pub fn with_reference_designs(cfg: &ExperimentConfig, designs: &[DesignRecord], s: usize) -> Vec<DesignRecord> {
    let mut out = designs.to_vec();
    let mut next = designs.iter().map(|d| d.design_id + 1).max().unwrap_or(0);
    for variant in Variant::all(cfg) {
        out.push(DesignRecord {
            design_id: next,
            method: Method::AllOnes,
            variant,
            sample: None,
            gamma: 0.0,
            nnz: s,
            phi_n: f64::NAN,
            alpha: f64::NAN,
            alpha_trials: 0,
            stages: 0,
            converged: true,
            evaluations: 0,
            pde_solves: 0,
            design: "1".repeat(s),
        });
        next += 1;
    }
    out
}

/// Evaluates every design on the held-out archive and compares OEDUU with
/// the deterministic designs at each OEDUU sensor budget.
pub fn evaluate(cfg: &ExperimentConfig, eval_rom: &RomArchive, designs: &[DesignRecord]) -> CliResult<Evaluation> {
    let s = eval_rom.meta.s;
    let mut problems = Vec::new();
    for variant in Variant::all(cfg) {
        problems.push((variant, variant_problem(cfg, eval_rom, variant)?));
    }
    let levels = cfg.evaluation.percentiles.clone();
    let evaluated = designs
        .par_iter()
        .map(|d| {
            if d.design.len() != s {
                return Err(CliError::Archive(format!("design {} has {} sensors, expected {s}", d.design_id, d.design.len())));
            }
            let p = &problems.iter().find(|(v, _)| *v == d.variant).ok_or_else(|| {
                CliError::Archive(format!("design {} uses a disabled variant", d.design_id))
            })?.1;
            let values: Vec<f64> = p.trace_updates(&d.weights())?.into_iter().map(|t| -t).collect();
            Ok((d, values))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut summaries = Vec::new();
    let mut per_sample = Vec::new();
    for (d, values) in &evaluated {
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        summaries.push(DesignSummary {
            design_id: d.design_id,
            method: d.method,
            variant: d.variant,
            sample: d.sample,
            gamma: d.gamma,
            nnz: d.nnz,
            mean: values.iter().sum::<f64>() / values.len() as f64,
            percentiles: levels.iter().map(|&p| percentile(&sorted, p)).collect(),
        });
        per_sample.extend(values.iter().enumerate().map(|(j, &v)| PerSampleRow { design_id: d.design_id, eval_sample: j, neg_trace: v }));
    }
    let (budgets, variants) = compare(cfg, designs, &summaries, s);
    Ok(Evaluation { percentile_levels: levels, summaries, per_sample, budgets, variants })
}

/// Budgets are the distinct OEDUU sensor counts other than `0` and `s`. At
/// each budget every deterministic sample whose design family spans it
/// contributes the design with the nearest count (ties to the larger).
pub fn compare(cfg: &ExperimentConfig, designs: &[DesignRecord], summaries: &[DesignSummary], s: usize) -> (Vec<BudgetComparison>, Vec<VariantComparison>) {
    let mean_of = |id: usize| summaries.iter().find(|m| m.design_id == id).map(|m| m.mean).expect("evaluated");
    let mut budgets = Vec::new();
    let mut variants = Vec::new();
    for variant in Variant::all(cfg) {
        let oeduu: Vec<&DesignRecord> = designs.iter().filter(|d| d.method == Method::Oeduu && d.variant == variant).collect();
        let det: Vec<&DesignRecord> = designs.iter().filter(|d| d.method == Method::Deterministic && d.variant == variant).collect();
        let counts: BTreeSet<usize> = oeduu.iter().map(|d| d.nnz).filter(|&k| k > 0 && k < s).collect();
        let det_samples: BTreeSet<usize> = det.iter().filter_map(|d| d.sample).collect();
        let mut rows = Vec::new();
        for &b in &counts {
            // Best training objective among OEDUU designs of this size.
            let od = oeduu
                .iter()
                .filter(|d| d.nnz == b)
                .min_by(|x, y| x.phi_n.total_cmp(&y.phi_n).then(x.design_id.cmp(&y.design_id)))
                .expect("budget comes from an OEDUU design");
            let mut det_means = Vec::new();
            for &i in &det_samples {
                let fam: Vec<&&DesignRecord> = det.iter().filter(|d| d.sample == Some(i)).collect();
                let lo = fam.iter().map(|d| d.nnz).min().unwrap_or(0);
                let hi = fam.iter().map(|d| d.nnz).max().unwrap_or(0);
                if b < lo || b > hi {
                    continue;
                }
                let pick = fam
                    .iter()
                    .min_by(|x, y| {
                        let dx = x.nnz.abs_diff(b);
                        let dy = y.nnz.abs_diff(b);
                        dx.cmp(&dy).then(y.nnz.cmp(&x.nnz)).then(x.phi_n.total_cmp(&y.phi_n))
                    })
                    .expect("nonempty family");
                det_means.push(mean_of(pick.design_id));
            }
            if det_means.is_empty() {
                continue;
            }
            let best = det_means.iter().copied().fold(f64::INFINITY, f64::min);
            let count = det_means.len();
            let med = median(det_means);
            let om = mean_of(od.design_id);
            rows.push(BudgetComparison {
                variant,
                budget: b,
                oeduu_design: od.design_id,
                oeduu_mean: om,
                deterministic_count: count,
                deterministic_median: med,
                deterministic_best: best,
                relative_advantage: (med - om) / med.abs().max(f64::MIN_POSITIVE),
                oeduu_wins: om <= med,
            });
        }
        let wins = rows.iter().filter(|r| r.oeduu_wins).count();
        let n = rows.len();
        variants.push(VariantComparison {
            variant,
            budgets: n,
            wins,
            win_fraction: if n > 0 { wins as f64 / n as f64 } else { f64::NAN },
            mean_relative_advantage: if n > 0 { rows.iter().map(|r| r.relative_advantage).sum::<f64>() / n as f64 } else { f64::NAN },
        });
        budgets.extend(rows);
    }
    (budgets, variants)
}

pub fn write_evaluation(dir: &Path, ev: &Evaluation) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    let mut header: Vec<String> = ["design_id", "method", "variant", "sample", "gamma", "nnz", "mean"].map(String::from).to_vec();
    header.extend(ev.percentile_levels.iter().map(|p| format!("p{p}")));
    w.write_record(&header)?;
    for m in &ev.summaries {
        let mut rec = vec![
            m.design_id.to_string(),
            serde_json::to_value(m.method)?.as_str().unwrap_or_default().to_string(),
            m.variant.name().to_string(),
            m.sample.map(|i| i.to_string()).unwrap_or_default(),
            format!("{:e}", m.gamma),
            m.nnz.to_string(),
            format!("{:e}", m.mean),
        ];
        rec.extend(m.percentiles.iter().map(|v| format!("{v:e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    write_rows(&dir.join("per_sample.csv"), &ev.per_sample)?;
    write_rows(&dir.join("comparison.csv"), &ev.budgets)?;
    write_json(&dir.join("comparison.json"), &ev.variants)
}

/// Surrogate against exact-operator objective for one design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub design_id: usize,
    pub method: Method,
    pub gamma: f64,
    pub nnz: usize,
    pub phi_surrogate: f64,
    pub phi_exact: f64,
    pub relative_gap: f64,
}

/// Recomputes the Gramians of the first `validate.samples` SAA samples with
/// the full operators and compares the full-variant objective of each OEDUU
/// design (and the all-ones design) with the archived surrogate.
pub fn validate(problem: &Problem, rom: &RomArchive, designs: &[DesignRecord]) -> CliResult<Vec<ValidationRow>> {
    let cfg = &problem.config;
    let m = cfg.validate.samples.min(rom.samples.len());
    if m == 0 {
        return Ok(Vec::new());
    }
    let seeds: Vec<u64> = rom.samples[..m].iter().map(|s| s.seed).collect();
    let forwards = problem.forwards(&seeds)?;
    let exact = forwards
        .iter()
        .map(|f| exact_gramians(f, &problem.prior))
        .collect::<oeduu::Result<Vec<_>>>()?;
    let (s, r, sigma) = (rom.meta.s, rom.meta.r, rom.meta.sigma);
    let exact = SaaProblem::new(exact.into_iter().map(SampleTerm::Dense).collect(), sigma, s, r)?;
    let surrogate = SaaProblem::low_rank(rom.gramians[..m].to_vec(), sigma, s, r)?;
    let all = with_reference_designs(cfg, designs, s);
    all.iter()
        .filter(|d| d.variant == Variant::Full && matches!(d.method, Method::Oeduu | Method::AllOnes))
        .map(|d| {
            let w = d.weights();
            let a = surrogate.phi_n(&w)?;
            let b = exact.phi_n(&w)?;
            Ok(ValidationRow {
                design_id: d.design_id,
                method: d.method,
                gamma: d.gamma,
                nnz: d.nnz,
                phi_surrogate: a,
                phi_exact: b,
                relative_gap: if b != 0.0 { (a - b).abs() / b.abs() } else { a.abs() },
            })
        })
        .collect()
}

/// Summary of a complete run, written as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub n_sensors: usize,
    pub n_saa: usize,
    pub n_eval: usize,
    pub basis_sizes: Vec<BasisSize>,
    pub designs: usize,
    /// PDE solves observed across all continuation runs.
    pub optimization_pde_solves: u64,
    pub max_stages: usize,
    pub all_converged: bool,
    pub comparison: Vec<VariantComparison>,
    pub validation: Vec<ValidationRow>,
}

/// Keeps the manifest current: each phase is recorded as it completes, so a
/// failed run still lists what finished.
pub struct Runner {
    pub out: std::path::PathBuf,
    pub manifest: RunManifest,
}

impl Runner {
    pub fn new(out: &Path, cfg: &ExperimentConfig) -> CliResult<Self> {
        fs::create_dir_all(out)?;
        Ok(Self { out: out.to_path_buf(), manifest: RunManifest::load_or_new(out, cfg) })
    }

    pub fn phase<T>(&mut self, name: &str, counter: Option<&SolveCounter>, f: impl FnOnce(&Path) -> CliResult<T>) -> CliResult<T> {
        log::info!("phase {name}");
        let start = Instant::now();
        let before = counter.map(|c| c.get()).unwrap_or(0);
        let res = f(&self.out);
        if res.is_ok() {
            let pde_solves = counter.map(|c| c.get()).unwrap_or(0) - before;
            self.manifest.record(PhaseRecord { name: name.into(), wall_seconds: start.elapsed().as_secs_f64(), pde_solves });
        }
        self.manifest.save(&self.out)?;
        res
    }
}

pub fn build_rom_phase(runner: &mut Runner, problem: &Problem) -> CliResult<RomArchive> {
    runner.phase("build-rom", Some(&problem.counter), |out| {
        let rom = build_rom(problem, &RomSpec::saa(&problem.config))?;
        rom.write(&out.join(ROM_DIR))?;
        Ok(rom)
    })
}

pub fn optimize_phase(runner: &mut Runner, cfg: &ExperimentConfig, methods: Methods) -> CliResult<DesignSet> {
    let counter = SolveCounter::new();
    runner.phase("optimize", Some(&counter), |out| {
        let rom = RomArchive::read(&out.join(ROM_DIR))?;
        let sensors = cfg.sensor_network()?;
        let set = optimize(cfg, &rom, methods, &counter)?;
        write_designs(&out.join(DESIGN_DIR), &set, &sensors)?;
        Ok(set)
    })
}

pub fn evaluate_phase(runner: &mut Runner, problem: &Problem) -> CliResult<Evaluation> {
    runner.phase("evaluate", Some(&problem.counter), |out| {
        let designs = read_designs(&out.join(DESIGN_DIR))?;
        let rom = build_rom(problem, &RomSpec::evaluation(&problem.config))?;
        rom.write(&out.join(EVAL_ROM_DIR))?;
        let all = with_reference_designs(&problem.config, &designs, rom.meta.s);
        let ev = evaluate(&problem.config, &rom, &all)?;
        write_evaluation(&out.join(EVAL_DIR), &ev)?;
        Ok(ev)
    })
}

pub fn validate_phase(runner: &mut Runner, problem: &Problem) -> CliResult<Vec<ValidationRow>> {
    runner.phase("validate", Some(&problem.counter), |out| {
        let rom = RomArchive::read(&out.join(ROM_DIR))?;
        let designs = read_designs(&out.join(DESIGN_DIR))?;
        let rows = validate(problem, &rom, &designs)?;
        let dir = out.join(VALIDATE_DIR);
        fs::create_dir_all(&dir)?;
        write_rows(&dir.join("validation.csv"), &rows)?;
        Ok(rows)
    })
}

/// Build, optimize, evaluate and validate in one go; writes `report.json`.
pub fn run_all(cfg: &ExperimentConfig, out: &Path) -> CliResult<Report> {
    let problem = Problem::new(cfg)?;
    let mut runner = Runner::new(out, cfg)?;
    let rom = build_rom_phase(&mut runner, &problem)?;
    let set = optimize_phase(&mut runner, cfg, Methods::BOTH)?;
    let ev = evaluate_phase(&mut runner, &problem)?;
    let validation = validate_phase(&mut runner, &problem)?;
    let report = Report {
        n_sensors: rom.meta.s,
        n_saa: cfg.experiment.n_saa,
        n_eval: cfg.evaluation.n_eval,
        basis_sizes: rom.basis_sizes.clone(),
        designs: set.designs.len(),
        optimization_pde_solves: set.designs.iter().map(|d| d.pde_solves).sum(),
        max_stages: set.designs.iter().map(|d| d.stages).max().unwrap_or(0),
        all_converged: set.designs.iter().all(|d| d.converged),
        comparison: ev.variants,
        validation,
    };
    runner.phase("report", None, |out| write_json(&out.join("report.json"), &report))?;
    Ok(report)
}

pub fn read_report(out: &Path) -> CliResult<Report> {
    read_json(&out.join("report.json"))
}
