//! Per-phase seed streams derived from the master seed.
//!
//! `stream(master, tag, i) = derive(derive(master, fnv1a(tag)), i)` with the
//! SplitMix64 mixing of `oeduu::seed`. SAA and held-out samples use different
//! tags; the audit checks that the two seed sets do not intersect.

use std::collections::HashSet;

use oeduu::seed::derive_tagged;
use serde::{Deserialize, Serialize};

pub const SAA: &str = "saa";
pub const EVAL: &str = "eval";
pub const SAA_SKETCH: &str = "saa-sketch";
pub const EVAL_SKETCH: &str = "eval-sketch";
pub const SAA_KMEANS: &str = "saa-kmeans";
pub const EVAL_KMEANS: &str = "eval-kmeans";

pub fn stream(master: u64, tag: &str, index: u64) -> u64 {
    derive_tagged(master, tag, index)
}

pub fn sample_seeds(master: u64, tag: &str, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| stream(master, tag, i)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAudit {
    pub master: u64,
    pub derivation: String,
    pub saa_tag: String,
    pub eval_tag: String,
    pub saa_seeds: Vec<u64>,
    pub eval_seeds: Vec<u64>,
    pub sketch_seeds: Vec<u64>,
    pub kmeans_seeds: Vec<u64>,
    pub disjoint: bool,
}

impl SeedAudit {
    pub fn new(master: u64, n_saa: usize, n_eval: usize) -> Self {
        let saa_seeds = sample_seeds(master, SAA, n_saa);
        let eval_seeds = sample_seeds(master, EVAL, n_eval);
        let saa: HashSet<u64> = saa_seeds.iter().copied().collect();
        let disjoint = saa.len() == saa_seeds.len() && eval_seeds.iter().all(|s| !saa.contains(s));
        Self {
            master,
            derivation: "splitmix64(master ^ splitmix64(fnv1a64(tag) * golden ^ 0x5eed)), then the same step with the sample index".into(),
            saa_tag: SAA.into(),
            eval_tag: EVAL.into(),
            saa_seeds,
            eval_seeds,
            sketch_seeds: vec![stream(master, SAA_SKETCH, 0), stream(master, EVAL_SKETCH, 0)],
            kmeans_seeds: vec![stream(master, SAA_KMEANS, 0), stream(master, EVAL_KMEANS, 0)],
            disjoint,
        }
    }
}
