//! Simulation studies: network and data generation, true effects, and the
//! replicated scenario harness.
//!
//! The network (and the homophily trait `h`) is generated once per study;
//! covariates, potential outcomes and treatments are redrawn for every
//! replicate. Replicate `r` draws from ChaCha8 stream `r + 1` of the study
//! seed and the network from stream 0, so results do not depend on the
//! order or the thread in which replicates run.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::pi_neighborhood;
use crate::analysis::{estimate, fit_outcome, AnalysisSpec, NuisanceFits, OutcomeModel};
use crate::design::Term;
use crate::error::{Error, Result};
use crate::estimators::{required_targets, Estimand, EstimatorKind, Pooling, Target};
use crate::graph::{ComponentGraph, NeighborhoodOrder, NodeData};
use crate::outcome::{ExposureMap, ExposureSet, OutcomeDesign, OutcomeFit};
use crate::propensity::{fit_propensity, PropensityFit, PropensitySpec};

/// Component-size law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Equal component sizes, no outcome random intercept.
    #[default]
    Balanced,
    /// Poisson(35)/Poisson(12) sizes and an outcome random intercept.
    Unbalanced,
}

/// Neighbours whose treatments enter the generated potential outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interference {
    #[default]
    FirstOrder,
    /// First-order neighbours sharing the node's `x2`.
    MatchingX2,
    /// First- and second-order neighbours.
    SecondOrder,
}

impl Interference {
    fn exposure(self) -> ExposureSet {
        match self {
            Interference::FirstOrder => ExposureSet::FirstOrder,
            Interference::MatchingX2 => ExposureSet::MatchingCovariate("x2".into()),
            Interference::SecondOrder => ExposureSet::SecondOrder,
        }
    }
}

/// Data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub scheme: Scheme,
    /// Number of components.
    pub m: usize,
    /// Component size under the balanced scheme.
    pub component_size: usize,
    /// Share of components drawn from the large Poisson law.
    pub large_fraction: f64,
    pub large_mean: f64,
    pub small_mean: f64,
    /// Tie log-odds `tie_intercept + tie_homophily * 1{h_i = h_j}`.
    pub tie_intercept: f64,
    pub tie_homophily: f64,
    /// Treatment coefficients on `1, |x1|, |x1| x2, h`.
    pub gamma: [f64; 4],
    pub phi_b: f64,
    pub sigma_eps: f64,
    /// Outcome random-intercept SD; `None` means 0 for balanced, 1 otherwise.
    pub sigma_c: Option<f64>,
    pub interference: Interference,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Balanced,
            m: 30,
            component_size: 30,
            large_fraction: 0.6,
            large_mean: 35.0,
            small_mean: 12.0,
            tie_intercept: -2.5,
            tie_homophily: 1.5,
            gamma: [0.1, 0.2, 0.2, -1.0],
            phi_b: 1.0,
            sigma_eps: 1.0,
            sigma_c: None,
            interference: Interference::FirstOrder,
        }
    }
}

impl DgpConfig {
    pub fn balanced(m: usize) -> Self {
        Self { m, ..Default::default() }
    }

    pub fn unbalanced(m: usize) -> Self {
        Self { scheme: Scheme::Unbalanced, m, ..Default::default() }
    }

    pub fn sigma_c(&self) -> f64 {
        self.sigma_c.unwrap_or(match self.scheme {
            Scheme::Balanced => 0.0,
            Scheme::Unbalanced => 1.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::Spec("a study needs at least 2 components".into()));
        }
        if self.scheme == Scheme::Balanced && self.component_size == 0 {
            return Err(Error::Spec("component size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.large_fraction) {
            return Err(Error::Spec("large_fraction must lie in [0, 1]".into()));
        }
        if self.scheme == Scheme::Unbalanced && !(self.large_mean > 0.0 && self.small_mean > 0.0) {
            return Err(Error::Spec("Poisson size means must be positive".into()));
        }
        let finite = [self.tie_intercept, self.tie_homophily, self.phi_b, self.sigma_eps, self.sigma_c()]
            .iter()
            .chain(&self.gamma)
            .all(|v| v.is_finite());
        if !finite || self.phi_b < 0.0 || self.sigma_eps < 0.0 || self.sigma_c() < 0.0 {
            return Err(Error::Spec("DGP coefficients must be finite and variances non-negative".into()));
        }
        Ok(())
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Probability of a tie between two nodes of the same component.
pub fn tie_probability(cfg: &DgpConfig, h_i: f64, h_j: f64) -> f64 {
    logistic(cfg.tie_intercept + if h_i == h_j { cfg.tie_homophily } else { 0.0 })
}

/// Treatment linear predictor without the component intercept.
pub fn treatment_eta(cfg: &DgpConfig, x1: f64, x2: f64, h: f64) -> f64 {
    let g = &cfg.gamma;
    g[0] + g[1] * x1.abs() + g[2] * x2 * x1.abs() + g[3] * h
}

/// Potential outcome without noise terms, for exposure value `expo`.
pub fn structural_outcome(z: u8, expo: f64, x1: f64, x2: f64) -> f64 {
    let zf = f64::from(z);
    2.0 + 2.0 * zf + expo + zf * expo - 1.5 * x1.abs() + 2.0 * x2 - 3.0 * x1.abs() * x2
}

/// A generated network with the homophily trait of every node.
#[derive(Debug, Clone)]
pub struct Network {
    pub graph: ComponentGraph,
    pub h: Vec<f64>,
}

fn component_sizes(cfg: &DgpConfig, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    match cfg.scheme {
        Scheme::Balanced => Ok(vec![cfg.component_size; cfg.m]),
        Scheme::Unbalanced => {
            let n_large = (cfg.large_fraction * cfg.m as f64).round() as usize;
            let large = Poisson::new(cfg.large_mean).map_err(|e| Error::Spec(e.to_string()))?;
            let small = Poisson::new(cfg.small_mean).map_err(|e| Error::Spec(e.to_string()))?;
            Ok((0..cfg.m)
                .map(|nu| {
                    let law = if nu < n_large { &large } else { &small };
                    loop {
                        let n = law.sample(rng) as usize;
                        if n > 0 {
                            break n;
                        }
                    }
                })
                .collect())
        }
    }
}

/// Draws component sizes, `h ~ Bernoulli(0.5)`, and independent dyads.
pub fn gen_network(cfg: &DgpConfig, rng: &mut ChaCha8Rng) -> Result<Network> {
    cfg.validate()?;
    let sizes = component_sizes(cfg, rng)?;
    let mut edges = Vec::new();
    let mut block_of = Vec::new();
    let mut h = Vec::new();
    for (nu, &size) in sizes.iter().enumerate() {
        let start = h.len();
        for _ in 0..size {
            h.push(if rng.random::<bool>() { 1.0 } else { 0.0 });
            block_of.push(nu);
        }
        for i in start..start + size {
            for j in i + 1..start + size {
                if rng.random::<f64>() < tie_probability(cfg, h[i], h[j]) {
                    edges.push((i, j));
                }
            }
        }
    }
    let graph = ComponentGraph::from_blocks(&edges, &block_of)?;
    Ok(Network { graph, h })
}

/// `x1 ~ N(0, 1)`, `x2 ~ Bernoulli(0.5)`.
pub fn gen_covariates(n: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let mut x1 = Vec::with_capacity(n);
    let mut x2 = Vec::with_capacity(n);
    for _ in 0..n {
        x1.push(std.sample(rng));
        x2.push(if rng.random::<bool>() { 1.0 } else { 0.0 });
    }
    (x1, x2)
}

/// Treatments from the random-intercept logistic model.
pub fn gen_treatment(
    g: &ComponentGraph,
    x1: &[f64],
    x2: &[f64],
    h: &[f64],
    cfg: &DgpConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<u8> {
    let b_law = Normal::new(0.0, cfg.phi_b.sqrt()).expect("valid variance");
    let mut z = vec![0u8; g.n_nodes()];
    for comp in g.components() {
        let b = b_law.sample(rng);
        for &i in comp {
            let p = logistic(treatment_eta(cfg, x1[i], x2[i], h[i]) + b);
            z[i] = u8::from(Bernoulli::new(p).expect("probability").sample(rng));
        }
    }
    z
}

/// All potential outcomes of every node, queried by treated exposure count.
#[derive(Debug, Clone)]
pub struct PotentialOutcomes {
    /// Everything except the treatment and exposure terms, noise included.
    base: Vec<f64>,
    members: Vec<Vec<usize>>,
}

impl PotentialOutcomes {
    /// `y_i(z, s)` where `s` treated members of the exposure set.
    pub fn y(&self, i: usize, z: u8, s: usize) -> f64 {
        let k = self.members[i].len();
        let expo = if k == 0 { 0.0 } else { s as f64 / k as f64 };
        let zf = f64::from(z);
        self.base[i] + 2.0 * zf + (1.0 + zf) * expo
    }

    /// Exposure-set size of node `i`.
    pub fn exposure_size(&self, i: usize) -> usize {
        self.members[i].len()
    }

    pub fn n_nodes(&self) -> usize {
        self.base.len()
    }

    pub fn observe(&self, z: &[u8]) -> Vec<f64> {
        (0..self.base.len())
            .map(|i| {
                let s = self.members[i].iter().filter(|&&j| z[j] == 1).count();
                self.y(i, z[i], s)
            })
            .collect()
    }
}

/// Draws noise (and component intercepts) and fixes the outcome surface.
pub fn gen_potential_outcomes(
    g: &ComponentGraph,
    data: &NodeData,
    cfg: &DgpConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PotentialOutcomes> {
    let x1 = data.column("x1").ok_or_else(|| Error::Spec("missing x1".into()))?;
    let x2 = data.column("x2").ok_or_else(|| Error::Spec("missing x2".into()))?;
    let eps = Normal::new(0.0, cfg.sigma_eps).map_err(|e| Error::Spec(e.to_string()))?;
    let c_law = Normal::new(0.0, cfg.sigma_c()).map_err(|e| Error::Spec(e.to_string()))?;
    let exposure = OutcomeDesign { exposure: cfg.interference.exposure(), ..Default::default() };
    let mut base = vec![0.0; g.n_nodes()];
    for comp in g.components() {
        let c = if cfg.sigma_c() > 0.0 { c_law.sample(rng) } else { 0.0 };
        for &i in comp {
            base[i] = structural_outcome(0, 0.0, x1[i], x2[i]) + c + eps.sample(rng);
        }
    }
    let members = (0..g.n_nodes()).map(|i| exposure.exposure_members(g, data, i)).collect::<Result<_>>()?;
    Ok(PotentialOutcomes { base, members })
}

/// One simulated dataset.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    /// Columns `x1`, `x2`, `h`; observed treatments and outcomes.
    pub data: NodeData,
    pub outcomes: PotentialOutcomes,
}

pub fn simulate_dataset(net: &Network, cfg: &DgpConfig, rng: &mut ChaCha8Rng) -> Result<SimulatedData> {
    let n = net.graph.n_nodes();
    let (x1, x2) = gen_covariates(n, rng);
    let names = vec!["x1".to_string(), "x2".to_string(), "h".to_string()];
    let covs = NodeData::new(names.clone(), vec![x1.clone(), x2.clone(), net.h.clone()], vec![0; n], vec![0.0; n])?;
    let outcomes = gen_potential_outcomes(&net.graph, &covs, cfg, rng)?;
    let z = gen_treatment(&net.graph, &x1, &x2, &net.h, cfg, rng);
    let y = outcomes.observe(&z);
    let data = NodeData::new(names, vec![x1, x2, net.h.clone()], z, y)?;
    Ok(SimulatedData { data, outcomes })
}

/// True potential-outcome means and the estimands built from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthTable {
    pub means: Vec<(Target, f64)>,
    pub effects: Vec<(Estimand, f64)>,
}

impl TruthTable {
    fn from_means(means: Vec<(Target, f64)>, estimands: &[Estimand]) -> Self {
        let lookup = |t: Target| means.iter().find(|(u, _)| *u == t).map(|(_, v)| *v);
        let effects = estimands
            .iter()
            .map(|e| (*e, e.evaluate(&lookup).expect("all targets present")))
            .collect();
        Self { means, effects }
    }

    pub fn effect(&self, estimand: &Estimand) -> Option<f64> {
        self.effects.iter().find(|(e, _)| e == estimand).map(|(_, v)| *v)
    }

    /// Average of per-replicate truths, with effects re-derived from the means.
    pub fn average(tables: &[TruthTable], estimands: &[Estimand]) -> Option<Self> {
        let first = tables.first()?;
        let k = tables.len() as f64;
        let means = first
            .means
            .iter()
            .enumerate()
            .map(|(j, (t, _))| (*t, tables.iter().map(|tt| tt.means[j].1).sum::<f64>() / k))
            .collect();
        Some(Self::from_means(means, estimands))
    }
}

/// Averages `sum_s y_i(z, s) pi(s; k_i, alpha)` over nodes, per component
/// first under canonical pooling.
pub fn compute_truth(
    po: &PotentialOutcomes,
    g: &ComponentGraph,
    estimands: &[Estimand],
    pooling: Pooling,
) -> Result<TruthTable> {
    let targets = required_targets(estimands)?;
    let mut means = Vec::with_capacity(targets.len());
    for t in targets {
        let node_value = |i: usize| -> Result<f64> {
            let k = po.exposure_size(i);
            let arm = |z: u8| -> Result<f64> {
                let mut acc = 0.0;
                for s in 0..=k {
                    acc += po.y(i, z, s) * pi_neighborhood(s, k, t.alpha())?;
                }
                Ok(acc)
            };
            match t {
                Target::Arm { z, .. } => arm(z),
                Target::Marginal { alpha } => Ok(alpha * arm(1)? + (1.0 - alpha) * arm(0)?),
            }
        };
        let mut sums = Vec::with_capacity(g.n_components());
        for comp in g.components() {
            let mut s = 0.0;
            for &i in comp {
                s += node_value(i)?;
            }
            sums.push((s, comp.len()));
        }
        let value = match pooling {
            Pooling::Canonical => sums.iter().map(|(s, n)| s / *n as f64).sum::<f64>() / sums.len() as f64,
            Pooling::Global => {
                sums.iter().map(|(s, _)| s).sum::<f64>() / sums.iter().map(|(_, n)| *n).sum::<usize>() as f64
            }
        };
        means.push((t, value));
    }
    Ok(TruthTable::from_means(means, estimands))
}

/// Fitted-model menu of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub propensity: PropensitySpec,
    pub outcome: OutcomeDesign,
    #[serde(default)]
    pub outcome_model: OutcomeModel,
}

/// Names accepted by [`Scenario::preset`].
pub const PRESETS: [&str; 11] =
    ["a", "b", "c", "d", "latent", "phi-correct", "phi-incorrect", "so-a", "so-b", "so-c", "so-d"];

fn terms(list: &[&str]) -> Vec<Term> {
    list.iter().map(|t| t.parse().expect("preset term")).collect()
}

impl Scenario {
    /// Treatment model with the homophily trait and the true covariate form.
    pub fn correct_propensity() -> PropensitySpec {
        PropensitySpec { terms: terms(&["abs(x1)", "abs(x1)*x2", "h"]), ..Default::default() }
    }

    pub fn incorrect_propensity() -> PropensitySpec {
        PropensitySpec { terms: terms(&["x1", "h"]), ..Default::default() }
    }

    /// Correct covariate form but without the homophily trait.
    pub fn latent_propensity() -> PropensitySpec {
        PropensitySpec { terms: terms(&["abs(x1)", "abs(x1)*x2"]), ..Default::default() }
    }

    pub fn correct_outcome() -> OutcomeDesign {
        OutcomeDesign { terms: terms(&["abs(x1)", "x2", "abs(x1)*x2"]), ..Default::default() }
    }

    pub fn incorrect_outcome() -> OutcomeDesign {
        OutcomeDesign { terms: terms(&["x1", "x2"]), ..Default::default() }
    }

    /// Built-in scenario. Outcome models are multilevel under the unbalanced scheme.
    pub fn preset(name: &str, dgp: &DgpConfig) -> Result<Self> {
        let second = |mut p: PropensitySpec| {
            p.order = NeighborhoodOrder::Second;
            p
        };
        let exposure = |e: ExposureSet| OutcomeDesign { exposure: e, ..Self::correct_outcome() };
        let (propensity, outcome) = match name {
            "a" => (Self::correct_propensity(), Self::correct_outcome()),
            "b" => (Self::correct_propensity(), Self::incorrect_outcome()),
            "c" => (Self::incorrect_propensity(), Self::correct_outcome()),
            "d" => (Self::incorrect_propensity(), Self::incorrect_outcome()),
            "latent" => (Self::latent_propensity(), Self::correct_outcome()),
            "phi-correct" => {
                (Self::correct_propensity(), exposure(ExposureSet::MatchingCovariate("x2".into())))
            }
            "phi-incorrect" | "so-d" => (Self::correct_propensity(), Self::correct_outcome()),
            "so-a" => (second(Self::correct_propensity()), exposure(ExposureSet::SecondOrder)),
            "so-b" => (second(Self::correct_propensity()), Self::correct_outcome()),
            "so-c" => (Self::correct_propensity(), exposure(ExposureSet::SecondOrder)),
            other => {
                return Err(Error::Spec(format!("unknown scenario `{other}`; expected one of {}", PRESETS.join(", "))))
            }
        };
        let outcome_model = match dgp.scheme {
            Scheme::Balanced => OutcomeModel::Fixed,
            Scheme::Unbalanced => OutcomeModel::Multilevel,
        };
        Ok(Self { name: name.to_string(), propensity, outcome: OutcomeDesign { map: ExposureMap::Proportion, ..outcome }, outcome_model })
    }
}

/// A scenario given by preset name or spelled out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioEntry {
    Preset(String),
    Custom(Scenario),
}

/// A replicated simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Study {
    pub dgp: DgpConfig,
    pub scenarios: Vec<ScenarioEntry>,
    pub estimators: Vec<EstimatorKind>,
    pub estimands: Vec<Estimand>,
    pub replicates: usize,
    pub seed: u64,
    pub pooling: Pooling,
    pub confidence: f64,
    pub small_sample: bool,
    pub variance: bool,
    /// Gauss-Hermite points for every fitted treatment model.
    pub quadrature_points: usize,
}

impl Default for Study {
    fn default() -> Self {
        Self {
            dgp: DgpConfig::default(),
            scenarios: vec![ScenarioEntry::Preset("a".into())],
            estimators: EstimatorKind::ALL.to_vec(),
            estimands: vec![Estimand::De { alpha: 0.6 }],
            replicates: 200,
            seed: 1,
            pooling: Pooling::Canonical,
            confidence: 0.95,
            small_sample: false,
            variance: true,
            quadrature_points: PropensitySpec::default().quadrature_points,
        }
    }
}

impl Study {
    /// Resolves preset names and checks the whole study before any compute.
    pub fn resolve(&self) -> Result<Vec<Scenario>> {
        self.dgp.validate()?;
        if self.replicates < 2 {
            return Err(Error::Spec("a study needs at least 2 replicates".into()));
        }
        if self.scenarios.is_empty() {
            return Err(Error::Spec("no scenarios requested".into()));
        }
        let scenarios: Vec<Scenario> = self
            .scenarios
            .iter()
            .map(|e| match e {
                ScenarioEntry::Preset(name) => Scenario::preset(name, &self.dgp),
                ScenarioEntry::Custom(s) => Ok(s.clone()),
            })
            .collect::<Result<_>>()?;
        for (k, s) in scenarios.iter().enumerate() {
            if scenarios[..k].iter().any(|t| t.name == s.name) {
                return Err(Error::Spec(format!("duplicate scenario name `{}`", s.name)));
            }
            self.analysis_spec(s).validate()?;
        }
        Ok(scenarios)
    }

    fn analysis_spec(&self, s: &Scenario) -> AnalysisSpec {
        let mut propensity = s.propensity.clone();
        propensity.quadrature_points = self.quadrature_points;
        AnalysisSpec {
            propensity,
            outcome: s.outcome.clone(),
            outcome_model: s.outcome_model,
            estimators: self.estimators.clone(),
            estimands: self.estimands.clone(),
            pooling: self.pooling,
            small_sample: self.small_sample,
            confidence: self.confidence,
            variance: self.variance,
        }
    }

    /// The study's network (stream 0 of the seed).
    pub fn network(&self) -> Result<Network> {
        gen_network(&self.dgp, &mut stream(self.seed, 0))
    }

    /// Dataset of replicate `r` on `net`.
    pub fn dataset(&self, net: &Network, r: usize) -> Result<SimulatedData> {
        simulate_dataset(net, &self.dgp, &mut stream(self.seed, r as u64 + 1))
    }
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

/// Outcome of one estimator on one estimand in one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub point: Option<f64>,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    /// Cause tag when the replicate is excluded for this cell.
    pub failure: Option<String>,
}

impl CellRecord {
    fn failed(e: &Error) -> Self {
        Self { point: None, se: None, ci: None, failure: Some(e.cause_tag().to_string()) }
    }
}

/// Everything one replicate produced, indexed `[scenario][estimator][estimand]`.
#[derive(Debug, Clone)]
pub struct ReplicateResult {
    pub truth: TruthTable,
    pub cells: Vec<Vec<Vec<CellRecord>>>,
}

/// Runs one replicate: generates data and fits every scenario's models.
/// Nuisance fits are shared across scenarios that use the same model.
pub fn run_replicate(study: &Study, scenarios: &[Scenario], net: &Network, r: usize) -> Result<ReplicateResult> {
    let sim = study.dataset(net, r)?;
    let g = &net.graph;
    let truth = compute_truth(&sim.outcomes, g, &study.estimands, study.pooling)?;
    let mut p_cache: Vec<(PropensitySpec, Result<PropensityFit>)> = Vec::new();
    let mut o_cache: Vec<((OutcomeDesign, OutcomeModel), Result<OutcomeFit>)> = Vec::new();
    let needs_p = study.estimators.iter().any(|k| k.needs_propensity());
    let needs_o = study.estimators.iter().any(|k| matches!(k, EstimatorKind::Reg | EstimatorKind::DrBc));
    let mut cells = Vec::with_capacity(scenarios.len());
    for s in scenarios {
        let spec = study.analysis_spec(s);
        let propensity = needs_p.then(|| {
            if let Some((_, f)) = p_cache.iter().find(|(p, _)| *p == spec.propensity) {
                return f.clone();
            }
            let f = fit_propensity(g, &sim.data, &spec.propensity);
            p_cache.push((spec.propensity.clone(), f.clone()));
            f
        });
        let outcome = needs_o.then(|| {
            let key = (spec.outcome.clone(), spec.outcome_model);
            if let Some((_, f)) = o_cache.iter().find(|(k, _)| *k == key) {
                return f.clone();
            }
            let f = fit_outcome(g, &sim.data, &spec);
            o_cache.push((key, f.clone()));
            f
        });
        let report = estimate(g, &sim.data, &spec, NuisanceFits { propensity, outcome })?;
        let per_estimator = report
            .estimators
            .iter()
            .map(|(_, res)| match res {
                Err(e) => vec![CellRecord::failed(e); study.estimands.len()],
                Ok(rep) => study
                    .estimands
                    .iter()
                    .map(|est| {
                        let Some(eff) = rep.effects.iter().find(|e| e.estimand == *est) else {
                            return CellRecord::failed(&Error::Numerical("missing estimate".into()));
                        };
                        let failure = match (&rep.variance_error, study.variance) {
                            (Some(e), true) => Some(e.cause_tag().to_string()),
                            _ => None,
                        };
                        CellRecord { point: Some(eff.point), se: eff.se, ci: eff.ci, failure }
                    })
                    .collect(),
            })
            .collect();
        cells.push(per_estimator);
    }
    Ok(ReplicateResult { truth, cells })
}

/// Summary of one (scenario, estimator, estimand) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub estimator: EstimatorKind,
    pub estimand: Estimand,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub mse: f64,
    pub ese: f64,
    pub ase: Option<f64>,
    pub coverage: Option<f64>,
    pub used: usize,
    pub excluded: usize,
    /// Exclusion counts by cause tag.
    pub causes: BTreeMap<String, usize>,
}

/// Output of [`run_scenarios`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub study: Study,
    /// Truth averaged over replicates.
    pub truth: TruthTable,
    pub rows: Vec<SummaryRow>,
}

impl ScenarioReport {
    pub fn row(&self, scenario: &str, estimator: EstimatorKind, estimand: &Estimand) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.scenario == scenario && r.estimator == estimator && r.estimand == *estimand)
    }
}

/// Summarizes one cell against `truth`. A record counts as used when it has
/// a point estimate and no failure.
pub fn summarize_cell(truth: f64, records: &[&CellRecord], with_variance: bool) -> (SummaryRowStats, BTreeMap<String, usize>) {
    let mut causes = BTreeMap::new();
    let mut points = Vec::new();
    let mut ses = Vec::new();
    let mut covered = 0usize;
    for rec in records {
        match (&rec.failure, rec.point) {
            (None, Some(p)) => {
                points.push(p);
                if with_variance {
                    if let Some(se) = rec.se {
                        ses.push(se);
                    }
                    if let Some((lo, hi)) = rec.ci {
                        covered += usize::from(lo <= truth && truth <= hi);
                    }
                }
            }
            (cause, _) => *causes.entry(cause.clone().unwrap_or_else(|| "missing".into())).or_insert(0) += 1,
        }
    }
    let n = points.len();
    let nf = n as f64;
    let mean = points.iter().sum::<f64>() / nf;
    let mse = points.iter().map(|p| (p - truth).powi(2)).sum::<f64>() / nf;
    let ese = if n > 1 { (points.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt() } else { f64::NAN };
    let ase = (with_variance && !ses.is_empty()).then(|| ses.iter().sum::<f64>() / ses.len() as f64);
    let coverage = (with_variance && n > 0).then(|| covered as f64 / nf);
    (SummaryRowStats { mean, bias: mean - truth, mse, ese, ase, coverage, used: n }, causes)
}

/// Point-estimate summaries of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRowStats {
    pub mean: f64,
    pub bias: f64,
    pub mse: f64,
    pub ese: f64,
    pub ase: Option<f64>,
    pub coverage: Option<f64>,
    pub used: usize,
}

/// Aggregates replicate results in replicate order.
pub fn aggregate(study: &Study, scenarios: &[Scenario], results: &[Result<ReplicateResult>]) -> Result<ScenarioReport> {
    let ok: Vec<&ReplicateResult> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    let tables: Vec<TruthTable> = ok.iter().map(|r| r.truth.clone()).collect();
    let truth = TruthTable::average(&tables, &study.estimands)
        .ok_or_else(|| Error::Numerical("every replicate failed to generate".into()))?;
    let lost = results.len() - ok.len();
    let mut rows = Vec::new();
    for (si, s) in scenarios.iter().enumerate() {
        for (ki, &kind) in study.estimators.iter().enumerate() {
            for (ei, est) in study.estimands.iter().enumerate() {
                let t = truth.effect(est).expect("truth for every estimand");
                let records: Vec<&CellRecord> = ok.iter().map(|r| &r.cells[si][ki][ei]).collect();
                let (stats, mut causes) = summarize_cell(t, &records, study.variance);
                if lost > 0 {
                    *causes.entry("generation".into()).or_insert(0) += lost;
                }
                rows.push(SummaryRow {
                    scenario: s.name.clone(),
                    estimator: kind,
                    estimand: *est,
                    truth: t,
                    mean: stats.mean,
                    bias: stats.bias,
                    mse: stats.mse,
                    ese: stats.ese,
                    ase: stats.ase,
                    coverage: stats.coverage,
                    used: stats.used,
                    excluded: results.len() - stats.used,
                    causes,
                });
            }
        }
    }
    Ok(ScenarioReport { study: study.clone(), truth, rows })
}

/// Runs every replicate (in parallel on the current rayon pool) and aggregates.
pub fn run_scenarios(study: &Study) -> Result<ScenarioReport> {
    let scenarios = study.resolve()?;
    let net = study.network()?;
    let results: Vec<Result<ReplicateResult>> = (0..study.replicates)
        .into_par_iter()
        .map(|r| run_replicate(study, &scenarios, &net, r))
        .collect();
    aggregate(study, &scenarios, &results)
}

/// Replicate-averaged truth without fitting any model.
pub fn study_truth(study: &Study) -> Result<TruthTable> {
    study.dgp.validate()?;
    required_targets(&study.estimands)?;
    let net = study.network()?;
    let tables: Vec<TruthTable> = (0..study.replicates.max(1))
        .into_par_iter()
        .map(|r| {
            let sim = study.dataset(&net, r)?;
            compute_truth(&sim.outcomes, &net.graph, &study.estimands, study.pooling)
        })
        .collect::<Result<_>>()?;
    Ok(TruthTable::average(&tables, &study.estimands).expect("at least one replicate"))
}
