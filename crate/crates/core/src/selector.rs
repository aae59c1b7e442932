//! Information-driven feature selection.
//!
//! Every routine grows `Λ(S) = prior·I + Σ_{i∈S} Λ_i` one candidate at a
//! time. Candidates are matched lazily through a [`CandidateSource`] and the
//! outcome is cached for the rest of the invocation; a candidate that fails
//! to match is dropped from the pool for good. Ties on the metric always go
//! to the lowest candidate index.

use std::time::{Duration, Instant};

use itertools::Itertools;
use nalgebra::{Matrix6, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SelectorError {
    #[error("information matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("{0} subsets exceed the enumeration limit")]
    TooManySubsets(u128),
    #[error("invalid selector configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    LogDet,
    Trace,
    MinEig,
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logdet" => Ok(Metric::LogDet),
            "trace" => Ok(Metric::Trace),
            "mineig" => Ok(Metric::MinEig),
            other => Err(format!("unknown metric '{other}'")),
        }
    }
}

/// `log det Λ` from a Cholesky factor, `None` if `Λ` is not positive definite.
pub fn logdet(m: &Matrix6<f64>) -> Option<f64> {
    let l = m.cholesky()?;
    Some(2.0 * l.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

pub fn metric_eval(metric: Metric, m: &Matrix6<f64>) -> Result<f64, SelectorError> {
    match metric {
        Metric::LogDet => logdet(m).ok_or(SelectorError::NotPositiveDefinite),
        Metric::Trace => Ok(m.trace()),
        Metric::MinEig => Ok(SymmetricEigen::new(*m).eigenvalues.min()),
    }
}

fn score(metric: Metric, m: &Matrix6<f64>) -> f64 {
    metric_eval(metric, m).unwrap_or(f64::NEG_INFINITY)
}

/// Accumulated information with an isotropic prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfoMatrix {
    pub lambda: Matrix6<f64>,
    pub prior_scale: f64,
}

impl InfoMatrix {
    pub fn new(prior_scale: f64) -> Self {
        Self {
            lambda: Matrix6::identity() * prior_scale,
            prior_scale,
        }
    }

    pub fn add(&mut self, info: &Matrix6<f64>) {
        self.lambda += info;
    }

    pub fn prior_logdet(&self) -> f64 {
        6.0 * self.prior_scale.ln()
    }

    /// `logdet(Λ) − logdet(prior)`: zero for the empty set.
    pub fn normalized_logdet(&self) -> f64 {
        logdet(&self.lambda).map_or(f64::NEG_INFINITY, |v| v - self.prior_logdet())
    }

    /// `logdet(Λ − prior)`; `−∞` when the selected information alone is singular.
    pub fn raw_logdet(&self) -> f64 {
        let raw = self.lambda - Matrix6::identity() * self.prior_scale;
        logdet(&raw).unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectorConfig {
    /// Budget as a fraction of the candidate count; ignored when `count` is set.
    pub ratio: f64,
    pub count: Option<usize>,
    pub epsilon: f64,
    /// Seconds per invocation.
    pub t_max: f64,
    pub metric: Metric,
    pub prior_scale: f64,
    pub seed: u64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            ratio: 0.2,
            count: None,
            epsilon: 0.1,
            t_max: 0.05,
            metric: Metric::LogDet,
            prior_scale: 1e-3,
            seed: 0,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<(), SelectorError> {
        let bad = |m: &str| Err(SelectorError::InvalidConfig(m.to_string()));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0, 1)");
        }
        if !(self.t_max > 0.0) {
            return bad("t_max must be positive");
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return bad("ratio must lie in (0, 1]");
        }
        if !(self.prior_scale > 0.0 && self.prior_scale.is_finite()) {
            return bad("prior_scale must be positive");
        }
        Ok(())
    }

    pub fn resolve_budget(&self, n: usize) -> usize {
        self.count
            .unwrap_or_else(|| (self.ratio * n as f64).ceil() as usize)
            .min(n)
    }

    pub fn with_ratio(mut self, ratio: f64) -> Self {
        self.ratio = ratio;
        self.count = None;
        self
    }
}

/// Lazily matched candidates.
pub trait CandidateSource {
    type Payload: Clone;
    fn len(&self) -> usize;
    /// Matches candidate `index`, returning its information contribution.
    fn evaluate(&self, index: usize) -> Option<(Matrix6<f64>, Self::Payload)>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Candidates with known `Λ_i`; `None` entries never match.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedCandidates {
    pub infos: Vec<Option<Matrix6<f64>>>,
}

impl PrecomputedCandidates {
    pub fn new(infos: Vec<Matrix6<f64>>) -> Self {
        Self {
            infos: infos.into_iter().map(Some).collect(),
        }
    }
}

impl CandidateSource for PrecomputedCandidates {
    type Payload = ();
    fn len(&self) -> usize {
        self.infos.len()
    }
    fn evaluate(&self, index: usize) -> Option<(Matrix6<f64>, ())> {
        self.infos[index].map(|m| (m, ()))
    }
}

/// Adapts a closure over `0..len` into a [`CandidateSource`].
pub struct FnCandidates<F> {
    pub len: usize,
    pub f: F,
}

impl<P: Clone, F: Fn(usize) -> Option<(Matrix6<f64>, P)>> CandidateSource for FnCandidates<F> {
    type Payload = P;
    fn len(&self) -> usize {
        self.len
    }
    fn evaluate(&self, index: usize) -> Option<(Matrix6<f64>, P)> {
        (self.f)(index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CandidateStatus<P> {
    Unvisited,
    Matched(Matrix6<f64>, P),
    Unmatched,
}

#[derive(Debug, Clone)]
pub struct CandidateCache<P> {
    status: Vec<CandidateStatus<P>>,
    pub match_attempts: usize,
}

impl<P: Clone> CandidateCache<P> {
    pub fn new(len: usize) -> Self {
        Self {
            status: vec![CandidateStatus::Unvisited; len],
            match_attempts: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.status.len()
    }

    pub fn is_empty(&self) -> bool {
        self.status.is_empty()
    }

    pub fn status(&self, index: usize) -> &CandidateStatus<P> {
        &self.status[index]
    }

    pub fn get<S: CandidateSource<Payload = P>>(&mut self, source: &S, index: usize) -> Option<(&Matrix6<f64>, &P)> {
        if matches!(self.status[index], CandidateStatus::Unvisited) {
            self.match_attempts += 1;
            self.status[index] = match source.evaluate(index) {
                Some((info, payload)) => CandidateStatus::Matched(info, payload),
                None => CandidateStatus::Unmatched,
            };
        }
        match &self.status[index] {
            CandidateStatus::Matched(info, payload) => Some((info, payload)),
            _ => None,
        }
    }

    /// Matches every candidate.
    pub fn fill<S: CandidateSource<Payload = P>>(&mut self, source: &S) {
        for i in 0..self.len() {
            self.get(source, i);
        }
    }

    pub fn info(&self, index: usize) -> Option<&Matrix6<f64>> {
        match &self.status[index] {
            CandidateStatus::Matched(info, _) => Some(info),
            _ => None,
        }
    }

    pub fn payload(&self, index: usize) -> Option<&P> {
        match &self.status[index] {
            CandidateStatus::Matched(_, p) => Some(p),
            _ => None,
        }
    }

    pub fn counts(&self) -> (usize, usize) {
        self.status.iter().fold((0, 0), |(m, u), s| match s {
            CandidateStatus::Matched(..) => (m + 1, u),
            CandidateStatus::Unmatched => (m, u + 1),
            CandidateStatus::Unvisited => (m, u),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    Budget,
    Timeout,
    Exhausted,
}

#[derive(Debug, Clone)]
pub struct SelectionResult<P> {
    /// Candidate indices in selection order.
    pub selected: Vec<usize>,
    pub payloads: Vec<P>,
    pub info: InfoMatrix,
    pub metric: Metric,
    /// Metric of `info`, prior included.
    pub achieved_metric: f64,
    /// Metric evaluations of `Λ(S) + Λ_i`.
    pub oracle_evaluations: usize,
    pub match_attempts: usize,
    pub matched_count: usize,
    pub unmatched_count: usize,
    pub elapsed: Duration,
    pub terminated_by: Termination,
}

impl<P> SelectionResult<P> {
    pub fn normalized_logdet(&self) -> f64 {
        self.info.normalized_logdet()
    }

    pub fn raw_logdet(&self) -> f64 {
        self.info.raw_logdet()
    }

    pub fn logdet(&self) -> f64 {
        logdet(&self.info.lambda).unwrap_or(f64::NEG_INFINITY)
    }
}

struct Run<'a, S: CandidateSource> {
    source: &'a S,
    cache: &'a mut CandidateCache<S::Payload>,
    metric: Metric,
    info: InfoMatrix,
    selected: Vec<usize>,
    oracle_evaluations: usize,
    attempts_before: usize,
    start: Instant,
}

impl<'a, S: CandidateSource> Run<'a, S> {
    fn new(source: &'a S, cache: &'a mut CandidateCache<S::Payload>, metric: Metric, prior_scale: f64) -> Self {
        let attempts_before = cache.match_attempts;
        Self {
            source,
            cache,
            metric,
            info: InfoMatrix::new(prior_scale),
            selected: Vec::new(),
            oracle_evaluations: 0,
            attempts_before,
            start: Instant::now(),
        }
    }

    fn ensure(&mut self, index: usize) -> Option<Matrix6<f64>> {
        self.cache.get(self.source, index).map(|(info, _)| *info)
    }

    fn take(&mut self, index: usize) {
        let info = *self.cache.info(index).expect("selected candidate is matched");
        self.info.add(&info);
        self.selected.push(index);
    }

    /// Best matched candidate among `indices` by `metric(Λ(S) + Λ_i)`.
    /// Unmatched positions are appended to `dead`. `None` on timeout.
    fn best_of(
        &mut self,
        positions: impl Iterator<Item = usize>,
        pool: &[usize],
        dead: &mut Vec<usize>,
        deadline: Duration,
    ) -> Option<Option<(usize, f64)>> {
        let mut best: Option<(usize, usize, f64)> = None;
        for pos in positions {
            if self.start.elapsed() >= deadline {
                return None;
            }
            let index = pool[pos];
            let Some(info) = self.ensure(index) else {
                dead.push(pos);
                continue;
            };
            self.oracle_evaluations += 1;
            let value = score(self.metric, &(self.info.lambda + info));
            let better = match best {
                None => true,
                Some((_, bi, bv)) => value > bv || (value == bv && index < bi),
            };
            if better {
                best = Some((pos, index, value));
            }
        }
        Some(best.map(|(pos, _, v)| (pos, v)))
    }

    fn finish(self, terminated_by: Termination) -> SelectionResult<S::Payload> {
        let (matched_count, unmatched_count) = self.cache.counts();
        let payloads = self
            .selected
            .iter()
            .map(|&i| self.cache.payload(i).expect("matched").clone())
            .collect();
        SelectionResult {
            achieved_metric: score(self.metric, &self.info.lambda),
            selected: self.selected,
            payloads,
            info: self.info,
            metric: self.metric,
            oracle_evaluations: self.oracle_evaluations,
            match_attempts: self.cache.match_attempts - self.attempts_before,
            matched_count,
            unmatched_count,
            elapsed: self.start.elapsed(),
            terminated_by,
        }
    }
}

/// Removes the given pool positions (any order) in O(len).
fn remove_positions(pool: &mut Vec<usize>, positions: &mut Vec<usize>) {
    positions.sort_unstable_by(|a, b| b.cmp(a));
    positions.dedup();
    for &p in positions.iter() {
        pool.swap_remove(p);
    }
    positions.clear();
}

/// Sample size `⌈(n/m)·ln(1/ε)⌉` clamped to `[1, n]`.
pub fn sample_size(pool: usize, budget: usize, epsilon: f64) -> usize {
    if pool == 0 {
        return 0;
    }
    let s = (pool as f64 / budget.max(1) as f64 * (1.0 / epsilon).ln()).ceil();
    (s.max(1.0) as usize).min(pool)
}

/// Stochastic-greedy selection of `budget` candidates.
pub fn stochastic_greedy_select<S: CandidateSource>(
    source: &S,
    budget: usize,
    config: &SelectorConfig,
) -> SelectionResult<S::Payload> {
    let mut cache = CandidateCache::new(source.len());
    stochastic_greedy_select_cached(source, &mut cache, budget, config)
}

/// As [`stochastic_greedy_select`], reusing match results already in `cache`.
pub fn stochastic_greedy_select_cached<S: CandidateSource>(
    source: &S,
    cache: &mut CandidateCache<S::Payload>,
    budget: usize,
    config: &SelectorConfig,
) -> SelectionResult<S::Payload> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let deadline = Duration::try_from_secs_f64(config.t_max).unwrap_or(Duration::MAX);
    let mut run = Run::new(source, cache, config.metric, config.prior_scale);
    let mut pool: Vec<usize> = (0..source.len())
        .filter(|&i| !matches!(run.cache.status(i), CandidateStatus::Unmatched))
        .collect();
    let mut dead = Vec::new();
    while run.selected.len() < budget {
        if pool.is_empty() {
            return run.finish(Termination::Exhausted);
        }
        if run.start.elapsed() >= deadline {
            return run.finish(Termination::Timeout);
        }
        let s = sample_size(pool.len(), budget, config.epsilon);
        let positions = rand::seq::index::sample(&mut rng, pool.len(), s);
        match run.best_of(positions.into_iter(), &pool, &mut dead, deadline) {
            None => return run.finish(Termination::Timeout),
            Some(Some((pos, _))) => {
                run.take(pool[pos]);
                dead.push(pos);
            }
            Some(None) => {}
        }
        remove_positions(&mut pool, &mut dead);
    }
    run.finish(Termination::Budget)
}

/// Greedy selection scanning the whole remaining pool every round.
pub fn simple_greedy_select<S: CandidateSource>(
    source: &S,
    budget: usize,
    config: &SelectorConfig,
) -> SelectionResult<S::Payload> {
    let mut cache = CandidateCache::new(source.len());
    simple_greedy_select_cached(source, &mut cache, budget, config)
}

pub fn simple_greedy_select_cached<S: CandidateSource>(
    source: &S,
    cache: &mut CandidateCache<S::Payload>,
    budget: usize,
    config: &SelectorConfig,
) -> SelectionResult<S::Payload> {
    let deadline = Duration::try_from_secs_f64(config.t_max).unwrap_or(Duration::MAX);
    let mut run = Run::new(source, cache, config.metric, config.prior_scale);
    let mut pool: Vec<usize> = (0..source.len()).collect();
    let mut dead = Vec::new();
    while run.selected.len() < budget {
        if pool.is_empty() {
            return run.finish(Termination::Exhausted);
        }
        if run.start.elapsed() >= deadline {
            return run.finish(Termination::Timeout);
        }
        match run.best_of(0..pool.len(), &pool, &mut dead, deadline) {
            None => return run.finish(Termination::Timeout),
            Some(Some((pos, _))) => {
                run.take(pool[pos]);
                dead.push(pos);
            }
            Some(None) => {}
        }
        remove_positions(&mut pool, &mut dead);
    }
    run.finish(Termination::Budget)
}

/// Uniformly random selection of `budget` matched candidates.
pub fn random_select<S: CandidateSource>(
    source: &S,
    budget: usize,
    seed: u64,
    metric: Metric,
    prior_scale: f64,
) -> SelectionResult<S::Payload> {
    let mut cache = CandidateCache::new(source.len());
    let mut run = Run::new(source, &mut cache, metric, prior_scale);
    let mut order: Vec<usize> = (0..source.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for index in order {
        if run.selected.len() == budget {
            return run.finish(Termination::Budget);
        }
        if run.ensure(index).is_some() {
            run.take(index);
        }
    }
    let done = if run.selected.len() == budget {
        Termination::Budget
    } else {
        Termination::Exhausted
    };
    run.finish(done)
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Exact optimum over all `budget`-subsets of the matched candidates.
pub fn brute_force_select<S: CandidateSource>(
    source: &S,
    budget: usize,
    metric: Metric,
    prior_scale: f64,
) -> Result<SelectionResult<S::Payload>, SelectorError> {
    let mut cache = CandidateCache::new(source.len());
    let mut run = Run::new(source, &mut cache, metric, prior_scale);
    let matched: Vec<(usize, Matrix6<f64>)> = (0..source.len())
        .filter_map(|i| run.ensure(i).map(|m| (i, m)))
        .collect();
    let m = budget.min(matched.len());
    let subsets = binomial(matched.len(), m);
    if subsets > BRUTE_FORCE_LIMIT {
        return Err(SelectorError::TooManySubsets(subsets));
    }
    let prior = Matrix6::identity() * prior_scale;
    let mut best: Option<(Vec<usize>, f64)> = None;
    for combo in matched.iter().combinations(m) {
        let lambda = combo.iter().fold(prior, |acc, (_, info)| acc + info);
        run.oracle_evaluations += 1;
        let value = score(metric, &lambda);
        if best.as_ref().is_none_or(|(_, bv)| value > *bv) {
            best = Some((combo.iter().map(|(i, _)| *i).collect(), value));
        }
    }
    if let Some((indices, _)) = best {
        for i in indices {
            run.take(i);
        }
    }
    let done = if m == budget {
        Termination::Budget
    } else {
        Termination::Exhausted
    };
    Ok(run.finish(done))
}

/// Candidates `JᵀJ` with `J` a standard-normal matrix of 1 to 3 rows.
pub fn random_psd_candidates(n: usize, rng: &mut impl Rng) -> Vec<Matrix6<f64>> {
    (0..n)
        .map(|_| {
            let rows = rng.random_range(1..=3);
            let mut info = Matrix6::zeros();
            for _ in 0..rows {
                let j = nalgebra::Vector6::from_fn(|_, _| StandardNormal.sample(rng));
                info += j * j.transpose();
            }
            info
        })
        .collect()
}
