use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gfloam::selector::{
    brute_force_select, random_psd_candidates, random_select, simple_greedy_select, stochastic_greedy_select, Metric,
    PrecomputedCandidates, SelectionResult, SelectorConfig,
};

use crate::failure::Failure;
use crate::BenchArgs;

const PRIOR: f64 = 1e-3;

#[derive(Default)]
struct Column {
    ratios: Vec<f64>,
    evaluations: usize,
    micros: f64,
}

impl Column {
    fn push(&mut self, r: &SelectionResult<()>, best: f64, micros: f64) {
        self.ratios.push(if best > 0.0 { r.normalized_logdet() / best } else { 1.0 });
        self.evaluations += r.oracle_evaluations;
        self.micros += micros;
    }

    fn mean(&self) -> f64 {
        self.ratios.iter().sum::<f64>() / self.ratios.len() as f64
    }

    fn min(&self) -> f64 {
        self.ratios.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64() * 1e6)
}

pub fn bench(args: &BenchArgs) -> Result<(), Failure> {
    if args.n == 0 || args.m == 0 || args.m > args.n {
        return Err(Failure::usage("need 1 <= m <= n"));
    }
    if args.trials == 0 {
        return Err(Failure::usage("--trials must be at least 1"));
    }
    let base = SelectorConfig {
        epsilon: args.epsilon,
        t_max: f64::INFINITY,
        prior_scale: PRIOR,
        ..Default::default()
    };
    base.validate().map_err(|e| Failure::usage(e.to_string()))?;

    let names = ["stochastic", "simple", "random", "brute-force"];
    let mut columns: [Column; 4] = Default::default();
    for trial in 0..args.trials {
        let seed = args.seed.wrapping_add(trial as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let source = PrecomputedCandidates::new(random_psd_candidates(args.n, &mut rng));
        let config = SelectorConfig { seed, ..base };
        let (best, t_best) = timed(|| brute_force_select(&source, args.m, Metric::LogDet, PRIOR));
        let best = best.map_err(|e| Failure::usage(e.to_string()))?;
        let f_best = best.normalized_logdet();
        let (sg, t_sg) = timed(|| stochastic_greedy_select(&source, args.m, &config));
        let (gr, t_gr) = timed(|| simple_greedy_select(&source, args.m, &config));
        let (rn, t_rn) = timed(|| random_select(&source, args.m, seed, Metric::LogDet, PRIOR));
        columns[0].push(&sg, f_best, t_sg);
        columns[1].push(&gr, f_best, t_gr);
        columns[2].push(&rn, f_best, t_rn);
        columns[3].push(&best, f_best, t_best);
    }

    let bound = 1.0 - (-1.0f64).exp() - args.epsilon;
    let trials = args.trials as f64;
    println!(
        "select-bench n={} m={} epsilon={} trials={} seed={}",
        args.n, args.m, args.epsilon, args.trials, args.seed
    );
    println!("bound 1-1/e-epsilon = {bound:.4}");
    println!("{:<12} {:>10} {:>10} {:>12} {:>10}", "method", "mean_ratio", "min_ratio", "mean_evals", "mean_us");
    for (name, c) in names.iter().zip(&columns) {
        println!(
            "{name:<12} {:>10.4} {:>10.4} {:>12.1} {:>10.2}",
            c.mean(),
            c.min(),
            c.evaluations as f64 / trials,
            c.micros / trials
        );
    }
    let mean = columns[0].mean();
    println!(
        "stochastic mean ratio {mean:.4} {} bound {bound:.4}",
        if mean >= bound { ">=" } else { "<" }
    );
    Ok(())
}
