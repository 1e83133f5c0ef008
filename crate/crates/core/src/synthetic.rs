//! Synthetic workloads: the swarm-versus-market calibration experiment and
//! market corpora with planted inefficiencies.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analysis::PartitionGroups;
use crate::domain::{Category, MarketSnapshot, Probability, UnixMillis, VolumeBasis};
use crate::marketdata::write_fixture_line;
use crate::par::{self, ExecPolicy};
use crate::swarm::{derive_seed, logistic, logit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvantageParams {
    pub markets: usize,
    pub runs: usize,
    pub pool_size: usize,
    pub agents_per_market: usize,
    pub agent_noise: f64,
    pub bias_sigma: f64,
    pub market_noise: f64,
    pub weight_swarm: f64,
    pub seed: u64,
}

impl Default for AdvantageParams {
    fn default() -> Self {
        Self {
            markets: 2000,
            runs: 100,
            pool_size: 50,
            agents_per_market: 25,
            agent_noise: 0.8,
            bias_sigma: 0.3,
            market_noise: 0.3,
            weight_swarm: 0.70,
            seed: 42,
        }
    }
}

/// Squared-error sums for one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub swarm_brier: f64,
    pub market_brier: f64,
    pub combined_brier: f64,
    pub median_agent_brier: f64,
    pub markets: usize,
}

impl RunScores {
    pub fn swarm_beats_median_agent(&self) -> bool {
        self.swarm_brier < self.median_agent_brier
    }

    pub fn combined_beats_both(&self) -> bool {
        self.combined_brier < self.swarm_brier && self.combined_brier < self.market_brier
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageReport {
    pub params: AdvantageParams,
    pub runs: Vec<RunScores>,
    pub swarm_wins: usize,
    pub combined_wins: usize,
    /// Brier over every market of every run.
    pub pooled_swarm: f64,
    pub pooled_market: f64,
    pub pooled_combined: f64,
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

/// One seeded run. Each persona's bias is drawn once per run; each market
/// gets a fresh cohort from the pool. Agents report
/// `logistic(logit(t) + bias + noise * z)` with confidence in `[0.3, 1]`, the
/// same draw the simulated provider makes.
pub fn advantage_run(p: &AdvantageParams, run: usize) -> RunScores {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(p.seed, &["advantage", &run.to_string()]));
    let biases: Vec<f64> = (0..p.pool_size)
        .map(|_| p.bias_sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut agent_se = vec![0.0; p.pool_size];
    let mut agent_n = vec![0usize; p.pool_size];
    let (mut swarm, mut market, mut combined) = (0.0, 0.0, 0.0);
    for _ in 0..p.markets {
        let truth = 0.05 + 0.9 * rng.random::<f64>();
        let outcome = if rng.random::<f64>() < truth { 1.0 } else { 0.0 };
        let lt = logit(truth);
        let (mut wsum, mut wp) = (0.0, 0.0);
        for i in index::sample(&mut rng, p.pool_size, p.agents_per_market) {
            let z: f64 = rng.sample(StandardNormal);
            let conf = 1.0 - 0.7 * rng.random::<f64>();
            let prob = logistic(lt + biases[i] + p.agent_noise * z);
            wsum += conf;
            wp += conf * prob;
            agent_se[i] += (prob - outcome) * (prob - outcome);
            agent_n[i] += 1;
        }
        let p_swarm = wp / wsum;
        let zm: f64 = rng.sample(StandardNormal);
        let p_market = logistic(lt + p.market_noise * zm);
        let p_comb = p.weight_swarm * p_swarm + (1.0 - p.weight_swarm) * p_market;
        swarm += (p_swarm - outcome).powi(2);
        market += (p_market - outcome).powi(2);
        combined += (p_comb - outcome).powi(2);
    }
    let mut per_agent: Vec<f64> = agent_se
        .iter()
        .zip(&agent_n)
        .filter(|(_, n)| **n > 0)
        .map(|(se, n)| se / *n as f64)
        .collect();
    let n = p.markets as f64;
    RunScores {
        swarm_brier: swarm / n,
        market_brier: market / n,
        combined_brier: combined / n,
        median_agent_brier: median(&mut per_agent),
        markets: p.markets,
    }
}

pub fn swarm_advantage(p: &AdvantageParams, policy: ExecPolicy) -> AdvantageReport {
    let runs = par::map_range(policy, p.runs, |r| advantage_run(p, r));
    let total: f64 = runs.iter().map(|r| r.markets as f64).sum();
    let pooled = |f: fn(&RunScores) -> f64| runs.iter().map(|r| f(r) * r.markets as f64).sum::<f64>() / total;
    AdvantageReport {
        params: *p,
        swarm_wins: runs.iter().filter(|r| r.swarm_beats_median_agent()).count(),
        combined_wins: runs.iter().filter(|r| r.combined_beats_both()).count(),
        pooled_swarm: pooled(|r| r.swarm_brier),
        pooled_market: pooled(|r| r.market_brier),
        pooled_combined: pooled(|r| r.combined_brier),
        runs,
    }
}

/// A 200-market corpus with planted negation pairs and partition groups.
#[derive(Debug, Clone)]
pub struct ScannerCorpus {
    pub markets: Vec<MarketSnapshot>,
    /// `(positive, negated)` ids whose prices deviate from summing to 1.
    pub deviating_pairs: Vec<(String, String)>,
    /// Pairs whose prices sum to exactly 1.
    pub consistent_pairs: Vec<(String, String)>,
    pub groups: PartitionGroups,
    /// Planted `|sum - 1|` per group.
    pub group_deviations: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusParams {
    pub total: usize,
    pub deviating_pairs: usize,
    pub consistent_pairs: usize,
    pub group_deviations: [f64; 3],
    pub observed_at: UnixMillis,
    pub seed: u64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self {
            total: 200,
            deviating_pairs: 10,
            consistent_pairs: 5,
            group_deviations: [0.0, 0.04, 0.4],
            observed_at: 1_767_225_600_000,
            seed: 7,
        }
    }
}

/// Made-up words, unique within one generator, so unrelated titles share no
/// content tokens.
struct Words {
    rng: ChaCha8Rng,
    seen: HashSet<String>,
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "kr", "tr"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
const CODAS: &[&str] = &["", "n", "r", "k", "l", "m", "x"];

impl Words {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seen: HashSet::new(),
        }
    }

    fn next(&mut self) -> String {
        loop {
            let mut w = String::new();
            for _ in 0..3 {
                w.push_str(ONSETS[self.rng.random_range(0..ONSETS.len())]);
                w.push_str(VOWELS[self.rng.random_range(0..VOWELS.len())]);
            }
            w.push_str(CODAS[self.rng.random_range(0..CODAS.len())]);
            // a trailing s would be stemmed away
            if !w.ends_with('s') && self.seen.insert(w.clone()) {
                let mut c = w.chars();
                let first = c.next().expect("non-empty").to_ascii_uppercase();
                return std::iter::once(first).chain(c).collect();
            }
        }
    }
}

fn snapshot(id: String, title: String, price: f64, volume: f64, p: &CorpusParams) -> MarketSnapshot {
    MarketSnapshot {
        market_id: id,
        title,
        yes_price: Probability::new(price).expect("generated price in range"),
        volume_usdc: volume,
        liquidity_usdc: volume / 10.0,
        category: Category::Other,
        expiry: p.observed_at + 90 * 24 * 3_600_000,
        observed_at: p.observed_at,
        volume_basis: VolumeBasis::Total,
    }
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

struct Gen<'a> {
    p: &'a CorpusParams,
    rng: ChaCha8Rng,
    words: Words,
    next_id: usize,
    markets: Vec<MarketSnapshot>,
}

impl Gen<'_> {
    fn push(&mut self, title: String, price: f64) -> String {
        self.next_id += 1;
        let id = format!("m{:04}", self.next_id);
        let volume = (5_000.0 + 95_000.0 * self.rng.random::<f64>()).round();
        self.markets.push(snapshot(id.clone(), title, price, volume, self.p));
        id
    }

    fn pair(&mut self, deviation: f64) -> (String, String) {
        let (who, act, what) = (self.words.next(), self.words.next().to_lowercase(), self.words.next());
        let pos = round4(0.25 + 0.45 * self.rng.random::<f64>());
        let sign = if self.rng.random::<bool>() { 1.0 } else { -1.0 };
        let neg = round4(1.0 - pos + sign * deviation);
        let a = self.push(format!("Will {who} {act} {what}?"), pos);
        let b = self.push(format!("Will {who} not {act} {what}?"), neg);
        (a, b)
    }
}

pub fn scanner_corpus(p: &CorpusParams) -> ScannerCorpus {
    let mut g = Gen {
        p,
        rng: ChaCha8Rng::seed_from_u64(derive_seed(p.seed, &["corpus"])),
        words: Words::new(derive_seed(p.seed, &["words"])),
        next_id: 0,
        markets: Vec::with_capacity(p.total),
    };
    let mut deviating_pairs = Vec::new();
    for _ in 0..p.deviating_pairs {
        let d = round4(0.05 + 0.15 * g.rng.random::<f64>());
        deviating_pairs.push(g.pair(d));
    }
    let consistent_pairs = (0..p.consistent_pairs).map(|_| g.pair(0.0)).collect();

    let mut groups = BTreeMap::new();
    let mut group_deviations = BTreeMap::new();
    for (k, dev) in p.group_deviations.iter().enumerate() {
        let n = 3 + k;
        let event = g.words.next();
        let gid = format!("g{}", k + 1);
        let raw: Vec<f64> = (0..n).map(|_| 0.5 + g.rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let target = 1.0 + dev;
        let mut prices: Vec<f64> = raw.iter().map(|r| round4(r / total * target)).collect();
        // the rounding residue goes on the last member so the sum is exact
        let head: f64 = prices[..n - 1].iter().sum();
        prices[n - 1] = round4(target - head);
        let mut ids = Vec::new();
        for price in prices {
            let who = g.words.next();
            ids.push(g.push(format!("{event} winner: {who}"), price));
        }
        groups.insert(gid.clone(), ids);
        group_deviations.insert(gid, *dev);
    }

    while g.markets.len() < p.total {
        let k = g.markets.len();
        let (a, b, c) = (g.words.next(), g.words.next().to_lowercase(), g.words.next());
        // a few lone negated titles, which must not pair with anything
        let title = if k.is_multiple_of(17) {
            format!("Will {a} fail to {b} {c}?")
        } else {
            format!("Will {a} {b} {c}?")
        };
        let price = round4(0.05 + 0.9 * g.rng.random::<f64>());
        g.push(title, price);
    }
    ScannerCorpus {
        markets: g.markets,
        deviating_pairs,
        consistent_pairs,
        groups: PartitionGroups(groups),
        group_deviations,
    }
}

/// `frames` copies of `markets`, each `interval_ms` apart, with prices
/// nudged by a seeded logit random walk.
pub fn drifting_frames(
    markets: &[MarketSnapshot],
    frames: usize,
    interval_ms: i64,
    step_sigma: f64,
    seed: u64,
) -> Vec<Vec<MarketSnapshot>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["frames"]));
    let mut current: Vec<MarketSnapshot> = markets.to_vec();
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        if f > 0 {
            for m in &mut current {
                let z: f64 = rng.sample(StandardNormal);
                let next = logistic(logit(m.yes_price.value()) + step_sigma * z).clamp(0.01, 0.99);
                m.yes_price = Probability::new(round4(next)).expect("clamped");
                m.observed_at += interval_ms;
            }
        }
        out.push(current.clone());
    }
    out
}

pub fn fixture_text(frames: &[Vec<MarketSnapshot>]) -> String {
    let mut s = String::new();
    for frame in frames {
        for m in frame {
            let _ = writeln!(s, "{}", write_fixture_line(m));
        }
    }
    s
}

pub fn write_fixture(path: &Path, frames: &[Vec<MarketSnapshot>]) -> std::io::Result<()> {
    std::fs::write(path, fixture_text(frames))
}
