//! Proper scoring rules and calibration over resolved forecasts.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Probability, UnixMillis, PROB_EPS};
use crate::execution::Outcome;
use crate::persistence::{ConsensusRecord, PredictionRecord, ResolutionRecord};

/// Brier range reported for human superforecasters, shown as a reference
/// line in reports.
pub const SUPERFORECASTER_BRIER_RANGE: (f64, f64) = (0.10, 0.18);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no resolved forecasts to score")]
    Empty,
    #[error("need at least two bins, got {0}")]
    TooFewBins(usize),
    #[error("unknown forecast source {0:?}")]
    UnknownSource(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ForecastSource {
    Swarm,
    Combined,
    Market,
    Agent(String),
    /// Every agent's forecasts, tagged per persona.
    AllAgents,
}

impl fmt::Display for ForecastSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ForecastSource::Swarm => f.write_str("swarm"),
            ForecastSource::Combined => f.write_str("combined"),
            ForecastSource::Market => f.write_str("market"),
            ForecastSource::Agent(id) => write!(f, "agent:{id}"),
            ForecastSource::AllAgents => f.write_str("agent"),
        }
    }
}

impl FromStr for ForecastSource {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "swarm" => ForecastSource::Swarm,
            "combined" => ForecastSource::Combined,
            "market" => ForecastSource::Market,
            "agent" => ForecastSource::AllAgents,
            s => match s.strip_prefix("agent:") {
                Some(id) if !id.is_empty() => ForecastSource::Agent(id.to_owned()),
                _ => return Err(EvalError::UnknownSource(s.to_owned())),
            },
        })
    }
}

impl Serialize for ForecastSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ForecastSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub market_id: String,
    pub forecast: Probability,
    pub outcome: u8,
    pub source: ForecastSource,
    pub decided_at: UnixMillis,
}

impl ForecastRecord {
    pub fn new(market_id: &str, forecast: f64, outcome: u8, source: ForecastSource) -> Self {
        Self {
            market_id: market_id.to_owned(),
            forecast: Probability::new(forecast).expect("forecast in [0, 1]"),
            outcome: outcome.min(1),
            source,
            decided_at: 0,
        }
    }
}

pub fn brier_score(records: &[ForecastRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let sum: f64 = records
        .iter()
        .map(|r| {
            let d = r.forecast.value() - r.outcome as f64;
            d * d
        })
        .sum();
    Ok(sum / records.len() as f64)
}

/// Mean negative log-likelihood with forecasts clamped to `[1e-12, 1 - 1e-12]`.
pub fn log_loss(records: &[ForecastRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let sum: f64 = records
        .iter()
        .map(|r| {
            let f = r.forecast.value().clamp(PROB_EPS, 1.0 - PROB_EPS);
            if r.outcome == 1 {
                -f.ln()
            } else {
                -(1.0 - f).ln()
            }
        })
        .sum();
    Ok(sum / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinMode {
    #[default]
    EqualWidth,
    EqualMass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub mean_forecast: Option<f64>,
    pub empirical_frequency: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub mode: BinMode,
    pub bins: Vec<CalibrationBin>,
}

impl CalibrationTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["lo", "hi", "mean_forecast", "empirical_frequency", "count"])
            .expect("in-memory csv");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for b in &self.bins {
            w.write_record([
                b.lo.to_string(),
                b.hi.to_string(),
                opt(b.mean_forecast),
                opt(b.empirical_frequency),
                b.count.to_string(),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }
}

fn summarize(lo: f64, hi: f64, members: &[&ForecastRecord]) -> CalibrationBin {
    let n = members.len();
    let (mean_forecast, empirical_frequency) = if n == 0 {
        (None, None)
    } else {
        let f: f64 = members.iter().map(|r| r.forecast.value()).sum::<f64>() / n as f64;
        let o: f64 = members.iter().map(|r| r.outcome as f64).sum::<f64>() / n as f64;
        (Some(f), Some(o))
    };
    CalibrationBin {
        lo,
        hi,
        mean_forecast,
        empirical_frequency,
        count: n,
    }
}

/// Equal-width reliability bins on `[0, 1]`; the last bin is closed at 1.
pub fn reliability_bins(records: &[ForecastRecord], n_bins: usize) -> Result<CalibrationTable, EvalError> {
    reliability_bins_with(records, n_bins, BinMode::EqualWidth)
}

pub fn reliability_bins_with(
    records: &[ForecastRecord],
    n_bins: usize,
    mode: BinMode,
) -> Result<CalibrationTable, EvalError> {
    if n_bins < 2 {
        return Err(EvalError::TooFewBins(n_bins));
    }
    let bins = match mode {
        BinMode::EqualWidth => {
            let mut groups: Vec<Vec<&ForecastRecord>> = vec![Vec::new(); n_bins];
            for r in records {
                let idx = ((r.forecast.value() * n_bins as f64) as usize).min(n_bins - 1);
                groups[idx].push(r);
            }
            groups
                .iter()
                .enumerate()
                .map(|(i, g)| summarize(i as f64 / n_bins as f64, (i + 1) as f64 / n_bins as f64, g))
                .collect()
        }
        BinMode::EqualMass => {
            let mut sorted: Vec<&ForecastRecord> = records.iter().collect();
            sorted.sort_by(|a, b| a.forecast.value().total_cmp(&b.forecast.value()));
            let n = sorted.len();
            let bounds: Vec<usize> = (0..=n_bins).map(|i| i * n / n_bins).collect();
            let mut edges: Vec<f64> = (0..=n_bins)
                .map(|i| {
                    if i == 0 {
                        0.0
                    } else if i == n_bins {
                        1.0
                    } else {
                        sorted.get(bounds[i]).map_or(1.0, |r| r.forecast.value())
                    }
                })
                .collect();
            // keep edges monotone when many forecasts coincide
            for i in 1..edges.len() {
                edges[i] = edges[i].max(edges[i - 1]);
            }
            (0..n_bins)
                .map(|i| summarize(edges[i], edges[i + 1], &sorted[bounds[i]..bounds[i + 1]]))
                .collect()
        }
    };
    Ok(CalibrationTable { mode, bins })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentScore {
    pub brier: f64,
    pub log_loss: f64,
    pub n: usize,
}

/// Scores per persona over agent-sourced records. Other sources are ignored.
pub fn per_agent_scores(records: &[ForecastRecord]) -> BTreeMap<String, AgentScore> {
    let mut groups: BTreeMap<String, Vec<ForecastRecord>> = BTreeMap::new();
    for r in records {
        if let ForecastSource::Agent(id) = &r.source {
            groups.entry(id.clone()).or_default().push(r.clone());
        }
    }
    groups
        .into_iter()
        .map(|(id, rs)| {
            let score = AgentScore {
                brier: brier_score(&rs).expect("group is non-empty"),
                log_loss: log_loss(&rs).expect("group is non-empty"),
                n: rs.len(),
            };
            (id, score)
        })
        .collect()
}

/// Builds forecast records from persisted rows. A market's swarm, combined
/// and market forecasts come from the first consensus row whose gate passed
/// before resolution, or failing that the last row before resolution. Agent
/// forecasts use each persona's last prediction before resolution. Records are
/// kept when their decision time lies in `[from, to]`.
pub fn build_forecast_records(
    source: &ForecastSource,
    consensus: &[ConsensusRecord],
    predictions: &[PredictionRecord],
    resolutions: &[ResolutionRecord],
    from: Option<UnixMillis>,
    to: Option<UnixMillis>,
) -> Vec<ForecastRecord> {
    let mut resolved: BTreeMap<&str, &ResolutionRecord> = BTreeMap::new();
    for r in resolutions {
        resolved.entry(r.market_id.as_str()).or_insert(r);
    }
    let in_range = |t: UnixMillis| from.is_none_or(|f| t >= f) && to.is_none_or(|x| t <= x);
    let outcome = |r: &ResolutionRecord| u8::from(r.outcome == Outcome::Yes);
    let mut out = Vec::new();
    match source {
        ForecastSource::Swarm | ForecastSource::Combined | ForecastSource::Market => {
            let mut chosen: BTreeMap<&str, &ConsensusRecord> = BTreeMap::new();
            let mut fixed: HashMap<&str, bool> = HashMap::new();
            for c in consensus {
                let id = c.consensus.market_id.as_str();
                let Some(res) = resolved.get(id) else { continue };
                if c.at > res.resolved_at || fixed.get(id).copied().unwrap_or(false) {
                    continue;
                }
                chosen.insert(id, c);
                if !c.consensus.gated {
                    fixed.insert(id, true);
                }
            }
            for (id, c) in chosen {
                if !in_range(c.at) {
                    continue;
                }
                let f = match source {
                    ForecastSource::Swarm => c.consensus.p_swarm,
                    ForecastSource::Combined => c.consensus.p_combined,
                    _ => c.consensus.p_market,
                };
                out.push(ForecastRecord {
                    market_id: id.to_owned(),
                    forecast: f,
                    outcome: outcome(resolved[id]),
                    source: source.clone(),
                    decided_at: c.at,
                });
            }
        }
        ForecastSource::Agent(_) | ForecastSource::AllAgents => {
            let mut latest: BTreeMap<(&str, &str), &PredictionRecord> = BTreeMap::new();
            for p in predictions {
                let pr = &p.prediction;
                if let ForecastSource::Agent(id) = source {
                    if &pr.persona_id != id {
                        continue;
                    }
                }
                let Some(res) = resolved.get(pr.market_id.as_str()) else { continue };
                if pr.created_at <= res.resolved_at {
                    latest.insert((pr.market_id.as_str(), pr.persona_id.as_str()), p);
                }
            }
            for ((mid, pid), p) in latest {
                if !in_range(p.prediction.created_at) {
                    continue;
                }
                out.push(ForecastRecord {
                    market_id: mid.to_owned(),
                    forecast: p.prediction.probability,
                    outcome: outcome(resolved[mid]),
                    source: ForecastSource::Agent(pid.to_owned()),
                    decided_at: p.prediction.created_at,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub source: ForecastSource,
    pub n: usize,
    pub brier: f64,
    pub log_loss: f64,
    pub calibration: CalibrationTable,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_agent: BTreeMap<String, AgentScore>,
    pub superforecaster_brier_range: (f64, f64),
}

pub fn evaluate(
    source: ForecastSource,
    records: &[ForecastRecord],
    n_bins: usize,
    mode: BinMode,
) -> Result<EvaluationReport, EvalError> {
    Ok(EvaluationReport {
        n: records.len(),
        brier: brier_score(records)?,
        log_loss: log_loss(records)?,
        calibration: reliability_bins_with(records, n_bins, mode)?,
        per_agent: per_agent_scores(records),
        source,
        superforecaster_brier_range: SUPERFORECASTER_BRIER_RANGE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(f: f64, o: u8) -> ForecastRecord {
        ForecastRecord::new("m", f, o, ForecastSource::Swarm)
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier_score(&[rec(0.5, 1), rec(0.5, 0), rec(0.5, 1)]).unwrap(), 0.25);
        assert_eq!(brier_score(&[rec(1.0, 1), rec(0.0, 0)]).unwrap(), 0.0);
        assert!((brier_score(&[rec(0.8, 1), rec(0.3, 0)]).unwrap() - 0.065).abs() < 1e-15);
        assert_eq!(brier_score(&[]), Err(EvalError::Empty));
    }

    #[test]
    fn log_loss_examples() {
        assert!((log_loss(&[rec(0.5, 1), rec(0.5, 0)]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(log_loss(&[rec(1.0, 1), rec(0.0, 0)]).unwrap() <= 1e-11);
        let worst = log_loss(&[rec(0.0, 1)]).unwrap();
        assert!(worst.is_finite());
        assert!((worst + PROB_EPS.ln()).abs() < 1e-6);
        assert_eq!(log_loss(&[]), Err(EvalError::Empty));
    }

    #[test]
    fn reliability_on_calibrated_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let records: Vec<_> = (0..100_000)
            .map(|_| {
                let f: f64 = rng.random();
                rec(f, u8::from(rng.random::<f64>() < f))
            })
            .collect();
        let t = reliability_bins(&records, 10).unwrap();
        assert_eq!(t.bins.iter().map(|b| b.count).sum::<usize>(), 100_000);
        for b in &t.bins {
            assert!((b.mean_forecast.unwrap() - b.empirical_frequency.unwrap()).abs() < 0.02);
        }
    }

    #[test]
    fn reliability_edge_cases() {
        let t = reliability_bins(&vec![rec(0.5, 1); 7], 10).unwrap();
        assert_eq!(t.bins.iter().filter(|b| b.count > 0).count(), 1);
        assert!(t.bins[0].mean_forecast.is_none());
        let hundred: Vec<_> = (0..100).map(|i| rec(i as f64 / 99.0, (i % 2) as u8)).collect();
        let t = reliability_bins(&hundred, 10).unwrap();
        assert_eq!(t.bins.iter().map(|b| b.count).sum::<usize>(), 100);
        assert_eq!(t.bins[9].hi, 1.0);
        assert!(reliability_bins(&hundred, 1).is_err());
        let m = reliability_bins_with(&hundred, 4, BinMode::EqualMass).unwrap();
        assert!(m.bins.iter().all(|b| b.count == 25));
        assert_eq!((m.bins[0].lo, m.bins[3].hi), (0.0, 1.0));
        assert!(m.to_csv().starts_with("lo,hi,mean_forecast"));
    }

    #[test]
    fn per_agent_examples() {
        let a = |id: &str, f, o| ForecastRecord::new("m", f, o, ForecastSource::Agent(id.into()));
        let scores = per_agent_scores(&[a("p1", 1.0, 1), a("p1", 0.0, 0), a("p2", 0.5, 1), a("p2", 0.5, 0)]);
        assert_eq!(scores["p1"].brier, 0.0);
        assert_eq!(scores["p2"].brier, 0.25);
        let single = [a("p1", 0.7, 1), a("p1", 0.2, 0)];
        let s = per_agent_scores(&single);
        assert_eq!(s.len(), 1);
        assert_eq!(s["p1"].brier, brier_score(&single).unwrap());
        assert!(!s.contains_key("p3"));
    }

    #[test]
    fn source_round_trip() {
        for s in ["swarm", "combined", "market", "agent", "agent:p07"] {
            assert_eq!(s.parse::<ForecastSource>().unwrap().to_string(), s);
        }
        assert!("agent:".parse::<ForecastSource>().is_err());
    }

    #[test]
    fn scores_are_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for p in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let outcomes: Vec<u8> = (0..20_000).map(|_| u8::from(rng.random::<f64>() < p)).collect();
            let score = |f: f64| {
                let rs: Vec<_> = outcomes.iter().map(|o| rec(f, *o)).collect();
                (brier_score(&rs).unwrap(), log_loss(&rs).unwrap())
            };
            let (b_true, l_true) = score(p);
            for d in [-0.2, -0.1, 0.1, 0.2] {
                let f = p + d;
                if !(0.0..=1.0).contains(&f) {
                    continue;
                }
                let (b, l) = score(f);
                assert!(b_true < b && l_true < l, "p={p} f={f}");
            }
        }
    }

    proptest! {
        #[test]
        fn bounds_and_permutation(fs in proptest::collection::vec((0.0f64..=1.0, 0u8..2), 1..50), k in 0usize..50) {
            let rs: Vec<_> = fs.iter().map(|(f, o)| rec(*f, *o)).collect();
            let b = brier_score(&rs).unwrap();
            let l = log_loss(&rs).unwrap();
            prop_assert!((0.0..=1.0).contains(&b));
            prop_assert!(l >= 0.0);
            let mut rot = rs.clone();
            rot.rotate_left(k % rs.len());
            prop_assert!((brier_score(&rot).unwrap() - b).abs() < 1e-12);
            prop_assert!((log_loss(&rot).unwrap() - l).abs() < 1e-12);
            let half: Vec<_> = fs.iter().map(|(_, o)| rec(0.5, *o)).collect();
            prop_assert_eq!(brier_score(&half).unwrap(), 0.25);
        }
    }
}
