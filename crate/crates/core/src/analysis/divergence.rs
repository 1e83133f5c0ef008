use serde::{Deserialize, Serialize};

use crate::domain::{BinaryDistribution, Probability};
use crate::par::{self, ExecPolicy};

/// `x * ln(x / y)` with `0 * ln(0 / y) = 0` and `x > 0, y = 0` mapped to +inf.
fn kl_term(x: f64, y: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if y <= 0.0 {
        f64::INFINITY
    } else {
        x * (x / y).ln()
    }
}

/// Relative entropy `KL(P || Q)` in nats. Returns `+inf` when `P` puts mass
/// where `Q` has none.
pub fn kl_divergence(p: &BinaryDistribution, q: &BinaryDistribution) -> f64 {
    let [p1, p0] = p.masses();
    let [q1, q0] = q.masses();
    // clamp tiny negative rounding to zero
    (kl_term(p1, q1) + kl_term(p0, q0)).max(0.0)
}

/// Jensen-Shannon divergence in nats, always finite and within `[0, ln 2]`.
pub fn js_divergence(p: &BinaryDistribution, q: &BinaryDistribution) -> f64 {
    let [p1, p0] = p.masses();
    let [q1, q0] = q.masses();
    let (m1, m0) = ((p1 + q1) / 2.0, (p0 + q0) / 2.0);
    let js = 0.5 * (kl_term(p1, m1) + kl_term(p0, m0)) + 0.5 * (kl_term(q1, m1) + kl_term(q0, m0));
    js.clamp(0.0, std::f64::consts::LN_2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub market_id: String,
    pub kl_swarm_vs_market: f64,
    pub kl_market_vs_swarm: f64,
    pub js: f64,
    /// Ranking key; equal to `js`.
    pub priority_score: f64,
}

/// Divergences between the swarm and market distributions for one market.
pub fn score_market(market_id: &str, p_swarm: Probability, p_market: Probability) -> DivergenceReport {
    let s = BinaryDistribution::from_yes(p_swarm);
    let m = BinaryDistribution::from_yes(p_market);
    let js = js_divergence(&s, &m);
    DivergenceReport {
        market_id: market_id.to_owned(),
        kl_swarm_vs_market: kl_divergence(&s, &m),
        kl_market_vs_swarm: kl_divergence(&m, &s),
        js,
        priority_score: js,
    }
}

/// Scores a batch and sorts by descending priority (ties keep input order).
pub fn rank_markets(
    policy: ExecPolicy,
    inputs: &[(String, Probability, Probability)],
) -> Vec<DivergenceReport> {
    let mut reports = par::map_slice(policy, inputs, |(id, s, m)| score_market(id, *s, *m));
    reports.sort_by(|a, b| b.priority_score.total_cmp(&a.priority_score));
    reports
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn d(p: f64) -> BinaryDistribution {
        BinaryDistribution::from_yes(Probability::new(p).unwrap())
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&d(0.5), &d(0.5)), 0.0);
        assert!((kl_divergence(&d(1.0), &d(0.5)) - LN_2).abs() < 1e-15);
        assert_eq!(kl_divergence(&d(0.5), &d(1.0)), f64::INFINITY);
    }

    #[test]
    fn js_examples() {
        assert_eq!(js_divergence(&d(0.3), &d(0.3)), 0.0);
        assert!((js_divergence(&d(1.0), &d(0.0)) - LN_2).abs() < 1e-15);
        // composition through two explicit KL calls against the mixture
        let (p, q) = (d(0.8), d(0.5));
        let m = d(0.65);
        let oracle = 0.5 * kl_divergence(&p, &m) + 0.5 * kl_divergence(&q, &m);
        assert!((js_divergence(&p, &q) - oracle).abs() < 1e-15);
    }

    #[test]
    fn score_market_examples() {
        let p = Probability::new(0.4).unwrap();
        let r = score_market("m", p, p);
        assert_eq!((r.kl_swarm_vs_market, r.kl_market_vs_swarm, r.js), (0.0, 0.0, 0.0));
        let r = score_market("m", Probability::new(0.9).unwrap(), Probability::HALF);
        assert_eq!(r.js, js_divergence(&d(0.9), &d(0.5)));
        assert_eq!(r.priority_score, r.js);
    }

    #[test]
    fn js_increases_with_gap() {
        let mut last = -1.0;
        for i in 0..50 {
            let s = 0.5 + i as f64 * 0.01;
            let r = score_market("m", Probability::new(s).unwrap(), Probability::HALF);
            assert!(r.js > last || i == 0);
            last = r.js;
        }
    }

    #[test]
    fn ranking_orders_by_js() {
        let h = Probability::HALF;
        let inputs = vec![
            ("a".to_string(), Probability::new(0.55).unwrap(), h),
            ("b".to_string(), Probability::new(0.95).unwrap(), h),
            ("c".to_string(), Probability::new(0.7).unwrap(), h),
        ];
        let seq = rank_markets(ExecPolicy::Sequential, &inputs);
        let par = rank_markets(ExecPolicy::Parallel, &inputs);
        assert_eq!(seq, par);
        let ids: Vec<_> = seq.iter().map(|r| r.market_id.as_str()).collect();
        assert_eq!(ids, ["b", "c", "a"]);
    }
}
